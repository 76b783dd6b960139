from typing import Final, Sequence, Union

import numpy as np
import numpy.typing as npt

from thermosched.exceptions import InvalidDistributionError


FloatArray = npt.NDArray[np.float64]
"""Array of float64 values (probability vectors, rates, curve columns)."""

IntArray = npt.NDArray[np.int64]
"""Array of token indices, shape `(batch, length)` unless stated otherwise."""

BoolArray = npt.NDArray[np.bool_]

ArrayLike = Union[Sequence[float], FloatArray]

TIME_EPS: Final = 1e-5
"""Time floor shared by training, estimation grids and schedules."""

PROB_TOL: Final = 1e-9
"""Tolerance on the total mass of a probability vector."""

SINGULAR_PROB: Final = 1e-15
"""Probabilities at or below this value are treated as zero in ratio denominators."""


def as_distribution(p: ArrayLike) -> FloatArray:
    """Return `p` as a float64 vector after validating it is a probability distribution."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidDistributionError(f"Distribution must be a non-empty vector. Got {arr.shape}")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise InvalidDistributionError("Distribution entries must be finite and nonnegative.")
    total = float(arr.sum())
    if abs(total - 1.0) > PROB_TOL:
        raise InvalidDistributionError(f"Distribution must sum to 1. Got {total!r}")
    return arr


def as_tokens(x: Union[Sequence[int], Sequence[Sequence[int]], IntArray]) -> IntArray:
    """Return token input as a 2-D int64 array of shape `(batch, length)`."""
    arr = np.asarray(x, dtype=np.int64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr
