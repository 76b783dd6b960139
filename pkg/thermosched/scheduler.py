"""Time schedules from cumulative progress curves.

A progress curve C(t) is normalized into a warping function Phi(t) in [0, 1]; a K-step
schedule places t_k where Phi reaches k / K. EDS accumulates the non-adiabatic entropy rate,
WDS the Wasserstein bound, and the uniform baseline ignores the dynamics.
"""
from dataclasses import dataclass
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pydantic

from thermosched.enums import Strategy
from thermosched.exceptions import (
    ConfigurationError,
    CurveFormatError,
    DegenerateProgressError,
    InvalidCurveError,
)
from thermosched.io import PathLike, read_json, write_json
from thermosched.thermo import EntropyCurve, WassersteinCurve
from thermosched.typing import TIME_EPS, ArrayLike, FloatArray

logger = logging.getLogger(__name__)

SCHEDULE_FILE_VERSION = 1
MONOTONE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ProgressCurve:
    """Cumulative progress C sampled on a strictly increasing time grid.

    Attributes:
        t (FloatArray): Time grid.
        values (FloatArray): C(t), non-decreasing up to 1e-12.
    """

    t: FloatArray
    values: FloatArray

    def __post_init__(self) -> None:
        if self.t.ndim != 1 or self.t.size < 2 or self.values.shape != self.t.shape:
            raise InvalidCurveError("Progress curve needs matching 1-D grids of size >= 2.")
        if np.any(np.diff(self.t) <= 0):
            raise InvalidCurveError("Progress grid must be strictly increasing.")
        if not np.all(np.isfinite(self.values)):
            raise InvalidCurveError("Progress values must be finite.")
        if np.any(np.diff(self.values) < -MONOTONE_TOL):
            raise InvalidCurveError("Cumulative progress must be non-decreasing.")

    @classmethod
    def from_values(cls, t: ArrayLike, values: ArrayLike) -> "ProgressCurve":
        return cls(np.asarray(t, dtype=np.float64), np.asarray(values, dtype=np.float64))

    @property
    def total(self) -> float:
        """Progress accumulated over the whole grid, C(t_end) - C(t_0)."""
        return float(self.values[-1] - self.values[0])


@dataclass(frozen=True, eq=False)
class Warp:
    """Normalized warping function Phi on the grid of its progress curve."""

    t: FloatArray
    phi: FloatArray

    def __call__(self, t: ArrayLike) -> FloatArray:
        """Piecewise-linear Phi at arbitrary times."""
        return np.interp(t, self.t, self.phi)


def warp(progress: ProgressCurve) -> Warp:
    """Phi(t) = (C(t) - C(t_0)) / (C(t_end) - C(t_0)), so Phi(t_0) = 0 and Phi(t_end) = 1.

    Raises:
        DegenerateProgressError: If the curve accumulates no progress.
    """
    total = progress.total
    if not total > 0:
        raise DegenerateProgressError(f"Progress curve has total {total!r}; nothing to warp.")
    phi = (progress.values - progress.values[0]) / total
    phi = np.clip(np.maximum.accumulate(phi), 0.0, 1.0)
    phi[-1] = 1.0
    return Warp(progress.t, phi)


class TimeSchedule(pydantic.BaseModel):
    """Discrete noise times t_0 < t_1 < ... < t_K for a K-step sampler, with provenance.

    The sampler walks the times from t_K = 1 down to t_0 = eps.
    """

    version: int = SCHEDULE_FILE_VERSION
    strategy: Strategy
    K: int
    times: List[float]
    kernel: Dict[str, Any] = {}
    source_curve_sha256: Optional[str] = None
    seed: Optional[int] = None
    epsilon: float = TIME_EPS

    class Config:
        allow_mutation = False

    @pydantic.validator("version")
    def _supported_version(cls, v: int) -> int:
        if v != SCHEDULE_FILE_VERSION:
            raise ValueError(f"unsupported schedule version {v}")
        return v

    @pydantic.validator("K")
    def _positive_steps(cls, v: int) -> int:
        if v < 1:
            raise ValueError("K must be at least 1")
        return v

    @pydantic.validator("times")
    def _valid_times(cls, v: List[float], values: Dict[str, Any]) -> List[float]:
        k = values.get("K")
        if k is not None and len(v) != k + 1:
            raise ValueError(f"expected {k + 1} times, got {len(v)}")
        arr = np.asarray(v, dtype=np.float64)
        if np.any(np.diff(arr) <= 0):
            raise ValueError("times must be strictly increasing")
        if arr[0] < 0.0 or arr[-1] > 1.0:
            raise ValueError("times must lie in [0, 1]")
        return v

    @property
    def array(self) -> FloatArray:
        return np.asarray(self.times, dtype=np.float64)

    @property
    def gaps(self) -> FloatArray:
        return np.diff(self.array)

    def document(self) -> Dict[str, Any]:
        doc = self.dict()
        doc["strategy"] = str(self.strategy)
        return doc

    def write(self, path: PathLike) -> Path:
        return write_json(path, self.document())


def load_schedule(path: PathLike) -> TimeSchedule:
    """Read and validate a schedule JSON file.

    Raises:
        CurveFormatError: If the file is not a valid schedule document.
    """
    try:
        return TimeSchedule.parse_obj(read_json(path))
    except pydantic.ValidationError as e:
        raise CurveFormatError(path, None, f"invalid schedule: {e}")


def invert_schedule(
    phi: Warp, K: int, strategy: Strategy = Strategy.UNIFORM, **provenance: Any
) -> TimeSchedule:
    """Times where Phi reaches the levels k / K, by piecewise-linear inversion.

    On a flat stretch the smallest time attaining the level is taken. The endpoints are pinned
    to the first and last grid times.

    Args:
        phi (Warp): Warping function.
        K (int): Number of sampler steps.
        strategy (Strategy, optional): Tag recorded in the schedule.
        **provenance: `kernel`, `source_curve_sha256` and `seed` fields of the schedule.

    Raises:
        InvalidCurveError: If Phi decreases by more than 1e-12 anywhere.
    """
    if K < 1:
        raise ConfigurationError(f"K must be at least 1. Got {K}")
    t, values = phi.t, phi.phi
    if np.any(np.diff(values) < -MONOTONE_TOL):
        raise InvalidCurveError("Warping function must be non-decreasing.")
    values = np.maximum.accumulate(values)
    levels = np.arange(1, K) / K
    idx = np.searchsorted(values, levels, side="left")
    hit = values[idx] == levels
    lo = np.maximum(idx - 1, 0)
    span = values[idx] - values[lo]
    frac = np.divide(levels - values[lo], span, out=np.zeros_like(levels), where=span > 0)
    interior = np.where(hit, t[idx], t[lo] + frac * (t[idx] - t[lo]))
    times = np.concatenate([[t[0]], interior, [t[-1]]])
    if np.any(np.diff(times) <= 0):
        raise InvalidCurveError("Inverted schedule is not strictly increasing.")
    return TimeSchedule(
        strategy=strategy,
        K=K,
        times=[float(v) for v in times],
        epsilon=float(t[0]),
        **provenance,
    )


def uniform_schedule(K: int, eps: float = TIME_EPS, **provenance: Any) -> TimeSchedule:
    """Equispaced times on [eps, 1]."""
    if K < 1:
        raise ConfigurationError(f"K must be at least 1. Got {K}")
    times = np.linspace(eps, 1.0, K + 1)
    return TimeSchedule(
        strategy=Strategy.UNIFORM,
        K=K,
        times=[float(v) for v in times],
        epsilon=float(eps),
        **provenance,
    )


def schedule_from_progress(
    progress: ProgressCurve,
    K: int,
    strategy: Strategy,
    fallback: bool = True,
    **provenance: Any,
) -> TimeSchedule:
    """Warp and invert `progress`. A curve with no progress gives the uniform schedule (with a
    warning) when `fallback` is set and raises otherwise."""
    try:
        phi = warp(progress)
    except DegenerateProgressError:
        if not fallback:
            raise
        logger.warning("%s progress curve is degenerate; using the uniform schedule", strategy)
        return uniform_schedule(K, eps=float(progress.t[0]), **provenance)
    return invert_schedule(phi, K, strategy=strategy, **provenance)


def eds_schedule(
    entropy: EntropyCurve, K: int, fallback: bool = True, **provenance: Any
) -> TimeSchedule:
    """Equal steps of cumulative non-adiabatic entropy production (negative rates count as 0)."""
    progress = ProgressCurve(entropy.t, entropy.h_na_cum)
    return schedule_from_progress(progress, K, Strategy.EDS, fallback=fallback, **provenance)


def wds_schedule(
    wass: WassersteinCurve, K: int, fallback: bool = True, **provenance: Any
) -> TimeSchedule:
    """Equal steps of the cumulative Wasserstein bound, i.e., constant transport speed."""
    progress = ProgressCurve(wass.t, wass.cumulative)
    return schedule_from_progress(progress, K, Strategy.WDS, fallback=fallback, **provenance)


def build_schedule(
    strategy: Strategy,
    K: int,
    entropy: Optional[EntropyCurve] = None,
    wass: Optional[WassersteinCurve] = None,
    eps: float = TIME_EPS,
    **provenance: Any,
) -> TimeSchedule:
    """Dispatch on `strategy`; EDS needs `entropy` and WDS needs `wass`."""
    strategy = Strategy(strategy)
    if strategy is Strategy.UNIFORM:
        return uniform_schedule(K, eps=eps, **provenance)
    if strategy is Strategy.EDS:
        if entropy is None:
            raise ConfigurationError("EDS needs an entropy curve.")
        return eds_schedule(entropy, K, **provenance)
    if wass is None:
        raise ConfigurationError("WDS needs a Wasserstein curve.")
    return wds_schedule(wass, K, **provenance)
