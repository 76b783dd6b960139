"""Score models: functions returning the ratios s(x, t)_y ~ p_t(y) / p_t(x) for every position of
a token sequence and every candidate state y at that position."""
from abc import ABC, abstractmethod
import logging
from threading import Lock
from typing import Dict

import numpy as np

from thermosched.ctmc import evolve_marginal
from thermosched.exceptions import ConfigurationError, SingularStateError
from thermosched.kernels import ProductKernel, RateKernel
from thermosched.mlp import MLPParameters, log_ratio_offset, mlp_score
from thermosched.noise import NoiseSchedule
from thermosched.typing import SINGULAR_PROB, ArrayLike, FloatArray, IntArray, as_tokens

logger = logging.getLogger(__name__)

MARGINAL_CACHE_SIZE = 128


class ScoreModel(ABC):
    """Abstract base class for score models.

    Attributes:
        kernel (RateKernel): Per-token forward kernel the ratios refer to.
        noise (NoiseSchedule): Forward noise schedule.
        length (int): Sequence length the model accepts.
    """

    kernel: RateKernel
    noise: NoiseSchedule
    length: int

    @abstractmethod
    def ratios(self, x: IntArray, t: float) -> FloatArray:  # pragma: no cover
        """Ratio array of shape `(batch, length, num_states)` for token array `x`."""

    def __call__(self, x: IntArray, t: float) -> FloatArray:
        return self.ratios(x, t)

    def _check_tokens(self, x: IntArray) -> IntArray:
        x = as_tokens(x)
        if x.shape[1] != self.length:
            raise ConfigurationError(
                f"{type(self).__name__} expects sequences of length {self.length}, "
                f"got {x.shape[1]}."
            )
        return x


class OracleScore(ScoreModel):
    """Exact ratios from the enumerated forward marginal of a known data distribution.

    Args:
        kernel (RateKernel): Per-token kernel.
        noise (NoiseSchedule): Forward noise schedule.
        p0 (ArrayLike): Data distribution over the joint states `num_states ** length`,
            ordered row-major (see [`ProductKernel`][thermosched.kernels.ProductKernel]).
        length (int, optional): Sequence length. Defaults to 1.
    """

    def __init__(
        self, kernel: RateKernel, noise: NoiseSchedule, p0: ArrayLike, length: int = 1
    ) -> None:
        self.kernel = kernel
        self.noise = noise
        self.length = int(length)
        self.joint: RateKernel = ProductKernel(kernel, length) if length > 1 else kernel
        # validates support size and mass
        self.p0 = evolve_marginal(self.joint, p0, 0.0)
        m = kernel.num_states
        self._strides = m ** np.arange(self.length - 1, -1, -1)
        self._marginals: Dict[float, FloatArray] = {}
        self._lock = Lock()

    def marginal(self, t: float) -> FloatArray:
        """Forward marginal p_t over the joint states (read-only, cached per time)."""
        t = float(t)
        p = self._marginals.get(t)
        if p is None:
            p = evolve_marginal(self.joint, self.p0, self.noise.sigma_bar(t))
            p.setflags(write=False)
            with self._lock:
                if len(self._marginals) >= MARGINAL_CACHE_SIZE:
                    del self._marginals[next(iter(self._marginals))]
                self._marginals[t] = p
        return p

    def ratios(self, x: IntArray, t: float) -> FloatArray:
        """Exact p_t(x with position i set to y) / p_t(x).

        Raises:
            SingularStateError: If some sequence in `x` has probability below 1e-15 at time t.
        """
        x = self._check_tokens(x)
        m = self.kernel.num_states
        if np.any(x < 0) or np.any(x >= m):
            raise ConfigurationError(f"Tokens must lie in [0, {m}).")
        p = self.marginal(t)
        base = x @ self._strides
        denom = p[base]
        small = np.flatnonzero(denom <= SINGULAR_PROB)
        if small.size:
            i = int(small[0])
            raise SingularStateError(state=x[i].tolist(), probability=float(denom[i]))
        shift = np.arange(m)[np.newaxis, np.newaxis, :] - x[:, :, np.newaxis]
        neighbours = base[:, np.newaxis, np.newaxis] + shift * self._strides[:, np.newaxis]
        return p[neighbours] / denom[:, np.newaxis, np.newaxis]


def oracle_score(
    kernel: RateKernel, noise: NoiseSchedule, p0: ArrayLike, x: int, t: float
) -> FloatArray:
    """Exact ratio vector p_t(y) / p_t(x) over all states y of a single-token chain.

    Raises:
        SingularStateError: If p_t(x) is below 1e-15.
    """
    return OracleScore(kernel, noise, p0).ratios(np.array([[x]]), t)[0, 0]


class NetworkScore(ScoreModel):
    """Ratios from a trained [`MLPParameters`][thermosched.mlp.MLPParameters] network. For the
    absorbing kernel the analytic mask offset is applied on masked positions."""

    def __init__(self, params: MLPParameters, kernel: RateKernel, noise: NoiseSchedule) -> None:
        if params.arch.states != kernel.num_states:
            raise ConfigurationError(
                f"Network has {params.arch.states} states per position, kernel has "
                f"{kernel.num_states}."
            )
        self.params = params
        self.kernel = kernel
        self.noise = noise
        self.length = params.arch.length

    def ratios(self, x: IntArray, t: float) -> FloatArray:
        x = self._check_tokens(x)
        offset = log_ratio_offset(self.kernel, self.noise, x, t)
        return mlp_score(self.params, x, t) * np.exp(offset)


class ConstantScore(ScoreModel):
    """Every ratio equal to `value`. With `value = 1` the reverse process keeps the forward
    rates, which makes it a convenient null model."""

    def __init__(
        self, kernel: RateKernel, noise: NoiseSchedule, length: int = 1, value: float = 1.0
    ) -> None:
        if not value > 0:
            raise ConfigurationError(f"Ratios must be positive. Got {value}")
        self.kernel = kernel
        self.noise = noise
        self.length = int(length)
        self.value = float(value)

    def ratios(self, x: IntArray, t: float) -> FloatArray:
        x = self._check_tokens(x)
        return np.full(x.shape + (self.kernel.num_states,), self.value)
