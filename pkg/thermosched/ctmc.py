"""Exact forward transition operators, marginal evolution and the reverse-time generator for
enumerable chains."""
from dataclasses import dataclass
import logging

import numpy as np

from thermosched.exceptions import CapacityError, ConfigurationError, SingularStateError
from thermosched.kernels import MAX_ENUMERABLE_STATES, RateKernel
from thermosched.noise import NoiseSchedule
from thermosched.typing import SINGULAR_PROB, ArrayLike, FloatArray, as_distribution

logger = logging.getLogger(__name__)


def _check_capacity(kernel: RateKernel) -> None:
    if kernel.num_states > MAX_ENUMERABLE_STATES:
        raise CapacityError(
            f"{kernel!r} has {kernel.num_states} states; enumeration is capped at "
            f"{MAX_ENUMERABLE_STATES}."
        )


def _check_support(kernel: RateKernel, p: FloatArray) -> FloatArray:
    p = kernel.embed(p)
    if p.shape[-1] != kernel.num_states:
        raise ConfigurationError(
            f"Distribution has {p.shape[-1]} entries but {kernel!r} has "
            f"{kernel.num_states} states."
        )
    return p


@dataclass(frozen=True)
class TransitionOperator:
    """Conditional matrix p(x_t = . | x_s = .) after the cumulative noise increment `sigma_bar`.

    Attributes:
        kernel (RateKernel): Source kernel.
        sigma_bar (float): Elapsed cumulative noise.
        matrix (FloatArray): Row-stochastic matrix, rows indexed by the source state.
    """

    kernel: RateKernel
    sigma_bar: float
    matrix: FloatArray

    @classmethod
    def from_kernel(cls, kernel: RateKernel, sigma_bar: float) -> "TransitionOperator":
        _check_capacity(kernel)
        matrix = kernel.transition_matrix(sigma_bar)
        matrix.setflags(write=False)
        return cls(kernel=kernel, sigma_bar=float(sigma_bar), matrix=matrix)

    def compose(self, other: "TransitionOperator") -> "TransitionOperator":
        """Apply `self` then `other`; equals the operator at the summed noise."""
        if other.kernel != self.kernel:
            raise ConfigurationError("Cannot compose operators of different kernels.")
        matrix = self.matrix @ other.matrix
        matrix.setflags(write=False)
        return TransitionOperator(self.kernel, self.sigma_bar + other.sigma_bar, matrix)

    def apply(self, p: ArrayLike) -> FloatArray:
        return _check_support(self.kernel, as_distribution(p)) @ self.matrix


def transition_probability(
    kernel: RateKernel, sigma_bar: float, source: int, target: int
) -> float:
    """Closed-form p(x_t = target | x_s = source) after cumulative noise `sigma_bar`.

    Raises:
        DomainError: If `sigma_bar` is negative.
        StateIndexError: If a state is out of range for `kernel`.
    """
    return kernel.transition_probability(sigma_bar, source, target)


def evolve_marginal(kernel: RateKernel, p0: ArrayLike, sigma_bar: float) -> FloatArray:
    """Push a distribution forward by cumulative noise `sigma_bar`.

    `p0` is either one distribution over the kernel's states or a factorized `(L, M)` array of
    per-position distributions, which are evolved independently.

    Raises:
        CapacityError: If the kernel has more than 4096 states.
    """
    _check_capacity(kernel)
    arr = np.asarray(p0, dtype=np.float64)
    matrix = kernel.transition_matrix(sigma_bar)
    if arr.ndim == 2:
        rows = np.stack([_check_support(kernel, as_distribution(row)) for row in arr])
        return rows @ matrix
    return _check_support(kernel, as_distribution(arr)) @ matrix


def marginal_at(kernel: RateKernel, noise: NoiseSchedule, p0: ArrayLike, t: float) -> FloatArray:
    """Forward marginal p_t, i.e., `p0` evolved by sigma_bar(t)."""
    return evolve_marginal(kernel, p0, noise.sigma_bar(t))


def stationary_distribution(kernel: RateKernel) -> FloatArray:
    return kernel.stationary()


def reverse_fluxes(kernel: RateKernel, p_t: ArrayLike, sigma: float = 1.0) -> FloatArray:
    """Reverse-time probability fluxes J[x, y] = p_t(y) * sigma * Q(y, x) for x != y, zero on
    the diagonal. Equals p_t(x) times the reverse rate x -> y, and stays finite where p_t(x)
    vanishes."""
    _check_capacity(kernel)
    p = _check_support(kernel, as_distribution(p_t))
    flux = sigma * kernel.rate_matrix.T * p[np.newaxis, :]
    np.fill_diagonal(flux, 0.0)
    return flux


def reverse_generator(kernel: RateKernel, p_t: ArrayLike, sigma: float = 1.0) -> FloatArray:
    """Reverse generator with off-diagonal entries (p_t(y) / p_t(x)) * sigma * Q(y, x).

    Raises:
        SingularStateError: If a state has probability below 1e-15.
    """
    p = _check_support(kernel, as_distribution(p_t))
    small = np.flatnonzero(p <= SINGULAR_PROB)
    if small.size:
        raise SingularStateError(state=int(small[0]), probability=float(p[small[0]]))
    gen = reverse_fluxes(kernel, p, sigma) / p[:, np.newaxis]
    np.fill_diagonal(gen, -gen.sum(axis=1))
    return gen


def reverse_rate(
    kernel: RateKernel, p_t: ArrayLike, source: int, target: int, sigma: float = 1.0
) -> float:
    """Reverse-time jump rate from `source` to `target` given the current marginal `p_t`.

    Args:
        kernel (RateKernel): Forward kernel.
        p_t (ArrayLike): Forward marginal at the current time.
        source (int): Current state.
        target (int): Destination state.
        sigma (float, optional): Noise rate sigma(t) scaling the base generator. Defaults to 1.

    Raises:
        SingularStateError: If p_t(source) is below 1e-15.

    Returns:
        float: Off-diagonal rate, or minus the total exit rate when `source == target`.
    """
    p = _check_support(kernel, as_distribution(p_t))
    source, target = kernel.check_state(source), kernel.check_state(target)
    if p[source] <= SINGULAR_PROB:
        raise SingularStateError(state=source, probability=float(p[source]))
    incoming = sigma * kernel.rate_matrix[:, source] * p / p[source]
    incoming[source] = 0.0
    if source == target:
        return -float(incoming.sum())
    return float(incoming[target])

