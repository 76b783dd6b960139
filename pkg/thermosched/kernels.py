"""Rate kernels: the per-token infinitesimal generators of the forward corruption process.

Concrete kernels subclass [`RateKernel`][thermosched.kernels.RateKernel] and register under a
string key with [`register_kernel`][thermosched.kernels.register_kernel], the same way model
adapters are registered and looked up by key. Rows of every matrix index the source state.
"""
from abc import ABC, abstractmethod
from functools import cached_property
import logging
from typing import Callable, Dict, Optional, Tuple, Type, Union

import numpy as np

from thermosched.exceptions import (
    CapacityError,
    ConfigurationError,
    DomainError,
    InvalidKernelError,
    KernelNotFoundError,
    SingularStateError,
    StateIndexError,
)
from thermosched.typing import FloatArray, IntArray

logger = logging.getLogger(__name__)

MAX_ENUMERABLE_STATES = 4096
"""Largest joint state space the enumerable (exact) routines accept."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _check_sigma_bar(sigma_bar) -> np.ndarray:
    sb = np.asarray(sigma_bar, dtype=np.float64)
    if np.any(sb < 0) or np.any(np.isnan(sb)):
        raise DomainError(f"Cumulative noise must be nonnegative. Got {sigma_bar!r}")
    return sb


class RateKernel(ABC):
    """Abstract base class for a time-homogeneous base generator Q. The forward generator at
    noise time t is `sigma(t) * Q`, so transition operators depend on the cumulative noise only.

    Attributes:
        vocab (int): Number of data tokens.
    """

    key: str = ""

    def __init__(self, vocab: int):
        if int(vocab) < 1:
            raise ConfigurationError(f"Vocabulary size must be positive. Got {vocab}")
        self.vocab = int(vocab)

    @property
    @abstractmethod
    def num_states(self) -> int:  # pragma: no cover
        """Number of states the generator acts on, including a mask state if any."""

    @property
    @abstractmethod
    def is_reversible(self) -> bool:  # pragma: no cover
        """Whether the generator satisfies detailed balance with respect to its stationary
        distribution."""

    @property
    def mask_index(self) -> Optional[int]:
        """Index of the absorbing mask state, or None."""
        return None

    @abstractmethod
    def _rate_matrix(self) -> FloatArray:  # pragma: no cover
        pass

    @abstractmethod
    def transition_rows(self, x0: IntArray, sigma_bar) -> FloatArray:  # pragma: no cover
        """Conditional distributions p(x_t = . | x_0) for every entry of `x0`.

        Args:
            x0 (IntArray): Source states, any shape.
            sigma_bar: Cumulative noise, a scalar or an array broadcastable to `x0.shape`.

        Returns:
            FloatArray: Array of shape `x0.shape + (num_states,)`.
        """

    @abstractmethod
    def stationary(self) -> FloatArray:  # pragma: no cover
        """Stationary distribution pi with pi Q = 0."""

    @abstractmethod
    def entropy_force(self, log_ratio: FloatArray) -> FloatArray:  # pragma: no cover
        """Non-adiabatic force attached to a reverse jump x -> y whose score ratio is
        exp(log_ratio) = p_t(y) / p_t(x)."""

    @cached_property
    def rate_matrix(self) -> FloatArray:
        """Base generator Q with zero row sums (read-only)."""
        return _frozen(self._rate_matrix())

    def embed(self, p: FloatArray) -> FloatArray:
        """Extend a distribution over the data tokens by zero mass on the mask state, if the
        kernel has one; anything else is returned unchanged."""
        if self.mask_index is not None and p.shape[-1] == self.vocab:
            return np.pad(p, [(0, 0)] * (p.ndim - 1) + [(0, 1)])
        return p

    def check_state(self, state: int) -> int:
        if not 0 <= int(state) < self.num_states:
            raise StateIndexError(
                f"State {state} out of range for {type(self).__name__} with "
                f"{self.num_states} states."
            )
        return int(state)

    def transition_matrix(self, sigma_bar: float) -> FloatArray:
        """Dense stochastic matrix exp(sigma_bar * Q)."""
        return self.transition_rows(np.arange(self.num_states), sigma_bar)

    def transition_probability(self, sigma_bar: float, source: int, target: int) -> float:
        source, target = self.check_state(source), self.check_state(target)
        return float(self.transition_rows(np.array(source), sigma_bar)[target])

    def incoming_rates(self, x: IntArray) -> FloatArray:
        """Base rates Q(y, x) into each current state `x`, for every candidate `y`, with the
        diagonal entry zeroed. Shape `x.shape + (num_states,)`. These are the forward rates the
        reverse generator multiplies by the score ratio."""
        x = np.asarray(x, dtype=np.int64)
        rates = np.moveaxis(self.rate_matrix[:, x], 0, -1).copy()
        np.put_along_axis(rates, x[..., None], 0.0, axis=-1)
        return rates

    def sample_prior(self, shape: Tuple[int, ...], rng: np.random.Generator) -> IntArray:
        """Draw i.i.d. states from the stationary distribution."""
        return rng.choice(self.num_states, size=shape, p=self.stationary()).astype(np.int64)

    def corrupt(self, x0: IntArray, sigma_bar, rng: np.random.Generator) -> IntArray:
        """Sample x_t ~ p(x_t | x_0) independently for every entry of `x0`."""
        x0 = np.asarray(x0, dtype=np.int64)
        rows = self.transition_rows(x0, sigma_bar)
        cdf = np.cumsum(rows, axis=-1)
        u = rng.random(x0.shape + (1,))
        return np.minimum((u > cdf).sum(axis=-1), self.num_states - 1).astype(np.int64)

    def conditional_ratio(self, x0: IntArray, xt: IntArray, sigma_bar) -> FloatArray:
        """Exact conditional ratios p(y | x_0) / p(x_t | x_0) for every candidate y."""
        rows = self.transition_rows(x0, sigma_bar)
        denom = np.take_along_axis(rows, np.asarray(xt, dtype=np.int64)[..., None], axis=-1)
        if np.any(denom <= 0):
            raise SingularStateError(
                state="x_t", probability=0.0, message="x_t is unreachable from x_0."
            )
        return rows / denom

    def config(self) -> Dict[str, Union[str, int]]:
        return {"kernel": self.key, "vocab": self.vocab}

    def __eq__(self, other) -> bool:
        return type(self) is type(other) and self.config() == other.config()

    def __hash__(self) -> int:
        return hash(tuple(sorted(self.config().items())))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(vocab={self.vocab})"


kernel_registry: Dict[str, Type[RateKernel]] = {}
"""Registry of concrete [`RateKernel`][thermosched.kernels.RateKernel] subclasses, keyed by the
name used in configuration files."""


def register_kernel(key: str) -> Callable[[type], type]:
    """Create decorator to register a concrete [`RateKernel`][thermosched.kernels.RateKernel]
    subclass under the key `key`.

    Args:
        key (str): Name used to identify the kernel in configuration files

    Returns:
        Callable[[Type[RateKernel]], Type[RateKernel]]: A registration decorator
    """

    def decorator(cls: type) -> type:
        if not (isinstance(cls, type) and issubclass(cls, RateKernel)):
            raise InvalidKernelError(
                "Only subclasses of thermosched.kernels.RateKernel can be registered as kernels."
            )
        cls.key = key
        kernel_registry[key] = cls
        return cls

    return decorator


def get_kernel(key_or_kernel: Union[str, type]) -> Type[RateKernel]:
    if isinstance(key_or_kernel, str):
        try:
            return kernel_registry[str(key_or_kernel)]
        except KeyError:
            raise KernelNotFoundError(f"No rate kernel registered with key {key_or_kernel}")
    elif isinstance(key_or_kernel, type) and issubclass(key_or_kernel, RateKernel):
        return key_or_kernel
    else:
        raise InvalidKernelError(
            "Input must be str or subclass of thermosched.kernels.RateKernel."
        )


@register_kernel("uniform")
class UniformKernel(RateKernel):
    """Every token jumps to every other token at rate 1: Q(a, b) = 1, Q(a, a) = -(N - 1)."""

    @property
    def num_states(self) -> int:
        return self.vocab

    @property
    def is_reversible(self) -> bool:
        return True

    def _rate_matrix(self) -> FloatArray:
        n = self.vocab
        return np.ones((n, n)) - n * np.eye(n)

    def transition_rows(self, x0: IntArray, sigma_bar) -> FloatArray:
        x0 = np.asarray(x0, dtype=np.int64)
        n = self.vocab
        decay = np.exp(-n * _check_sigma_bar(sigma_bar))
        decay = np.broadcast_to(decay, x0.shape)[..., None]
        onehot = np.eye(n)[x0]
        return (1.0 - decay) / n + decay * onehot

    def stationary(self) -> FloatArray:
        return np.full(self.vocab, 1.0 / self.vocab)

    def entropy_force(self, log_ratio: FloatArray) -> FloatArray:
        # reversible: ln(J(x->y) / J(y->x)) = ln s
        return log_ratio

    def corrupt(self, x0: IntArray, sigma_bar, rng: np.random.Generator) -> IntArray:
        x0 = np.asarray(x0, dtype=np.int64)
        move = 1.0 - np.exp(-self.vocab * _check_sigma_bar(sigma_bar))
        resample = rng.random(x0.shape) < move
        fresh = rng.integers(0, self.vocab, size=x0.shape)
        return np.where(resample, fresh, x0).astype(np.int64)

    def sample_prior(self, shape: Tuple[int, ...], rng: np.random.Generator) -> IntArray:
        return rng.integers(0, self.vocab, size=shape).astype(np.int64)


@register_kernel("absorbing")
class AbsorbingKernel(RateKernel):
    """Data tokens 0..N-1 jump into the mask state N at rate 1; the mask row is all-zero."""

    @property
    def num_states(self) -> int:
        return self.vocab + 1

    @property
    def mask_index(self) -> int:
        return self.vocab

    @property
    def is_reversible(self) -> bool:
        return False

    def _rate_matrix(self) -> FloatArray:
        m = self.num_states
        q = np.zeros((m, m))
        q[: self.vocab, self.mask_index] = 1.0
        q[np.arange(self.vocab), np.arange(self.vocab)] = -1.0
        return q

    def transition_rows(self, x0: IntArray, sigma_bar) -> FloatArray:
        x0 = np.asarray(x0, dtype=np.int64)
        survive = np.exp(-_check_sigma_bar(sigma_bar))
        survive = np.broadcast_to(survive, x0.shape)[..., None]
        onehot = np.eye(self.num_states)[x0]
        is_data = (x0 != self.mask_index)[..., None]
        rows = survive * onehot
        rows[..., self.mask_index] = 0.0
        rows[..., self.mask_index] = np.where(is_data[..., 0], 1.0 - survive[..., 0], 1.0)
        return rows

    def stationary(self) -> FloatArray:
        pi = np.zeros(self.num_states)
        pi[self.mask_index] = 1.0
        return pi

    def entropy_force(self, log_ratio: FloatArray) -> FloatArray:
        # point-mass stationary terms dropped on mask -> token jumps
        return -log_ratio

    def corrupt(self, x0: IntArray, sigma_bar, rng: np.random.Generator) -> IntArray:
        x0 = np.asarray(x0, dtype=np.int64)
        mask_prob = -np.expm1(-_check_sigma_bar(sigma_bar))
        masked = rng.random(x0.shape) < mask_prob
        return np.where(masked, self.mask_index, x0).astype(np.int64)

    def sample_prior(self, shape: Tuple[int, ...], rng: np.random.Generator) -> IntArray:
        return np.full(shape, self.mask_index, dtype=np.int64)


class ProductKernel(RateKernel):
    """Joint chain of `length` independent copies of a token kernel, on `M**length` states
    ordered row-major (position 0 most significant). Only single-position jumps have nonzero
    rate. Used by the enumerable routines; not registered for configuration files.
    """

    def __init__(self, kernel: RateKernel, length: int):
        self.token_kernel = kernel
        self.length = int(length)
        if self.length < 1:
            raise ConfigurationError(f"Sequence length must be positive. Got {length}")
        if kernel.num_states ** self.length > MAX_ENUMERABLE_STATES:
            raise CapacityError(
                f"Joint support {kernel.num_states}**{self.length} exceeds "
                f"{MAX_ENUMERABLE_STATES} states."
            )
        super().__init__(kernel.vocab)
        self.key = kernel.key

    @property
    def num_states(self) -> int:
        return self.token_kernel.num_states ** self.length

    @property
    def is_reversible(self) -> bool:
        return self.token_kernel.is_reversible

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.token_kernel.num_states,) * self.length

    def _rate_matrix(self) -> FloatArray:
        m = self.token_kernel.num_states
        q = np.zeros((self.num_states, self.num_states))
        for i in range(self.length):
            left = np.eye(m**i)
            right = np.eye(m ** (self.length - i - 1))
            q += np.kron(np.kron(left, self.token_kernel.rate_matrix), right)
        return q

    def transition_matrix(self, sigma_bar: float) -> FloatArray:
        token = self.token_kernel.transition_matrix(sigma_bar)
        out = np.ones((1, 1))
        for _ in range(self.length):
            out = np.kron(out, token)
        return out

    def transition_rows(self, x0: IntArray, sigma_bar) -> FloatArray:
        if np.ndim(sigma_bar) != 0:
            raise ConfigurationError("Joint transition rows take a scalar cumulative noise.")
        return self.transition_matrix(float(sigma_bar))[np.asarray(x0, dtype=np.int64)]

    def stationary(self) -> FloatArray:
        out = np.ones(1)
        for _ in range(self.length):
            out = np.kron(out, self.token_kernel.stationary())
        return out

    def entropy_force(self, log_ratio: FloatArray) -> FloatArray:
        return self.token_kernel.entropy_force(log_ratio)

    def encode(self, tokens: IntArray) -> IntArray:
        """Flat joint index of each row of a `(batch, length)` token array."""
        tokens = np.asarray(tokens, dtype=np.int64)
        return np.ravel_multi_index(tuple(tokens.T), self.shape).astype(np.int64)

    def decode(self, index: IntArray) -> IntArray:
        return np.stack(np.unravel_index(np.asarray(index), self.shape), axis=-1).astype(np.int64)

    def config(self) -> Dict[str, Union[str, int]]:
        return {**self.token_kernel.config(), "length": self.length}

    def __repr__(self) -> str:
        return f"ProductKernel({self.token_kernel!r}, length={self.length})"
