"""Data sources for the two desk-scale experiments: the single-token binomial distribution and
synthetic countdown sequences."""
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom

from thermosched.exceptions import ConfigurationError
from thermosched.typing import ArrayLike, FloatArray, IntArray, as_distribution, as_tokens


@dataclass(frozen=True)
class CountdownSpec:
    """Countdown sequences: each token is its predecessor minus one until it reaches 0, after
    which the next token is drawn uniformly from the vocabulary. The first token is uniform.

    Attributes:
        vocab (int): Number of token values, 0..vocab-1. Defaults to 32.
        length (int): Sequence length. Defaults to 16.
    """

    vocab: int = 32
    length: int = 16

    def __post_init__(self) -> None:
        if self.vocab < 2 or self.length < 2:
            raise ConfigurationError(
                f"Countdown needs vocab >= 2 and length >= 2. Got {self.vocab}, {self.length}"
            )


def gen_countdown(spec: CountdownSpec, n: int, rng: np.random.Generator) -> IntArray:
    """Generate `n` rule-satisfying countdown sequences of shape `(n, spec.length)`."""
    if n < 1:
        raise ConfigurationError(f"n must be positive. Got {n}")
    out = np.empty((n, spec.length), dtype=np.int64)
    out[:, 0] = rng.integers(0, spec.vocab, size=n)
    for i in range(1, spec.length):
        prev = out[:, i - 1]
        reset = rng.integers(0, spec.vocab, size=n)
        out[:, i] = np.where(prev > 0, prev - 1, reset)
    return out


def binomial_dataset(n: int = 14, p: float = 0.5) -> FloatArray:
    """Exact Binomial(n, p) pmf over the n + 1 states 0..n."""
    if n < 1 or not 0.0 <= p <= 1.0:
        raise ConfigurationError(f"Binomial needs n >= 1 and p in [0, 1]. Got n={n}, p={p}")
    pmf = binom.pmf(np.arange(n + 1), n, p)
    return pmf / pmf.sum()


class Dataset(ABC):
    """Source of clean sequences of a fixed length."""

    length: int

    @abstractmethod
    def sample(self, n: int, rng: np.random.Generator) -> IntArray:  # pragma: no cover
        """Draw `n` sequences, shape `(n, length)`."""


class CategoricalDataset(Dataset):
    """Single tokens drawn i.i.d. from a known distribution."""

    length = 1

    def __init__(self, pmf: ArrayLike) -> None:
        self.pmf = as_distribution(pmf)

    def sample(self, n: int, rng: np.random.Generator) -> IntArray:
        return rng.choice(self.pmf.size, size=(n, 1), p=self.pmf).astype(np.int64)


class CountdownDataset(Dataset):
    """Fresh countdown sequences on every draw."""

    def __init__(self, spec: CountdownSpec) -> None:
        self.spec = spec
        self.length = spec.length

    def sample(self, n: int, rng: np.random.Generator) -> IntArray:
        return gen_countdown(self.spec, n, rng)


class TokenDataset(Dataset):
    """Fixed collection of sequences, resampled with replacement."""

    def __init__(self, tokens: IntArray) -> None:
        self.tokens = as_tokens(tokens)
        if self.tokens.shape[0] == 0:
            raise ConfigurationError("Token dataset is empty.")
        self.length = self.tokens.shape[1]

    def sample(self, n: int, rng: np.random.Generator) -> IntArray:
        return self.tokens[rng.integers(0, self.tokens.shape[0], size=n)]
