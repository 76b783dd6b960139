"""Noise schedules: the instantaneous rate sigma(t) that scales the base generator and its
closed-form time integral sigma_bar(t). Time is dimensionless on [0, 1]."""
from abc import ABC, abstractmethod
from typing import Callable, Dict, Type, Union

import numpy as np

from thermosched.exceptions import (
    ConfigurationError,
    DomainError,
    InvalidNoiseError,
    NoiseNotFoundError,
)


def _check_time(t) -> np.ndarray:
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 1.0) or np.any(np.isnan(arr)):
        raise DomainError(f"Time must lie in [0, 1]. Got {t!r}")
    return arr


def _scalar_or_array(arr: np.ndarray):
    return float(arr) if arr.ndim == 0 else arr


class NoiseSchedule(ABC):
    """Abstract base class for noise schedules. Both methods accept a scalar or an array of
    times and return the same shape."""

    key: str = ""

    def sigma(self, t):
        """Instantaneous rate sigma(t) > 0."""
        return _scalar_or_array(self._sigma(_check_time(t)))

    def sigma_bar(self, t):
        """Cumulative noise, the integral of sigma from 0 to t. Zero at t = 0."""
        return _scalar_or_array(self._sigma_bar(_check_time(t)))

    @abstractmethod
    def _sigma(self, t: np.ndarray) -> np.ndarray:  # pragma: no cover
        pass

    @abstractmethod
    def _sigma_bar(self, t: np.ndarray) -> np.ndarray:  # pragma: no cover
        pass

    @abstractmethod
    def config(self) -> Dict[str, Union[str, float]]:  # pragma: no cover
        pass

    def __eq__(self, other) -> bool:
        return type(self) is type(other) and self.config() == other.config()

    def __hash__(self) -> int:
        return hash(tuple(sorted(self.config().items())))


noise_registry: Dict[str, Type[NoiseSchedule]] = {}
"""Registry of concrete [`NoiseSchedule`][thermosched.noise.NoiseSchedule] subclasses."""


def register_noise(key: str) -> Callable[[type], type]:
    """Create decorator to register a concrete [`NoiseSchedule`][thermosched.noise.NoiseSchedule]
    subclass under the key `key`."""

    def decorator(cls: type) -> type:
        if not (isinstance(cls, type) and issubclass(cls, NoiseSchedule)):
            raise InvalidNoiseError(
                "Only subclasses of thermosched.noise.NoiseSchedule can be registered."
            )
        cls.key = key
        noise_registry[key] = cls
        return cls

    return decorator


def get_noise(key_or_noise: Union[str, type]) -> Type[NoiseSchedule]:
    if isinstance(key_or_noise, str):
        try:
            return noise_registry[key_or_noise]
        except KeyError:
            raise NoiseNotFoundError(f"No noise schedule registered with key {key_or_noise}")
    elif isinstance(key_or_noise, type) and issubclass(key_or_noise, NoiseSchedule):
        return key_or_noise
    else:
        raise InvalidNoiseError(
            "Input must be str or subclass of thermosched.noise.NoiseSchedule."
        )


@register_noise("geometric")
class GeometricNoise(NoiseSchedule):
    """sigma(t) = sigma_min^(1-t) * sigma_max^t, with
    sigma_bar(t) = (sigma(t) - sigma_min) / ln(sigma_max / sigma_min)."""

    def __init__(self, sigma_min: float = 0.01, sigma_max: float = 5.0):
        if not 0 < sigma_min < sigma_max:
            raise ConfigurationError(
                f"Geometric noise needs 0 < sigma_min < sigma_max. Got {sigma_min}, {sigma_max}"
            )
        self.sigma_min = float(sigma_min)
        self.sigma_max = float(sigma_max)
        self._log_ratio = np.log(self.sigma_max / self.sigma_min)

    def _sigma(self, t: np.ndarray) -> np.ndarray:
        return self.sigma_min ** (1.0 - t) * self.sigma_max**t

    def _sigma_bar(self, t: np.ndarray) -> np.ndarray:
        # sigma_min * expm1(t ln r) / ln r, exact at t = 0
        return self.sigma_min * np.expm1(t * self._log_ratio) / self._log_ratio

    def config(self) -> Dict[str, Union[str, float]]:
        return {"noise": self.key, "sigma_min": self.sigma_min, "sigma_max": self.sigma_max}

    def __repr__(self) -> str:
        return f"GeometricNoise(sigma_min={self.sigma_min}, sigma_max={self.sigma_max})"


@register_noise("loglinear")
class LogLinearNoise(NoiseSchedule):
    """sigma_bar(t) = -ln(1 - (1 - eps) t). Under the absorbing kernel the masked fraction at
    time t is exactly (1 - eps) t."""

    def __init__(self, eps: float = 1e-3):
        if not 0 < eps < 1:
            raise ConfigurationError(f"Log-linear noise needs 0 < eps < 1. Got {eps}")
        self.eps = float(eps)

    def _sigma(self, t: np.ndarray) -> np.ndarray:
        scale = 1.0 - self.eps
        return scale / (1.0 - scale * t)

    def _sigma_bar(self, t: np.ndarray) -> np.ndarray:
        return -np.log1p(-(1.0 - self.eps) * t)

    def config(self) -> Dict[str, Union[str, float]]:
        return {"noise": self.key, "noise_eps": self.eps}

    def __repr__(self) -> str:
        return f"LogLinearNoise(eps={self.eps})"
