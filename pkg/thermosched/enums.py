"""
Common enums to use within the codebase
"""
from __future__ import annotations

import enum


class _ValueEnum(str, enum.Enum):
    def __str__(self):
        return str(self.value)

    def __repr__(self):
        return f"{self.name} => {self.value}"


class KernelVariant(_ValueEnum):
    UNIFORM = "uniform"
    ABSORBING = "absorbing"


class NoiseVariant(_ValueEnum):
    GEOMETRIC = "geometric"
    LOGLINEAR = "loglinear"


class Strategy(_ValueEnum):
    UNIFORM = "uniform"
    EDS = "eds"
    WDS = "wds"


class BoundMode(_ValueEnum):
    """Integrand used to accumulate the Wasserstein speed limit."""

    MOBILITY_TOTAL = "mobility-total"
    ACTIVITY_TOTAL = "activity-total"
    ACTIVITY_NONADIABATIC = "activity-nonadiabatic"
    UNCERTAINTY = "uncertainty"

    @property
    def needs_total_entropy(self) -> bool:
        return self in (BoundMode.MOBILITY_TOTAL, BoundMode.ACTIVITY_TOTAL)


class DataSet(_ValueEnum):
    BINOMIAL = "binomial"
    COUNTDOWN = "countdown"


class EvalTask(_ValueEnum):
    COUNTDOWN = "countdown"
    TV = "tv"
    HELLINGER = "hellinger"


class Experiment(_ValueEnum):
    BINOMIAL = "binomial"
    COUNTDOWN = "countdown"
