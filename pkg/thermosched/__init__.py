from thermosched.kernels import AbsorbingKernel, ProductKernel, RateKernel, UniformKernel
from thermosched.noise import GeometricNoise, LogLinearNoise, NoiseSchedule
from thermosched.ctmc import evolve_marginal, transition_probability
from thermosched.score import NetworkScore, OracleScore, ScoreModel, oracle_score
from thermosched.thermo import (
    EntropyCurve,
    WassersteinCurve,
    exact_curves,
    h_na_estimate,
    h_na_exact,
    sweep_curves,
    wasserstein_bound,
)
from thermosched.scheduler import TimeSchedule, eds_schedule, uniform_schedule, wds_schedule
from thermosched.sampler import sample
from thermosched.version import __version__
from thermosched.enums import BoundMode, Strategy

__version__

__all__ = [
    "AbsorbingKernel",
    "BoundMode",
    "EntropyCurve",
    "GeometricNoise",
    "LogLinearNoise",
    "NetworkScore",
    "NoiseSchedule",
    "OracleScore",
    "ProductKernel",
    "RateKernel",
    "ScoreModel",
    "Strategy",
    "TimeSchedule",
    "UniformKernel",
    "WassersteinCurve",
    "eds_schedule",
    "evolve_marginal",
    "exact_curves",
    "h_na_estimate",
    "h_na_exact",
    "oracle_score",
    "sample",
    "sweep_curves",
    "transition_probability",
    "uniform_schedule",
    "wasserstein_bound",
    "wds_schedule",
]
