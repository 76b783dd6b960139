"""Entropy production, dynamical activity, mobility and Wasserstein speed-limit bounds of the
reverse process, exactly on enumerable chains and by Monte Carlo with a score model.

All rates are reported in noise time t, where the reverse marginal at t equals the forward
marginal p_t. Reverse fluxes are J(x -> y) = p_t(y) sigma(t) Q(y, x); see
[`reverse_fluxes`][thermosched.ctmc.reverse_fluxes].
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import math
import os
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from thermosched.ctmc import marginal_at, reverse_fluxes
from thermosched.datasets import Dataset
from thermosched.enums import BoundMode
from thermosched.exceptions import (
    ConfigurationError,
    InvalidCurveError,
    NumericalError,
    SingularStateError,
)
from thermosched.io import PathLike, read_float_table, write_csv
from thermosched.kernels import RateKernel
from thermosched.noise import NoiseSchedule
from thermosched.rng import derive_rng
from thermosched.score import ScoreModel
from thermosched.typing import (
    SINGULAR_PROB,
    TIME_EPS,
    ArrayLike,
    BoolArray,
    FloatArray,
    IntArray,
)

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ("t", "h_na", "h_na_se", "h_na_cum", "activity", "w_rate", "w_cum")
EXACT_COLUMNS = ("h_ad", "h_tot")


def logmean(a, b) -> FloatArray:
    """Logarithmic mean (a - b) / (ln a - ln b), with logmean(c, c) = c and 0 when either
    argument is 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.zeros(np.broadcast(a, b).shape)
    pos = (a > 0) & (b > 0)
    a_, b_ = np.broadcast_to(a, out.shape)[pos], np.broadcast_to(b, out.shape)[pos]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = a_ / b_
        lm = b_ * (ratio - 1.0) / np.log(ratio)
    close = np.abs(ratio - 1.0) < 1e-8
    # series a ~ b: b (1 + d/2 - d^2/12), d = ratio - 1
    d = ratio[close] - 1.0
    lm[close] = b_[close] * (1.0 + d / 2.0 - d * d / 12.0)
    out[pos] = lm
    return out


# -- rates from a known marginal -----------------------------------------------------------------


def _log_ratios(p: FloatArray, flux: FloatArray) -> FloatArray:
    """ln(p(y) / p(x)) on every entry with positive flux, 0 elsewhere."""
    active = flux > 0
    rows = np.nonzero(active)[0]
    if rows.size and np.any(p[rows] <= SINGULAR_PROB):
        bad = int(rows[np.argmin(p[rows])])
        raise SingularStateError(state=bad, probability=float(p[bad]))
    out = np.zeros_like(flux)
    with np.errstate(divide="ignore"):
        logp = np.log(p)
    out[active] = (logp[np.newaxis, :] - logp[:, np.newaxis])[active]
    return out


def nonadiabatic_rate(kernel: RateKernel, p_t: ArrayLike, sigma: float = 1.0) -> float:
    """Sum over reverse jumps of J(x -> y) times the kernel's non-adiabatic force of
    ln(p_t(y) / p_t(x)).

    Raises:
        SingularStateError: If a state with outgoing reverse flux carries no mass.
    """
    p = np.asarray(p_t, dtype=np.float64)
    flux = reverse_fluxes(kernel, p, sigma)
    force = kernel.entropy_force(_log_ratios(p, flux))
    return float(np.sum(np.where(flux > 0, flux * force, 0.0)))


def adiabatic_rate(kernel: RateKernel, p_t: ArrayLike, sigma: float = 1.0) -> float:
    """Housekeeping rate sum p(x) Q(x, y) ln[Q(x, y) pi(x) / (Q(y, x) pi(y))]. Zero under
    detailed balance; `math.inf` for kernels without it."""
    if not kernel.is_reversible:
        return math.inf
    p = np.asarray(p_t, dtype=np.float64)
    q = sigma * np.asarray(kernel.rate_matrix)
    pi = kernel.stationary()
    off = ~np.eye(q.shape[0], dtype=bool) & (q > 0)
    x, y = np.nonzero(off)
    force = np.log(q[x, y] * pi[x]) - np.log(q[y, x] * pi[y])
    return float(np.sum(p[x] * q[x, y] * force))


def total_rate(kernel: RateKernel, p_t: ArrayLike, sigma: float = 1.0) -> float:
    """Total entropy production rate sum J(x -> y) ln[J(x -> y) / J(y -> x)], computed from the
    fluxes alone. `math.inf` for kernels without detailed balance (one-way jumps)."""
    if not kernel.is_reversible:
        return math.inf
    flux = reverse_fluxes(kernel, p_t, sigma)
    active = flux > 0
    back = flux.T[active]
    if np.any(back <= 0):
        raise SingularStateError(
            state="reverse pair", probability=0.0, message="A reverse jump has no return flux."
        )
    return float(np.sum(flux[active] * np.log(flux[active] / back)))


def activity_rate(kernel: RateKernel, p_t: ArrayLike, sigma: float = 1.0) -> float:
    """Dynamical activity: the total off-diagonal reverse flux."""
    return float(reverse_fluxes(kernel, p_t, sigma).sum())


def mobility_rate(kernel: RateKernel, p_t: ArrayLike, sigma: float = 1.0) -> float:
    """Dynamical state mobility: logarithmic means of paired fluxes, summed over unordered
    pairs. Defined for kernels with detailed balance.

    Raises:
        ConfigurationError: If the kernel is not reversible.
    """
    if not kernel.is_reversible:
        raise ConfigurationError("Mobility is defined for reversible kernels only.")
    flux = reverse_fluxes(kernel, p_t, sigma)
    upper = np.triu_indices(flux.shape[0], k=1)
    return float(logmean(flux[upper], flux.T[upper]).sum())


# -- exact rates at a time -----------------------------------------------------------------------


def _state(kernel: RateKernel, noise: NoiseSchedule, p0: ArrayLike, t: float):
    return marginal_at(kernel, noise, p0, t), noise.sigma(t)


def h_na_exact(kernel: RateKernel, noise: NoiseSchedule, p0: ArrayLike, t: float) -> float:
    """Exact non-adiabatic entropy production rate at noise time `t` for data `p0`."""
    return nonadiabatic_rate(kernel, *_state(kernel, noise, p0, t))


def h_ad_exact(kernel: RateKernel, noise: NoiseSchedule, p0: ArrayLike, t: float) -> float:
    """Exact adiabatic rate; `math.inf` flags divergence for non-reversible kernels."""
    return adiabatic_rate(kernel, *_state(kernel, noise, p0, t))


def h_tot_exact(kernel: RateKernel, noise: NoiseSchedule, p0: ArrayLike, t: float) -> float:
    """Exact total entropy production rate; `math.inf` for non-reversible kernels."""
    return total_rate(kernel, *_state(kernel, noise, p0, t))


def activity_exact(kernel: RateKernel, noise: NoiseSchedule, p0: ArrayLike, t: float) -> float:
    return activity_rate(kernel, *_state(kernel, noise, p0, t))


def mobility_exact(kernel: RateKernel, noise: NoiseSchedule, p0: ArrayLike, t: float) -> float:
    return mobility_rate(kernel, *_state(kernel, noise, p0, t))


# -- Monte Carlo estimators ----------------------------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    """Sample mean with its standard error (ddof = 1).

    The standard error is NaN when fewer than two samples contribute a nonzero term, e.g. when
    no sampled token is masked near t = eps. Such an estimate carries no spread information.
    """

    value: float
    stderr: float
    n: int

    @property
    def informative(self) -> bool:
        return math.isfinite(self.stderr)

    @classmethod
    def from_samples(cls, samples: FloatArray) -> "Estimate":
        n = int(samples.size)
        if np.count_nonzero(samples) < 2:
            se = math.nan
        else:
            se = float(samples.std(ddof=1) / math.sqrt(n))
        return cls(value=float(samples.mean()), stderr=se, n=n)


def _reverse_terms(
    score: ScoreModel, kernel: RateKernel, noise: NoiseSchedule, t: float, x: IntArray
) -> Tuple[FloatArray, FloatArray]:
    """Per-entry reverse rates sigma Q(y, x) s(x)_y and the log-ratios, shape (B, L, M)."""
    s = score(x, t)
    weight = noise.sigma(t) * kernel.incoming_rates(x)
    rates = weight * s
    with np.errstate(divide="ignore"):
        log_s = np.where(rates > 0, np.log(np.where(rates > 0, s, 1.0)), 0.0)
    bad = ~np.isfinite(rates) | ~np.isfinite(log_s)
    if np.any(bad):
        _, pos, y = (int(v[0]) for v in np.nonzero(bad))
        raise NumericalError(
            "Non-finite score ratio in entropy estimate", {"t": t, "position": pos, "target": y}
        )
    return rates, log_s


def h_na_estimate(
    score: ScoreModel, kernel: RateKernel, noise: NoiseSchedule, t: float, x: IntArray
) -> Estimate:
    """Monte Carlo non-adiabatic rate from sequences `x` drawn from the forward marginal p_t,
    using the model's own ratios in the reverse generator.

    Raises:
        NumericalError: If a ratio or its logarithm is not finite.
    """
    rates, log_s = _reverse_terms(score, kernel, noise, t, x)
    per_sample = (rates * kernel.entropy_force(log_s)).sum(axis=(1, 2))
    return Estimate.from_samples(per_sample)


def activity_estimate(
    score: ScoreModel, kernel: RateKernel, noise: NoiseSchedule, t: float, x: IntArray
) -> Estimate:
    """Monte Carlo dynamical activity: mean total reverse exit rate of `x` ~ p_t."""
    rates, _ = _reverse_terms(score, kernel, noise, t, x)
    return Estimate.from_samples(rates.sum(axis=(1, 2)))


# -- curves --------------------------------------------------------------------------------------


def time_grid(n_grid: int, eps: float = TIME_EPS) -> FloatArray:
    if n_grid < 2:
        raise ConfigurationError(f"Grid needs at least 2 points. Got {n_grid}")
    return np.linspace(eps, 1.0, n_grid)


def cumulative(rate: FloatArray, t: FloatArray) -> FloatArray:
    """Trapezoid integral from the first grid point, with rates clamped at 0."""
    return cumulative_trapezoid(np.clip(rate, 0.0, None), t, initial=0.0)


@dataclass(frozen=True, eq=False)
class EntropyCurve:
    """Entropy and activity rates sampled on a time grid. Raw rates are kept as measured; the
    cumulative integral clamps negative values at 0.

    Attributes:
        t (FloatArray): Strictly increasing noise times in [eps, 1].
        h_na (FloatArray): Non-adiabatic rate.
        h_na_se (FloatArray): Its standard error (zeros for exact curves).
        activity (FloatArray): Dynamical activity, nonnegative.
        n_samples (int): Monte Carlo samples per grid point; 0 for exact curves.
        h_ad (Optional[FloatArray]): Adiabatic rate, exact curves only.
        h_tot (Optional[FloatArray]): Total rate, exact curves only.
        mobility (Optional[FloatArray]): Dynamical state mobility, reversible exact curves only.
    """

    t: FloatArray
    h_na: FloatArray
    h_na_se: FloatArray
    activity: FloatArray
    n_samples: int = 0
    h_ad: Optional[FloatArray] = None
    h_tot: Optional[FloatArray] = None
    mobility: Optional[FloatArray] = None

    def __post_init__(self) -> None:
        n = self.t.size
        if n < 2 or np.any(np.diff(self.t) <= 0):
            raise InvalidCurveError("Curve grid must hold at least 2 strictly increasing times.")
        for name in ("h_na", "h_na_se", "activity", "h_ad", "h_tot", "mobility"):
            values = getattr(self, name)
            if values is not None and values.shape != self.t.shape:
                raise InvalidCurveError(f"Column {name} has {values.size} values, grid has {n}.")
        if np.any(self.activity < 0):
            raise InvalidCurveError("Activity must be nonnegative.")

    @property
    def h_na_cum(self) -> FloatArray:
        return cumulative(self.h_na, self.t)

    @property
    def activity_cum(self) -> FloatArray:
        return cumulative(self.activity, self.t)


@dataclass(frozen=True, eq=False)
class WassersteinCurve:
    """Instantaneous Wasserstein bound rate and its cumulative integral W(t), W(t_0) = 0."""

    t: FloatArray
    rate: FloatArray
    cumulative: FloatArray
    mode: BoundMode = BoundMode.ACTIVITY_NONADIABATIC

    def __post_init__(self) -> None:
        if self.cumulative.size and (
            self.cumulative[0] != 0.0 or np.any(np.diff(self.cumulative) < 0)
        ):
            raise InvalidCurveError("Cumulative bound must start at 0 and be non-decreasing.")


def _require_total(curve: EntropyCurve, mode: BoundMode) -> FloatArray:
    if curve.h_tot is None or not np.all(np.isfinite(curve.h_tot)):
        raise ConfigurationError(
            f"Bound mode {mode} needs a finite total entropy production rate; it is "
            "unavailable or divergent for this curve."
        )
    return curve.h_tot


def wasserstein_bound(
    curve: EntropyCurve, mode: BoundMode = BoundMode.ACTIVITY_NONADIABATIC
) -> WassersteinCurve:
    """Speed-limit bound on the distance travelled by the marginal.

    Modes:
        - `activity-nonadiabatic`: rate sqrt(A h_na), the practical surrogate;
        - `activity-total`: rate sqrt(A h_tot);
        - `mobility-total`: rate sqrt(2 M h_tot), the tightest, reversible kernels only;
        - `uncertainty`: W(t) = sqrt(1/2 * int A * int h_na), with its rate the time derivative.

    Raises:
        ConfigurationError: If the mode needs h_tot or mobility and they are missing or
            infinite.
    """
    mode = BoundMode(mode)
    activity = np.clip(curve.activity, 0.0, None)
    if mode is BoundMode.UNCERTAINTY:
        cum = np.sqrt(0.5 * curve.activity_cum * curve.h_na_cum)
        rate = np.gradient(cum, curve.t)
        return WassersteinCurve(curve.t, rate, cum, mode)
    if mode is BoundMode.ACTIVITY_NONADIABATIC:
        rate = np.sqrt(activity * np.clip(curve.h_na, 0.0, None))
    elif mode is BoundMode.ACTIVITY_TOTAL:
        rate = np.sqrt(activity * np.clip(_require_total(curve, mode), 0.0, None))
    else:
        h_tot = _require_total(curve, mode)
        if curve.mobility is None:
            raise ConfigurationError(f"Bound mode {mode} needs the exact mobility.")
        rate = np.sqrt(2.0 * np.clip(curve.mobility, 0.0, None) * np.clip(h_tot, 0.0, None))
    return WassersteinCurve(curve.t, rate, cumulative(rate, curve.t), mode)


def available_bounds(curve: EntropyCurve) -> List[BoundMode]:
    """Bound modes computable from `curve`."""
    modes = [BoundMode.ACTIVITY_NONADIABATIC, BoundMode.UNCERTAINTY]
    if curve.h_tot is not None and np.all(np.isfinite(curve.h_tot)):
        modes.append(BoundMode.ACTIVITY_TOTAL)
        if curve.mobility is not None:
            modes.append(BoundMode.MOBILITY_TOTAL)
    return modes


def exact_curves(
    kernel: RateKernel,
    noise: NoiseSchedule,
    p0: ArrayLike,
    n_grid: int = 1024,
    eps: float = TIME_EPS,
) -> EntropyCurve:
    """Ground-truth curve by enumeration of the forward marginal at every grid time."""
    t = time_grid(n_grid, eps)
    h_na, act, h_ad, h_tot, mob = [], [], [], [], []
    for ti in t:
        p, sigma = _state(kernel, noise, p0, float(ti))
        h_na.append(nonadiabatic_rate(kernel, p, sigma))
        act.append(activity_rate(kernel, p, sigma))
        h_ad.append(adiabatic_rate(kernel, p, sigma))
        h_tot.append(total_rate(kernel, p, sigma))
        if kernel.is_reversible:
            mob.append(mobility_rate(kernel, p, sigma))
    return EntropyCurve(
        t=t,
        h_na=np.asarray(h_na),
        h_na_se=np.zeros_like(t),
        activity=np.asarray(act),
        n_samples=0,
        h_ad=np.asarray(h_ad),
        h_tot=np.asarray(h_tot),
        mobility=np.asarray(mob) if mob else None,
    )


@dataclass(frozen=True)
class _GridPoint:
    h_na: Estimate
    activity: Estimate


def _estimate_point(
    score: ScoreModel,
    kernel: RateKernel,
    noise: NoiseSchedule,
    dataset: Dataset,
    n_samples: int,
    t: float,
    rng: np.random.Generator,
) -> _GridPoint:
    x0 = dataset.sample(n_samples, rng)
    xt = kernel.corrupt(x0, noise.sigma_bar(t), rng)
    return _GridPoint(
        h_na=h_na_estimate(score, kernel, noise, t, xt),
        activity=activity_estimate(score, kernel, noise, t, xt),
    )


def sweep_curves(
    score: ScoreModel,
    kernel: RateKernel,
    noise: NoiseSchedule,
    dataset: Dataset,
    n_samples: int,
    n_grid: int,
    seed: int,
    mode: BoundMode = BoundMode.ACTIVITY_NONADIABATIC,
    threads: Optional[int] = None,
    eps: float = TIME_EPS,
) -> Tuple[EntropyCurve, WassersteinCurve]:
    """Estimate the entropy curve and its Wasserstein bound on a uniform grid over [eps, 1].

    Grid point i corrupts fresh dataset samples with its own stream `(seed, i)`, so the curves
    are identical for any thread count.

    Args:
        score (ScoreModel): Ratio model used both for the estimate and the reverse generator.
        kernel (RateKernel): Forward kernel.
        noise (NoiseSchedule): Forward noise schedule.
        dataset (Dataset): Source of clean sequences.
        n_samples (int): Samples per grid point.
        n_grid (int): Number of grid points (at least 2).
        seed (int): Run seed.
        mode (BoundMode, optional): Wasserstein bound mode. Defaults to activity-nonadiabatic.
        threads (Optional[int], optional): Worker threads. Defaults to the CPU count.
        eps (float, optional): Left grid endpoint. Defaults to 1e-5.

    Returns:
        Tuple[EntropyCurve, WassersteinCurve]: The estimated curves.
    """
    if n_samples < 1:
        raise ConfigurationError(f"n_samples must be positive. Got {n_samples}")
    t = time_grid(n_grid, eps)
    workers = threads or os.cpu_count() or 1

    def run(i: int) -> _GridPoint:
        point = _estimate_point(
            score, kernel, noise, dataset, n_samples, float(t[i]), derive_rng(seed, i)
        )
        logger.debug(
            "t=%.5f h_na=%.5g activity=%.5g", t[i], point.h_na.value, point.activity.value
        )
        return point

    with ThreadPoolExecutor(max_workers=workers) as pool:
        points = list(pool.map(run, range(t.size)))
    flat = sum(not p.h_na.informative for p in points)
    if flat:
        logger.warning("%d of %d grid points have no standard error", flat, t.size)
    curve = EntropyCurve(
        t=t,
        h_na=np.array([p.h_na.value for p in points]),
        h_na_se=np.array([p.h_na.stderr for p in points]),
        activity=np.array([p.activity.value for p in points]),
        n_samples=n_samples,
    )
    logger.info("Estimated curves on %d grid points with %d samples each", t.size, n_samples)
    return curve, wasserstein_bound(curve, mode)


# -- files ---------------------------------------------------------------------------------------


def write_curves(path: PathLike, entropy: EntropyCurve, wass: WassersteinCurve) -> Path:
    """Write `t,h_na,h_na_se,h_na_cum,activity,w_rate,w_cum[,h_ad,h_tot]`."""
    columns: List[FloatArray] = [
        entropy.t,
        entropy.h_na,
        entropy.h_na_se,
        entropy.h_na_cum,
        entropy.activity,
        wass.rate,
        wass.cumulative,
    ]
    header = list(CURVE_COLUMNS)
    if entropy.h_ad is not None and entropy.h_tot is not None:
        columns.extend([entropy.h_ad, entropy.h_tot])
        header.extend(EXACT_COLUMNS)
    rows = (tuple(float(c[i]) for c in columns) for i in range(entropy.t.size))
    return write_csv(path, header, rows)


def read_curves(
    path: PathLike, mode: BoundMode = BoundMode.ACTIVITY_NONADIABATIC
) -> Tuple[EntropyCurve, WassersteinCurve]:
    """Read a curve file written by [`write_curves`][thermosched.thermo.write_curves].

    Raises:
        CurveFormatError: If the file is malformed; the error names the line.
        InvalidCurveError: If the grid is not strictly increasing.
    """
    table = read_float_table(path, CURVE_COLUMNS, EXACT_COLUMNS)
    entropy = EntropyCurve(
        t=table["t"],
        h_na=table["h_na"],
        h_na_se=table["h_na_se"],
        activity=table["activity"],
        h_ad=table.get("h_ad"),
        h_tot=table.get("h_tot"),
    )
    wass = WassersteinCurve(table["t"], table["w_rate"], table["w_cum"], BoundMode(mode))
    return entropy, wass


def write_bounds(path: PathLike, curve: EntropyCurve) -> Path:
    """Cumulative bound of every mode available for `curve`, one column per mode."""
    bounds: Dict[BoundMode, WassersteinCurve] = {
        m: wasserstein_bound(curve, m) for m in available_bounds(curve)
    }
    header = ["t"] + [str(m) for m in bounds]
    rows = (
        (float(curve.t[i]),) + tuple(float(b.cumulative[i]) for b in bounds.values())
        for i in range(curve.t.size)
    )
    return write_csv(path, header, rows)


@dataclass(frozen=True, eq=False)
class ConsistencyReport:
    """Grid-wise comparison of an estimated curve with an exact one."""

    t: FloatArray
    estimate: FloatArray
    exact: FloatArray
    stderr: FloatArray
    z: FloatArray = field(repr=False)

    @property
    def flagged(self) -> BoolArray:
        """Grid points whose estimate had no usable standard error."""
        return np.isnan(self.z)

    @property
    def max_abs_z(self) -> float:
        if np.all(self.flagged):
            return math.nan
        return float(np.nanmax(np.abs(self.z)))


def compare_with_exact(estimated: EntropyCurve, exact: EntropyCurve) -> ConsistencyReport:
    """z-scores (estimate - exact) / stderr of the non-adiabatic rate on a shared grid."""
    if estimated.t.shape != exact.t.shape or not np.allclose(estimated.t, exact.t):
        raise ConfigurationError("Curves must share the same time grid.")
    se = estimated.h_na_se
    se = np.where(np.isfinite(se) & (se > 0), se, np.nan)
    z = (estimated.h_na - exact.h_na) / se
    return ConsistencyReport(estimated.t, estimated.h_na, exact.h_na, estimated.h_na_se, z)
