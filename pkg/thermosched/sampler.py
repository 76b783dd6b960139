"""Euler tau-leaping simulation of the reverse process along a time schedule.

Rates are frozen at the start of each step. Every token makes at most one jump per step, with
probability 1 - exp(-R_total * dt), to a target drawn in proportion to its reverse rates.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pydantic

from thermosched.exceptions import ConfigurationError, DomainError, NumericalError
from thermosched.io import PathLike, write_json, write_samples
from thermosched.kernels import RateKernel
from thermosched.noise import NoiseSchedule
from thermosched.rng import derive_rng
from thermosched.scheduler import TimeSchedule
from thermosched.score import ScoreModel
from thermosched.typing import FloatArray, IntArray

logger = logging.getLogger(__name__)

CHUNK_SIZE = 512
"""Sequences per independent sampling unit; each unit owns the stream (seed, "sample", c)."""


@dataclass
class SamplerState:
    """Current batch of token sequences during reverse simulation.

    Attributes:
        tokens (IntArray): Shape `(batch, length)`; mask included for absorbing kernels.
        step (int): Number of tau-leaping steps taken.
        rng (np.random.Generator): Stream driving the jumps of this batch.
    """

    tokens: IntArray
    step: int
    rng: np.random.Generator = field(repr=False)


def init_from_prior(
    kernel: RateKernel, batch_size: int, length: int, rng: np.random.Generator
) -> SamplerState:
    """Batch drawn from the kernel's stationary distribution: uniform tokens for the uniform
    kernel, all-mask sequences for the absorbing kernel."""
    if batch_size < 1 or length < 1:
        raise ConfigurationError(f"Sizes must be positive. Got {batch_size}, {length}")
    return SamplerState(kernel.sample_prior((batch_size, length), rng), 0, rng)


def reverse_rates(
    score: ScoreModel, kernel: RateKernel, noise: NoiseSchedule, x: IntArray, t: float
) -> FloatArray:
    """R(x -> y) = sigma(t) Q(y, x) s(x, t)_y for every position, shape `(batch, length, M)`.

    Raises:
        NumericalError: If a rate is not finite; the context names the position and time.
    """
    rates = noise.sigma(t) * kernel.incoming_rates(x) * score(x, t)
    bad = ~np.isfinite(rates)
    if np.any(bad):
        seq, pos, _ = (int(v[0]) for v in np.nonzero(bad))
        raise NumericalError("Non-finite reverse rate", {"t": t, "sequence": seq, "position": pos})
    return rates


def tau_leap_step(
    state: SamplerState,
    score: ScoreModel,
    kernel: RateKernel,
    noise: NoiseSchedule,
    t_from: float,
    t_to: float,
) -> SamplerState:
    """One frozen-rate step from `t_from` down to `t_to`.

    The step length is the exact cumulative-noise increment: R * dt equals
    Q(y, x) s(x)_y (sigma_bar(t_from) - sigma_bar(t_to)).
    """
    if not t_from > t_to >= 0.0:
        raise DomainError(f"Need t_from > t_to >= 0. Got {t_from}, {t_to}")
    x = state.tokens
    rates = reverse_rates(score, kernel, noise, x, t_from)
    dt = (noise.sigma_bar(t_from) - noise.sigma_bar(t_to)) / noise.sigma(t_from)
    total = rates.sum(axis=-1)
    p_jump = -np.expm1(-total * dt)
    rng = state.rng
    u = rng.random(x.shape)
    v = rng.random(x.shape + (1,))
    denom = total[..., None]
    probs = np.divide(rates, denom, out=np.zeros_like(rates), where=denom > 0)
    target = np.minimum((v > np.cumsum(probs, axis=-1)).sum(axis=-1), kernel.num_states - 1)
    tokens = np.where(u < p_jump, target, x).astype(np.int64)
    return SamplerState(tokens, state.step + 1, rng)


def force_unmask(
    state: SamplerState,
    score: ScoreModel,
    kernel: RateKernel,
    noise: NoiseSchedule,
    t: float,
) -> IntArray:
    """Replace tokens still masked by the data token with the largest reverse rate at time `t`.
    Returns the number of forced tokens per sequence."""
    mask = kernel.mask_index
    if mask is None:
        return np.zeros(state.tokens.shape[0], dtype=np.int64)
    masked = state.tokens == mask
    if not masked.any():
        return np.zeros(state.tokens.shape[0], dtype=np.int64)
    rates = reverse_rates(score, kernel, noise, state.tokens, t)
    best = np.argmax(np.delete(rates, mask, axis=-1), axis=-1)
    # mask is the last state, so indices below it are unchanged by the deletion
    state.tokens = np.where(masked, best, state.tokens)
    return masked.sum(axis=1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class SampleResult:
    """Generated sequences and their diagnostics.

    Attributes:
        tokens (IntArray): Shape `(count, length)`.
        nfe (int): Score evaluations per sequence along the schedule (K).
        forced (IntArray): Tokens forced out of the mask at the end, per sequence.
        masked_trace (IntArray): Masked tokens in the whole batch before the first step and
            after every step, before forcing. Length K + 1.
    """

    tokens: IntArray
    nfe: int
    forced: IntArray
    masked_trace: IntArray


def _sample_chunk(
    schedule: TimeSchedule,
    score: ScoreModel,
    kernel: RateKernel,
    noise: NoiseSchedule,
    count: int,
    length: int,
    rng: np.random.Generator,
) -> SampleResult:
    times = schedule.array
    state = init_from_prior(kernel, count, length, rng)
    mask = kernel.mask_index
    trace = [int((state.tokens == mask).sum()) if mask is not None else 0]
    for k in range(schedule.K, 0, -1):
        state = tau_leap_step(state, score, kernel, noise, float(times[k]), float(times[k - 1]))
        trace.append(int((state.tokens == mask).sum()) if mask is not None else 0)
    forced = force_unmask(state, score, kernel, noise, float(times[0]))
    return SampleResult(state.tokens, schedule.K, forced, np.asarray(trace, dtype=np.int64))


def sample(
    schedule: TimeSchedule,
    score: ScoreModel,
    kernel: RateKernel,
    noise: NoiseSchedule,
    batch_size: int,
    length: int,
    seed: int,
    threads: Optional[int] = None,
) -> SampleResult:
    """Walk `schedule` from t = 1 down to t = eps with tau-leaping.

    Work is split in chunks of 512 sequences; chunk c uses the stream `(seed, "sample", c)`, so
    the output does not depend on `threads`. The schedule's strategy tag is not consulted.

    Args:
        schedule (TimeSchedule): Noise times to visit.
        score (ScoreModel): Ratio model for the reverse rates.
        kernel (RateKernel): Forward kernel.
        noise (NoiseSchedule): Forward noise schedule.
        batch_size (int): Number of sequences to generate.
        length (int): Sequence length.
        seed (int): Run seed.
        threads (Optional[int], optional): Worker threads. Defaults to the CPU count.

    Returns:
        SampleResult: Sequences with the per-sequence forced-unmask counts.
    """
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be positive. Got {batch_size}")
    sizes = [min(CHUNK_SIZE, batch_size - start) for start in range(0, batch_size, CHUNK_SIZE)]

    def run(c: int) -> SampleResult:
        return _sample_chunk(
            schedule, score, kernel, noise, sizes[c], length, derive_rng(seed, "sample", c)
        )

    with ThreadPoolExecutor(max_workers=threads or os.cpu_count() or 1) as pool:
        parts = list(pool.map(run, range(len(sizes))))
    result = SampleResult(
        tokens=np.concatenate([p.tokens for p in parts]),
        nfe=schedule.K,
        forced=np.concatenate([p.forced for p in parts]),
        masked_trace=np.sum([p.masked_trace for p in parts], axis=0),
    )
    n_forced = int(result.forced.sum())
    if n_forced:
        logger.warning(
            "%d tokens still masked after %d steps were set to their most likely value",
            n_forced,
            schedule.K,
        )
    logger.info(
        "Sampled %d sequences with %s schedule, K=%d", batch_size, schedule.strategy, schedule.K
    )
    return result


class SampleMetadata(pydantic.BaseModel):
    """Sidecar document written next to a sample file."""

    schedule_sha256: Optional[str] = None
    strategy: str
    K: int
    nfe: int
    seed: int
    count: int
    length: int
    kernel: Dict[str, Any] = {}
    forced_unmasked: int = 0
    forced_per_sample: List[int] = []


def write_sample_outputs(
    path: PathLike,
    result: SampleResult,
    schedule: TimeSchedule,
    seed: int,
    schedule_sha256: Optional[str] = None,
) -> Path:
    """Write the token rows to `path` and the metadata to `<stem>.meta.json` beside it."""
    path = Path(path)
    write_samples(path, result.tokens)
    meta = SampleMetadata(
        schedule_sha256=schedule_sha256,
        strategy=str(schedule.strategy),
        K=schedule.K,
        nfe=result.nfe,
        seed=seed,
        count=int(result.tokens.shape[0]),
        length=int(result.tokens.shape[1]),
        kernel=dict(schedule.kernel),
        forced_unmasked=int(result.forced.sum()),
        forced_per_sample=[int(v) for v in result.forced],
    )
    return write_json(path.with_suffix(".meta.json"), meta.dict())
