"""Evaluation metrics for generated samples and the report rows the harnesses write."""
from dataclasses import dataclass
import logging
import math
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from thermosched.datasets import CountdownSpec, binomial_dataset
from thermosched.enums import EvalTask, Strategy
from thermosched.exceptions import ConfigurationError, InvalidDistributionError
from thermosched.io import PathLike, write_csv
from thermosched.typing import ArrayLike, FloatArray, IntArray, as_distribution, as_tokens

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ("strategy", "K", "metric", "value", "stderr", "n")


def rule_violations(sequences: IntArray, vocab: int = 32) -> IntArray:
    """Number of adjacent pairs (a, b) per sequence breaking the countdown rule.

    A pair is valid when a = 0 (free reset) or b = a - 1. Any pair touching a token outside
    0..vocab-1 is a violation.
    """
    x = as_tokens(sequences)
    if x.shape[1] < 2:
        raise ConfigurationError("Rule violations need sequences of length >= 2.")
    a, b = x[:, :-1], x[:, 1:]
    in_vocab = (a >= 0) & (a < vocab) & (b >= 0) & (b < vocab)
    valid = in_vocab & ((a == 0) | (b == a - 1))
    return (~valid).sum(axis=1).astype(np.int64)


def rule_violation_rate(sequences: IntArray, vocab: int = 32) -> float:
    """Fraction of adjacent pairs breaking the countdown rule, in [0, 1].

    Example:
        `rule_violation_rate([[5, 4, 7, 6]])` is 1/3: only the pair (4, 7) breaks the rule.
    """
    x = as_tokens(sequences)
    return float(rule_violations(x, vocab).sum() / (x.shape[0] * (x.shape[1] - 1)))


def _pair(p: ArrayLike, q: ArrayLike):
    p, q = as_distribution(p), as_distribution(q)
    if p.shape != q.shape:
        raise InvalidDistributionError(
            f"Distributions must share a support. Got sizes {p.size} and {q.size}"
        )
    return p, q


def hellinger(p: ArrayLike, q: ArrayLike) -> float:
    """sqrt(1 - sum_i sqrt(p_i q_i)), in [0, 1]."""
    p, q = _pair(p, q)
    bc = float(np.sqrt(p * q).sum())
    return math.sqrt(max(0.0, 1.0 - bc))


def total_variation(p: ArrayLike, q: ArrayLike) -> float:
    """Half the L1 distance, in [0, 1]."""
    p, q = _pair(p, q)
    return float(min(1.0, 0.5 * np.abs(p - q).sum()))


def empirical_distribution(samples: IntArray, num_states: int) -> FloatArray:
    """Frequencies of the tokens in `samples` over 0..num_states-1.

    Raises:
        ConfigurationError: If a token falls outside the support.
    """
    flat = np.asarray(samples, dtype=np.int64).reshape(-1)
    if flat.size == 0:
        raise ConfigurationError("No samples.")
    if flat.min() < 0 or flat.max() >= num_states:
        raise ConfigurationError(f"Tokens must lie in [0, {num_states}).")
    return np.bincount(flat, minlength=num_states) / flat.size


@dataclass(frozen=True)
class MetricReport:
    """One evaluation result.

    Attributes:
        strategy (Optional[Strategy]): Schedule that produced the samples, if known.
        K (Optional[int]): Sampler steps, which equals the NFE per sequence.
        metric (str): Metric name.
        value (float): Metric value.
        stderr (Optional[float]): Standard error where the metric is a sample mean.
        n (int): Number of sequences evaluated.
    """

    metric: str
    value: float
    n: int
    stderr: Optional[float] = None
    strategy: Optional[Strategy] = None
    K: Optional[int] = None

    @property
    def nfe(self) -> Optional[int]:
        return self.K

    def row(self):
        return (
            "" if self.strategy is None else str(self.strategy),
            "" if self.K is None else self.K,
            self.metric,
            float(self.value),
            "" if self.stderr is None else float(self.stderr),
            self.n,
        )


def write_reports(path: PathLike, reports: Iterable[MetricReport]) -> Path:
    """CSV with columns `strategy,K,metric,value,stderr,n`."""
    return write_csv(path, REPORT_COLUMNS, (r.row() for r in reports))


def violation_report(
    sequences: IntArray,
    vocab: int = 32,
    strategy: Optional[Strategy] = None,
    K: Optional[int] = None,
) -> MetricReport:
    """Rule-violation rate with the standard error of the per-sequence rates."""
    x = as_tokens(sequences)
    per_seq = rule_violations(x, vocab) / (x.shape[1] - 1)
    n = per_seq.size
    se = float(per_seq.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return MetricReport(
        metric="rule_violation_rate",
        value=float(per_seq.mean()),
        stderr=se,
        n=n,
        strategy=strategy,
        K=K,
    )


def evaluate(
    task: Union[EvalTask, str],
    samples: IntArray,
    target: Optional[ArrayLike] = None,
    vocab: int = CountdownSpec.vocab,
    strategy: Optional[Strategy] = None,
    K: Optional[int] = None,
) -> MetricReport:
    """Score `samples` for `task`.

    `countdown` measures the rule-violation rate. `tv` and `hellinger` compare the empirical
    token distribution of single-token samples with `target` (the 14-trial binomial by default).

    Raises:
        ConfigurationError: If `task` is unknown or the samples do not fit the target support.
    """
    try:
        task = EvalTask(task)
    except ValueError:
        raise ConfigurationError(f"Unknown evaluation task {task!r}.")
    x = as_tokens(samples)
    if task is EvalTask.COUNTDOWN:
        return violation_report(x, vocab, strategy, K)
    target = as_distribution(binomial_dataset() if target is None else target)
    empirical = empirical_distribution(x, target.size)
    metric = total_variation if task is EvalTask.TV else hellinger
    return MetricReport(
        metric=str(task),
        value=metric(empirical, target),
        n=int(x.shape[0]),
        strategy=strategy,
        K=K,
    )
