import math

import numpy as np
import pytest

from thermosched.enums import Strategy
from thermosched.exceptions import ConfigurationError, InvalidDistributionError
from thermosched.metrics import (
    MetricReport,
    empirical_distribution,
    evaluate,
    hellinger,
    rule_violation_rate,
    rule_violations,
    total_variation,
    violation_report,
    write_reports,
)

from tests.utils import random_distribution


def test_rule_violation_examples():
    assert rule_violation_rate([[5, 4, 3, 2, 1, 0, 17, 16]]) == 0.0
    assert rule_violation_rate([[5, 4, 7, 6]]) == pytest.approx(1 / 3)
    assert rule_violation_rate([[9] * 10]) == 1.0
    assert rule_violation_rate([[0, 0, 0, 31]]) == 0.0
    np.testing.assert_array_equal(rule_violations([[5, 4, 7, 6], [3, 2, 1, 0]]), [1, 0])


def test_rule_violation_out_of_vocab():
    # a leftover mask token breaks both pairs it touches
    assert rule_violation_rate([[3, 32, 1]]) == 1.0
    assert rule_violation_rate([[2, 1, 0]], vocab=2) == pytest.approx(0.5)
    with pytest.raises(ConfigurationError):
        rule_violation_rate([[1], [2]])


def test_violation_report():
    report = violation_report(np.array([[5, 4, 7, 6], [3, 2, 1, 0]]), strategy=Strategy.EDS, K=8)
    assert report.metric == "rule_violation_rate"
    assert report.value == pytest.approx(1 / 6)
    assert report.stderr == pytest.approx(np.std([1 / 3, 0.0], ddof=1) / math.sqrt(2))
    assert report.n == 2
    assert report.nfe == 8


def test_distance_examples():
    assert hellinger([0.3, 0.7], [0.3, 0.7]) == pytest.approx(0.0, abs=1e-6)
    assert hellinger([1.0, 0.0], [0.0, 1.0]) == 1.0
    assert hellinger([0.5, 0.5], [1.0, 0.0]) == pytest.approx(0.54120, abs=1e-5)
    assert total_variation([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert total_variation([1.0, 0.0, 0.0], [0.0, 0.0, 1.0]) == 1.0
    assert total_variation([0.75, 0.25], [0.5, 0.5]) == pytest.approx(0.25)


def test_distance_errors():
    with pytest.raises(InvalidDistributionError):
        hellinger([0.5, 0.5], [0.2, 0.3, 0.5])
    with pytest.raises(InvalidDistributionError):
        total_variation([0.5, 0.6], [0.5, 0.5])


def test_tv_bounded_by_hellinger():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 20))
        p = random_distribution(rng, n, floor=0.0)
        q = random_distribution(rng, n, floor=0.0)
        tv, h = total_variation(p, q), hellinger(p, q)
        assert 0.0 <= tv <= 1.0 and 0.0 <= h <= 1.0
        assert tv <= math.sqrt(2) * h + 1e-12


def test_empirical_distribution():
    np.testing.assert_allclose(empirical_distribution([[0], [2], [2], [1]], 3), [0.25, 0.25, 0.5])
    with pytest.raises(ConfigurationError):
        empirical_distribution([[3]], 3)
    with pytest.raises(ConfigurationError):
        empirical_distribution(np.zeros((0, 1)), 3)


def test_evaluate(binomial):
    report = evaluate("countdown", [[5, 4, 7, 6]], strategy=Strategy.WDS, K=4)
    assert report.value == pytest.approx(1 / 3)
    assert report.strategy is Strategy.WDS

    samples = np.repeat(np.arange(15), 10).reshape(-1, 1)
    tv = evaluate("tv", samples)
    assert tv.metric == "tv"
    assert tv.value == pytest.approx(total_variation(np.full(15, 1 / 15), binomial))
    assert tv.n == 150
    assert tv.stderr is None
    two_state = evaluate("hellinger", [[0], [0]], target=[0.5, 0.5])
    assert two_state.value == pytest.approx(0.54120, abs=1e-5)
    with pytest.raises(ConfigurationError, match="Unknown evaluation task"):
        evaluate("perplexity", samples)
    with pytest.raises(ConfigurationError):
        evaluate("tv", [[15]])


def test_write_reports(tmp_path):
    reports = [
        MetricReport("rule_violation_rate", 0.125, 1024, 0.01, Strategy.UNIFORM, 4),
        MetricReport("tv", 0.5, 10),
    ]
    path = write_reports(tmp_path / "reports.csv", reports)
    assert path.read_text().splitlines() == [
        "strategy,K,metric,value,stderr,n",
        "uniform,4,rule_violation_rate,0.125,0.01,1024",
        ",,tv,0.5,,10",
    ]
