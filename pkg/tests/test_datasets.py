import numpy as np
import pytest

from thermosched.datasets import (
    CategoricalDataset,
    CountdownDataset,
    CountdownSpec,
    TokenDataset,
    binomial_dataset,
    gen_countdown,
)
from thermosched.exceptions import ConfigurationError, InvalidDistributionError
from thermosched.metrics import rule_violation_rate


def test_binomial_dataset(binomial):
    assert binomial.shape == (15,)
    assert binomial.sum() == pytest.approx(1.0, abs=1e-15)
    assert binomial[7] == pytest.approx(3432 / 16384, rel=1e-12)
    np.testing.assert_allclose(binomial, binomial[::-1], rtol=1e-12)
    skewed = binomial_dataset(4, 0.25)
    assert skewed[0] == pytest.approx(0.75**4)
    with pytest.raises(ConfigurationError):
        binomial_dataset(0)
    with pytest.raises(ConfigurationError):
        binomial_dataset(4, 1.5)


def test_countdown_sequences_follow_the_rule():
    spec = CountdownSpec()
    data = gen_countdown(spec, 2000, np.random.default_rng(0))
    assert data.shape == (2000, 16)
    assert data.min() >= 0 and data.max() < 32
    assert rule_violation_rate(data) == 0.0
    # resets after 0 are spread over the vocabulary
    after_zero = data[:, 1:][data[:, :-1] == 0]
    assert len(np.unique(after_zero)) > 20


def test_countdown_is_deterministic():
    spec = CountdownSpec(vocab=8, length=5)
    one = gen_countdown(spec, 50, np.random.default_rng(3))
    two = gen_countdown(spec, 50, np.random.default_rng(3))
    assert one.tobytes() == two.tobytes()


def test_countdown_spec_validation():
    with pytest.raises(ConfigurationError):
        CountdownSpec(vocab=1)
    with pytest.raises(ConfigurationError):
        CountdownSpec(length=1)
    with pytest.raises(ConfigurationError):
        gen_countdown(CountdownSpec(), 0, np.random.default_rng(0))


def test_dataset_sources(binomial):
    rng = np.random.default_rng(1)
    categorical = CategoricalDataset(binomial)
    draws = categorical.sample(50000, rng)
    assert draws.shape == (50000, 1)
    freq = np.bincount(draws.ravel(), minlength=15) / draws.size
    np.testing.assert_allclose(freq, binomial, atol=0.01)
    with pytest.raises(InvalidDistributionError):
        CategoricalDataset([0.5, 0.6])

    countdown = CountdownDataset(CountdownSpec(vocab=6, length=4))
    assert countdown.length == 4
    assert countdown.sample(10, rng).shape == (10, 4)

    fixed = TokenDataset(np.array([[1, 2], [3, 4]]))
    assert fixed.length == 2
    drawn = fixed.sample(20, rng)
    assert set(map(tuple, drawn)) <= {(1, 2), (3, 4)}
    with pytest.raises(ConfigurationError):
        TokenDataset(np.zeros((0, 2)))
