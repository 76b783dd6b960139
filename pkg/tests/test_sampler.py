import numpy as np
import pytest
from pytest_cases import param_fixtures

from thermosched.exceptions import ConfigurationError, DomainError, NumericalError
from thermosched.io import read_json, read_samples
from thermosched.kernels import AbsorbingKernel, UniformKernel
from thermosched.noise import GeometricNoise, LogLinearNoise
from thermosched.sampler import (
    CHUNK_SIZE,
    SamplerState,
    force_unmask,
    init_from_prior,
    reverse_rates,
    sample,
    tau_leap_step,
    write_sample_outputs,
)
from thermosched.scheduler import eds_schedule, uniform_schedule
from thermosched.score import ConstantScore, OracleScore
from thermosched.thermo import exact_curves

from tests.utils import tau_leap_law, total_variation

kernel, noise = param_fixtures(
    argnames="kernel, noise",
    argvalues=[(UniformKernel(15), GeometricNoise()), (AbsorbingKernel(15), LogLinearNoise())],
    ids=["uniform", "absorbing"],
)


def empirical(tokens, n_states):
    return np.bincount(tokens.ravel(), minlength=n_states) / tokens.size


def test_init_from_prior():
    absorbing = AbsorbingKernel(4)
    state = init_from_prior(absorbing, 7, 3, np.random.default_rng(0))
    assert np.all(state.tokens == absorbing.mask_index)
    assert state.step == 0

    uniform = UniformKernel(4)
    state = init_from_prior(uniform, 1000, 1000, np.random.default_rng(0))
    freq = empirical(state.tokens, 4)
    assert np.all(np.abs(freq - 0.25) < 4 * np.sqrt(0.25 * 0.75 / 1e6))
    again = init_from_prior(uniform, 1000, 1000, np.random.default_rng(0))
    np.testing.assert_array_equal(state.tokens, again.tokens)
    with pytest.raises(ConfigurationError):
        init_from_prior(uniform, 0, 3, np.random.default_rng(0))


def test_reverse_rates(kernel, noise, binomial):
    score = OracleScore(kernel, noise, binomial)
    x = np.array([[kernel.num_states - 1], [3]])
    rates = reverse_rates(score, kernel, noise, x, 0.5)
    expected = noise.sigma(0.5) * kernel.incoming_rates(x) * score(x, 0.5)
    np.testing.assert_allclose(rates, expected)
    assert rates[0, 0, kernel.num_states - 1] == 0.0


def test_tiny_step_is_identity(kernel, noise):
    score = ConstantScore(kernel, noise)
    state = init_from_prior(kernel, 256, 4, np.random.default_rng(1))
    before = state.tokens.copy()
    after = tau_leap_step(state, score, kernel, noise, 0.5, 0.5 - 1e-13)
    np.testing.assert_array_equal(after.tokens, before)
    assert after.step == 1


def test_step_domain(kernel, noise):
    score = ConstantScore(kernel, noise)
    state = init_from_prior(kernel, 4, 1, np.random.default_rng(1))
    with pytest.raises(DomainError):
        tau_leap_step(state, score, kernel, noise, 0.5, 0.5)
    with pytest.raises(DomainError):
        tau_leap_step(state, score, kernel, noise, 0.2, 0.4)
    with pytest.raises(DomainError):
        tau_leap_step(state, score, kernel, noise, 0.2, -0.1)


def test_unmasked_tokens_stay_put():
    kernel, noise = AbsorbingKernel(5), LogLinearNoise()
    score = ConstantScore(kernel, noise, length=3, value=50.0)
    tokens = np.tile(np.array([[0, 4, 5]]), (500, 1))
    state = SamplerState(tokens.copy(), 0, np.random.default_rng(2))
    for t_from, t_to in [(1.0, 0.5), (0.5, 0.1), (0.1, 1e-5)]:
        state = tau_leap_step(state, score, kernel, noise, t_from, t_to)
        np.testing.assert_array_equal(state.tokens[:, :2], tokens[:, :2])
    # the masked column is released with a large jump probability
    assert np.mean(state.tokens[:, 2] != 5) > 0.99


def test_non_finite_rate(kernel, noise):
    class Overflowing(ConstantScore):
        def ratios(self, x, t):
            out = super().ratios(x, t)
            out[:, 1, :] = np.inf
            return out

    score = Overflowing(kernel, noise, length=2)
    state = init_from_prior(kernel, 3, 2, np.random.default_rng(0))
    with pytest.raises(NumericalError, match="position=1"):
        tau_leap_step(state, score, kernel, noise, 0.7, 0.6)


def test_force_unmask():
    kernel, noise = AbsorbingKernel(3), LogLinearNoise()
    score = OracleScore(kernel, noise, [0.2, 0.5, 0.3])
    state = SamplerState(np.array([[3], [0], [3]]), 0, np.random.default_rng(0))
    forced = force_unmask(state, score, kernel, noise, 1e-5)
    np.testing.assert_array_equal(forced, [1, 0, 1])
    np.testing.assert_array_equal(state.tokens, [[1], [0], [1]])
    uniform = UniformKernel(3)
    state = SamplerState(np.array([[2]]), 0, np.random.default_rng(0))
    assert force_unmask(state, ConstantScore(uniform, noise), uniform, noise, 0.1).sum() == 0


def test_sample_shapes_and_counts(kernel, noise, binomial):
    score = OracleScore(kernel, noise, binomial)
    result = sample(uniform_schedule(8), score, kernel, noise, 100, 1, seed=0)
    assert result.tokens.shape == (100, 1)
    assert result.nfe == 8
    assert result.forced.shape == (100,)
    assert np.all(result.tokens < 15)
    assert result.masked_trace.size == 9
    if kernel.mask_index is not None:
        assert result.masked_trace[0] == 100
        assert np.all(np.diff(result.masked_trace) <= 0)
        assert result.masked_trace[-1] == result.forced.sum()
    else:
        np.testing.assert_array_equal(result.masked_trace, 0)
    with pytest.raises(ConfigurationError):
        sample(uniform_schedule(8), score, kernel, noise, 0, 1, seed=0)


def test_single_step_absorbing():
    kernel, noise = AbsorbingKernel(15), LogLinearNoise()
    score = ConstantScore(kernel, noise, length=4)
    result = sample(uniform_schedule(1), score, kernel, noise, 64, 4, seed=3)
    assert result.nfe == 1
    assert np.all(result.tokens != kernel.mask_index)
    assert result.forced.sum() == result.masked_trace[-1]


def test_sample_is_deterministic(kernel, noise, binomial):
    score = OracleScore(kernel, noise, binomial)
    schedule = uniform_schedule(16)
    size = CHUNK_SIZE + 88
    one = sample(schedule, score, kernel, noise, size, 1, seed=5, threads=1)
    many = sample(schedule, score, kernel, noise, size, 1, seed=5, threads=3)
    np.testing.assert_array_equal(one.tokens, many.tokens)
    first_chunk = sample(schedule, score, kernel, noise, CHUNK_SIZE, 1, seed=5)
    np.testing.assert_array_equal(one.tokens[:CHUNK_SIZE], first_chunk.tokens)
    other = sample(schedule, score, kernel, noise, size, 1, seed=6)
    assert not np.array_equal(one.tokens, other.tokens)


def test_sample_follows_step_law(kernel, noise, binomial):
    score = OracleScore(kernel, noise, binomial)
    schedule = uniform_schedule(16)
    law = tau_leap_law(schedule, score, kernel, noise)
    result = sample(schedule, score, kernel, noise, 20000, 1, seed=8)
    assert total_variation(empirical(result.tokens, kernel.num_states), law) < 0.02


def test_fine_grid_reaches_target(kernel, noise, binomial):
    score = OracleScore(kernel, noise, binomial)
    law = tau_leap_law(uniform_schedule(1024), score, kernel, noise)
    assert total_variation(law, kernel.embed(binomial)) < 0.01


def test_error_shrinks_with_steps(kernel, noise, binomial):
    score = OracleScore(kernel, noise, binomial)
    target = kernel.embed(binomial)
    errors = [
        total_variation(tau_leap_law(uniform_schedule(K), score, kernel, noise), target)
        for K in (8, 16, 32, 64, 128)
    ]
    assert errors[-1] <= errors[0]
    assert errors[-1] < 0.05


def test_eds_is_no_worse_than_uniform(binomial, geometric):
    kernel = UniformKernel(15)
    score = OracleScore(kernel, geometric, binomial)
    curve = exact_curves(kernel, geometric, binomial, n_grid=1024)
    eds = tau_leap_law(eds_schedule(curve, 64), score, kernel, geometric)
    uniform = tau_leap_law(uniform_schedule(64), score, kernel, geometric)
    assert total_variation(eds, binomial) <= total_variation(uniform, binomial) + 0.01


@pytest.mark.slow
def test_two_state_chain_exactness():
    kernel, noise = UniformKernel(2), GeometricNoise()
    p0 = np.array([0.8, 0.2])
    score = OracleScore(kernel, noise, p0)
    result = sample(uniform_schedule(1024), score, kernel, noise, 100000, 1, seed=0)
    assert total_variation(empirical(result.tokens, 2), p0) < 0.02


@pytest.mark.slow
def test_monte_carlo_eds_against_uniform(binomial, geometric):
    kernel = UniformKernel(15)
    score = OracleScore(kernel, geometric, binomial)
    curve = exact_curves(kernel, geometric, binomial, n_grid=1024)
    runs = {
        name: sample(schedule, score, kernel, geometric, 40000, 1, seed=1)
        for name, schedule in [("eds", eds_schedule(curve, 64)), ("uniform", uniform_schedule(64))]
    }
    tv = {name: total_variation(empirical(r.tokens, 15), binomial) for name, r in runs.items()}
    assert tv["eds"] <= tv["uniform"] + 0.01


def test_write_sample_outputs(tmp_path, binomial, geometric):
    kernel = UniformKernel(15)
    score = OracleScore(kernel, geometric, binomial)
    schedule = uniform_schedule(4, kernel={"kernel": "uniform", "vocab": 15})
    result = sample(schedule, score, kernel, geometric, 10, 1, seed=2)
    path = write_sample_outputs(tmp_path / "samples.txt", result, schedule, 2, "cd" * 32)
    assert path.name == "samples.meta.json"
    meta = read_json(path)
    assert meta["K"] == 4 and meta["nfe"] == 4
    assert meta["seed"] == 2
    assert meta["count"] == 10 and meta["length"] == 1
    assert meta["strategy"] == "uniform"
    assert meta["schedule_sha256"] == "cd" * 32
    assert meta["kernel"] == {"kernel": "uniform", "vocab": 15}
    assert meta["forced_per_sample"] == [0] * 10
    np.testing.assert_array_equal(read_samples(tmp_path / "samples.txt"), result.tokens)
