import logging

from hypothesis import assume, given, settings
from hypothesis import strategies as st
import numpy as np
import pydantic
import pytest

from thermosched.enums import Strategy
from thermosched.exceptions import (
    ConfigurationError,
    CurveFormatError,
    DegenerateProgressError,
    InvalidCurveError,
)
from thermosched.io import read_json, write_json
from thermosched.kernels import UniformKernel
from thermosched.scheduler import (
    ProgressCurve,
    TimeSchedule,
    Warp,
    build_schedule,
    eds_schedule,
    invert_schedule,
    load_schedule,
    schedule_from_progress,
    uniform_schedule,
    warp,
    wds_schedule,
)
from thermosched.thermo import EntropyCurve, WassersteinCurve, exact_curves, time_grid

GRID = np.linspace(0.0, 1.0, 10001)


def rate_curve(t, h_na):
    return EntropyCurve(
        t=t, h_na=np.asarray(h_na, dtype=np.float64), h_na_se=np.zeros_like(t), activity=t * 0
    )


def test_warp_examples():
    identity = warp(ProgressCurve.from_values(GRID, GRID))
    np.testing.assert_allclose(identity.phi, GRID, atol=1e-15)
    quadratic = warp(ProgressCurve.from_values(GRID, GRID**2))
    assert quadratic(0.5) == pytest.approx(0.25)
    assert quadratic.phi[0] == 0.0
    assert quadratic.phi[-1] == 1.0
    shifted = warp(ProgressCurve.from_values([0.1, 0.2, 0.3], [2.0, 3.0, 4.0]))
    np.testing.assert_allclose(shifted.phi, [0.0, 0.5, 1.0])


def test_warp_degenerate():
    with pytest.raises(DegenerateProgressError):
        warp(ProgressCurve.from_values([0.0, 1.0], [0.0, 0.0]))


def test_progress_curve_invariants():
    with pytest.raises(InvalidCurveError):
        ProgressCurve.from_values([0.0, 0.0], [0.0, 1.0])
    with pytest.raises(InvalidCurveError):
        ProgressCurve.from_values([0.0, 0.5, 1.0], [0.0, 1.0, 0.5])
    with pytest.raises(InvalidCurveError):
        ProgressCurve.from_values([0.0, 1.0], [0.0, np.nan])
    with pytest.raises(InvalidCurveError):
        ProgressCurve.from_values([0.0], [0.0])
    # rounding-level decreases are tolerated
    ProgressCurve.from_values([0.0, 0.5, 1.0], [0.0, 1.0, 1.0 - 1e-13])


def test_invert_identity():
    schedule = invert_schedule(Warp(GRID, GRID), 4)
    np.testing.assert_allclose(schedule.times, [0.0, 0.25, 0.5, 0.75, 1.0], atol=1e-12)
    assert schedule.K == 4
    assert schedule.epsilon == 0.0


def test_invert_quadratic():
    schedule = invert_schedule(warp(ProgressCurve.from_values(GRID, GRID**2)), 4)
    expected = np.sqrt(np.arange(5) / 4)
    np.testing.assert_allclose(schedule.times, expected, atol=1e-6)
    assert schedule.times[1] == pytest.approx(0.5, abs=1e-6)
    assert schedule.times[3] == pytest.approx(0.86603, abs=1e-5)


def test_invert_endpoints_only():
    schedule = invert_schedule(Warp(GRID, GRID**3), 1)
    assert schedule.times == [0.0, 1.0]


def test_invert_plateau_takes_smallest_time():
    phi = Warp(np.array([0.0, 1.0, 2.0, 3.0]), np.array([0.0, 0.5, 0.5, 1.0]))
    assert invert_schedule(phi, 2).times == [0.0, 1.0, 3.0]


def test_invert_errors():
    with pytest.raises(InvalidCurveError):
        invert_schedule(Warp(np.array([0.0, 0.5, 1.0]), np.array([0.0, 0.6, 0.5])), 2)
    with pytest.raises(ConfigurationError):
        invert_schedule(Warp(GRID, GRID), 0)


def test_uniform_schedule():
    eps = 1e-5
    two = uniform_schedule(2)
    assert two.times == pytest.approx([eps, (1 + eps) / 2, 1.0], abs=1e-15)
    assert uniform_schedule(1).times == [eps, 1.0]
    gaps = uniform_schedule(64).gaps
    assert np.max(gaps) - np.min(gaps) < 1e-15
    assert two.strategy is Strategy.UNIFORM
    with pytest.raises(ConfigurationError):
        uniform_schedule(0)


def test_constant_rate_collapses_to_uniform():
    t = time_grid(1024)
    for K in (1, 3, 8, 100):
        eds = eds_schedule(rate_curve(t, np.full(t.size, 0.7)), K)
        np.testing.assert_allclose(eds.times, uniform_schedule(K).times, atol=1e-12)
        assert eds.strategy is Strategy.EDS
        wass = WassersteinCurve(t, np.full(t.size, 2.0), 2.0 * (t - t[0]))
        wds = wds_schedule(wass, K)
        np.testing.assert_allclose(wds.times, uniform_schedule(K).times, atol=1e-12)
        assert wds.strategy is Strategy.WDS


def test_zero_progress_earns_zero_steps():
    t = np.linspace(0.0, 1.0, 1001)
    schedule = eds_schedule(rate_curve(t, np.where(t >= 0.5, 1.0, 0.0)), 8)
    assert np.all(np.asarray(schedule.times[1:-1]) >= 0.5)
    assert schedule.times[0] == 0.0


def test_wds_square_root_progress():
    wass = WassersteinCurve(GRID, np.gradient(np.sqrt(GRID), GRID), np.sqrt(GRID))
    schedule = wds_schedule(wass, 4)
    np.testing.assert_allclose(schedule.times, (np.arange(5) / 4) ** 2, atol=1e-6)
    phi = warp(ProgressCurve(GRID, np.sqrt(GRID)))
    np.testing.assert_allclose(np.diff(phi(schedule.array)), 0.25, atol=1e-6)


def test_eds_concentrates_steps_at_the_peak(binomial, geometric):
    curve = exact_curves(UniformKernel(15), geometric, binomial, n_grid=1024)
    schedule = eds_schedule(curve, 16)
    peak = curve.t[np.argmax(curve.h_na)]
    j = int(np.searchsorted(schedule.array, peak)) - 1
    assert int(np.argmin(schedule.gaps)) in (j - 1, j, j + 1)


def test_refinement():
    phi = warp(ProgressCurve.from_values(GRID, np.sin(GRID * np.pi / 2) ** 3))
    coarse = invert_schedule(phi, 4).array
    fine = invert_schedule(phi, 8).array
    np.testing.assert_allclose(coarse, fine[::2], atol=1e-6)


@settings(max_examples=1000, deadline=None)
@given(
    rates=st.lists(st.floats(0.0, 10.0), min_size=2, max_size=40),
    K=st.integers(1, 64),
)
def test_random_curves_round_trip(rates, K):
    rates = np.asarray(rates)
    assume(rates.sum() > 1e-3)
    t = np.linspace(1e-5, 1.0, rates.size)
    curve = rate_curve(t, rates)
    schedule = eds_schedule(curve, K, fallback=False)
    times = schedule.array
    assert times.size == K + 1
    assert np.all(np.diff(times) > 0)
    assert times[0] == t[0] and times[-1] == 1.0
    phi = warp(ProgressCurve(t, curve.h_na_cum))
    np.testing.assert_allclose(phi(times), np.arange(K + 1) / K, atol=1e-6)


def test_fallback(caplog):
    t = time_grid(16)
    flat = rate_curve(t, np.zeros(t.size))
    with caplog.at_level(logging.WARNING, logger="thermosched.scheduler"):
        schedule = eds_schedule(flat, 4, seed=7)
    assert "degenerate" in caplog.text
    assert schedule.strategy is Strategy.UNIFORM
    assert schedule.seed == 7
    np.testing.assert_allclose(schedule.times, uniform_schedule(4).times)
    with pytest.raises(DegenerateProgressError):
        eds_schedule(flat, 4, fallback=False)
    negative = rate_curve(t, -np.ones(t.size))
    assert schedule_from_progress(
        ProgressCurve(t, negative.h_na_cum), 4, Strategy.EDS
    ).strategy is Strategy.UNIFORM


def test_build_schedule_dispatch():
    t = time_grid(64)
    curve = rate_curve(t, np.ones(t.size))
    assert build_schedule("uniform", 4).strategy is Strategy.UNIFORM
    assert build_schedule(Strategy.EDS, 4, entropy=curve).strategy is Strategy.EDS
    wass = WassersteinCurve(t, np.ones(t.size), t - t[0])
    assert build_schedule("wds", 4, wass=wass).strategy is Strategy.WDS
    with pytest.raises(ConfigurationError, match="EDS needs"):
        build_schedule("eds", 4)
    with pytest.raises(ConfigurationError, match="WDS needs"):
        build_schedule("wds", 4, entropy=curve)
    with pytest.raises(ValueError):
        build_schedule("cosine", 4)


def test_schedule_validation():
    with pytest.raises(pydantic.ValidationError, match="expected 3 times"):
        TimeSchedule(strategy="eds", K=2, times=[0.0, 1.0])
    with pytest.raises(pydantic.ValidationError, match="strictly increasing"):
        TimeSchedule(strategy="eds", K=2, times=[0.0, 0.5, 0.5])
    with pytest.raises(pydantic.ValidationError, match="lie in"):
        TimeSchedule(strategy="eds", K=1, times=[0.5, 1.5])
    with pytest.raises(pydantic.ValidationError):
        TimeSchedule(strategy="eds", K=0, times=[0.5])
    schedule = uniform_schedule(2)
    with pytest.raises(TypeError):
        schedule.K = 3


def test_schedule_file_round_trip(tmp_path):
    kernel = {"kernel": "uniform", "vocab": 15, "noise": "geometric"}
    schedule = build_schedule(
        "uniform", 8, kernel=kernel, source_curve_sha256="ab" * 32, seed=11
    )
    path = schedule.write(tmp_path / "schedule.json")
    document = read_json(path)
    assert document["strategy"] == "uniform"
    assert document["version"] == 1
    assert document["kernel"] == kernel
    assert len(document["times"]) == 9
    loaded = load_schedule(path)
    assert loaded == schedule
    assert loaded.times == schedule.times

    document["version"] = 2
    write_json(tmp_path / "future.json", document)
    with pytest.raises(CurveFormatError, match="invalid schedule"):
        load_schedule(tmp_path / "future.json")
    with pytest.raises(CurveFormatError):
        load_schedule(tmp_path / "missing.json")
