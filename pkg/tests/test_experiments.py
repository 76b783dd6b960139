import json
import math

import numpy as np
import pytest

from thermosched.config import load_config
from thermosched.enums import Strategy
from thermosched.exceptions import ConfigurationError, ScheduleMismatchError
from thermosched.experiments import (
    FIGURE_ROWS,
    MANIFEST_FILE,
    build_score,
    check_manifest_digest,
    check_schedule_kernel,
    estimate_curves,
    run_binomial_experiment,
    run_countdown_experiment,
    sample_to_file,
    schedule_from_files,
)
from thermosched.io import read_json, read_samples, sha256_file
from thermosched.mlp import MLPArchitecture, MLPParameters, load_parameters, save_parameters
from thermosched.scheduler import build_schedule, load_schedule
from thermosched.score import OracleScore


def small_binomial(tmp_path, **extra):
    return load_config(
        overrides={"seed": 11, "grid": 6, "n_samples": 64, "out": tmp_path, **extra}
    )


def quick_training(tmp_path, **extra):
    values = {
        "train_steps": 5,
        "train_size": 64,
        "batch_size": 16,
        "hidden": 8,
        "depth": 1,
    }
    values.update(extra)
    return small_binomial(tmp_path, **values)


def tiny_countdown(tmp_path, **extra):
    values = {
        "seed": 5,
        "data": "countdown",
        "vocab": 4,
        "length": 3,
        "grid": 4,
        "n_samples": 32,
        "train_steps": 5,
        "train_size": 64,
        "batch_size": 16,
        "hidden": 8,
        "depth": 1,
        "eval_samples": 16,
        "k_list": [2, 4],
        "strategies": ["uniform", "eds"],
        "out": tmp_path,
    }
    values.update(extra)
    return load_config(overrides=values)


def test_estimate_curves(tmp_path):
    config = small_binomial(tmp_path)
    files = estimate_curves(config)
    assert files.curves == tmp_path / "curves.csv"
    assert files.entropy.t.size == 6
    manifest = read_json(files.manifest)
    assert manifest["command"] == "estimate"
    assert manifest["config"]["seed"] == 11
    assert set(manifest["seeds"]) == {f"grid/{i}" for i in range(6)}
    assert manifest["files"]["curves.csv"] == sha256_file(files.curves)
    assert manifest["files"]["bounds.csv"] == sha256_file(files.bounds)


def test_estimate_curves_are_reproducible(tmp_path):
    one = estimate_curves(small_binomial(tmp_path / "a", threads=1))
    two = estimate_curves(small_binomial(tmp_path / "b", threads=3))
    assert one.curves.read_bytes() == two.curves.read_bytes()


def test_manifest_digest(tmp_path):
    files = estimate_curves(small_binomial(tmp_path))
    check_manifest_digest(files.curves)
    # files without a manifest beside them are not checked
    loose = tmp_path / "elsewhere" / "curves.csv"
    loose.parent.mkdir()
    loose.write_bytes(files.curves.read_bytes() + b"\n")
    check_manifest_digest(loose)

    files.curves.write_text(files.curves.read_text() + "\n")
    with pytest.raises(ScheduleMismatchError, match="regenerate"):
        check_manifest_digest(files.curves)
    with pytest.raises(ScheduleMismatchError):
        schedule_from_files(small_binomial(tmp_path), Strategy.EDS, 4, files.curves)


def test_schedule_from_files(tmp_path):
    config = small_binomial(tmp_path)
    files = estimate_curves(config)
    uniform = schedule_from_files(config, "uniform", 4)
    assert uniform.strategy is Strategy.UNIFORM
    assert uniform.source_curve_sha256 is None
    assert uniform.kernel == config.block()
    assert uniform.seed == 11

    eds = schedule_from_files(config, Strategy.EDS, 16, files.curves)
    assert len(eds.times) == 17
    assert eds.times[0] == pytest.approx(files.entropy.t[0])
    assert eds.times[-1] == 1.0
    assert eds.source_curve_sha256 == sha256_file(files.curves)
    with pytest.raises(ConfigurationError, match="needs a curve file"):
        schedule_from_files(config, Strategy.WDS, 4)


def test_schedule_kernel_check(tmp_path):
    config = small_binomial(tmp_path)
    check_schedule_kernel(build_schedule(Strategy.UNIFORM, 4), config)
    check_schedule_kernel(build_schedule(Strategy.UNIFORM, 4, kernel=config.block()), config)
    other = tiny_countdown(tmp_path)
    with pytest.raises(ScheduleMismatchError):
        check_schedule_kernel(build_schedule(Strategy.UNIFORM, 4, kernel=other.block()), config)


def test_sample_to_file(tmp_path):
    config = small_binomial(tmp_path)
    sched_path = schedule_from_files(config, "uniform", 8).write(tmp_path / "uniform_K8.json")
    rows, meta = sample_to_file(config, sched_path, 20, tmp_path / "samples.txt")
    tokens = read_samples(rows)
    assert tokens.shape == (20, 1)
    assert tokens.min() >= 0 and tokens.max() < 15
    document = json.loads(meta.read_text())
    assert document["nfe"] == 8
    assert document["count"] == 20
    assert document["schedule_sha256"] == sha256_file(sched_path)

    with pytest.raises(ScheduleMismatchError):
        sample_to_file(tiny_countdown(tmp_path), sched_path, 4, tmp_path / "other.txt")


def test_build_score(tmp_path):
    config = small_binomial(tmp_path)
    kernel, noise = config.build_kernel(), config.build_noise()
    assert isinstance(build_score(config, kernel, noise), OracleScore)
    arch = MLPArchitecture(length=2, states=15, hidden=4, depth=1)
    path = save_parameters(tmp_path / "net.json", MLPParameters.zeros(arch))
    with pytest.raises(ConfigurationError, match="length 2"):
        build_score(small_binomial(tmp_path, score=str(path)), kernel, noise)


def test_binomial_experiment(tmp_path):
    config = quick_training(tmp_path)
    result = run_binomial_experiment(config)
    assert result.files["network"] == tmp_path / "network.json"
    assert len(result.files["losses"].read_text().splitlines()) == 6
    assert load_parameters(result.files["network"]).arch.states == 15
    assert set(FIGURE_ROWS) <= set(result.files)
    for name in FIGURE_ROWS:
        lines = result.files[name].read_text().splitlines()
        assert lines[0] == "t,ground_truth,model"
        assert len(lines) == 7
    truth, _ = result.figure_rows()["h_na_cum"]
    assert truth[0] == 0.0
    np.testing.assert_array_equal(result.exact.t, result.model.t)
    manifest = read_json(result.files["manifest"])
    assert manifest["command"] == "reproduce binomial"
    assert "h_na_rate.csv" in manifest["files"]
    assert "network.json" in manifest["files"]
    assert {"init", "train-data", "train"} <= set(manifest["seeds"])


def test_binomial_experiment_score_sources(tmp_path):
    trained = run_binomial_experiment(quick_training(tmp_path / "trained"))
    saved = quick_training(tmp_path / "saved", score=str(trained.files["network"]))
    reloaded = run_binomial_experiment(saved)
    assert "network" not in reloaded.files
    np.testing.assert_array_equal(reloaded.model.h_na, trained.model.h_na)

    config = small_binomial(tmp_path / "oracle")
    kernel, noise = config.build_kernel(), config.build_noise()
    oracle = OracleScore(kernel, noise, config.target_distribution())
    result = run_binomial_experiment(config, score=oracle)
    assert "network" not in result.files
    assert not (tmp_path / "oracle" / "network.json").exists()


@pytest.mark.slow
def test_binomial_trained_model_tracks_exact_entropy(tmp_path):
    config = load_config(overrides={"seed": 0, "grid": 64, "n_samples": 1024, "out": tmp_path})
    result = run_binomial_experiment(config)
    exact, model = result.figure_rows()["h_na_cum"]
    assert exact[-1] > 0
    assert abs(model[-1] - exact[-1]) / exact[-1] < 0.15


def test_countdown_experiment(tmp_path):
    config = tiny_countdown(tmp_path / "a", threads=1)
    result = run_countdown_experiment(config)
    cells = [(r.K, r.strategy) for r in result.reports]
    assert cells == [(2, "uniform"), (2, "eds"), (4, "uniform"), (4, "eds")]
    for report in result.reports:
        assert 0.0 <= report.value <= 1.0
        assert report.n == 16
        assert report.nfe == report.K
    for (strategy, K), schedule in result.schedules.items():
        assert schedule.K == K
        path = tmp_path / "a" / "schedules" / f"{strategy}_K{K}.json"
        assert load_schedule(path) == schedule
    assert result.files["network"].exists()
    assert len(result.files["losses"].read_text().splitlines()) == 6
    manifest = read_json(tmp_path / "a" / MANIFEST_FILE)
    assert "cell/eds/4" in manifest["seeds"]
    assert manifest["files"]["reports.csv"] == sha256_file(result.files["reports"])

    rerun = run_countdown_experiment(tiny_countdown(tmp_path / "b", threads=3))
    assert rerun.files["reports"].read_bytes() == result.files["reports"].read_bytes()


@pytest.mark.slow
def test_countdown_more_steps_fewer_violations(tmp_path):
    config = load_config(
        overrides={
            "seed": 0,
            "data": "countdown",
            "vocab": 8,
            "length": 6,
            "train_steps": 3000,
            "train_size": 8192,
            "hidden": 64,
            "grid": 64,
            "n_samples": 256,
            "eval_samples": 2048,
            "k_list": [2, 32],
            "strategies": ["uniform", "eds", "wds"],
            "out": tmp_path,
        }
    )
    result = run_countdown_experiment(config)
    by_cell = {(r.strategy, r.K): r.value for r in result.reports}
    for strategy in Strategy:
        assert by_cell[(strategy, 32)] < by_cell[(strategy, 2)]


@pytest.mark.slow
def test_countdown_schedules_beat_uniform_at_small_budgets(tmp_path):
    config = load_config(
        overrides={"seed": 0, "data": "countdown", "k_list": [4, 8, 16, 1024], "out": tmp_path}
    )
    assert (config.vocab, config.length, config.train_steps) == (32, 16, 20000)
    result = run_countdown_experiment(config)
    by_cell = {(r.strategy, r.K): r for r in result.reports}
    for strategy in (Strategy.EDS, Strategy.WDS):
        wins = 0
        for K in (4, 8, 16):
            base, ours = by_cell[(Strategy.UNIFORM, K)], by_cell[(strategy, K)]
            if base.value - ours.value > 2 * math.hypot(base.stderr, ours.stderr):
                wins += 1
        assert wins >= 2, strategy
    for strategy in Strategy:
        assert by_cell[(strategy, 1024)].value < 0.2
