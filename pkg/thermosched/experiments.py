"""Pipeline stages and the two desk-scale experiment harnesses.

Stages exchange files only: curve CSVs, schedule JSON documents, sample files and a manifest
listing every seed stream and file digest. Each harness writes into one output directory.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pydantic

from thermosched.config import RunConfig
from thermosched.enums import Strategy
from thermosched.exceptions import ConfigurationError, ScheduleMismatchError
from thermosched.io import PathLike, read_json, sha256_file, write_csv, write_json
from thermosched.kernels import RateKernel
from thermosched.metrics import MetricReport, violation_report, write_reports
from thermosched.mlp import (
    MLPArchitecture,
    MLPParameters,
    load_parameters,
    loss_moving_average,
    save_parameters,
    train,
)
from thermosched.noise import NoiseSchedule
from thermosched.rng import derive_rng, derive_seed
from thermosched.sampler import sample, write_sample_outputs
from thermosched.scheduler import TimeSchedule, build_schedule, load_schedule
from thermosched.score import NetworkScore, OracleScore, ScoreModel
from thermosched.thermo import (
    EntropyCurve,
    WassersteinCurve,
    exact_curves,
    read_curves,
    sweep_curves,
    wasserstein_bound,
    write_bounds,
    write_curves,
)
from thermosched.typing import FloatArray
from thermosched.version import __version__

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
FIGURE_ROWS = ("h_na_rate", "h_na_cum", "w_rate", "w_cum")


# -- manifest ------------------------------------------------------------------------------------


class Manifest(pydantic.BaseModel):
    """Record of one pipeline run: configuration, seed streams and output digests."""

    command: str
    version: str = __version__
    config: Dict[str, Any]
    seeds: Dict[str, int] = {}
    files: Dict[str, str] = {}

    def add_file(self, path: Path, root: Path) -> None:
        self.files[str(Path(path).relative_to(root))] = sha256_file(path)

    def write(self, root: Path) -> Path:
        return write_json(Path(root) / MANIFEST_FILE, self.dict())


def grid_seeds(seed: int, n_grid: int) -> Dict[str, int]:
    return {f"grid/{i}": derive_seed(seed, i) for i in range(n_grid)}


def training_seeds(seed: int) -> Dict[str, int]:
    return {name: derive_seed(seed, name) for name in ("init", "train-data", "train")}


def check_manifest_digest(path: PathLike) -> None:
    """Compare `path` with the digest a sibling manifest recorded for it, if any.

    Raises:
        ScheduleMismatchError: If the file changed since the manifest was written.
    """
    path = Path(path)
    manifest = path.parent / MANIFEST_FILE
    if not manifest.exists():
        return
    recorded = read_json(manifest).get("files", {}).get(path.name)
    if recorded is not None and recorded != sha256_file(path):
        raise ScheduleMismatchError(
            f"{path} does not match the digest recorded in {manifest}; regenerate the curves."
        )


# -- score models --------------------------------------------------------------------------------


def build_score(config: RunConfig, kernel: RateKernel, noise: NoiseSchedule) -> ScoreModel:
    """Oracle ratios for enumerable data, otherwise the network saved at `config.score`."""
    if config.uses_oracle:
        return OracleScore(kernel, noise, config.target_distribution(), length=config.length)
    params = load_parameters(config.score)
    if params.arch.length != config.length:
        raise ConfigurationError(
            f"Network expects sequences of length {params.arch.length}, config has "
            f"{config.length}."
        )
    return NetworkScore(params, kernel, noise)


def train_network(
    config: RunConfig, kernel: RateKernel, noise: NoiseSchedule
) -> Tuple[MLPParameters, List[float]]:
    """Initialize and train a score network on fresh dataset draws.

    Streams: `(seed, "init")` for the weights, `(seed, "train-data")` for the training set
    and `(seed, "train")` for minibatches and corruption.
    """
    arch = MLPArchitecture(
        length=config.length, states=kernel.num_states, hidden=config.hidden, depth=config.depth
    )
    params = MLPParameters.initialize(arch, derive_rng(config.seed, "init"), seed=config.seed)
    data = config.build_dataset().sample(config.train_size, derive_rng(config.seed, "train-data"))
    losses: List[float] = []
    trained = train(
        params,
        kernel,
        noise,
        data,
        steps=config.train_steps,
        learning_rate=config.learning_rate,
        rng=derive_rng(config.seed, "train"),
        batch_size=config.batch_size,
        losses=losses,
    )
    smoothed = loss_moving_average(losses)
    if smoothed.size:
        logger.info(
            "Trained score network for %d steps; final 100-step mean loss %.5f",
            config.train_steps,
            smoothed[-1],
        )
    else:
        logger.info("Trained score network for %d steps", config.train_steps)
    return trained, losses


def write_training_outputs(
    out: Path, params: MLPParameters, losses: List[float]
) -> Tuple[Path, Path]:
    """Parameter JSON and the per-step loss trajectory."""
    net = save_parameters(out / "network.json", params)
    loss = write_csv(out / "losses.csv", ("step", "loss"), enumerate(losses, start=1))
    return net, loss


# -- estimate ------------------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CurveFiles:
    entropy: EntropyCurve
    wasserstein: WassersteinCurve
    curves: Path
    bounds: Path
    manifest: Path


def estimate_curves(config: RunConfig, out: Optional[Path] = None) -> CurveFiles:
    """Monte Carlo curves with the configured score; writes `curves.csv`, `bounds.csv` and the
    manifest into `out` (defaults to `config.out`)."""
    out = Path(out or config.out)
    kernel, noise = config.build_kernel(), config.build_noise()
    score = build_score(config, kernel, noise)
    entropy, wass = sweep_curves(
        score,
        kernel,
        noise,
        config.build_dataset(),
        n_samples=config.n_samples,
        n_grid=config.grid,
        seed=config.seed,
        mode=config.bound,
        threads=config.threads,
    )
    curves = write_curves(out / "curves.csv", entropy, wass)
    bounds = write_bounds(out / "bounds.csv", entropy)
    manifest = Manifest(
        command="estimate", config=config.document(), seeds=grid_seeds(config.seed, config.grid)
    )
    manifest.add_file(curves, out)
    manifest.add_file(bounds, out)
    return CurveFiles(entropy, wass, curves, bounds, manifest.write(out))


# -- binomial experiment -------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BinomialResult:
    """Ground-truth and model curves of the binomial toy on a shared grid.

    Attributes:
        exact (EntropyCurve): Enumerated curve.
        exact_w (WassersteinCurve): Bound from the enumerated curve.
        model (EntropyCurve): Monte Carlo curve from the score network (or an explicit score).
        model_w (WassersteinCurve): Bound from the Monte Carlo curve.
        files (Dict[str, Path]): Written files by name.
    """

    exact: EntropyCurve
    exact_w: WassersteinCurve
    model: EntropyCurve
    model_w: WassersteinCurve
    files: Dict[str, Path] = field(default_factory=dict)

    def figure_rows(self) -> Dict[str, Tuple[FloatArray, FloatArray]]:
        """(ground truth, model) columns for each of the four figure rows."""
        return {
            "h_na_rate": (self.exact.h_na, self.model.h_na),
            "h_na_cum": (self.exact.h_na_cum, self.model.h_na_cum),
            "w_rate": (self.exact_w.rate, self.model_w.rate),
            "w_cum": (self.exact_w.cumulative, self.model_w.cumulative),
        }


def run_binomial_experiment(
    config: RunConfig, out: Optional[Path] = None, score: Optional[ScoreModel] = None
) -> BinomialResult:
    """Entropy and Wasserstein dynamics of the binomial toy.

    The ground-truth column enumerates the forward marginal. The model column estimates the
    same quantities by Monte Carlo with `score`, by default a score network: the one saved at
    `config.score`, or one trained from scratch when `config.score` is `oracle` (training also
    writes `network.json` and `losses.csv`). Also writes `exact_curves.csv`,
    `model_curves.csv`, one CSV per figure row with columns `t,ground_truth,model`, and the
    manifest.
    """
    out = Path(out or config.out)
    kernel, noise = config.build_kernel(), config.build_noise()
    exact = exact_curves(kernel, noise, config.target_distribution(), n_grid=config.grid)
    exact_w = wasserstein_bound(exact, config.bound)
    files: Dict[str, Path] = {}
    seeds = grid_seeds(config.seed, config.grid)
    if score is None and config.uses_oracle:
        params, losses = train_network(config, kernel, noise)
        files["network"], files["losses"] = write_training_outputs(out, params, losses)
        seeds.update(training_seeds(config.seed))
        score = NetworkScore(params, kernel, noise)
    elif score is None:
        score = build_score(config, kernel, noise)
    model, model_w = sweep_curves(
        score,
        kernel,
        noise,
        config.build_dataset(),
        n_samples=config.n_samples,
        n_grid=config.grid,
        seed=config.seed,
        mode=config.bound,
        threads=config.threads,
    )
    result = BinomialResult(exact, exact_w, model, model_w)
    files["exact_curves"] = write_curves(out / "exact_curves.csv", exact, exact_w)
    files["model_curves"] = write_curves(out / "model_curves.csv", model, model_w)
    files["bounds"] = write_bounds(out / "bounds.csv", exact)
    for name, (truth, estimate) in result.figure_rows().items():
        rows = zip(exact.t.tolist(), truth.tolist(), estimate.tolist())
        files[name] = write_csv(out / f"{name}.csv", ("t", "ground_truth", "model"), rows)
    manifest = Manifest(command="reproduce binomial", config=config.document(), seeds=seeds)
    for path in files.values():
        manifest.add_file(path, out)
    files["manifest"] = manifest.write(out)
    result.files.update(files)
    logger.info("Binomial experiment written to %s", out)
    return result


# -- countdown experiment ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CountdownResult:
    reports: List[MetricReport]
    schedules: Dict[Tuple[Strategy, int], TimeSchedule]
    entropy: EntropyCurve
    wasserstein: WassersteinCurve
    files: Dict[str, Path] = field(default_factory=dict)


def _cell_seed(seed: int, strategy: Strategy, K: int) -> int:
    return derive_seed(seed, str(strategy), K)


def run_countdown_experiment(
    config: RunConfig, out: Optional[Path] = None, params: Optional[MLPParameters] = None
) -> CountdownResult:
    """Rule-violation rate of every (strategy, K) cell with a small score network.

    The network is `params`, else the file at `config.score`, else trained from scratch. Its
    curves drive the EDS and WDS schedules; every cell samples `config.eval_samples` sequences
    from its own stream `(seed, strategy, K)`.

    Returns:
        CountdownResult: One report per cell, ordered by K then strategy.
    """
    out = Path(out or config.out)
    kernel, noise = config.build_kernel(), config.build_noise()
    files: Dict[str, Path] = {}
    trained = False
    if params is None and not config.uses_oracle:
        params = load_parameters(config.score)
    if params is None:
        params, losses = train_network(config, kernel, noise)
        files["network"], files["losses"] = write_training_outputs(out, params, losses)
        trained = True
    score = NetworkScore(params, kernel, noise)
    entropy, wass = sweep_curves(
        score,
        kernel,
        noise,
        config.build_dataset(),
        n_samples=config.n_samples,
        n_grid=config.grid,
        seed=config.seed,
        mode=config.bound,
        threads=config.threads,
    )
    files["curves"] = write_curves(out / "curves.csv", entropy, wass)
    curve_sha = sha256_file(files["curves"])
    cells = [(k, s) for k in config.k_list for s in config.strategies]
    schedules = {
        (s, k): build_schedule(
            s,
            k,
            entropy=entropy,
            wass=wass,
            kernel=config.block(),
            source_curve_sha256=None if s is Strategy.UNIFORM else curve_sha,
            seed=config.seed,
        )
        for k, s in cells
    }

    def run(cell: Tuple[int, Strategy]) -> MetricReport:
        k, s = cell
        result = sample(
            schedules[(s, k)],
            score,
            kernel,
            noise,
            batch_size=config.eval_samples,
            length=config.length,
            seed=_cell_seed(config.seed, s, k),
            threads=1,
        )
        report = violation_report(result.tokens, config.vocab, strategy=s, K=k)
        logger.info("%s K=%d: violation rate %.4f", s, k, report.value)
        return report

    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        reports = list(pool.map(run, cells))
    for (s, k), schedule in schedules.items():
        files[f"schedule_{s}_{k}"] = schedule.write(out / "schedules" / f"{s}_K{k}.json")
    files["reports"] = write_reports(out / "reports.csv", reports)
    seeds = grid_seeds(config.seed, config.grid)
    if trained:
        seeds.update(training_seeds(config.seed))
    seeds.update({f"cell/{s}/{k}": _cell_seed(config.seed, s, k) for k, s in cells})
    manifest = Manifest(command="reproduce countdown", config=config.document(), seeds=seeds)
    for path in files.values():
        manifest.add_file(path, out)
    files["manifest"] = manifest.write(out)
    return CountdownResult(reports, schedules, entropy, wass, files)


def check_schedule_kernel(schedule: TimeSchedule, config: RunConfig) -> None:
    """Raise ScheduleMismatchError if `schedule` was built for another forward process."""
    if schedule.kernel and dict(schedule.kernel) != config.block():
        raise ScheduleMismatchError(
            f"Schedule was built for {schedule.kernel}, configuration declares {config.block()}."
        )


def schedule_from_files(
    config: RunConfig, strategy: Strategy, K: int, curves: Optional[PathLike] = None
) -> TimeSchedule:
    """Build a schedule from a curve file (not needed for the uniform strategy), recording the
    curve file digest."""
    strategy = Strategy(strategy)
    provenance: Dict[str, Any] = {"kernel": config.block(), "seed": config.seed}
    if strategy is Strategy.UNIFORM:
        return build_schedule(strategy, K, **provenance)
    if curves is None:
        raise ConfigurationError(f"Strategy {strategy} needs a curve file.")
    check_manifest_digest(curves)
    entropy, wass = read_curves(curves, config.bound)
    return build_schedule(
        strategy,
        K,
        entropy=entropy,
        wass=wass,
        eps=float(entropy.t[0]),
        source_curve_sha256=sha256_file(curves),
        **provenance,
    )


def sample_to_file(
    config: RunConfig, schedule_path: PathLike, count: int, out: PathLike
) -> Tuple[Path, Path]:
    """Sample `count` sequences along a schedule file; writes the rows and the metadata."""
    schedule = load_schedule(schedule_path)
    check_schedule_kernel(schedule, config)
    kernel, noise = config.build_kernel(), config.build_noise()
    score = build_score(config, kernel, noise)
    result = sample(
        schedule,
        score,
        kernel,
        noise,
        batch_size=count,
        length=config.length,
        seed=config.seed,
        threads=config.threads,
    )
    out = Path(out)
    write_sample_outputs(out, result, schedule, config.seed, sha256_file(schedule_path))
    return out, out.with_suffix(".meta.json")

