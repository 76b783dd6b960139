from contextlib import contextmanager
import logging
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

import typer

from thermosched.config import RunConfig, load_config, read_config_file
from thermosched.enums import (
    BoundMode,
    DataSet,
    EvalTask,
    Experiment,
    KernelVariant,
    NoiseVariant,
    Strategy,
)
from thermosched.exceptions import (
    ConfigurationError,
    NumericalError,
    SingularStateError,
    ThermoschedException,
)
from thermosched.experiments import (
    MANIFEST_FILE,
    estimate_curves,
    run_binomial_experiment,
    run_countdown_experiment,
    sample_to_file,
    schedule_from_files,
    train_network,
    write_training_outputs,
)
from thermosched.io import read_json, read_samples
from thermosched.metrics import evaluate, write_reports
from thermosched.version import __version__

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

logger = logging.getLogger(__name__)

app = typer.Typer(
    help=(
        "Estimate entropy production of discrete diffusion models, build EDS/WDS sampling "
        "schedules and run tau-leaping samplers. Stages exchange CSV and JSON files."
    )
)

# Options shared by several commands
CONFIG_OPTION = typer.Option(
    None, "--config", "-c", exists=True, dir_okay=False, help="TOML or JSON config file."
)
SEED_OPTION = typer.Option(None, "--seed", help="Run seed. Required unless set in --config.")
OUT_OPTION = typer.Option(
    None, "--out", "-o", help="Output directory. Defaults to $THERMOSCHED_OUT or ./runs."
)
THREADS_OPTION = typer.Option(
    None, "--threads", help="Worker threads. Defaults to the number of CPUs."
)
VERBOSE_OPTION = typer.Option(False, "--verbose", "-v", help="Log at DEBUG level.")
KERNEL_OPTION = typer.Option(None, "--kernel", help="Forward rate kernel.")
NOISE_OPTION = typer.Option(None, "--noise", help="Noise schedule.")
DATA_OPTION = typer.Option(None, "--data", help="Dataset.")
SCORE_OPTION = typer.Option(
    None, "--score", help="'oracle' or the path of a saved network parameter file."
)


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    logging.getLogger("thermosched").setLevel(logging.DEBUG if verbose else logging.INFO)


@contextmanager
def _exit_codes() -> Iterator[None]:
    """Exit 2 on configuration and file errors, 3 on numerical failures."""
    try:
        yield
    except (NumericalError, SingularStateError) as e:
        typer.echo(f"Numerical failure: {e}", err=True)
        raise typer.Exit(code=EXIT_NUMERICAL)
    except ThermoschedException as e:
        typer.echo(f"Error: {e}", err=True)
        raise typer.Exit(code=EXIT_CONFIG)


def _config(config_path: Optional[Path], **flags: Any) -> RunConfig:
    return load_config(config_path, flags)


@app.command()
def estimate(
    config_path: Optional[Path] = CONFIG_OPTION,
    kernel: Optional[KernelVariant] = KERNEL_OPTION,
    noise: Optional[NoiseVariant] = NOISE_OPTION,
    data: Optional[DataSet] = DATA_OPTION,
    score: Optional[str] = SCORE_OPTION,
    n_samples: Optional[int] = typer.Option(None, "--n", help="Samples per grid point."),
    grid: Optional[int] = typer.Option(None, "--grid", help="Number of grid points."),
    bound: Optional[BoundMode] = typer.Option(None, "--bound", help="Wasserstein bound mode."),
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    threads: Optional[int] = THREADS_OPTION,
    verbose: bool = VERBOSE_OPTION,
):
    """Estimate entropy and Wasserstein curves; writes curves.csv, bounds.csv and a manifest."""
    _setup_logging(verbose)
    with _exit_codes():
        config = _config(
            config_path,
            kernel=kernel,
            noise=noise,
            data=data,
            score=score,
            n_samples=n_samples,
            grid=grid,
            bound=bound,
            seed=seed,
            out=out,
            threads=threads,
        )
        files = estimate_curves(config)
        typer.echo(f"Wrote {files.curves}, {files.bounds} and {files.manifest}")


def _stage_values(
    config_path: Optional[Path], curves: Optional[Path], flags: Dict[str, Any]
) -> Dict[str, Any]:
    """Manifest next to the curve file, then the config file, then flags. Building a schedule
    or scoring samples draws no random numbers, so a missing seed defaults to the manifest's
    or 0."""
    values: Dict[str, Any] = {}
    if curves is not None and (curves.parent / MANIFEST_FILE).exists():
        values.update(read_json(curves.parent / MANIFEST_FILE).get("config", {}))
    if config_path is not None:
        values.update(read_config_file(config_path))
    values.update({k: v for k, v in flags.items() if v is not None})
    values.setdefault("seed", 0)
    return values


@app.command()
def schedule(
    strategy: Strategy = typer.Option(..., "--strategy", "-s", help="Schedule strategy."),
    K: int = typer.Option(..., "-K", "--steps", help="Number of sampler steps."),
    curves: Optional[Path] = typer.Option(
        None, "--curves", help="Curve CSV written by `estimate`. Not needed for uniform."
    ),
    config_path: Optional[Path] = CONFIG_OPTION,
    kernel: Optional[KernelVariant] = KERNEL_OPTION,
    noise: Optional[NoiseVariant] = NOISE_OPTION,
    data: Optional[DataSet] = DATA_OPTION,
    bound: Optional[BoundMode] = typer.Option(
        None, "--bound", help="Bound mode the curve file's w columns were computed with."
    ),
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = typer.Option(
        None, "--out", "-o", help="Schedule file. Defaults to <out dir>/<strategy>_K<K>.json."
    ),
    verbose: bool = VERBOSE_OPTION,
):
    """Build a uniform, EDS or WDS time schedule and write it as JSON."""
    _setup_logging(verbose)
    with _exit_codes():
        flags = {"kernel": kernel, "noise": noise, "data": data, "bound": bound, "seed": seed}
        config = load_config(None, _stage_values(config_path, curves, flags))
        sched = schedule_from_files(config, strategy, K, curves)
        path = sched.write(out or config.out / f"{strategy}_K{K}.json")
        typer.echo(f"Wrote {strategy} schedule with {len(sched.times)} times to {path}")


@app.command()
def sample(
    sched: Path = typer.Option(..., "--sched", exists=True, dir_okay=False, help="Schedule."),
    count: int = typer.Option(..., "--count", "-n", help="Number of sequences."),
    config_path: Optional[Path] = CONFIG_OPTION,
    kernel: Optional[KernelVariant] = KERNEL_OPTION,
    noise: Optional[NoiseVariant] = NOISE_OPTION,
    data: Optional[DataSet] = DATA_OPTION,
    score: Optional[str] = SCORE_OPTION,
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = typer.Option(
        None, "--out", "-o", help="Sample file. Defaults to <out dir>/samples.txt."
    ),
    threads: Optional[int] = THREADS_OPTION,
    verbose: bool = VERBOSE_OPTION,
):
    """Generate sequences along a schedule; writes the rows and a .meta.json sidecar."""
    _setup_logging(verbose)
    with _exit_codes():
        config = _config(
            config_path,
            kernel=kernel,
            noise=noise,
            data=data,
            score=score,
            seed=seed,
            threads=threads,
        )
        rows, meta = sample_to_file(config, sched, count, out or config.out / "samples.txt")
        typer.echo(f"Wrote {count} sequences to {rows} and metadata to {meta}")


@app.command(name="eval")
def eval_(
    task: EvalTask = typer.Argument(..., help="Metric to compute."),
    samples: Path = typer.Option(..., "--samples", exists=True, dir_okay=False),
    config_path: Optional[Path] = CONFIG_OPTION,
    target: Optional[DataSet] = typer.Option(
        None, "--target", help="Dataset the samples are scored against. Defaults to binomial."
    ),
    vocab: Optional[int] = typer.Option(None, "--vocab", help="Countdown vocabulary size."),
    binomial_n: Optional[int] = typer.Option(None, "--binomial-n", help="Binomial trials."),
    binomial_p: Optional[float] = typer.Option(
        None, "--binomial-p", help="Binomial success probability."
    ),
    out: Optional[Path] = typer.Option(
        None, "--out", "-o", help="Metric CSV. Defaults to <samples>.metrics.csv."
    ),
    verbose: bool = VERBOSE_OPTION,
):
    """Score a sample file: countdown rule violations, or TV / Hellinger to the binomial toy.

    The binomial reference and the countdown vocabulary come from the config file and flags,
    the same way the other stages resolve them.
    """
    _setup_logging(verbose)
    with _exit_codes():
        tokens = read_samples(samples)
        meta_path = samples.with_suffix(".meta.json")
        meta = read_json(meta_path) if meta_path.exists() else {}
        flags = dict(data=target, vocab=vocab, binomial_n=binomial_n, binomial_p=binomial_p)
        values = _stage_values(config_path, None, flags)
        if task is EvalTask.COUNTDOWN:
            values.setdefault("data", DataSet.COUNTDOWN)
        config = load_config(None, values)
        if task is EvalTask.COUNTDOWN:
            reference: Dict[str, Any] = {"vocab": config.vocab}
        elif config.data is DataSet.BINOMIAL:
            reference = {"target": config.target_distribution()}
        else:
            raise ConfigurationError(f"{config.data} data has no exact target distribution.")
        report = evaluate(
            task, tokens, strategy=meta.get("strategy"), K=meta.get("K"), **reference
        )
        path = write_reports(out or samples.with_suffix(".metrics.csv"), [report])
        stderr = "" if report.stderr is None else f" +/- {report.stderr:.6g}"
        typer.echo(f"{report.metric} = {report.value:.6g}{stderr} (n={report.n}); wrote {path}")


@app.command()
def train(
    config_path: Optional[Path] = CONFIG_OPTION,
    kernel: Optional[KernelVariant] = KERNEL_OPTION,
    noise: Optional[NoiseVariant] = NOISE_OPTION,
    data: Optional[DataSet] = DATA_OPTION,
    length: Optional[int] = typer.Option(None, "--length", help="Sequence length."),
    steps: Optional[int] = typer.Option(None, "--steps", help="Optimizer steps."),
    learning_rate: Optional[float] = typer.Option(None, "--lr", help="Adam step size."),
    batch_size: Optional[int] = typer.Option(None, "--batch-size", help="Sequences per step."),
    hidden: Optional[int] = typer.Option(None, "--hidden", help="Hidden layer width."),
    depth: Optional[int] = typer.Option(None, "--depth", help="Number of hidden layers."),
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    verbose: bool = VERBOSE_OPTION,
):
    """Train the score network; writes network.json and losses.csv."""
    _setup_logging(verbose)
    with _exit_codes():
        config = _config(
            config_path,
            kernel=kernel,
            noise=noise,
            data=data,
            length=length,
            train_steps=steps,
            learning_rate=learning_rate,
            batch_size=batch_size,
            hidden=hidden,
            depth=depth,
            seed=seed,
            out=out,
        )
        k, n = config.build_kernel(), config.build_noise()
        params, losses = train_network(config, k, n)
        net, loss = write_training_outputs(config.out, params, losses)
        typer.echo(f"Wrote {net} and {loss}")


@app.command()
def reproduce(
    experiment: Experiment = typer.Argument(..., help="Experiment to run."),
    config_path: Optional[Path] = CONFIG_OPTION,
    kernel: Optional[KernelVariant] = KERNEL_OPTION,
    noise: Optional[NoiseVariant] = NOISE_OPTION,
    score: Optional[str] = SCORE_OPTION,
    n_samples: Optional[int] = typer.Option(None, "--n", help="Samples per grid point."),
    grid: Optional[int] = typer.Option(None, "--grid", help="Number of grid points."),
    k_list: Optional[List[int]] = typer.Option(None, "--k", help="Step budgets (repeatable)."),
    strategies: Optional[List[Strategy]] = typer.Option(
        None, "--strategy", help="Strategies (repeatable)."
    ),
    steps: Optional[int] = typer.Option(None, "--steps", help="Score network training steps."),
    seed: Optional[int] = SEED_OPTION,
    out: Optional[Path] = OUT_OPTION,
    threads: Optional[int] = THREADS_OPTION,
    verbose: bool = VERBOSE_OPTION,
):
    """Run the binomial dynamics or countdown schedule experiment into one directory."""
    _setup_logging(verbose)
    with _exit_codes():
        config = _config(
            config_path,
            data=DataSet(str(experiment)),
            kernel=kernel,
            noise=noise,
            score=score,
            n_samples=n_samples,
            grid=grid,
            k_list=list(k_list) if k_list else None,
            strategies=list(strategies) if strategies else None,
            train_steps=steps,
            seed=seed,
            out=out,
            threads=threads,
        )
        if experiment is Experiment.BINOMIAL:
            files = run_binomial_experiment(config).files
        else:
            files = run_countdown_experiment(config).files
        typer.echo(f"Wrote {len(files)} files to {config.out}")


@app.command()
def version():
    """Print the package version."""
    typer.echo(__version__)
