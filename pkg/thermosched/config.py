"""Run configuration: a flat key-value block read from TOML or JSON, overridden by CLI flags."""
import json
import logging
import os
from pathlib import Path
import sys
from typing import Any, Dict, List, Mapping, Optional

import pydantic

from thermosched.datasets import (
    CategoricalDataset,
    CountdownDataset,
    CountdownSpec,
    Dataset,
    binomial_dataset,
)
from thermosched.enums import BoundMode, DataSet, KernelVariant, NoiseVariant, Strategy
from thermosched.exceptions import ConfigurationError
from thermosched.kernels import RateKernel, get_kernel
from thermosched.noise import NoiseSchedule, get_noise
from thermosched.typing import FloatArray

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

OUT_ENV_VAR = "THERMOSCHED_OUT"
ORACLE = "oracle"


def default_out() -> Path:
    """Output root from `THERMOSCHED_OUT`, else `./runs`."""
    return Path(os.environ.get(OUT_ENV_VAR, "runs"))


class KernelConfig(pydantic.BaseModel):
    """Forward process parameters.

    Attributes:
        kernel (KernelVariant): Registered kernel key. Defaults to uniform.
        vocab (int): Number of data tokens; the absorbing kernel adds the mask on top.
        noise (NoiseVariant): Registered noise schedule key. Defaults to geometric.
        sigma_min (float): Geometric noise rate at t = 0.
        sigma_max (float): Geometric noise rate at t = 1.
        noise_eps (float): Log-linear noise offset.
    """

    kernel: KernelVariant = KernelVariant.UNIFORM
    vocab: int = 15
    noise: NoiseVariant = NoiseVariant.GEOMETRIC
    sigma_min: float = 0.01
    sigma_max: float = 5.0
    noise_eps: float = 1e-3

    @pydantic.validator("vocab")
    def _positive_vocab(cls, v: int) -> int:
        if v < 1:
            raise ValueError("vocab must be at least 1")
        return v

    def build_kernel(self) -> RateKernel:
        return get_kernel(str(self.kernel))(self.vocab)

    def build_noise(self) -> NoiseSchedule:
        cls = get_noise(str(self.noise))
        if self.noise is NoiseVariant.LOGLINEAR:
            return cls(eps=self.noise_eps)
        return cls(sigma_min=self.sigma_min, sigma_max=self.sigma_max)

    def block(self) -> Dict[str, Any]:
        """Flat description recorded in schedules and manifests."""
        return {**self.build_kernel().config(), **self.build_noise().config()}


class RunConfig(KernelConfig):
    """Everything a pipeline stage needs. Only `seed` is mandatory.

    `vocab` and `length` follow the dataset unless set: the binomial toy is a single token
    over n + 1 values, countdown sequences default to 16 tokens over 32 values.

    The binomial toy defaults to the uniform kernel with geometric noise, countdown to the
    absorbing kernel with log-linear noise, whose all-mask prior matches t = 1.
    """

    seed: int
    data: DataSet = DataSet.BINOMIAL
    kernel: Optional[KernelVariant] = None  # type: ignore[assignment]
    noise: Optional[NoiseVariant] = None  # type: ignore[assignment]
    vocab: Optional[int] = None  # type: ignore[assignment]
    length: Optional[int] = None
    binomial_n: int = 14
    binomial_p: float = 0.5
    score: str = ORACLE
    n_samples: int = 1024
    grid: int = 1024
    bound: BoundMode = BoundMode.ACTIVITY_NONADIABATIC
    k_list: List[int] = [4, 8, 16]
    strategies: List[Strategy] = [Strategy.UNIFORM, Strategy.EDS, Strategy.WDS]
    out: Path = pydantic.Field(default_factory=default_out)
    threads: Optional[int] = None
    train_steps: int = 20000
    train_size: int = 65536
    learning_rate: float = 1e-3
    batch_size: int = 64
    hidden: int = 128
    depth: int = 2
    eval_samples: int = 1024

    class Config:
        extra = pydantic.Extra.forbid

    @pydantic.root_validator(skip_on_failure=True)
    def _dataset_shape(cls, values: Dict[str, Any]) -> Dict[str, Any]:
        if values["data"] is DataSet.BINOMIAL:
            values["kernel"] = values["kernel"] or KernelVariant.UNIFORM
            values["noise"] = values["noise"] or NoiseVariant.GEOMETRIC
            n_states = values["binomial_n"] + 1
            if values["vocab"] not in (None, n_states):
                raise ValueError(f"binomial data with n={n_states - 1} needs vocab {n_states}")
            if values["length"] not in (None, 1):
                raise ValueError("binomial data is a single token; length must be 1")
            values["vocab"], values["length"] = n_states, 1
        else:
            values["kernel"] = values["kernel"] or KernelVariant.ABSORBING
            values["noise"] = values["noise"] or NoiseVariant.LOGLINEAR
            values["vocab"] = values["vocab"] or CountdownSpec.vocab
            values["length"] = values["length"] or CountdownSpec.length
        return values

    @pydantic.validator("length")
    def _positive_length(cls, v: int) -> int:
        if v < 1:
            raise ValueError("length must be positive")
        return v

    @pydantic.validator("score")
    def _score_exists(cls, v: str) -> str:
        if v != ORACLE and not Path(v).exists():
            raise ValueError(f"score parameter file {v} does not exist")
        return v

    @pydantic.validator("grid")
    def _grid_size(cls, v: int) -> int:
        if v < 2:
            raise ValueError("grid needs at least 2 points")
        return v

    @pydantic.validator(
        "n_samples", "train_size", "batch_size", "eval_samples", "hidden", "depth"
    )
    def _positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be positive")
        return v

    @pydantic.validator("k_list", each_item=True)
    def _positive_steps(cls, v: int) -> int:
        if v < 1:
            raise ValueError("K must be at least 1")
        return v

    @pydantic.validator("threads")
    def _threads(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise ValueError("threads must be positive")
        return v

    @property
    def uses_oracle(self) -> bool:
        return self.score == ORACLE

    def build_dataset(self) -> Dataset:
        if self.data is DataSet.BINOMIAL:
            return CategoricalDataset(self.target_distribution())
        return CountdownDataset(CountdownSpec(vocab=self.vocab, length=self.length))

    def target_distribution(self) -> FloatArray:
        """Exact data pmf of the binomial toy."""
        if self.data is not DataSet.BINOMIAL:
            raise ConfigurationError("Only binomial data has an enumerable target distribution.")
        return binomial_dataset(self.binomial_n, self.binomial_p)

    def document(self) -> Dict[str, Any]:
        """JSON-ready dump, as recorded in manifests."""
        return json.loads(self.json())


def read_config_file(path: Path) -> Dict[str, Any]:
    """Parse a TOML (by `.toml` suffix) or JSON config file into a flat mapping."""
    path = Path(path)
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as fp:
                return tomllib.load(fp)
        with open(path) as fp:
            document = json.load(fp)
    except (OSError, ValueError) as e:
        raise ConfigurationError(f"Cannot read config file {path}: {e}")
    if not isinstance(document, dict):
        raise ConfigurationError(f"Config file {path} must hold a key-value table.")
    return document


def load_config(
    path: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None
) -> RunConfig:
    """Build a [`RunConfig`][thermosched.config.RunConfig] from an optional file, with
    `overrides` (CLI flags; None values ignored) taking precedence.

    Raises:
        ConfigurationError: If the file cannot be read or the merged values are invalid.
    """
    values: Dict[str, Any] = read_config_file(path) if path is not None else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        config = RunConfig.parse_obj(values)
    except pydantic.ValidationError as e:
        raise ConfigurationError(f"Invalid configuration: {e}")
    logger.debug("Loaded configuration %s", config)
    return config
