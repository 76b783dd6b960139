"""Small tanh MLP score network, written with NumPy only.

The network maps a token sequence and a time to one log-ratio per (position, candidate state):

- input: one-hot tokens over `length * states` entries, followed by sinusoidal time features
  `sin(pi 2^k t), cos(pi 2^k t)`;
- `depth` hidden affine layers with tanh activations;
- output affine layer of size `length * states`, exponentiated to give positive ratios.

Training minimizes the denoising score-entropy loss with Adam and global-norm gradient clipping.
Gradients come from the hand-written backward pass in
[`backward`][thermosched.mlp.backward].
"""
from dataclasses import dataclass, field
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pydantic
from scipy.special import xlogy

from thermosched.exceptions import ConfigurationError, CurveFormatError, NumericalError
from thermosched.io import PathLike, read_json, write_json
from thermosched.kernels import RateKernel
from thermosched.noise import NoiseSchedule
from thermosched.typing import TIME_EPS, FloatArray, IntArray, as_tokens

logger = logging.getLogger(__name__)

PARAMETER_FILE_VERSION = 1


class MLPArchitecture(pydantic.BaseModel):
    """Shape of the score network.

    Attributes:
        length (int): Sequence length L.
        states (int): States per position M, including the mask state for absorbing kernels.
        hidden (int): Width of every hidden layer.
        depth (int): Number of hidden layers.
        time_features (int): Number of sinusoidal time features (even).
    """

    length: pydantic.conint(ge=1)  # type: ignore
    states: pydantic.conint(ge=2)  # type: ignore
    hidden: pydantic.conint(ge=1) = 128  # type: ignore
    depth: pydantic.conint(ge=1) = 2  # type: ignore
    time_features: pydantic.conint(ge=2) = 16  # type: ignore

    class Config:
        allow_mutation = False

    @pydantic.validator("time_features")
    def _even(cls, v: int) -> int:
        if v % 2:
            raise ValueError("time_features must be even")
        return v

    @property
    def input_dim(self) -> int:
        return self.length * self.states + self.time_features

    @property
    def output_dim(self) -> int:
        return self.length * self.states

    def layer_shapes(self) -> List[Tuple[int, int]]:
        dims = [self.input_dim] + [self.hidden] * self.depth + [self.output_dim]
        return list(zip(dims[:-1], dims[1:]))


@dataclass
class MLPParameters:
    """Weights and biases of the score network. `weights[i]` has shape `(in, out)`; the last
    layer is the linear output head, all others are followed by tanh."""

    arch: MLPArchitecture
    weights: List[FloatArray]
    biases: List[FloatArray]
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        shapes = self.arch.layer_shapes()
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise ConfigurationError(
                f"Expected {len(shapes)} layers, got {len(self.weights)} weights and "
                f"{len(self.biases)} biases."
            )
        for i, ((n_in, n_out), w, b) in enumerate(zip(shapes, self.weights, self.biases)):
            if w.shape != (n_in, n_out) or b.shape != (n_out,):
                raise ConfigurationError(
                    f"Layer {i}: expected weight {(n_in, n_out)} and bias {(n_out,)}, got "
                    f"{w.shape} and {b.shape}."
                )

    @classmethod
    def initialize(
        cls, arch: MLPArchitecture, rng: np.random.Generator, seed: Optional[int] = None
    ) -> "MLPParameters":
        """Uniform initialization with limit 1/sqrt(fan_in); zero biases."""
        weights, biases = [], []
        for n_in, n_out in arch.layer_shapes():
            limit = 1.0 / math.sqrt(n_in)
            weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
            biases.append(np.zeros(n_out))
        return cls(arch=arch, weights=weights, biases=biases, seed=seed)

    @classmethod
    def zeros(cls, arch: MLPArchitecture) -> "MLPParameters":
        shapes = arch.layer_shapes()
        return cls(
            arch=arch,
            weights=[np.zeros(s) for s in shapes],
            biases=[np.zeros(s[1]) for s in shapes],
        )

    def arrays(self) -> List[FloatArray]:
        """Parameter arrays in a fixed order: w0, b0, w1, b1, ..."""
        out: List[FloatArray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def copy(self) -> "MLPParameters":
        return MLPParameters(
            arch=self.arch,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            seed=self.seed,
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass(frozen=True)
class ForwardCache:
    inputs: FloatArray
    activations: List[FloatArray]


def time_features(t: FloatArray, n_features: int) -> FloatArray:
    """Sinusoidal embedding of shape `(batch, n_features)`."""
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    freqs = math.pi * 2.0 ** np.arange(n_features // 2)
    angles = t * freqs[np.newaxis, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def encode_inputs(arch: MLPArchitecture, x: IntArray, t) -> FloatArray:
    x = as_tokens(x)
    if x.shape[1] != arch.length:
        raise ConfigurationError(
            f"Network expects sequences of length {arch.length}, got {x.shape[1]}."
        )
    if np.any(x < 0) or np.any(x >= arch.states):
        raise ConfigurationError(f"Tokens must lie in [0, {arch.states}).")
    t_arr = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
    onehot = np.eye(arch.states)[x].reshape(x.shape[0], -1)
    return np.concatenate([onehot, time_features(t_arr, arch.time_features)], axis=1)


def forward(params: MLPParameters, inputs: FloatArray) -> Tuple[FloatArray, ForwardCache]:
    """Raw log-ratio outputs of shape `(batch, length, states)` and the cache for backprop."""
    h = inputs
    activations = []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
            activations.append(h)
    arch = params.arch
    return h.reshape(-1, arch.length, arch.states), ForwardCache(inputs, activations)


def backward(
    params: MLPParameters, cache: ForwardCache, grad_out: FloatArray
) -> List[FloatArray]:
    """Gradients of a scalar loss with respect to every parameter array, given its gradient
    with respect to the raw outputs. Returned in the order of
    [`MLPParameters.arrays`][thermosched.mlp.MLPParameters.arrays]."""
    delta = grad_out.reshape(grad_out.shape[0], -1)
    layer_inputs = [cache.inputs] + cache.activations
    grads: List[FloatArray] = []
    for i in reversed(range(len(params.weights))):
        h_in = layer_inputs[i]
        grads.append(delta.sum(axis=0))
        grads.append(h_in.T @ delta)
        if i > 0:
            # tanh' = 1 - tanh^2
            delta = (delta @ params.weights[i].T) * (1.0 - h_in**2)
    grads.reverse()
    return grads


def mlp_score(params: MLPParameters, x: IntArray, t) -> FloatArray:
    """Positive ratios `exp(raw output)`, shape `(batch, length, states)`.

    Raises:
        ConfigurationError: If the token array does not match the architecture.
    """
    raw, _ = forward(params, encode_inputs(params.arch, x, t))
    return np.exp(raw)


def log_ratio_offset(kernel: RateKernel, noise: NoiseSchedule, xt: IntArray, t) -> FloatArray:
    """Analytic log-scale added to network outputs. For the absorbing kernel a masked position
    carries ratios p_0(y | context) / expm1(sigma_bar(t)), so the offset is -ln expm1(sigma_bar)
    there; elsewhere it is zero. Shape `(batch, length, 1)`."""
    xt = as_tokens(xt)
    offset = np.zeros(xt.shape + (1,))
    if kernel.mask_index is None:
        return offset
    sigma_bar = np.broadcast_to(np.asarray(noise.sigma_bar(t), dtype=np.float64), (xt.shape[0],))
    scale = -np.log(np.expm1(np.maximum(sigma_bar, 1e-300)))
    masked = xt == kernel.mask_index
    offset[..., 0] = np.where(masked, scale[:, np.newaxis], 0.0)
    return offset


@dataclass(frozen=True)
class TrainingBatch:
    """One Monte Carlo draw of (x_0, t, x_t) with the exact conditional ratios and the weights
    sigma(t) Q(y, x_t) of every candidate move."""

    x0: IntArray
    t: FloatArray
    xt: IntArray
    ratio: FloatArray
    weight: FloatArray


def sample_training_batch(
    kernel: RateKernel,
    noise: NoiseSchedule,
    x0: IntArray,
    rng: np.random.Generator,
    eps: float = TIME_EPS,
) -> TrainingBatch:
    """Draw t ~ U[eps, 1] per sequence and corrupt `x0` with the closed-form kernel."""
    x0 = as_tokens(x0)
    if x0.shape[0] == 0:
        raise ConfigurationError("Training batch must be nonempty.")
    t = rng.uniform(eps, 1.0, size=x0.shape[0])
    sigma_bar = np.asarray(noise.sigma_bar(t))[:, np.newaxis]
    xt = kernel.corrupt(x0, sigma_bar, rng)
    ratio = kernel.conditional_ratio(x0, xt, sigma_bar)
    weight = np.asarray(noise.sigma(t))[:, np.newaxis, np.newaxis] * kernel.incoming_rates(xt)
    return TrainingBatch(x0=x0, t=t, xt=xt, ratio=ratio, weight=weight)


@dataclass(frozen=True)
class DWDSELossValue:
    """Batch-mean loss and the per-sequence contributions it averages."""

    loss: float
    per_sample: FloatArray = field(repr=False)

    @property
    def stderr(self) -> float:
        n = self.per_sample.size
        return float(self.per_sample.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan


def score_entropy_terms(log_score: FloatArray, batch: TrainingBatch) -> FloatArray:
    """Per-entry integrand w * [s - r ln s + r (ln r - 1)] with s = exp(log_score); entries with
    zero weight (the current state and structurally forbidden moves) contribute 0."""
    r = batch.ratio
    terms = np.exp(log_score) - r * log_score + xlogy(r, r) - r
    return np.where(batch.weight > 0, batch.weight * terms, 0.0)


def score_entropy_loss(log_score: FloatArray, batch: TrainingBatch) -> DWDSELossValue:
    """Loss for any log-ratio array aligned with `batch`, network or not."""
    per_sample = score_entropy_terms(log_score, batch).sum(axis=(1, 2))
    return DWDSELossValue(loss=float(per_sample.mean()), per_sample=per_sample)


def dwdse_loss_and_grad(
    params: MLPParameters, kernel: RateKernel, noise: NoiseSchedule, batch: TrainingBatch
) -> Tuple[DWDSELossValue, List[FloatArray]]:
    """Deterministic loss and parameter gradients on a fixed batch."""
    inputs = encode_inputs(params.arch, batch.xt, batch.t)
    raw, cache = forward(params, inputs)
    log_score = raw + log_ratio_offset(kernel, noise, batch.xt, batch.t)
    value = score_entropy_loss(log_score, batch)
    # d/dz of w (e^z - r z) = w (e^z - r)
    grad_raw = np.where(batch.weight > 0, batch.weight * (np.exp(log_score) - batch.ratio), 0.0)
    grad_raw /= batch.xt.shape[0]
    return value, backward(params, cache, grad_raw)


def dwdse_loss(
    params: MLPParameters,
    kernel: RateKernel,
    noise: NoiseSchedule,
    batch: IntArray,
    rng: np.random.Generator,
) -> DWDSELossValue:
    """Monte Carlo denoising score-entropy loss of the network on clean sequences `batch`."""
    drawn = sample_training_batch(kernel, noise, batch, rng)
    inputs = encode_inputs(params.arch, drawn.xt, drawn.t)
    raw, _ = forward(params, inputs)
    return score_entropy_loss(raw + log_ratio_offset(kernel, noise, drawn.xt, drawn.t), drawn)


class AdamOptimizer:
    """Adam over a list of parameter arrays, updated in place."""

    def __init__(
        self,
        arrays: List[FloatArray],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.arrays = arrays
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]

    def step(self, grads: List[FloatArray]) -> None:
        self.t += 1
        for p, g, m, v in zip(self.arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g**2
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_gradients(grads: List[FloatArray], max_norm: float = 1.0) -> float:
    """Global-norm clipping in place. Returns the norm before clipping."""
    total = math.sqrt(max(sum(float(np.sum(g**2)) for g in grads), 1e-32))
    scale = min(1.0, max_norm / total)
    if scale < 1.0:
        for g in grads:
            g *= scale
    return total


def loss_moving_average(losses: List[float], window: int = 100) -> FloatArray:
    """Trailing means of `window` consecutive step losses; empty if there are fewer steps."""
    if window < 1:
        raise ConfigurationError(f"window must be positive. Got {window}")
    values = np.asarray(losses, dtype=np.float64)
    if values.size < window:
        return np.empty(0)
    return np.convolve(values, np.full(window, 1.0 / window), mode="valid")


def train(
    params: MLPParameters,
    kernel: RateKernel,
    noise: NoiseSchedule,
    dataset: IntArray,
    steps: int,
    learning_rate: float,
    rng: np.random.Generator,
    batch_size: int = 64,
    max_grad_norm: float = 1.0,
    losses: Optional[List[float]] = None,
    log_every: int = 1000,
) -> MLPParameters:
    """Fit the network to `dataset` by Adam on the denoising score-entropy loss.

    Args:
        params (MLPParameters): Starting parameters; not modified.
        kernel (RateKernel): Forward kernel.
        noise (NoiseSchedule): Forward noise schedule.
        dataset (IntArray): Clean sequences, shape `(n, length)`.
        steps (int): Number of optimizer steps. Zero returns an unchanged copy.
        learning_rate (float): Adam step size.
        rng (np.random.Generator): Stream for minibatch indices, times and corruption.
        batch_size (int, optional): Sequences per step. Defaults to 64.
        max_grad_norm (float, optional): Global gradient-norm cap. Defaults to 1.0.
        losses (Optional[List[float]], optional): If given, the loss of every step is appended.
        log_every (int, optional): Log the running loss every this many steps.

    Raises:
        ConfigurationError: If `steps` is negative or the dataset is empty.
        NumericalError: If the loss or a gradient becomes non-finite.

    Returns:
        MLPParameters: Trained parameters.
    """
    if steps < 0:
        raise ConfigurationError(f"steps must be nonnegative. Got {steps}")
    dataset = as_tokens(dataset)
    if dataset.shape[0] == 0:
        raise ConfigurationError("Training dataset is empty.")
    out = params.copy()
    optimizer = AdamOptimizer(out.arrays(), lr=learning_rate)
    running = 0.0
    for step in range(1, steps + 1):
        idx = rng.integers(0, dataset.shape[0], size=batch_size)
        batch = sample_training_batch(kernel, noise, dataset[idx], rng)
        value, grads = dwdse_loss_and_grad(out, kernel, noise, batch)
        if not math.isfinite(value.loss) or not all(np.all(np.isfinite(g)) for g in grads):
            raise NumericalError(
                "Non-finite loss or gradient during training", {"step": step, "loss": value.loss}
            )
        clip_gradients(grads, max_grad_norm)
        optimizer.step(grads)
        if losses is not None:
            losses.append(value.loss)
        running += value.loss
        if step % log_every == 0:
            logger.info("step %d: mean loss %.5f", step, running / log_every)
            running = 0.0
    return out


def gradient_check(
    params: MLPParameters,
    kernel: RateKernel,
    noise: NoiseSchedule,
    batch: TrainingBatch,
    rng: np.random.Generator,
    n_coords: int = 50,
    h: float = 1e-5,
    min_grad: float = 1e-3,
) -> Dict[str, float]:
    """Compare backprop against central finite differences on random coordinates.

    Coordinates are spread evenly over the layers and restricted to those whose analytic
    gradient exceeds `min_grad` in magnitude, where the relative error is meaningful.

    Returns:
        Dict[str, float]: `max_rel_error` and `mean_rel_error` overall, plus `checked`
            (coordinates compared) and `layers` (layers that contributed).
    """
    _, grads = dwdse_loss_and_grad(params, kernel, noise, batch)
    shifted = params.copy()
    arrays = shifted.arrays()
    n_layers = len(params.weights)
    per_layer = max(1, n_coords // n_layers)
    errors: List[float] = []
    layers_hit = set()
    for layer in range(n_layers):
        candidates = []
        for a_idx in (2 * layer, 2 * layer + 1):
            flat = np.flatnonzero(np.abs(grads[a_idx]) > min_grad)
            candidates.extend((a_idx, int(i)) for i in flat)
        if not candidates:
            continue
        picks = rng.choice(len(candidates), size=min(per_layer, len(candidates)), replace=False)
        for pick in picks:
            a_idx, flat_i = candidates[int(pick)]
            target = arrays[a_idx].reshape(-1)
            original = target[flat_i]
            target[flat_i] = original + h
            plus = dwdse_loss_and_grad(shifted, kernel, noise, batch)[0].loss
            target[flat_i] = original - h
            minus = dwdse_loss_and_grad(shifted, kernel, noise, batch)[0].loss
            target[flat_i] = original
            numeric = (plus - minus) / (2 * h)
            analytic = float(grads[a_idx].reshape(-1)[flat_i])
            errors.append(abs(analytic - numeric) / max(abs(analytic), abs(numeric)))
            layers_hit.add(layer)
    if not errors:
        raise NumericalError("No coordinate has a gradient large enough to check.")
    return {
        "max_rel_error": float(max(errors)),
        "mean_rel_error": float(np.mean(errors)),
        "checked": float(len(errors)),
        "layers": float(len(layers_hit)),
    }


class _LayerFile(pydantic.BaseModel):
    weight: List[List[float]]
    bias: List[float]


class ParameterFile(pydantic.BaseModel):
    """JSON layout of a saved network: header first, then row-major layer arrays."""

    version: int = PARAMETER_FILE_VERSION
    arch: MLPArchitecture
    seed: Optional[int] = None
    layers: List[_LayerFile]

    @pydantic.validator("version")
    def _supported(cls, v: int) -> int:
        if v != PARAMETER_FILE_VERSION:
            raise ValueError(f"unsupported parameter file version {v}")
        return v


def save_parameters(path: PathLike, params: MLPParameters) -> Path:
    """Write parameters as JSON. Floats use the shortest round-trip representation, so
    [`load_parameters`][thermosched.mlp.load_parameters] restores them bit for bit."""
    document = {
        "version": PARAMETER_FILE_VERSION,
        "arch": params.arch.dict(),
        "seed": params.seed,
        "layers": [
            {"weight": w.tolist(), "bias": b.tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
    }
    return write_json(path, document)


def load_parameters(path: Union[str, Path]) -> MLPParameters:
    try:
        parsed = ParameterFile.parse_obj(read_json(path))
    except pydantic.ValidationError as e:
        raise CurveFormatError(path, None, f"invalid parameter file: {e}")
    params = MLPParameters(
        arch=parsed.arch,
        weights=[np.asarray(layer.weight, dtype=np.float64) for layer in parsed.layers],
        biases=[np.asarray(layer.bias, dtype=np.float64) for layer in parsed.layers],
        seed=parsed.seed,
    )
    if not params.is_finite():
        raise CurveFormatError(path, None, "parameter file holds non-finite values")
    return params
