"""Deterministic ReLU MLP engine.

Forward/backward passes for fixed dense topologies, softmax cross-entropy,
SGD with momentum and L2 weight decay, seeded initialization, and bit-exact
JSON checkpoints. Everything is float64 and fully determined by (seed,
config, data).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import batch_iter
from .errors import (DimensionError, FormatError, InputError, TrainingError,
                     UsageError)
from .rng import Prng

ACTIVATIONS = ("relu", "identity")

CHECKPOINT_FORMAT = "mlp-checkpoint"
CHECKPOINT_VERSION = 1


def as_matrix(x, input_dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != input_dim:
        raise DimensionError(f"expected [batch x {input_dim}] input, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("input contains non-finite entries")
    return x


class DenseLayer:
    """weight [out x in], bias [out], activation relu or identity."""

    def __init__(self, weight, bias, activation: str):
        self.weight = np.array(weight, dtype=np.float64)
        self.bias = np.array(bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise DimensionError("weight must be 2-D and bias 1-D")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise DimensionError(
                f"weight rows {self.weight.shape[0]} != bias length {self.bias.shape[0]}")
        if activation not in ACTIVATIONS:
            raise InputError(f"unknown activation {activation!r}")
        self.activation = activation

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weight.copy(), self.bias.copy(), self.activation)


class MlpModel:
    """Ordered dense layers with chained dims; final activation is identity.

    `version` increments on every parameter update so activation caches can
    detect staleness.
    """

    def __init__(self, layers: list[DenseLayer]):
        if not layers:
            raise InputError("model needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise DimensionError(
                    f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        if layers[-1].activation != "identity":
            raise InputError("final layer activation must be identity")
        self.layers = layers
        self.version = 0

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def depth(self) -> int:
        return len(self.layers)

    def touch(self) -> None:
        self.version += 1

    def copy(self) -> "MlpModel":
        return MlpModel([layer.copy() for layer in self.layers])

    def parameters(self, layer_indices=None) -> list[np.ndarray]:
        """Weight and bias arrays (live views) of the selected layers."""
        if layer_indices is None:
            layer_indices = range(self.depth)
        out = []
        for i in layer_indices:
            out.append(self.layers[i].weight)
            out.append(self.layers[i].bias)
        return out

    def params_bytes(self, layer_indices=None) -> bytes:
        return b"".join(p.tobytes() for p in self.parameters(layer_indices))


def he_init(dims: list[int], prng: Prng) -> MlpModel:
    """ReLU-friendly init: W ~ N(0, 2/fan_in), biases 0, identity output layer."""
    if len(dims) < 2:
        raise InputError("need at least input and output dims")
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        w = prng.gaussian((fan_out, fan_in), 0.0, np.sqrt(2.0 / fan_in))
        act = "identity" if i == len(dims) - 2 else "relu"
        layers.append(DenseLayer(w, np.zeros(fan_out), act))
    return MlpModel(layers)


@dataclass
class ForwardCache:
    model: MlpModel
    version: int
    inputs: list[np.ndarray]   # inputs[i] feeds layer i
    pre: list[np.ndarray]      # pre[i] = W_i inputs[i] + b_i


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return z


def forward(model: MlpModel, x) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate the network, recording activations for a later backward pass."""
    a = as_matrix(x, model.input_dim)
    inputs, pre = [], []
    for layer in model.layers:
        inputs.append(a)
        z = a @ layer.weight.T + layer.bias
        pre.append(z)
        a = _activate(z, layer.activation)
    return a, ForwardCache(model, model.version, inputs, pre)


def backward(model: MlpModel, cache: ForwardCache, dloss_dlogits: np.ndarray):
    """Backprop through the cached pass.

    Returns per-layer (dweight, dbias) pairs and dloss/dx. ReLU subgradient
    at 0 is 0.
    """
    if cache.model is not model or cache.version != model.version:
        raise UsageError("activation cache is stale; rerun forward after any update")
    da = np.asarray(dloss_dlogits, dtype=np.float64)
    if da.shape != cache.pre[-1].shape:
        raise DimensionError(
            f"dloss_dlogits shape {da.shape} != logits shape {cache.pre[-1].shape}")
    grads = [None] * model.depth
    for i in range(model.depth - 1, -1, -1):
        layer = model.layers[i]
        dz = da * (cache.pre[i] > 0.0) if layer.activation == "relu" else da
        grads[i] = (dz.T @ cache.inputs[i], dz.sum(axis=0))
        da = dz @ layer.weight
    return grads, da


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch, stabilized by max-subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise DimensionError("logits must be [batch x k] with k >= 2")
    if len(labels) != len(logits):
        raise DimensionError("one label per logits row required")
    if len(labels) and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise InputError(f"labels must lie in [0, {logits.shape[1]})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(labels))
    loss = float(np.mean(log_norm - shifted[rows, labels]))
    probs = np.exp(shifted - log_norm[:, None])
    return loss, probs


def cross_entropy_dlogits(probs: np.ndarray, labels, scale: float | None = None) -> np.ndarray:
    """Gradient of cross-entropy wrt logits: (probs - onehot) times `scale`
    (default 1/batch, matching the mean reduction of softmax_cross_entropy)."""
    labels = np.asarray(labels, dtype=np.int64)
    d = probs.copy()
    d[np.arange(len(labels)), labels] -= 1.0
    return d * (1.0 / len(labels) if scale is None else scale)


@dataclass
class SgdConfig:
    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    schedule: tuple = ()  # ordered (epoch, multiplier) pairs, applied cumulatively

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InputError("learning_rate must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise InputError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise InputError("weight_decay must be >= 0")
        epochs = [e for e, _ in self.schedule]
        if epochs != sorted(set(epochs)):
            raise InputError("schedule epochs must be strictly increasing")

    def lr_at(self, epoch: int) -> float:
        lr = self.learning_rate
        for ep, mult in self.schedule:
            if epoch >= ep:
                lr *= mult
        return lr


class SgdState:
    """Momentum buffers, one per parameter array."""

    def __init__(self, params: list[np.ndarray]):
        self.velocities = [np.zeros_like(p) for p in params]


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], state: SgdState,
             cfg: SgdConfig, lr: float | None = None,
             decay_mask: list[bool] | None = None) -> None:
    """In-place update: v <- momentum*v + g + wd*p; p <- p - lr*v.

    Weight decay is the classic coupled L2 gradient term; `decay_mask` can
    exempt individual parameter arrays from it.
    """
    if len(params) != len(grads) or len(params) != len(state.velocities):
        raise DimensionError("params, grads, and state lengths differ")
    lr = cfg.learning_rate if lr is None else lr
    for i, (p, g, v) in enumerate(zip(params, grads, state.velocities)):
        if p.shape != g.shape:
            raise DimensionError(f"param/grad shape mismatch at index {i}")
        wd = cfg.weight_decay if (decay_mask is None or decay_mask[i]) else 0.0
        v *= cfg.momentum
        v += g + wd * p
        p -= lr * v


def sample_gaussian(prng: Prng, mean: float, std: float, shape) -> np.ndarray:
    return prng.gaussian(shape, mean, std)


@dataclass
class TrainConfig:
    optimizer: SgdConfig
    epochs: int
    batch_size: int = 128

    def __post_init__(self):
        if self.epochs < 0:
            raise InputError("epochs must be >= 0")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")


def train_deterministic(model: MlpModel, dataset, cfg: TrainConfig, prng: Prng,
                        trainable=None, step_hook=None, batch_hook=None,
                        plateau: tuple[float, int] | None = None):
    """Mini-batch SGD training, mutating `model` in place.

    trainable: layer indices to update (all by default); frozen layers get no
        gradient application and no momentum state drift.
    step_hook(model, epoch): called after every optimizer step.
    batch_hook(model, xb, yb) -> xb: input substitution before each step.
    plateau: (tol, span) stops early once the best epoch loss improves by
        less than tol over span epochs.

    Returns (model, per-epoch mean train loss). NaN/Inf loss raises
    TrainingError carrying the epoch index.
    """
    if len(dataset) == 0:
        raise InputError("dataset is empty")
    indices = sorted(trainable) if trainable is not None else list(range(model.depth))
    params = model.parameters(indices)
    state = SgdState(params)
    losses: list[float] = []
    for epoch in range(cfg.epochs):
        lr = cfg.optimizer.lr_at(epoch)
        total, seen = 0.0, 0
        for xb, yb in batch_iter(dataset, cfg.batch_size, prng):
            if batch_hook is not None:
                xb = batch_hook(model, xb, yb)
            logits, cache = forward(model, xb)
            loss, probs = softmax_cross_entropy(logits, yb)
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}", epoch)
            grads, _ = backward(model, cache, cross_entropy_dlogits(probs, yb))
            flat = []
            for i in indices:
                flat.extend(grads[i])
            sgd_step(params, flat, state, cfg.optimizer, lr)
            model.touch()
            if step_hook is not None:
                step_hook(model, epoch)
            total += loss * len(yb)
            seen += len(yb)
        losses.append(total / seen)
        if plateau is not None:
            tol, span = plateau
            if len(losses) > span and losses[-span - 1] - min(losses[-span:]) < tol:
                break
    return model, losses


def predict_probs(model: MlpModel, x) -> np.ndarray:
    logits, _ = forward(model, x)
    return softmax(logits)


def accuracy(model: MlpModel, dataset) -> float:
    probs = predict_probs(model, dataset.features)
    return float(np.mean(probs.argmax(axis=1) == dataset.labels))


def to_binary_logit(model: MlpModel) -> MlpModel:
    """Collapse a 2-class softmax head into one log-odds output.

    The returned net computes logit = f(x)[1] - f(x)[0], so sigmoid of it is
    exactly the original class-1 softmax probability.
    """
    if model.output_dim != 2:
        raise DimensionError("binary-logit collapse needs exactly 2 outputs")
    out = model.copy()
    head = out.layers[-1]
    w = head.weight[1:2, :] - head.weight[0:1, :]
    b = head.bias[1:2] - head.bias[0:1]
    out.layers[-1] = DenseLayer(w, b, "identity")
    return out


def model_to_dict(model: MlpModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layers": [
            {
                "activation": layer.activation,
                "weight": layer.weight.tolist(),
                "bias": layer.bias.tolist(),
            }
            for layer in model.layers
        ],
    }


def model_from_dict(blob: dict) -> MlpModel:
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"not a model checkpoint: format={blob.get('format')!r}")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {blob.get('version')!r}")
    layers = [DenseLayer(l["weight"], l["bias"], l["activation"]) for l in blob["layers"]]
    return MlpModel(layers)


def save_model(model: MlpModel, path: str) -> None:
    """JSON checkpoint; float64 repr round-trips make reloads bit-exact."""
    with open(path, "w") as f:
        json.dump(model_to_dict(model), f)


def load_model(path: str) -> MlpModel:
    with open(path) as f:
        return model_from_dict(json.load(f))
