"""Multi-output 1D convolutional network with hand-written backpropagation.

Tensors are float64 numpy arrays.  Convolutional activations are laid out
``(batch, length, channels)`` and convolution kernels ``(k, c_in, c_out)``;
dense weights are ``(n_in, n_out)``.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _backend, _binary
from .errors import DataError

log = logging.getLogger(__name__)

PAPER_CONV_FILTERS = (80, 110, 80)
PAPER_DENSE_UNITS = (32, 128)
PAPER_INPUT_SHAPE = (4, 1)


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv1d | maxpool1d | flatten | dense
    activation: str = "linear"
    filters: int | None = None
    kernel_size: int | None = None
    padding: str = "valid"
    pool_size: int | None = None
    units: int | None = None

    def __post_init__(self):
        if self.kind not in ("conv1d", "maxpool1d", "flatten", "dense"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ("relu", "linear"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind == "conv1d":
            if not (self.filters and self.filters >= 1 and self.kernel_size and self.kernel_size >= 1):
                raise ValueError("conv1d needs filters >= 1 and kernel_size >= 1")
            if self.padding not in ("valid", "same"):
                raise ValueError(f"unknown padding {self.padding!r}")
        if self.kind == "maxpool1d" and not (self.pool_size and self.pool_size >= 1):
            raise ValueError("maxpool1d needs pool_size >= 1")
        if self.kind == "dense" and not (self.units and self.units >= 1):
            raise ValueError("dense needs units >= 1")


def paper_layers(output_length: int, conv_filters: Sequence[int] = PAPER_CONV_FILTERS,
                 dense_units: Sequence[int] = PAPER_DENSE_UNITS) -> list[LayerSpec]:
    if output_length < 1:
        raise ValueError("output_length must be >= 1")
    f1, f2, f3 = conv_filters
    d1, d2 = dense_units
    return [
        LayerSpec("conv1d", "relu", filters=f1, kernel_size=3, padding="valid"),
        LayerSpec("conv1d", "relu", filters=f2, kernel_size=3, padding="same"),
        LayerSpec("conv1d", "relu", filters=f3, kernel_size=3, padding="same"),
        LayerSpec("maxpool1d", pool_size=2),
        LayerSpec("flatten"),
        LayerSpec("dense", "relu", units=d1),
        LayerSpec("dense", "relu", units=d2),
        LayerSpec("dense", "linear", units=output_length),
    ]


# -- layer kernels ---------------------------------------------------------

def _activate(z, activation):
    return np.maximum(z, 0.0) if activation == "relu" else z


def _activation_grad(dout, z, activation):
    # relu'(0) = 0
    return dout * (z > 0) if activation == "relu" else dout


def same_padding(kernel_size: int) -> tuple[int, int]:
    total = kernel_size - 1
    return total // 2, total - total // 2


def conv1d_forward(x, w, b, padding="valid", activation="linear"):
    """Cross-correlation of ``x`` (B, L, Cin) with ``w`` (k, Cin, Cout)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return conv1d_forward(x[None], w, b, padding, activation)[0][0], None
    k, cin, cout = w.shape
    if x.shape[2] != cin:
        raise ValueError(f"conv1d expects {cin} input channels, got {x.shape[2]}")
    left, right = same_padding(k) if padding == "same" else (0, 0)
    xp = np.pad(x, ((0, 0), (left, right), (0, 0))) if left or right else x
    lout = xp.shape[1] - k + 1
    if lout < 1:
        raise ValueError(f"kernel {k} does not fit input length {x.shape[1]}")
    cols = np.stack([xp[:, i:i + lout, :] for i in range(k)], axis=2)  # (B, L', k, Cin)
    z = cols.reshape(-1, k * cin) @ w.reshape(k * cin, cout) + b
    z = z.reshape(x.shape[0], lout, cout)
    return _activate(z, activation), (cols, z, x.shape[1], left, w, activation)


def conv1d_backward(cache, dout):
    cols, z, length, left, w, activation = cache
    k, cin, cout = w.shape
    bsz, lout = z.shape[:2]
    dz = _activation_grad(dout, z, activation).reshape(-1, cout)
    dw = (cols.reshape(-1, k * cin).T @ dz).reshape(k, cin, cout)
    db = dz.sum(axis=0)
    dcols = (dz @ w.reshape(k * cin, cout).T).reshape(bsz, lout, k, cin)
    dxp = np.zeros((bsz, lout + k - 1, cin))
    for i in range(k):
        dxp[:, i:i + lout, :] += dcols[:, :, i, :]
    return dxp[:, left:left + length, :], dw, db


def maxpool1d_forward(x, pool_size=2):
    """Channel-wise max over non-overlapping windows; ties go to the first element."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return maxpool1d_forward(x[None], pool_size)[0][0], None
    bsz, length, ch = x.shape
    if length < pool_size:
        raise ValueError(f"pool size {pool_size} exceeds input length {length}")
    lout = length // pool_size
    win = x[:, :lout * pool_size, :].reshape(bsz, lout, pool_size, ch)
    arg = win.argmax(axis=2)
    out = np.take_along_axis(win, arg[:, :, None, :], axis=2)[:, :, 0, :]
    return out, (arg, x.shape, pool_size)


def maxpool1d_backward(cache, dout):
    arg, shape, pool = cache
    bsz, length, ch = shape
    lout = arg.shape[1]
    dwin = np.zeros((bsz, lout, pool, ch))
    np.put_along_axis(dwin, arg[:, :, None, :], dout[:, :, None, :], axis=2)
    dx = np.zeros(shape)
    dx[:, :lout * pool, :] = dwin.reshape(bsz, lout * pool, ch)
    return dx


def dense_forward(x, w, b, activation="linear"):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"dense expects {w.shape[0]} inputs, got {x.shape[-1]}")
    z = x @ w + b
    return _activate(z, activation), (x, z, w, activation)


def dense_backward(cache, dout):
    x, z, w, activation = cache
    dz = _activation_grad(dout, z, activation)
    return dz @ w.T, x.T @ dz, dz.sum(axis=0)


def mse_loss(pred, target):
    """Mean squared error over all components and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


# -- model ---------------------------------------------------------------------

class Model:
    """A sequential stack of :class:`LayerSpec` layers on a (length, channels) input."""

    def __init__(self, layers: Sequence[LayerSpec], input_shape=PAPER_INPUT_SHAPE, meta: dict | None = None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.meta = dict(meta or {})
        self.shapes, self.param_shapes = self._infer_shapes()
        self.weights: list[tuple[np.ndarray, np.ndarray] | None] | None = None

    def _infer_shapes(self):
        shape = self.input_shape
        shapes, pshapes = [], []
        for spec in self.layers:
            if spec.kind == "conv1d":
                if len(shape) != 2:
                    raise ValueError("conv1d needs a (length, channels) input")
                length, cin = shape
                lout = length if spec.padding == "same" else length - spec.kernel_size + 1
                if lout < 1:
                    raise ValueError(f"kernel {spec.kernel_size} does not fit length {length}")
                pshapes.append(((spec.kernel_size, cin, spec.filters), (spec.filters,)))
                shape = (lout, spec.filters)
            elif spec.kind == "maxpool1d":
                if shape[0] < spec.pool_size:
                    raise ValueError("pool size exceeds input length")
                pshapes.append(None)
                shape = (shape[0] // spec.pool_size, shape[1])
            elif spec.kind == "flatten":
                pshapes.append(None)
                shape = (math.prod(shape),)
            else:
                if len(shape) != 1:
                    raise ValueError("dense needs a flat input")
                pshapes.append(((shape[0], spec.units), (spec.units,)))
                shape = (spec.units,)
            shapes.append(shape)
        return shapes, pshapes

    @property
    def output_length(self) -> int:
        return self.shapes[-1][0]

    def param_counts(self) -> list[int]:
        return [0 if p is None else math.prod(p[0]) + math.prod(p[1]) for p in self.param_shapes]

    @property
    def n_params(self) -> int:
        return sum(self.param_counts())

    def summary(self) -> str:
        lines = [f"{'layer':<12}{'output shape':<18}{'params':>10}"]
        for spec, shape, n in zip(self.layers, self.shapes, self.param_counts()):
            lines.append(f"{spec.kind:<12}{str(shape):<18}{n:>10,}")
        lines.append(f"total params: {self.n_params:,}")
        return "\n".join(lines)

    def initialize(self, seed: int = 0) -> "Model":
        """Glorot-uniform kernels, zero biases."""
        rng = np.random.default_rng(seed)
        self.weights = []
        for spec, p in zip(self.layers, self.param_shapes):
            if p is None:
                self.weights.append(None)
                continue
            wshape, bshape = p
            if spec.kind == "conv1d":
                k, cin, cout = wshape
                fan_in, fan_out = k * cin, k * cout
            else:
                fan_in, fan_out = wshape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append((rng.uniform(-limit, limit, wshape), np.zeros(bshape)))
        return self

    @property
    def parameters(self) -> list[np.ndarray]:
        if self.weights is None:
            raise RuntimeError("model weights are not initialized")
        return [a for wb in self.weights if wb is not None for a in wb]

    def set_parameters(self, arrays: Sequence[np.ndarray]) -> None:
        arrays = list(arrays)
        weights, i = [], 0
        for p in self.param_shapes:
            if p is None:
                weights.append(None)
                continue
            w, b = arrays[i], arrays[i + 1]
            if w.shape != p[0] or b.shape != p[1]:
                raise ValueError(f"parameter shape mismatch: {w.shape}/{b.shape} vs {p}")
            weights.append((np.array(w, dtype=float), np.array(b, dtype=float)))
            i += 2
        if i != len(arrays):
            raise ValueError("too many parameter arrays")
        self.weights = weights

    def copy(self) -> "Model":
        other = Model(self.layers, self.input_shape, self.meta)
        if self.weights is not None:
            other.set_parameters(self.parameters)
        return other

    def forward(self, x, return_cache: bool = False):
        """Batched forward pass; ``x`` is (B, 4) or (B, length, channels)."""
        if self.weights is None:
            raise RuntimeError("model weights are not initialized")
        x = np.asarray(x, dtype=float).reshape((-1,) + self.input_shape)
        caches = []
        for spec, wb in zip(self.layers, self.weights):
            if spec.kind == "conv1d":
                x, c = conv1d_forward(x, wb[0], wb[1], spec.padding, spec.activation)
            elif spec.kind == "maxpool1d":
                x, c = maxpool1d_forward(x, spec.pool_size)
            elif spec.kind == "flatten":
                c = x.shape
                x = x.reshape(x.shape[0], -1)
            else:
                x, c = dense_forward(x, wb[0], wb[1], spec.activation)
            if return_cache:
                caches.append(c)
        return (x, caches) if return_cache else x

    def backward(self, caches, dout) -> list[np.ndarray]:
        """Parameter gradients, in :attr:`parameters` order, for upstream ``dout``."""
        if not caches:
            raise RuntimeError("backward needs the cache of a forward pass")
        grads = []
        for spec, c in zip(reversed(self.layers), reversed(caches)):
            if spec.kind == "conv1d":
                dout, dw, db = conv1d_backward(c, dout)
                grads += [db, dw]
            elif spec.kind == "maxpool1d":
                dout = maxpool1d_backward(c, dout)
            elif spec.kind == "flatten":
                dout = dout.reshape(c)
            else:
                dout, dw, db = dense_backward(c, dout)
                grads += [db, dw]
        return grads[::-1]

    def predict(self, x) -> np.ndarray:
        """Single-input forward pass returning a 1-D output vector."""
        vec = getattr(x, "vector", x)
        return self.forward(np.asarray(vec, dtype=float)[None])[0]


def paper_architecture(output_length: int, **kwargs) -> Model:
    return Model(paper_layers(output_length, **kwargs), PAPER_INPUT_SHAPE)


# -- optimisation ----------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 10000
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    patience: int | None = None  # stop after this many epochs without improvement

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update, applied in place."""
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** state.step
    sqrt_bc2 = math.sqrt(1.0 - b2 ** state.step)
    step_size = config.learning_rate / bc1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        _backend.adam_update(p, g, m, v, b1, b2, step_size, sqrt_bc2, config.epsilon)
    return params, state


@dataclass
class TrainResult:
    model: Model
    history: list[tuple[int, float, float]] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mse: float = math.inf

    def history_text(self) -> str:
        lines = ["# epoch train_mse val_mse"]
        lines += [f"{e} {tr!r} {va!r}" for e, tr, va in self.history]
        return "\n".join(lines) + "\n"


def train(model: Model, dataset, config: TrainConfig,
          callback: Callable[[int, float, float], None] | None = None) -> TrainResult:
    """Mini-batch Adam on the train split, keeping the best-validation snapshot.

    The returned model (``model`` itself, updated in place) holds the weights
    of the epoch with the lowest validation MSE.
    """
    from .dataset import TRAIN, VALIDATION

    xtr, ytr = dataset.subset(TRAIN)
    xva, yva = dataset.subset(VALIDATION)
    if len(xtr) == 0 or len(xva) == 0:
        raise DataError("training needs non-empty train and validation splits")
    if ytr.shape[1] != model.output_length:
        raise DataError(f"model output {model.output_length} != target length {ytr.shape[1]}")
    if model.weights is None:
        model.initialize(config.seed)

    rng = np.random.default_rng(config.seed)
    params = model.parameters
    state = AdamState.zeros_like(params)
    result = TrainResult(model)
    best = [p.copy() for p in params]
    n = len(xtr)
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            pred, caches = model.forward(xtr[idx], return_cache=True)
            loss, dpred = mse_loss(pred, ytr[idx])
            adam_step(params, model.backward(caches, dpred), state, config)
            total += loss * len(idx)
        train_mse = total / n
        val_mse = mse_loss(model.forward(xva), yva)[0]
        result.history.append((epoch, train_mse, val_mse))
        if val_mse < result.best_val_mse:
            result.best_val_mse, result.best_epoch = val_mse, epoch
            for dst, src in zip(best, params):
                dst[...] = src
        if callback is not None:
            callback(epoch, train_mse, val_mse)
        if config.patience is not None and epoch - result.best_epoch >= config.patience:
            log.info("stopping at epoch %d, no improvement for %d epochs", epoch, config.patience)
            break
    for dst, src in zip(params, best):
        dst[...] = src
    return result


# -- serialization -----------------------------------------------------------

MODEL_MAGIC = b"OSTLMODL"
MODEL_VERSION = 1


def model_to_bytes(model: Model) -> bytes:
    header = json.dumps({
        "layers": [asdict(s) for s in model.layers],
        "input_shape": list(model.input_shape),
        "n_params": model.n_params,
        "meta": model.meta,
    }, sort_keys=True).encode()
    body = [struct.pack("<QI", model.n_params, len(header)), header]
    body += [np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.parameters]
    return _binary.seal(MODEL_MAGIC, MODEL_VERSION, b"".join(body))


def model_from_bytes(blob: bytes, what: str = "model") -> Model:
    r = _binary.Reader(_binary.unseal(blob, MODEL_MAGIC, MODEL_VERSION, what), what)
    n_params, hlen = r.unpack("<QI")
    try:
        header = json.loads(bytes(r.take(hlen)))
    except ValueError as exc:
        raise DataError(f"{what}: bad header: {exc}") from None
    model = Model([LayerSpec(**s) for s in header["layers"]], tuple(header["input_shape"]), header["meta"])
    if model.n_params != n_params:
        raise DataError(f"{what}: header records {n_params} parameters, architecture has {model.n_params}")
    arrays = []
    for p in model.param_shapes:
        if p is not None:
            for shape in p:
                arrays.append(r.array("<f8", math.prod(shape)).reshape(shape).astype(float))
    r.done()
    model.set_parameters(arrays)
    return model


def save_model(model: Model, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> Model:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    return model_from_bytes(blob, str(path))
