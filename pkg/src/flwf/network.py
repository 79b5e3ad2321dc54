"""Minimal neural-network engine: forward, analytic backprop, mini-batch SGD.

Supported layer kinds are ``dense``, ``conv1d`` (valid, stride 1),
``maxpool1d`` (non-overlapping), ``relu``, ``dropout`` (inverted scaling,
active only when the training flag is set) and ``softmax-output``.  The
``softmax-output`` kind marks the classification head and passes logits
through unchanged: every loss in :mod:`flwf.losses` consumes raw logits
and applies its own max-subtracted softmax, so probabilities are never
materialized inside the network.

Tensors are plain numpy float64 arrays in row-major order with a leading
batch axis.  Dense layers flatten whatever trailing shape they receive;
conv1d/maxpool1d operate on ``(batch, length, channels)``.  A model is a
:class:`ModelParams` value; every operation returns a new value and never
mutates its inputs, so models can be shared freely across threads.

Weight initialization is uniform in ``[-s, s]`` with
``s = sqrt(6 / (fan_in + fan_out))`` per layer.  Max-pool ties break
toward the lowest index.  Given equal seeds, training is bit-for-bit
reproducible.
"""

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import losses
from .datasets import RoundBatch

KIND_DENSE = "dense"
KIND_CONV1D = "conv1d"
KIND_MAXPOOL1D = "maxpool1d"
KIND_RELU = "relu"
KIND_DROPOUT = "dropout"
KIND_SOFTMAX_OUTPUT = "softmax-output"
LAYER_KINDS = (KIND_DENSE, KIND_CONV1D, KIND_MAXPOOL1D, KIND_RELU,
               KIND_DROPOUT, KIND_SOFTMAX_OUTPUT)


class ShapeMismatchError(ValueError):
    """A layer received input whose shape it cannot consume."""


@dataclass(frozen=True)
class LayerConfig:
    """One layer of an architecture; only the fields for its kind are set."""

    kind: str
    units: int | None = None       # dense
    filters: int | None = None     # conv1d
    kernel: int | None = None      # conv1d
    pool: int | None = None        # maxpool1d
    rate: float | None = None      # dropout

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == KIND_DENSE and (self.units is None or self.units < 1):
            raise ValueError("dense layer needs units > 0")
        if self.kind == KIND_CONV1D:
            if self.filters is None or self.filters < 1:
                raise ValueError("conv1d layer needs filters > 0")
            if self.kernel is None or self.kernel < 1:
                raise ValueError("conv1d layer needs kernel > 0")
        if self.kind == KIND_MAXPOOL1D and (self.pool is None or self.pool < 1):
            raise ValueError("maxpool1d layer needs pool > 0")
        if self.kind == KIND_DROPOUT:
            if self.rate is None or not 0.0 <= self.rate < 1.0:
                raise ValueError("dropout rate must lie in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one local training run."""

    learning_rate: float
    batch_size: int
    epochs: int
    dropout_rate: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")


@dataclass(eq=False)
class ModelParams:
    """All trainable buffers of one network plus its architecture."""

    architecture: tuple[LayerConfig, ...]
    input_shape: tuple[int, ...]
    weights: list[dict[str, np.ndarray]]

    def copy(self) -> "ModelParams":
        return ModelParams(self.architecture, self.input_shape,
                           [{k: v.copy() for k, v in w.items()} for w in self.weights])

    def same_architecture(self, other: "ModelParams") -> bool:
        return (self.architecture == other.architecture
                and self.input_shape == other.input_shape)

    @property
    def n_outputs(self) -> int:
        return infer_shapes(self.architecture, self.input_shape)[-1][0]


def params_equal(a: ModelParams, b: ModelParams) -> bool:
    """Exact (bit-for-bit) equality of two models."""
    if not a.same_architecture(b):
        return False
    return all(wa.keys() == wb.keys()
               and all(np.array_equal(wa[k], wb[k]) for k in wa)
               for wa, wb in zip(a.weights, b.weights))


def params_digest(params: ModelParams) -> str:
    """Stable content hash, used to assert that teacher models stay frozen."""
    h = hashlib.sha256()
    h.update(json.dumps(_architecture_meta(params), sort_keys=True).encode())
    for w in params.weights:
        for key in sorted(w):
            h.update(np.ascontiguousarray(w[key]).tobytes())
    return h.hexdigest()


def infer_shapes(architecture, input_shape) -> list[tuple[int, ...]]:
    """Per-example output shape after each layer; validates the stack.

    Raises :class:`ShapeMismatchError` naming the offending layer when a
    layer cannot consume its input, and :class:`ValueError` when the stack
    does not end in a per-example logit vector.
    """
    cur = tuple(int(d) for d in input_shape)
    if not cur or any(d < 1 for d in cur):
        raise ValueError("input shape must be positive dimensions")
    shapes = []
    for i, layer in enumerate(architecture):
        where = f"layer {i} ({layer.kind})"
        if layer.kind == KIND_DENSE:
            cur = (layer.units,)
        elif layer.kind == KIND_CONV1D:
            if len(cur) != 2:
                raise ShapeMismatchError(f"{where}: needs (length, channels) input, got {cur}")
            length, _ = cur
            if layer.kernel > length:
                raise ShapeMismatchError(f"{where}: kernel {layer.kernel} exceeds length {length}")
            cur = (length - layer.kernel + 1, layer.filters)
        elif layer.kind == KIND_MAXPOOL1D:
            if len(cur) != 2:
                raise ShapeMismatchError(f"{where}: needs (length, channels) input, got {cur}")
            length, channels = cur
            if layer.pool > length:
                raise ShapeMismatchError(f"{where}: pool {layer.pool} exceeds length {length}")
            cur = (length // layer.pool, channels)
        elif layer.kind == KIND_SOFTMAX_OUTPUT:
            if i != len(architecture) - 1:
                raise ValueError(f"{where}: softmax-output must be the final layer")
        # relu/dropout keep their input shape
        shapes.append(cur)
    if len(cur) != 1:
        raise ValueError(f"network must end in a logit vector, final shape is {cur}")
    return shapes


def init_params(architecture, input_shape, seed) -> ModelParams:
    """Fresh model with uniform Glorot weights and zero biases."""
    architecture = tuple(architecture)
    input_shape = tuple(int(d) for d in input_shape)
    infer_shapes(architecture, input_shape)
    rng = np.random.default_rng(seed)
    weights: list[dict[str, np.ndarray]] = []
    cur = input_shape
    for layer in architecture:
        if layer.kind == KIND_DENSE:
            fan_in = int(np.prod(cur))
            s = math.sqrt(6.0 / (fan_in + layer.units))
            weights.append({"W": rng.uniform(-s, s, (fan_in, layer.units)),
                            "b": np.zeros(layer.units)})
            cur = (layer.units,)
        elif layer.kind == KIND_CONV1D:
            length, channels = cur
            fan_in = layer.kernel * channels
            fan_out = layer.kernel * layer.filters
            s = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append({"W": rng.uniform(-s, s, (layer.kernel, channels, layer.filters)),
                            "b": np.zeros(layer.filters)})
            cur = (length - layer.kernel + 1, layer.filters)
        else:
            weights.append({})
            if layer.kind == KIND_MAXPOOL1D:
                cur = (cur[0] // layer.pool, cur[1])
    return ModelParams(architecture, input_shape, weights)


def _coerce_input(params: ModelParams, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=float)
    if x.ndim < 2:
        raise ShapeMismatchError("input must carry a leading batch axis")
    if x.shape[1:] == params.input_shape:
        return x
    if x.ndim == 2 and x.shape[1] == int(np.prod(params.input_shape)):
        return x.reshape((x.shape[0], *params.input_shape))
    raise ShapeMismatchError(
        f"input: per-example shape {x.shape[1:]} does not match model input "
        f"{params.input_shape}")


def _forward_pass(params: ModelParams, inputs, training: bool, rng,
                  keep_caches: bool):
    x = _coerce_input(params, inputs)
    caches: list = []
    for i, (layer, w) in enumerate(zip(params.architecture, params.weights)):
        cache = None
        if layer.kind == KIND_DENSE:
            if int(np.prod(x.shape[1:])) != w["W"].shape[0]:
                raise ShapeMismatchError(
                    f"layer {i} (dense): flattened input size {int(np.prod(x.shape[1:]))} "
                    f"does not match weight rows {w['W'].shape[0]}")
            flat = x.reshape(x.shape[0], -1)
            cache = (x.shape, flat)
            x = flat @ w["W"] + w["b"]
        elif layer.kind == KIND_CONV1D:
            if x.ndim != 3:
                raise ShapeMismatchError(f"layer {i} (conv1d): needs 3-d input, got {x.shape}")
            windows = sliding_window_view(x, layer.kernel, axis=1)  # (B, Lout, C, K)
            cache = windows
            x = np.einsum("blck,kcf->blf", windows, w["W"]) + w["b"]
        elif layer.kind == KIND_MAXPOOL1D:
            if x.ndim != 3:
                raise ShapeMismatchError(f"layer {i} (maxpool1d): needs 3-d input, got {x.shape}")
            x, cache = _maxpool_forward(x, layer.pool)
        elif layer.kind == KIND_RELU:
            cache = x > 0
            x = np.maximum(x, 0.0)
        elif layer.kind == KIND_DROPOUT:
            if training and layer.rate > 0.0:
                if rng is None:
                    raise ValueError("training forward through dropout requires an rng")
                mask = (rng.random(x.shape) >= layer.rate) / (1.0 - layer.rate)
                cache = mask
                x = x * mask
            else:
                cache = None  # identity at inference
        elif layer.kind == KIND_SOFTMAX_OUTPUT:
            pass  # logits pass through; losses apply their own softmax
        if keep_caches:
            caches.append(cache)
    if x.ndim != 2:
        raise ShapeMismatchError(f"network produced {x.shape}, expected (batch, classes)")
    if not np.isfinite(x).all():
        raise FloatingPointError("non-finite logits")
    return x, caches


def forward(params: ModelParams, inputs, training: bool = False, rng=None) -> np.ndarray:
    """Logits for a batch, one row per input row.

    Dropout fires only when ``training`` is set; inference is rng-free and
    deterministic.
    """
    logits, _ = _forward_pass(params, inputs, training, rng, keep_caches=False)
    return logits


def _maxpool_forward(x, pool):
    b, length, c = x.shape
    lout = length // pool
    trimmed = x[:, :lout * pool, :].reshape(b, lout, pool, c)
    idx = trimmed.argmax(axis=2)  # first occurrence: ties go to the lowest index
    out = np.take_along_axis(trimmed, idx[:, :, None, :], axis=2)[:, :, 0, :]
    return out, (idx, x.shape, pool)


def _maxpool_backward(cache, dout):
    idx, shape, pool = cache
    b, length, c = shape
    lout = length // pool
    dtrimmed = np.zeros((b, lout, pool, c))
    np.put_along_axis(dtrimmed, idx[:, :, None, :], dout[:, :, None, :], axis=2)
    dx = np.zeros(shape)
    dx[:, :lout * pool, :] = dtrimmed.reshape(b, lout * pool, c)
    return dx


def _backward_pass(params: ModelParams, caches, dlogits) -> list[dict[str, np.ndarray]]:
    grads: list[dict[str, np.ndarray]] = [dict() for _ in params.weights]
    dx = dlogits
    for i in range(len(params.architecture) - 1, -1, -1):
        layer = params.architecture[i]
        w = params.weights[i]
        cache = caches[i]
        if layer.kind == KIND_DENSE:
            orig_shape, flat = cache
            grads[i] = {"W": flat.T @ dx, "b": dx.sum(axis=0)}
            dx = (dx @ w["W"].T).reshape(orig_shape)
        elif layer.kind == KIND_CONV1D:
            windows = cache
            grads[i] = {"W": np.einsum("blck,blf->kcf", windows, dx),
                        "b": dx.sum(axis=(0, 1))}
            kernel = w["W"].shape[0]
            b_, lout, _ = dx.shape
            dxin = np.zeros((b_, lout + kernel - 1, w["W"].shape[1]))
            for k in range(kernel):
                dxin[:, k:k + lout, :] += dx @ w["W"][k].T
            dx = dxin
        elif layer.kind == KIND_MAXPOOL1D:
            dx = _maxpool_backward(cache, dx)
        elif layer.kind == KIND_RELU:
            dx = dx * cache
        elif layer.kind == KIND_DROPOUT:
            if cache is not None:
                dx = dx * cache
        # softmax-output: identity
    return grads


def loss_on_batch(params: ModelParams, batch: RoundBatch, spec: losses.LossSpec,
                  training: bool = False, rng=None) -> float:
    """Objective value on one batch; the workhorse of finite-difference checks."""
    logits = forward(params, batch.features, training=training, rng=rng)
    return losses.combined_loss(spec, logits, batch.one_hot())


def _loss_and_gradients(params: ModelParams, batch: RoundBatch, spec: losses.LossSpec,
                        training: bool, rng):
    logits, caches = _forward_pass(params, batch.features, training, rng, keep_caches=True)
    value = losses.combined_loss(spec, logits, batch.one_hot())
    dlogits = losses.combined_loss_grad(spec, logits, batch.one_hot())
    grads = _backward_pass(params, caches, dlogits)
    return value, ModelParams(params.architecture, params.input_shape, grads)


def backward(params: ModelParams, batch: RoundBatch, spec: losses.LossSpec,
             training: bool = False, rng=None) -> ModelParams:
    """Analytic gradient of the objective, congruent with ``params``.

    Teacher logits must already sit inside ``spec`` when a distillation
    term is requested.  With ``training`` unset the pass is deterministic
    (dropout inactive).
    """
    _, grads = _loss_and_gradients(params, batch, spec, training, rng)
    return grads


def sgd_step(params: ModelParams, grads: ModelParams, learning_rate: float) -> ModelParams:
    """One plain gradient step: ``params - learning_rate * grads``."""
    if not params.same_architecture(grads):
        raise ShapeMismatchError("gradient architecture does not match parameters")
    new_weights = []
    for w, g in zip(params.weights, grads.weights):
        if w.keys() != g.keys():
            raise ShapeMismatchError("gradient buffers do not match parameter buffers")
        step = {}
        for key in w:
            if w[key].shape != g[key].shape:
                raise ShapeMismatchError(f"gradient shape {g[key].shape} vs {w[key].shape}")
            step[key] = w[key] - learning_rate * g[key]
            if not np.isfinite(step[key]).all():
                raise FloatingPointError("non-finite parameters after SGD step")
        new_weights.append(step)
    return ModelParams(params.architecture, params.input_shape, new_weights)


def train_local(params: ModelParams, data: RoundBatch, cfg: TrainConfig,
                spec: losses.LossSpec, loss_trace: list | None = None) -> ModelParams:
    """E epochs of mini-batch SGD on one round's data.

    The batch order is drawn once from the seeded shuffle and then chunked
    into size-B mini-batches (the last chunk may be short); every epoch
    iterates the same chunks.  Per-batch loss values are appended to
    ``loss_trace`` when given.
    """
    if len(data) == 0:
        raise ValueError("train_local: empty dataset")
    if cfg.epochs == 0:
        return params
    rng = np.random.default_rng(cfg.rng_seed)
    order = rng.permutation(len(data))
    chunks = [order[i:i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)]
    current = params
    for _ in range(cfg.epochs):
        for chunk in chunks:
            sub = RoundBatch(data.features[chunk], data.labels[chunk], data.n_classes,
                             data.source_indices[chunk])
            value, grads = _loss_and_gradients(current, sub, spec.subset(chunk),
                                               training=True, rng=rng)
            if loss_trace is not None:
                loss_trace.append(value)
            current = sgd_step(current, grads, cfg.learning_rate)
    return current


def _architecture_meta(params: ModelParams) -> dict:
    layers = []
    for layer in params.architecture:
        entry = {"kind": layer.kind}
        for name in ("units", "filters", "kernel", "pool", "rate"):
            value = getattr(layer, name)
            if value is not None:
                entry[name] = value
        layers.append(entry)
    return {"input_shape": list(params.input_shape), "layers": layers}


def layer_config_from_dict(entry: dict) -> LayerConfig:
    known = {"kind", "units", "filters", "kernel", "pool", "rate"}
    unknown = set(entry) - known
    if unknown:
        raise ValueError(f"unknown layer fields: {sorted(unknown)}")
    return LayerConfig(**entry)


def save_model(params: ModelParams, path) -> None:
    """Serialize to ``.npz`` with a JSON architecture header; bit-exact round trip."""
    arrays = {"__meta__": np.asarray(json.dumps(_architecture_meta(params), sort_keys=True))}
    for i, w in enumerate(params.weights):
        for key, arr in w.items():
            arrays[f"layer{i}_{key}"] = arr
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path) -> ModelParams:
    with np.load(path) as data:
        meta = json.loads(str(data["__meta__"]))
        architecture = tuple(layer_config_from_dict(entry) for entry in meta["layers"])
        weights: list[dict[str, np.ndarray]] = []
        for i, layer in enumerate(architecture):
            w = {}
            for key in ("W", "b"):
                name = f"layer{i}_{key}"
                if name in data:
                    w[key] = data[name].copy()
            weights.append(w)
    return ModelParams(architecture, tuple(meta["input_shape"]), weights)
