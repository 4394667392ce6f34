"""Minimal CNN engine: forward, exact backprop, SGD, and synthetic datasets.

Supported layers: conv2d (always ReLU), maxpool, flatten, dense (optional
ReLU), with a softmax cross-entropy head on the final dense layer. Enough to
mimic a conv->pool->dense classifier at desk scale; everything runs in
float64 and is deterministic given the configured seeds.
"""

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .indicators import RetrainLog, epochs_to_cutoff
from .tensor_core import load_tensor, make_rng, save_tensor


class ShapeMismatch(ValueError):
    pass


class EmptyBatch(ValueError):
    pass


class InvalidConfig(ValueError):
    pass


class NonFiniteLoss(ArithmeticError):
    pass


@dataclass(frozen=True)
class Conv:
    filters: int
    kernel: int
    stride: int = 1


@dataclass(frozen=True)
class MaxPool:
    pool: int
    stride: int = 0  # 0 normalizes to pool

    def __post_init__(self):
        if self.stride == 0:
            object.__setattr__(self, "stride", self.pool)


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    units: int
    relu: bool = True


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple
    classes: int
    layers: tuple

    def __post_init__(self):
        shapes = layer_shapes(self)
        last = self.layers[-1]
        if not isinstance(last, Dense) or last.relu or shapes[-1] != (self.classes,):
            raise ShapeMismatch("final layer must be a linear dense head of width classes")


def layer_shapes(spec: ModelSpec):
    """Per-layer output shapes (sample-level, no batch dim); validates composition."""
    shapes = []
    cur = tuple(spec.input_shape)
    for layer in spec.layers:
        if isinstance(layer, Conv):
            if len(cur) != 3:
                raise ShapeMismatch(f"conv needs [h, w, c] input, got {cur}")
            h, w, _ = cur
            if layer.kernel > h or layer.kernel > w:
                raise ShapeMismatch(f"kernel {layer.kernel} exceeds input {cur}")
            oh = (h - layer.kernel) // layer.stride + 1
            ow = (w - layer.kernel) // layer.stride + 1
            cur = (oh, ow, layer.filters)
        elif isinstance(layer, MaxPool):
            if len(cur) != 3:
                raise ShapeMismatch(f"maxpool needs [h, w, c] input, got {cur}")
            h, w, c = cur
            stride = layer.stride
            if layer.pool > h or layer.pool > w:
                raise ShapeMismatch(f"pool {layer.pool} exceeds input {cur}")
            cur = ((h - layer.pool) // stride + 1, (w - layer.pool) // stride + 1, c)
        elif isinstance(layer, Flatten):
            cur = (int(np.prod(cur)),)
        elif isinstance(layer, Dense):
            if len(cur) != 1:
                raise ShapeMismatch(f"dense needs flat input, got {cur}")
            cur = (layer.units,)
        else:
            raise ShapeMismatch(f"unknown layer {layer!r}")
        shapes.append(cur)
    return shapes


def init_weights(spec: ModelSpec, seed: int):
    """Seeded uniform init scaled by fan-in; biases zero. One stream per layer."""
    shapes = layer_shapes(spec)
    weights = []
    cur = tuple(spec.input_shape)
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            fan_in = layer.kernel * layer.kernel * cur[2]
            lim = 1.0 / math.sqrt(fan_in)
            w = make_rng(seed, stream=i).uniform(-lim, lim,
                                                 (layer.kernel, layer.kernel, cur[2], layer.filters))
            weights.append({"W": w, "b": np.zeros(layer.filters)})
        elif isinstance(layer, Dense):
            fan_in = cur[0]
            lim = 1.0 / math.sqrt(fan_in)
            w = make_rng(seed, stream=i).uniform(-lim, lim, (fan_in, layer.units))
            weights.append({"W": w, "b": np.zeros(layer.units)})
        else:
            weights.append(None)
        cur = shapes[i]
    return weights


def _check_weights(spec, weights):
    shapes = layer_shapes(spec)
    if len(weights) != len(spec.layers):
        raise ShapeMismatch("weights list does not match layer list")
    cur = tuple(spec.input_shape)
    for i, layer in enumerate(spec.layers):
        params = weights[i]
        if isinstance(layer, Conv):
            want = (layer.kernel, layer.kernel, cur[2], layer.filters)
            if params is None or params["W"].shape != want or params["b"].shape != (layer.filters,):
                raise ShapeMismatch(f"layer {i}: conv weights do not match {want}")
        elif isinstance(layer, Dense):
            want = (cur[0], layer.units)
            if params is None or params["W"].shape != want or params["b"].shape != (layer.units,):
                raise ShapeMismatch(f"layer {i}: dense weights do not match {want}")
        elif params is not None:
            raise ShapeMismatch(f"layer {i}: unexpected parameters")
        cur = shapes[i]


def forward(spec: ModelSpec, weights, images):
    """Run the network on [n, h, w, c] (or one [h, w, c] image).

    Returns (logits [n, classes], activations): one post-activation array per
    layer, logits for the head. Pure; a second call returns identical arrays.
    """
    x = np.asarray(images, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.shape[1:] != tuple(spec.input_shape):
        raise ShapeMismatch(f"input {x.shape[1:]} does not match {tuple(spec.input_shape)}")
    _check_weights(spec, weights)
    acts = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            x = kernels.conv2d_forward(x, weights[i]["W"], weights[i]["b"], layer.stride)
            x = np.maximum(x, 0.0)
        elif isinstance(layer, MaxPool):
            x, _ = kernels.maxpool_forward(x, layer.pool, layer.stride)
        elif isinstance(layer, Flatten):
            x = x.reshape(x.shape[0], -1)
        else:
            x = x @ weights[i]["W"] + weights[i]["b"]
            if layer.relu:
                x = np.maximum(x, 0.0)
        acts.append(x)
    logits = acts[-1]
    if single:
        return logits[0], [a[0] for a in acts]
    return logits, acts


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad_logits(logits, labels):
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(n), labels]))
    probs = _softmax(logits)
    probs[np.arange(n), labels] -= 1.0
    return loss, probs / n


def grad(spec: ModelSpec, weights, images, labels):
    """Mean cross-entropy loss and its exact gradient for every parameter."""
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if x.shape[0] == 0:
        raise EmptyBatch("empty batch")
    if labels.shape[0] != x.shape[0]:
        raise ShapeMismatch("labels do not match batch")

    # forward with cached inputs per layer
    _check_weights(spec, weights)
    if x.shape[1:] != tuple(spec.input_shape):
        raise ShapeMismatch(f"input {x.shape[1:]} does not match {tuple(spec.input_shape)}")
    inputs, pool_args = [], {}
    cur = x
    for i, layer in enumerate(spec.layers):
        inputs.append(cur)
        if isinstance(layer, Conv):
            cur = kernels.conv2d_forward(cur, weights[i]["W"], weights[i]["b"], layer.stride)
            cur = np.maximum(cur, 0.0)
        elif isinstance(layer, MaxPool):
            cur, arg = kernels.maxpool_forward(cur, layer.pool, layer.stride)
            pool_args[i] = arg
        elif isinstance(layer, Flatten):
            cur = cur.reshape(cur.shape[0], -1)
        else:
            cur = cur @ weights[i]["W"] + weights[i]["b"]
            if layer.relu:
                cur = np.maximum(cur, 0.0)

    loss, dy = loss_and_grad_logits(cur, labels)
    grads = [None] * len(spec.layers)
    post = cur
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        x_in = inputs[i]
        if isinstance(layer, Dense):
            if layer.relu:
                dy = dy * (post > 0)
            grads[i] = {"W": x_in.T @ dy, "b": dy.sum(axis=0)}
            dy = dy @ weights[i]["W"].T
        elif isinstance(layer, Flatten):
            dy = dy.reshape(x_in.shape)
        elif isinstance(layer, MaxPool):
            dy = kernels.maxpool_backward(dy, pool_args[i], x_in.shape[1], x_in.shape[2])
        else:
            dy = dy * (post > 0)
            dx, dw, db = kernels.conv2d_backward(x_in, weights[i]["W"], dy, layer.stride)
            grads[i] = {"W": dw, "b": db}
            dy = dx
        post = x_in
    return loss, grads


def grad_norm(grads) -> float:
    total = 0.0
    for params in grads:
        if params is None:
            continue
        for arr in params.values():
            total += float(np.sum(arr * arr))
    return math.sqrt(total)


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # [n, h, w, c] in [0, 1]
    labels: np.ndarray  # [n] ints in [0, classes)

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise ShapeMismatch("images [n,h,w,c] and labels [n] required")

    @property
    def n(self):
        return self.images.shape[0]


def accuracy(spec: ModelSpec, weights, data: Dataset) -> float:
    """Percent of correct argmax predictions, in [0, 100]."""
    logits, _ = forward(spec, weights, data.images)
    return float(np.mean(logits.argmax(axis=1) == data.labels) * 100.0)


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    batch_size: int
    max_epochs: int
    cutoff: float  # target test accuracy, percent
    seed: int
    snapshot_every: int = 1


def train(spec: ModelSpec, weights, data: Dataset, cfg: TrainConfig, test_data=None):
    """SGD to the accuracy cutoff (see indicators.epochs_to_cutoff).

    Logs one grad-norm record per step, one accuracy record per epoch, and a
    weight snapshot every cfg.snapshot_every epochs (plus the initial
    weights). Deterministic given cfg.seed. lr=0 is allowed and leaves the
    weights unchanged.
    """
    if cfg.lr < 0 or cfg.batch_size < 1 or cfg.max_epochs < 1 or cfg.snapshot_every < 0:
        raise InvalidConfig(f"bad config {cfg}")
    if not 0 <= cfg.cutoff <= 100:
        raise InvalidConfig(f"cutoff must be in [0, 100], got {cfg.cutoff}")
    weights = copy.deepcopy(weights)
    eval_data = data if test_data is None else test_data
    log = RetrainLog()
    log.snapshots.append((0, copy.deepcopy(weights)))
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = make_rng(cfg.seed, stream=epoch).permutation(data.n)
        for lo in range(0, data.n, cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            step += 1
            loss, grads = grad(spec, weights, data.images[batch], data.labels[batch])
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"loss {loss} at step {step}")
            log.steps.append((step, epoch, grad_norm(grads)))
            for li, params in enumerate(grads):
                if params is None:
                    continue
                weights[li]["W"] -= cfg.lr * params["W"]
                weights[li]["b"] -= cfg.lr * params["b"]
        log.accuracies.append(accuracy(spec, weights, eval_data))
        if cfg.snapshot_every and epoch % cfg.snapshot_every == 0:
            log.snapshots.append((step, copy.deepcopy(weights)))
        if epochs_to_cutoff(log.accuracies, cfg.cutoff) == epoch:
            break
    return weights, log


@dataclass(frozen=True)
class SynthConfig:
    n_s: int
    c: int
    shape: tuple = (8, 8, 1)
    seed: int = 0
    bar_width: float = 1.0
    jitter: float = 1.0
    pixel_noise: float = 0.05


def synthetic_dataset(cfg: SynthConfig) -> Dataset:
    """Oriented-bar images with seeded jitter, balanced across classes.

    Class k draws a soft bar through the image center at angle k*pi/c, with
    per-sample center offset, brightness jitter, and mild pixel noise. The
    width/jitter/noise knobs trade separability against difficulty.
    """
    if cfg.n_s < cfg.c or cfg.c < 1 or len(cfg.shape) != 3:
        raise InvalidConfig(f"bad synthetic config {cfg}")
    h, w, ch = cfg.shape
    counts = [cfg.n_s // cfg.c + (1 if k < cfg.n_s % cfg.c else 0) for k in range(cfg.c)]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    images, labels = [], []
    sample = 0
    for k in range(cfg.c):
        theta = math.pi * k / cfg.c
        nx, ny = -math.sin(theta), math.cos(theta)
        for _ in range(counts[k]):
            rng = make_rng(cfg.seed, stream=sample)
            cy = (h - 1) / 2 + rng.uniform(-cfg.jitter, cfg.jitter)
            cx = (w - 1) / 2 + rng.uniform(-cfg.jitter, cfg.jitter)
            d = (xs - cx) * nx + (ys - cy) * ny
            bar = np.exp(-((d / cfg.bar_width) ** 2))
            img = bar * rng.uniform(0.7, 1.0)
            img = img[..., None] + rng.normal(0.0, cfg.pixel_noise, (h, w, ch))
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(k)
            sample += 1
    # shuffle away the class-blocked generation order so prefixes stay stratified
    order = make_rng(cfg.seed, stream=cfg.n_s).permutation(cfg.n_s)
    return Dataset(np.stack(images)[order], np.array(labels, dtype=np.int64)[order])


def param_layer_indices(spec: ModelSpec):
    """Indices of layers with trainable parameters (conv and dense)."""
    return [i for i, l in enumerate(spec.layers) if isinstance(l, (Conv, Dense))]


def default_representation_layer(spec: ModelSpec) -> int:
    """Last conv layer; for conv-free models the layer feeding the head."""
    conv = [i for i, l in enumerate(spec.layers) if isinstance(l, Conv)]
    if conv:
        return conv[-1]
    return max(len(spec.layers) - 2, 0)


def extract_representations(spec: ModelSpec, weights, images, layer=None) -> np.ndarray:
    """Flattened post-activation outputs [n, rep_len] of one layer."""
    idx = default_representation_layer(spec) if layer is None else layer
    _, acts = forward(spec, weights, images)
    act = acts[idx]
    return act.reshape(act.shape[0], -1)


# --- model manifest (JSON + per-layer .pidx files) ---

def layers_to_json(layers) -> list:
    out = []
    for layer in layers:
        if isinstance(layer, Conv):
            out.append({"kind": "conv", "filters": layer.filters,
                        "kernel": layer.kernel, "stride": layer.stride})
        elif isinstance(layer, MaxPool):
            out.append({"kind": "maxpool", "pool": layer.pool, "stride": layer.stride})
        elif isinstance(layer, Flatten):
            out.append({"kind": "flatten"})
        elif isinstance(layer, Dense):
            out.append({"kind": "dense", "units": layer.units, "relu": layer.relu})
        else:
            raise ShapeMismatch(f"unknown layer {layer!r}")
    return out


def layers_from_json(records) -> list:
    layers = []
    for rec in records:
        kind = rec["kind"]
        if kind == "conv":
            layers.append(Conv(rec["filters"], rec["kernel"], rec.get("stride", 1)))
        elif kind == "maxpool":
            layers.append(MaxPool(rec["pool"], rec.get("stride", 0)))
        elif kind == "flatten":
            layers.append(Flatten())
        elif kind == "dense":
            layers.append(Dense(rec["units"], rec.get("relu", True)))
        else:
            raise ShapeMismatch(f"unknown layer kind {kind!r}")
    return layers


def save_model(directory, spec: ModelSpec, weights, name="model.json") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    layers = layers_to_json(spec.layers)
    refs = {}
    for i, params in enumerate(weights):
        if params is None:
            continue
        refs[str(i)] = {}
        for pname, arr in params.items():
            fname = f"layer{i:02d}_{pname}.pidx"
            save_tensor(directory / fname, arr)
            refs[str(i)][pname] = fname
    manifest = {"input_shape": list(spec.input_shape), "classes": spec.classes,
                "layers": layers, "weights": refs}
    path = directory / name
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_model(path):
    path = Path(path)
    manifest = json.loads(path.read_text())
    layers = layers_from_json(manifest["layers"])
    spec = ModelSpec(tuple(manifest["input_shape"]), manifest["classes"], tuple(layers))
    weights = [None] * len(layers)
    for li, refs in manifest["weights"].items():
        weights[int(li)] = {p: load_tensor(path.parent / f).astype(np.float64)
                            for p, f in refs.items()}
    if manifest["weights"]:
        _check_weights(spec, weights)
    return spec, weights
