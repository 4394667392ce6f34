"""Per-sample, per-layer Wasserstein distances between clean and noisy
activations, aggregated into the average sample distance p.

Each layer is reduced to a vector of per-filter spatial means; the clean and
noisy vectors of one sample are compared with the closed-form 1-D W1 between
equal-size empirical distributions (mean absolute difference of sorted
values). Layers counted are the ones carrying trainable parameters.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor_core import load_tensor, save_tensor


class EmptyMap(ValueError):
    pass


class EmptyVector(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class TraceMismatch(ValueError):
    pass


def filter_means(layer_activation) -> np.ndarray:
    """Spatial mean per filter: [f, h, w] -> [f]; a flat [f] passes through."""
    act = np.asarray(layer_activation, dtype=np.float64)
    if act.ndim == 1:
        if act.size == 0:
            raise EmptyMap("empty activation")
        return act.copy()
    if act.ndim != 3:
        raise EmptyMap(f"expected [f, h, w] or [f], got shape {act.shape}")
    if act.shape[1] * act.shape[2] == 0 or act.shape[0] == 0:
        raise EmptyMap("empty activation map")
    return act.mean(axis=(1, 2))


def batch_filter_means(acts_batch) -> np.ndarray:
    """filter_means over a batch: [n, h, w, f] -> [n, f]; [n, f] passes through."""
    acts = np.asarray(acts_batch, dtype=np.float64)
    if acts.ndim == 2:
        if acts.shape[1] == 0:
            raise EmptyMap("empty activation")
        return acts.copy()
    if acts.ndim != 4 or 0 in acts.shape[1:]:
        raise EmptyMap(f"expected [n, h, w, f] or [n, f], got shape {acts.shape}")
    return acts.mean(axis=(1, 2))


def wasserstein_1d(a, b) -> float:
    """W1 between equal-size empirical distributions: mean |sorted(a)-sorted(b)|."""
    av = np.asarray(a, dtype=np.float64).ravel()
    bv = np.asarray(b, dtype=np.float64).ravel()
    if av.size == 0 or bv.size == 0:
        raise EmptyVector("empty input")
    if av.size != bv.size:
        raise LengthMismatch(f"{av.size} vs {bv.size}")
    return float(np.mean(np.abs(np.sort(av) - np.sort(bv))))


def layer_distance(clean_means, noisy_means) -> float:
    """Distance between one sample's clean and noisy filter-mean vectors."""
    return wasserstein_1d(clean_means, noisy_means)


@dataclass(frozen=True)
class ActivationTrace:
    """Per-layer [n_s, f] filter-mean arrays, one entry per counted layer."""

    layers: tuple

    def __post_init__(self):
        if not self.layers:
            raise TraceMismatch("trace needs at least one layer")
        n = self.layers[0].shape[0]
        for arr in self.layers:
            if arr.ndim != 2 or arr.shape[0] != n:
                raise TraceMismatch("all layers must be [n_s, f] with equal n_s")

    @property
    def n_s(self):
        return self.layers[0].shape[0]

    @property
    def n_l(self):
        return len(self.layers)


def average_sample_distance(clean: ActivationTrace, noisy: ActivationTrace) -> float:
    """p: layer distances averaged over every sample and every layer."""
    if clean.n_l != noisy.n_l or clean.n_s != noisy.n_s:
        raise TraceMismatch(f"({clean.n_s}, {clean.n_l}) vs ({noisy.n_s}, {noisy.n_l})")
    for lc, ln in zip(clean.layers, noisy.layers):
        if lc.shape != ln.shape:
            raise TraceMismatch(f"layer shapes differ: {lc.shape} vs {ln.shape}")
    total = 0.0
    for lc, ln in zip(clean.layers, noisy.layers):
        for i in range(clean.n_s):
            total += layer_distance(lc[i], ln[i])
    return total / (clean.n_s * clean.n_l)


def save_trace_pair(directory, clean: ActivationTrace, noisy: ActivationTrace,
                    names=None, name="trace.json") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    layers = []
    for i, (lc, ln) in enumerate(zip(clean.layers, noisy.layers)):
        cf, nf = f"layer{i:02d}_clean.pidx", f"layer{i:02d}_noisy.pidx"
        save_tensor(directory / cf, lc)
        save_tensor(directory / nf, ln)
        layers.append({"name": names[i] if names else f"layer{i}",
                       "f": int(lc.shape[1]), "clean": cf, "noisy": nf})
    manifest = {"n_s": int(clean.n_s), "layers": layers}
    path = directory / name
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_trace_pair(path):
    path = Path(path)
    manifest = json.loads(path.read_text())
    clean, noisy = [], []
    for rec in manifest["layers"]:
        clean.append(load_tensor(path.parent / rec["clean"]).astype(np.float64))
        noisy.append(load_tensor(path.parent / rec["noisy"]).astype(np.float64))
    return ActivationTrace(tuple(clean)), ActivationTrace(tuple(noisy))
