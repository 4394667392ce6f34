"""Noise-variance scaling and the final PreIndex assembly.

PreIndex for one (noise kind, level) combines the average sample
representation distance p, the clustering complement inv_ari, and, for
pixel-specific noise only, a standard-deviation scaling with the per-kind
mean deviation as offset:

    pixel-specific: (p + inv_ari) / (1 + (p + (1 - ari)) * s) - s_bar
    global:          p + inv_ari
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import micronet
from .clustering import (
    RepresentationSet,
    ari,
    contingency,
    init_kmeanspp,
    init_label_centroids,
    init_random_min_entropy,
    inv_ari,
    kmeans,
)
from .corruptions import KINDS, NoiseSpec, UnknownKind, corrupt, corrupt_batch
from .distance import ActivationTrace, average_sample_distance, batch_filter_means
from .tensor_core import variance

PIXEL_SPECIFIC = ("salt_pepper", "impulse")


class ShapeMismatch(ValueError):
    pass


class EmptySet(ValueError):
    pass


class InconsistentAri(ValueError):
    pass


def noise_class(kind: str) -> str:
    """pixel_specific for the sparse large-magnitude kinds, global otherwise."""
    if kind in PIXEL_SPECIFIC:
        return "pixel_specific"
    if kind in KINDS:
        return "global"
    raise UnknownKind(f"unknown noise kind {kind!r}")


@dataclass(frozen=True)
class DeviationConfig:
    lambda_: float = 1.0

    def __post_init__(self):
        if not self.lambda_ > 0:
            raise ValueError(f"lambda must be positive, got {self.lambda_}")


def deviation(clean, noisy, cfg: DeviationConfig = DeviationConfig()) -> float:
    """Standard deviation of the clean-minus-noisy pixel differences over
    all positions and channels, scaled down by lambda."""
    ca = np.asarray(clean, dtype=np.float64)
    na = np.asarray(noisy, dtype=np.float64)
    if ca.shape != na.shape:
        raise ShapeMismatch(f"{ca.shape} vs {na.shape}")
    return math.sqrt(variance((ca - na).ravel())) / cfg.lambda_


def mean_deviation(clean_set, kind: str, cfg: DeviationConfig, seed: int) -> float:
    """Mean over levels 1..9 of the mean per-image deviation at that level."""
    images = np.asarray(clean_set, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    if images.shape[0] == 0:
        raise EmptySet("no clean images")
    per_level = []
    for level in range(1, 10):
        spec = NoiseSpec(kind, level, seed)
        devs = [deviation(images[i], corrupt(images[i], spec, stream=i), cfg)
                for i in range(images.shape[0])]
        per_level.append(float(np.mean(devs)))
    return float(np.mean(per_level))


def preindex_value(p: float, ari_value: float, inv_ari_value: float,
                   s: float, s_bar: float, klass: str) -> float:
    """Evaluate the final estimator for one noise cell."""
    if p < 0 or s < 0 or s_bar < 0:
        raise ValueError("p, s, s_bar must be nonnegative")
    if abs(inv_ari_value - (1.0 - ari_value)) > 1e-9:
        raise InconsistentAri(f"inv_ari {inv_ari_value} vs 1-ari {1.0 - ari_value}")
    if klass == "global":
        return p + inv_ari_value
    if klass == "pixel_specific":
        scaling = 1.0 / (1.0 + (p + (1.0 - ari_value)) * s)
        return (p + inv_ari_value) * scaling - s_bar
    raise ValueError(f"unknown noise class {klass!r}")


@dataclass(frozen=True)
class PreIndexReport:
    kind: str
    level: int
    p: float
    ari: float
    inv_ari: float
    s: float
    s_bar: float
    noise_class: str
    preindex: float

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PreIndexConfig:
    init: str = "label"  # label | kmeanspp | minentropy
    lambda_: float = 1.0
    seed: int = 0        # kmeanspp / minentropy seeding
    rep_layer: int = -1  # -1 selects the default representation layer
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-4
    samples: int = 0     # 0 = use the full set


def _extract_traces(spec, acts):
    means = tuple(batch_filter_means(acts[i]) for i in micronet.param_layer_indices(spec))
    return ActivationTrace(means)


def compute_preindex(model_spec, weights, images, labels, noise,
                     cfg: PreIndexConfig = PreIndexConfig()) -> PreIndexReport:
    """One forward pass per image per distribution, then the full assembly.

    noise=None computes the identity-corruption baseline (kind "identity",
    level 0): the noisy set equals the clean set and both deviations are 0.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if images.ndim != 4 or images.shape[0] != labels.shape[0]:
        raise ShapeMismatch("images [n,h,w,c] with aligned labels required")
    if cfg.samples:
        images, labels = images[: cfg.samples], labels[: cfg.samples]
    if images.shape[0] == 0:
        raise EmptySet("no samples")

    dev_cfg = DeviationConfig(cfg.lambda_)
    if noise is None:
        noisy = images
        kind, level, klass = "identity", 0, "global"
        s = s_bar = 0.0
    else:
        noisy = corrupt_batch(images, noise)
        kind, level, klass = noise.kind, noise.level, noise_class(noise.kind)
        s = float(np.mean([deviation(images[i], noisy[i], dev_cfg)
                           for i in range(images.shape[0])]))
        s_bar = mean_deviation(images, noise.kind, dev_cfg, noise.seed)

    # exactly one forward pass per distribution feeds both p and the clustering
    _, acts_clean = micronet.forward(model_spec, weights, images)
    _, acts_noisy = micronet.forward(model_spec, weights, noisy)
    p = average_sample_distance(_extract_traces(model_spec, acts_clean),
                                _extract_traces(model_spec, acts_noisy))

    rep_layer = (micronet.default_representation_layer(model_spec)
                 if cfg.rep_layer < 0 else cfg.rep_layer)
    reps = acts_noisy[rep_layer].reshape(images.shape[0], -1)
    report_ari, report_inv = clustered_ari(reps, labels, model_spec.classes, cfg)
    value = preindex_value(p, report_ari, report_inv, s, s_bar, klass)
    return PreIndexReport(kind, level, p, report_ari, report_inv, s, s_bar, klass, value)


def compute_preindex_from_dump(manifest_path, kind, level, seed,
                               cfg: PreIndexConfig = PreIndexConfig()) -> PreIndexReport:
    """PreIndex from externally dumped activations (adapter manifest).

    The manifest lists per-layer clean/noisy activation tensors
    [n_s, f, h_rep, w_rep], the true labels, and optionally the clean/noisy
    image tensors. Global kinds work without images (the deviations do not
    enter the formula); pixel-specific kinds need them: s comes from the
    dumped pair and s_bar from re-corrupting the clean images at all nine
    levels with this package's intensity ladder.
    """
    import json
    from pathlib import Path

    from .tensor_core import load_tensor

    path = Path(manifest_path)
    manifest = json.loads(path.read_text())
    labels = load_tensor(path.parent / manifest["labels"]).astype(np.int64)
    classes = int(manifest.get("classes", labels.max() + 1))

    clean_means, noisy_means = [], []
    noisy_raw = []
    for rec in manifest["layers"]:
        ca = load_tensor(path.parent / rec["clean"]).astype(np.float64)
        na = load_tensor(path.parent / rec["noisy"]).astype(np.float64)
        if ca.shape != na.shape:
            raise ShapeMismatch(f"layer {rec.get('name')}: {ca.shape} vs {na.shape}")
        # dumps are filters-first [n, f, h, w]; reduce over the spatial axes
        clean_means.append(ca.mean(axis=(2, 3)) if ca.ndim == 4 else ca)
        noisy_means.append(na.mean(axis=(2, 3)) if na.ndim == 4 else na)
        noisy_raw.append(na)
    p = average_sample_distance(ActivationTrace(tuple(clean_means)),
                                ActivationTrace(tuple(noisy_means)))

    rep_idx = int(manifest.get("representation_layer", len(noisy_raw) - 1))
    reps = noisy_raw[rep_idx].reshape(labels.shape[0], -1)
    report_ari, report_inv = clustered_ari(reps, labels, classes, cfg)

    if kind == "identity":
        klass, level = "global", 0
        s = s_bar = 0.0
    else:
        klass = noise_class(kind)
        dev_cfg = DeviationConfig(cfg.lambda_)
        has_images = "images_clean" in manifest and "images_noisy" in manifest
        if has_images:
            imgs_c = load_tensor(path.parent / manifest["images_clean"]).astype(np.float64)
            imgs_n = load_tensor(path.parent / manifest["images_noisy"]).astype(np.float64)
            s = float(np.mean([deviation(imgs_c[i], imgs_n[i], dev_cfg)
                               for i in range(imgs_c.shape[0])]))
            s_bar = mean_deviation(imgs_c, kind, dev_cfg, seed)
        elif klass == "pixel_specific":
            raise EmptySet("pixel-specific kinds need images_clean/images_noisy in the dump")
        else:
            s = s_bar = 0.0
    value = preindex_value(p, report_ari, report_inv, s, s_bar, klass)
    return PreIndexReport(kind, level, p, report_ari, report_inv, s, s_bar, klass, value)


def clustered_ari(reps, labels, classes, cfg: PreIndexConfig = PreIndexConfig()):
    """Cluster representations with the configured init; (ari, inv_ari) vs labels."""
    rs = RepresentationSet(np.asarray(reps, dtype=np.float64),
                           np.asarray(labels, dtype=np.int64), classes)
    if cfg.init == "label":
        init = init_label_centroids(rs)
    elif cfg.init == "kmeanspp":
        init = init_kmeanspp(rs, cfg.seed)
    elif cfg.init == "minentropy":
        init = init_random_min_entropy(rs, cfg.seed)
    else:
        raise ValueError(f"unknown init {cfg.init!r}")
    cluster_labels = kmeans(rs, init, max_iter=cfg.kmeans_max_iter, tol=cfg.kmeans_tol)
    table = contingency(rs.labels, cluster_labels, rs.c)
    return ari(table), inv_ari(table)
