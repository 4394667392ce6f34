"""Representation clustering and the adjusted Rand index machinery.

Centroids can be seeded three ways: class-label means (the default), D^2
weighted kmeans++ sampling, or the best of 20 random cluster assignments
scored by cluster-size entropy. Lloyd iterations then produce cluster labels
whose agreement with the true labels is summarized in a contingency table;
ari/inv_ari are evaluated from it with exact integer binomials.
"""

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .tensor_core import load_tensor, make_rng, save_tensor


class EmptyClass(ValueError):
    pass


class TooFewSamples(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class LabelOutOfRange(ValueError):
    pass


class DegenerateNormalizer(ArithmeticError):
    pass


@dataclass(frozen=True)
class RepresentationSet:
    reps: np.ndarray    # [n_s, rep_len]
    labels: np.ndarray  # [n_s] ints in [0, c)
    c: int

    def __post_init__(self):
        if self.reps.ndim != 2 or self.reps.shape[0] != self.labels.shape[0]:
            raise DimensionMismatch("reps [n_s, rep_len] and labels [n_s] required")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.c):
            raise LabelOutOfRange(f"labels must lie in [0, {self.c})")

    @property
    def n_s(self):
        return self.reps.shape[0]


def init_label_centroids(rs: RepresentationSet) -> np.ndarray:
    """Centroid i = mean of the representations whose true label is i."""
    cents = np.empty((rs.c, rs.reps.shape[1]))
    for k in range(rs.c):
        member = rs.labels == k
        if not member.any():
            raise EmptyClass(f"class {k} has no samples")
        cents[k] = rs.reps[member].mean(axis=0)
    return cents


def init_kmeanspp(rs: RepresentationSet, seed: int) -> np.ndarray:
    """Standard D^2-weighted seeding, deterministic given seed."""
    if rs.n_s < rs.c:
        raise TooFewSamples(f"{rs.n_s} samples for {rs.c} clusters")
    rng = make_rng(seed)
    cents = np.empty((rs.c, rs.reps.shape[1]))
    first = rng.integers(rs.n_s)
    cents[0] = rs.reps[first]
    d2 = np.sum((rs.reps - cents[0]) ** 2, axis=1)
    for k in range(1, rs.c):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(rs.n_s))
        else:
            idx = int(rng.choice(rs.n_s, p=d2 / total))
        cents[k] = rs.reps[idx]
        d2 = np.minimum(d2, np.sum((rs.reps - cents[k]) ** 2, axis=1))
    return cents


def _size_entropy(labels: np.ndarray, c: int) -> float:
    counts = np.bincount(labels, minlength=c)
    probs = counts[counts > 0] / labels.size
    return float(-np.sum(probs * np.log(probs)))


def init_random_min_entropy(rs: RepresentationSet, base_seed: int,
                            runs: int = 20, max_iter: int = 100,
                            tol: float = 1e-4, return_entropies: bool = False):
    """Initial centroids of the lowest-entropy run among random assignments.

    Each run assigns samples to random clusters (redrawing until every
    cluster is populated), takes the cluster means as initial centroids, runs
    kmeans to convergence, and scores the converged labeling by Shannon
    entropy of the cluster-size histogram. Ties break toward the lowest run
    index.
    """
    if rs.n_s < rs.c:
        raise TooFewSamples(f"{rs.n_s} samples for {rs.c} clusters")
    best = None
    entropies = []
    for run in range(runs):
        rng = make_rng(base_seed, stream=run)
        while True:
            assign = rng.integers(rs.c, size=rs.n_s)
            if np.bincount(assign, minlength=rs.c).min() > 0:
                break
        init = np.stack([rs.reps[assign == k].mean(axis=0) for k in range(rs.c)])
        labels = kmeans(rs, init, max_iter=max_iter, tol=tol)
        ent = _size_entropy(labels, rs.c)
        entropies.append(ent)
        if best is None or ent < best[0]:
            best = (ent, init)
    if return_entropies:
        return best[1], entropies
    return best[1]


def kmeans(rs: RepresentationSet, init: np.ndarray,
           max_iter: int = 100, tol: float = 1e-4) -> np.ndarray:
    """Lloyd iterations from the given centroids; returns cluster labels.

    Stops when assignments stop changing, the largest centroid displacement
    drops below tol, or max_iter is hit. An emptied cluster keeps its
    previous centroid. Ties in distance resolve to the lowest centroid index.
    """
    cents = np.asarray(init, dtype=np.float64)
    if cents.ndim != 2 or cents.shape[0] != rs.c or cents.shape[1] != rs.reps.shape[1]:
        raise DimensionMismatch(f"init must be [{rs.c}, {rs.reps.shape[1]}]")
    labels = _assign(rs.reps, cents)
    for _ in range(max_iter):
        new_cents = cents.copy()
        for k in range(rs.c):
            member = labels == k
            if member.any():
                new_cents[k] = rs.reps[member].mean(axis=0)
        shift = float(np.max(np.linalg.norm(new_cents - cents, axis=1)))
        cents = new_cents
        new_labels = _assign(rs.reps, cents)
        unchanged = np.array_equal(new_labels, labels)
        labels = new_labels
        if unchanged or shift < tol:
            break
    return labels


def _assign(reps: np.ndarray, cents: np.ndarray) -> np.ndarray:
    d2 = (np.sum(reps * reps, axis=1)[:, None]
          - 2.0 * reps @ cents.T
          + np.sum(cents * cents, axis=1)[None, :])
    return np.argmin(d2, axis=1)


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray  # [n_c, n_c]: cluster label x true label co-occurrence

    def __post_init__(self):
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise DimensionMismatch("counts must be a square matrix")

    @property
    def r(self):
        return self.counts.sum(axis=1)

    @property
    def t(self):
        return self.counts.sum(axis=0)

    @property
    def n_s(self):
        return int(self.counts.sum())

    @property
    def n_c(self):
        return self.counts.shape[0]


def contingency(true_labels, cluster_labels, c=None) -> ContingencyTable:
    """Co-occurrence counts: rows index cluster labels, columns true labels."""
    ta = np.asarray(true_labels, dtype=np.int64).ravel()
    ca = np.asarray(cluster_labels, dtype=np.int64).ravel()
    if ta.shape != ca.shape:
        raise LengthMismatch(f"{ta.shape} vs {ca.shape}")
    if c is None:
        c = int(max(ta.max(), ca.max())) + 1 if ta.size else 0
    if ta.size and (min(ta.min(), ca.min()) < 0 or max(ta.max(), ca.max()) >= c):
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    counts = np.zeros((c, c), dtype=np.int64)
    np.add.at(counts, (ca, ta), 1)
    return ContingencyTable(counts)


def _comb2(n: int) -> int:
    return n * (n - 1) // 2


def _ari_terms(ct: ContingencyTable):
    if ct.n_s < 2:
        raise DegenerateNormalizer("need at least 2 samples")
    sum_comb = int(sum(_comb2(int(v)) for v in ct.counts.ravel()))
    a = int(sum(_comb2(int(v)) for v in ct.r))
    b = int(sum(_comb2(int(v)) for v in ct.t))
    n2 = _comb2(ct.n_s)
    expected = Fraction(a * b, n2)
    maxterm = Fraction(a + b, 2)
    return sum_comb, a, b, expected, maxterm


def ari(ct: ContingencyTable) -> float:
    """Adjusted Rand index, evaluated with exact integer binomial terms."""
    sum_comb, a, b, expected, maxterm = _ari_terms(ct)
    denom = maxterm - expected
    if denom == 0:
        # both partitions trivial; identical ones agree perfectly
        if sum_comb == a == b:
            return 1.0
        raise DegenerateNormalizer("max term equals expected term")
    return float((sum_comb - expected) / denom)


def inv_ari(ct: ContingencyTable) -> float:
    """Complement of ari over the same normalizer (algebraically 1 - ari)."""
    sum_comb, a, b, expected, maxterm = _ari_terms(ct)
    denom = maxterm - expected
    if denom == 0:
        if sum_comb == a == b:
            return 0.0
        raise DegenerateNormalizer("max term equals expected term")
    return float((maxterm - sum_comb) / denom)


# --- representation-set manifest ---

def save_representation_set(directory, rs: RepresentationSet, name="repset.json") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_tensor(directory / "reps.pidx", rs.reps)
    save_tensor(directory / "labels.pidx", rs.labels.astype(np.float64))
    manifest = {"n_s": int(rs.n_s), "c": int(rs.c), "rep_len": int(rs.reps.shape[1]),
                "reps": "reps.pidx", "labels": "labels.pidx"}
    path = directory / name
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_representation_set(path) -> RepresentationSet:
    path = Path(path)
    manifest = json.loads(path.read_text())
    reps = load_tensor(path.parent / manifest["reps"]).astype(np.float64)
    labels = load_tensor(path.parent / manifest["labels"]).astype(np.int64)
    rs = RepresentationSet(reps, labels, int(manifest["c"]))
    if rs.n_s != manifest["n_s"] or reps.shape[1] != manifest["rep_len"]:
        raise DimensionMismatch("manifest does not match tensor shapes")
    return rs
