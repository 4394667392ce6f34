"""Retraining-cost indicators and the correlation statistics against them.

A RetrainLog is the time-stepped record a training loop leaves behind:
per-step gradient norms, per-epoch test accuracies, periodic weight
snapshots, and optional externally measured energy/emission values. On disk
it is newline-delimited JSON with a "kind" discriminator per record.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import betainc

from .tensor_core import load_tensor, save_tensor


class EmptyCurve(ValueError):
    pass


class StructureMismatch(ValueError):
    pass


class ZeroNormDenominator(ValueError):
    pass


class TooFewSnapshots(ValueError):
    pass


class TooFewPoints(ValueError):
    pass


class ZeroVariance(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class LogFormatError(ValueError):
    pass


@dataclass
class RetrainLog:
    """steps: (step, epoch, grad_norm); accuracies[e-1]: percent after epoch e;
    snapshots: (step, weights) with weights a per-layer list of {"W","b"} dicts
    or None entries; energy: optional {"epoch","energy_joules","co2_kg"}."""

    steps: list = field(default_factory=list)
    accuracies: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    energy: list = field(default_factory=list)

    def validate(self):
        step_ids = [s[0] for s in self.steps]
        if any(b <= a for a, b in zip(step_ids, step_ids[1:])):
            raise LogFormatError("steps must be strictly increasing")
        epochs = [s[1] for s in self.steps]
        if any(b < a for a, b in zip(epochs, epochs[1:])):
            raise LogFormatError("epochs must be nondecreasing")
        if any(s[2] < 0 for s in self.steps):
            raise LogFormatError("grad_norm must be >= 0")
        if any(not 0 <= a <= 100 for a in self.accuracies):
            raise LogFormatError("accuracies must be in [0, 100]")
        return self


def write_log(log: RetrainLog, path, weights_dir=None) -> None:
    """Write NDJSON records; snapshot weights go to .pidx files under weights_dir."""
    log.validate()
    if weights_dir is not None:
        weights_dir = Path(weights_dir)
    lines = []
    for step, epoch, gn in log.steps:
        lines.append({"kind": "step", "step": step, "epoch": epoch, "grad_norm": gn})
    for i, acc in enumerate(log.accuracies):
        lines.append({"kind": "epoch", "epoch": i + 1, "test_accuracy": acc})
    for step, weights in log.snapshots:
        if weights_dir is None:
            raise LogFormatError("snapshots present but no weights_dir given")
        refs = {}
        for li, params in enumerate(weights):
            if params is None:
                continue
            refs[str(li)] = {}
            for pname, arr in params.items():
                fname = f"snap{step:06d}_l{li:02d}_{pname}.pidx"
                save_tensor(weights_dir / fname, arr)
                refs[str(li)][pname] = fname
        lines.append({"kind": "snapshot", "step": step,
                      "n_layers": len(weights), "weights": refs})
    for rec in log.energy:
        lines.append({"kind": "energy", **rec})
    with open(path, "w") as fh:
        for rec in lines:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_log(path, weights_dir=None) -> RetrainLog:
    """Parse NDJSON records back; loads snapshot weights when weights_dir given."""
    if weights_dir is not None:
        weights_dir = Path(weights_dir)
    log = RetrainLog()
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            kind = rec.get("kind")
            if kind == "step":
                log.steps.append((rec["step"], rec["epoch"], rec["grad_norm"]))
            elif kind == "epoch":
                if rec["epoch"] != len(log.accuracies) + 1:
                    raise LogFormatError(f"line {ln}: epoch records out of order")
                log.accuracies.append(rec["test_accuracy"])
            elif kind == "snapshot":
                if weights_dir is None:
                    log.snapshots.append((rec["step"], rec["weights"]))
                else:
                    fallback = 1 + max((int(k) for k in rec["weights"]), default=-1)
                    weights = [None] * rec.get("n_layers", fallback)
                    for li, refs in rec["weights"].items():
                        weights[int(li)] = {
                            p: load_tensor(weights_dir / fname).astype(np.float64)
                            for p, fname in refs.items()
                        }
                    log.snapshots.append((rec["step"], weights))
            elif kind == "energy":
                log.energy.append({k: v for k, v in rec.items() if k != "kind"})
            else:
                raise LogFormatError(f"line {ln}: unknown record kind {kind!r}")
    return log.validate()


def epochs_to_cutoff(acc_by_epoch, cutoff: float):
    """1-based epoch at which training terminates, or None when never.

    Priority: first epoch at the cutoff; else first epoch >= 25 within 0.5
    points of it; else first epoch >= 50 within 1.0 point.
    """
    acc = list(acc_by_epoch)
    if not acc:
        raise EmptyCurve("no epochs recorded")
    for e, a in enumerate(acc, 1):
        if a >= cutoff:
            return e
    for e, a in enumerate(acc, 1):
        if e >= 25 and a >= cutoff - 0.5:
            return e
    for e, a in enumerate(acc, 1):
        if e >= 50 and a >= cutoff - 1.0:
            return e
    return None


def grad_norm_total(log: RetrainLog, until_step=None, until_epoch=None) -> float:
    """Sum of per-step gradient norms, optionally truncated."""
    total = 0.0
    for step, epoch, gn in log.steps:
        if until_step is not None and step > until_step:
            continue
        if until_epoch is not None and epoch > until_epoch:
            continue
        total += gn
    return total


def _layer_items(weights):
    return [params for params in weights if params is not None]


def param_change_step(w_t, w_prev, denom: str = "norm") -> float:
    """Per-layer normalized Euclidean distance between consecutive snapshots,
    averaged over layers.

    denom="norm" divides by sqrt of the current weights' Euclidean norm;
    denom="count" divides by sqrt of the parameter count instead.
    """
    cur, prev = _layer_items(w_t), _layer_items(w_prev)
    if len(cur) != len(prev):
        raise StructureMismatch("different layer counts")
    total = 0.0
    for pc, pp in zip(cur, prev):
        if sorted(pc) != sorted(pp):
            raise StructureMismatch("different parameter names")
        vc = np.concatenate([np.asarray(pc[k], dtype=np.float64).ravel() for k in sorted(pc)])
        vp = np.concatenate([np.asarray(pp[k], dtype=np.float64).ravel() for k in sorted(pp)])
        if vc.shape != vp.shape:
            raise StructureMismatch("different parameter shapes")
        dist = float(np.linalg.norm(vc - vp))
        if denom == "count":
            d = math.sqrt(vc.size)
        else:
            norm = float(np.linalg.norm(vc))
            if norm == 0.0:
                raise ZeroNormDenominator("current layer weights have zero norm")
            d = math.sqrt(norm)
        total += dist / d
    return total / len(cur)


def param_change_total(snapshots, denom: str = "norm") -> float:
    """Cumulative per-step parameter change over an ordered snapshot list."""
    snaps = list(snapshots)
    if len(snaps) < 2:
        raise TooFewSnapshots("need at least two snapshots")
    return sum(param_change_step(b, a, denom) for a, b in zip(snaps, snaps[1:]))


@dataclass(frozen=True)
class CorrelationResult:
    method: str
    coefficient: float
    p_value: float
    n: int


def _two_sided_p(r: float, n: int) -> float:
    # Student-t with n-2 dof: p = I_{df/(df+t^2)}(df/2, 1/2)
    if abs(r) >= 1.0:
        return 0.0
    df = n - 2
    t2 = r * r * df / (1.0 - r * r)
    return float(betainc(df / 2.0, 0.5, df / (df + t2)))


def pearson(x, y) -> CorrelationResult:
    """Sample Pearson r with a two-sided Student-t p-value."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape:
        raise LengthMismatch(f"{xa.shape} vs {ya.shape}")
    n = xa.size
    if n < 3:
        raise TooFewPoints("need at least 3 points")
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    sx = float(np.sqrt(np.sum(xc * xc)))
    sy = float(np.sqrt(np.sum(yc * yc)))
    if sx == 0.0 or sy == 0.0:
        raise ZeroVariance("constant input")
    r = float(np.sum(xc * yc)) / (sx * sy)
    r = max(-1.0, min(1.0, r))
    return CorrelationResult("pearson", r, _two_sided_p(r, n), n)


def rankdata(v) -> np.ndarray:
    """Average ranks (1-based); ties share the mean of their rank range."""
    arr = np.asarray(v, dtype=np.float64)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(arr.size, dtype=np.float64)
    i = 0
    while i < arr.size:
        j = i
        while j + 1 < arr.size and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> CorrelationResult:
    """Spearman rho: Pearson on average ranks, same t approximation for p."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape:
        raise LengthMismatch(f"{xa.shape} vs {ya.shape}")
    res = pearson(rankdata(xa), rankdata(ya))
    return CorrelationResult("spearman", res.coefficient, res.p_value, res.n)


def correlate_report(preindex_values, indicator_values, method: str) -> CorrelationResult:
    """Correlate a PreIndex vector against one indicator across the noise grid."""
    pv = np.asarray(preindex_values, dtype=np.float64)
    iv = np.asarray(indicator_values, dtype=np.float64)
    if pv.shape != iv.shape:
        raise LengthMismatch(f"{pv.shape} vs {iv.shape}")
    if method == "pearson":
        return pearson(pv, iv)
    if method == "spearman":
        return spearman(pv, iv)
    raise ValueError(f"unknown method {method!r}")


CORRELATION_CSV_HEADER = "model,indicator,method,coefficient,p_value,n"


def correlation_csv_row(model: str, indicator: str, res: CorrelationResult) -> str:
    return (f"{model},{indicator},{res.method},"
            f"{res.coefficient:.12g},{res.p_value:.12g},{res.n}")
