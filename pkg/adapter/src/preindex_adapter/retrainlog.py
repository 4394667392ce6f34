"""Callbacks that turn a training loop into a toolkit-readable retrain log.

Wire LogWriter's on_* methods into your loop, then call write(). The writer
enforces the log schema at write time: strictly increasing steps, one
accuracy record per finished epoch, accuracies in [0, 100], nonnegative
gradient norms.
"""

import json
import math
from pathlib import Path

import numpy as np

from .pidx import write_tensor


class LogSchemaError(ValueError):
    pass


def torch_weights(model) -> list:
    """Ordered per-layer parameter dicts ({"W": ..., "b": ...}) for snapshots."""
    layers = []
    for name, mod in model.named_modules():
        if not name or list(mod.children()):
            continue
        params = {}
        weight = getattr(mod, "weight", None)
        bias = getattr(mod, "bias", None)
        if weight is not None:
            params["W"] = weight.detach().cpu().numpy()
        if bias is not None:
            params["b"] = bias.detach().cpu().numpy()
        layers.append(params if params else None)
    return layers


class LogWriter:
    """Collects step/epoch/snapshot/energy records during a training loop."""

    def __init__(self):
        self._steps = []       # (step, epoch, grad_norm)
        self._accuracies = []  # one per finished epoch
        self._snapshots = []   # (step, weights list)
        self._energy = []      # {"epoch", "energy_joules", "co2_kg"}
        self._step = 0
        self._epoch = 1
        self._steps_in_epoch = 0

    def on_step(self, grad_norm: float):
        if not math.isfinite(grad_norm) or grad_norm < 0:
            raise LogSchemaError(f"grad_norm must be finite and >= 0, got {grad_norm}")
        self._step += 1
        self._steps_in_epoch += 1
        self._steps.append((self._step, self._epoch, float(grad_norm)))

    def on_epoch_end(self, test_accuracy: float):
        if not 0.0 <= test_accuracy <= 100.0:
            raise LogSchemaError(f"accuracy must be in [0, 100], got {test_accuracy}")
        self._accuracies.append(float(test_accuracy))
        self._epoch += 1
        self._steps_in_epoch = 0

    def on_snapshot(self, weights):
        self._snapshots.append((self._step, [
            None if params is None else
            {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
            for params in weights]))

    def on_energy(self, energy_joules: float, co2_kg: float):
        self._energy.append({"epoch": self._epoch, "energy_joules": float(energy_joules),
                             "co2_kg": float(co2_kg)})

    def write(self, path, weights_dir=None) -> Path:
        """Emit NDJSON; raises if any started epoch is missing its accuracy."""
        if self._steps_in_epoch:
            raise LogSchemaError(
                f"epoch {self._epoch} has {self._steps_in_epoch} steps but no accuracy")
        path = Path(path)
        lines = []
        for step, epoch, gn in self._steps:
            lines.append({"kind": "step", "step": step, "epoch": epoch, "grad_norm": gn})
        for i, acc in enumerate(self._accuracies):
            lines.append({"kind": "epoch", "epoch": i + 1, "test_accuracy": acc})
        for step, weights in self._snapshots:
            if weights_dir is None:
                raise LogSchemaError("snapshots recorded but no weights_dir given")
            weights_dir = Path(weights_dir)
            weights_dir.mkdir(parents=True, exist_ok=True)
            refs = {}
            for li, params in enumerate(weights):
                if params is None:
                    continue
                refs[str(li)] = {}
                for pname, arr in params.items():
                    fname = f"snap{step:06d}_l{li:02d}_{pname}.pidx"
                    write_tensor(weights_dir / fname, arr)
                    refs[str(li)][pname] = fname
            lines.append({"kind": "snapshot", "step": step,
                          "n_layers": len(weights), "weights": refs})
        lines.extend({"kind": "energy", **rec} for rec in self._energy)
        with open(path, "w") as fh:
            for rec in lines:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return path
