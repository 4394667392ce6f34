"""Forward-hook capture of named layer outputs from a torch module."""

import numpy as np
import torch


class UnknownLayer(KeyError):
    pass


def available_layers(model: torch.nn.Module) -> list:
    """Hookable module names (leaf modules only)."""
    return [name for name, mod in model.named_modules()
            if name and not list(mod.children())]


class ActivationRecorder:
    """Registers forward hooks on the named layers and collects their outputs.

    Use as a context manager; hooks are removed on exit. Outputs are detached
    to float32 numpy arrays in the order the layers were requested.
    """

    def __init__(self, model: torch.nn.Module, layer_names):
        self.model = model
        self.layer_names = list(layer_names)
        modules = dict(model.named_modules())
        missing = [n for n in self.layer_names if n not in modules]
        if missing:
            raise UnknownLayer(
                f"unknown layer(s) {missing}; available: {available_layers(model)}")
        self._captured = {}
        self._handles = []
        for name in self.layer_names:
            self._handles.append(modules[name].register_forward_hook(self._hook(name)))

    def _hook(self, name):
        def fn(module, inputs, output):
            self._captured[name] = output.detach().cpu().to(torch.float32).numpy()
        return fn

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.remove()
        return False

    def remove(self):
        for h in self._handles:
            h.remove()
        self._handles = []

    def run(self, batch: torch.Tensor) -> dict:
        """One eval-mode forward pass; returns {layer_name: float32 array}."""
        self._captured = {}
        was_training = self.model.training
        self.model.eval()
        with torch.no_grad():
            self.model(batch)
        if was_training:
            self.model.train()
        missing = [n for n in self.layer_names if n not in self._captured]
        if missing:
            raise UnknownLayer(f"layer(s) {missing} did not fire during forward")
        return {n: self._captured[n] for n in self.layer_names}
