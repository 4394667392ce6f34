"""Session fixtures for the committed desk-scale setup (configs/desk_sweep.json)."""

import json
from dataclasses import dataclass
from pathlib import Path

import pytest

from preindex import micronet as mn

CONFIG_PATH = Path(__file__).resolve().parent.parent / "configs" / "desk_sweep.json"


@dataclass(frozen=True)
class ToySetup:
    config: dict
    train_ds: mn.Dataset
    test_ds: mn.Dataset
    spec: mn.ModelSpec
    init_weights: list
    base_weights: list
    base_log: object
    train_cfg: mn.TrainConfig
    base_cfg: mn.TrainConfig


def _train_cfg(d):
    return mn.TrainConfig(lr=d["lr"], batch_size=d["batch_size"],
                          max_epochs=d["max_epochs"], cutoff=d["cutoff"],
                          seed=d["seed"], snapshot_every=d["snapshot_every"])


@pytest.fixture(scope="session")
def toy():
    cfg = json.loads(CONFIG_PATH.read_text())
    d = cfg["dataset"]
    synth = mn.SynthConfig(d["n_s"], d["c"], tuple(d["shape"]), d["seed"],
                           d["bar_width"], d["jitter"], d["pixel_noise"])
    t = {**d, **cfg["test_dataset"]}
    synth_test = mn.SynthConfig(t["n_s"], t["c"], tuple(t["shape"]), t["seed"],
                                t["bar_width"], t["jitter"], t["pixel_noise"])
    train_ds = mn.synthetic_dataset(synth)
    test_ds = mn.synthetic_dataset(synth_test)
    spec = mn.ModelSpec(tuple(d["shape"]), d["c"],
                        tuple(mn.layers_from_json(cfg["model"]["layers"])))
    init = mn.init_weights(spec, cfg["model"]["init_seed"])
    base_cfg = _train_cfg(cfg["base_train"])
    train_cfg = _train_cfg(cfg["train"])
    base_weights, base_log = mn.train(spec, init, train_ds, base_cfg, test_ds)
    return ToySetup(cfg, train_ds, test_ds, spec, init, base_weights, base_log,
                    train_cfg, base_cfg)


@pytest.fixture(scope="session")
def toy_easy():
    """Gentler data and a 99% base cutoff: clean representations separate
    completely (identity clustering scores ari = 1)."""
    cfg = json.loads(CONFIG_PATH.read_text())
    train_ds = mn.synthetic_dataset(mn.SynthConfig(192, 4, (8, 8, 1), seed=11,
                                                   jitter=0.8, pixel_noise=0.03))
    test_ds = mn.synthetic_dataset(mn.SynthConfig(96, 4, (8, 8, 1), seed=12,
                                                  jitter=0.8, pixel_noise=0.03))
    spec = mn.ModelSpec((8, 8, 1), 4,
                        tuple(mn.layers_from_json(cfg["model"]["layers"])))
    init = mn.init_weights(spec, cfg["model"]["init_seed"])
    base_cfg = mn.TrainConfig(lr=0.1, batch_size=8, max_epochs=80, cutoff=99.0,
                              seed=21, snapshot_every=1)
    train_cfg = _train_cfg(cfg["train"])
    base_weights, base_log = mn.train(spec, init, train_ds, base_cfg, test_ds)
    return ToySetup(cfg, train_ds, test_ds, spec, init, base_weights, base_log,
                    train_cfg, base_cfg)
