"""Command-line workflow: generate, corrupt, train, extract, estimate, correlate.

Subcommands: synth-data, corrupt, train, extract, preindex, indicators,
correlate, sweep. `sweep` runs the whole grid from one JSON config: a base
model is trained on clean data, then every (kind, level) cell gets a
PreIndex report and a retraining run, and the per-cell values are correlated
into correlations.csv plus a long-format table.csv for plotting.

Exit codes: 0 success, 1 usage error, 2 data error. All seeds live in the
config, so two runs with the same inputs produce byte-identical outputs.
PREINDEX_THREADS caps sweep-cell parallelism (default 1).
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import indicators as ind
from . import micronet as mn
from .corruptions import KINDS, NoiseSpec, corrupt_batch
from .preindex import PreIndexConfig, compute_preindex, compute_preindex_from_dump
from .tensor_core import TensorFormatError, load_tensor, save_tensor


class DataError(Exception):
    pass


def _fmt(v) -> str:
    return f"{v:.12g}"


# --- dataset manifest ---

def save_dataset(directory, data: mn.Dataset, classes: int, name="dataset.json") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_tensor(directory / "images.pidx", data.images)
    save_tensor(directory / "labels.pidx", data.labels.astype(np.float64))
    manifest = {"n_s": int(data.n), "c": int(classes),
                "shape": list(data.images.shape[1:]),
                "images": "images.pidx", "labels": "labels.pidx"}
    path = directory / name
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_dataset(path):
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
        images = load_tensor(path.parent / manifest["images"]).astype(np.float64)
        labels = load_tensor(path.parent / manifest["labels"]).astype(np.int64)
    except (OSError, ValueError, KeyError, TensorFormatError) as exc:
        raise DataError(f"cannot load dataset {path}: {exc}") from exc
    return mn.Dataset(images, labels), int(manifest["c"])


def _load_model(path):
    try:
        return mn.load_model(path)
    except (OSError, ValueError, KeyError, TensorFormatError) as exc:
        raise DataError(f"cannot load model {path}: {exc}") from exc


# --- subcommands ---

def _cmd_synth_data(args) -> int:
    cfg = mn.SynthConfig(args.n, args.classes,
                         (args.height, args.width, args.channels), args.seed,
                         args.bar_width, args.jitter, args.pixel_noise)
    data = mn.synthetic_dataset(cfg)
    path = save_dataset(args.out, data, args.classes)
    print(path)
    return 0


def _noise_spec(args) -> NoiseSpec:
    return NoiseSpec(args.kind, args.level, args.seed)


def _cmd_corrupt(args) -> int:
    src = Path(args.in_path)
    if src.is_dir():
        src = src / "dataset.json"
    out = Path(args.out)
    spec = _noise_spec(args)
    if src.suffix == ".pidx":
        try:
            t = load_tensor(src).astype(np.float64)
        except (OSError, TensorFormatError) as exc:
            raise DataError(f"cannot read {src}: {exc}") from exc
        batch = t if t.ndim == 4 else t[None]
        noisy = corrupt_batch(batch, spec)
        out.mkdir(parents=True, exist_ok=True)
        save_tensor(out / src.name, noisy if t.ndim == 4 else noisy[0])
        print(out / src.name)
    else:
        data, classes = load_dataset(src)
        noisy = mn.Dataset(corrupt_batch(data.images, spec), data.labels)
        print(save_dataset(out, noisy, classes))
    return 0


def _train_config(args) -> mn.TrainConfig:
    return mn.TrainConfig(lr=args.lr, batch_size=args.batch_size,
                          max_epochs=args.max_epochs, cutoff=args.cutoff,
                          seed=args.seed, snapshot_every=args.snapshot_every)


def _cmd_train(args) -> int:
    data, _ = load_dataset(args.data)
    test_data = None
    if args.test_data:
        test_data, _ = load_dataset(args.test_data)
    spec, weights = _load_model(args.model)
    if all(p is None for p in weights):
        weights = mn.init_weights(spec, args.init_seed)
    cfg = _train_config(args)
    try:
        trained, log = mn.train(spec, weights, data, cfg, test_data)
    except (mn.InvalidConfig, mn.ShapeMismatch, mn.NonFiniteLoss) as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out)
    model_path = mn.save_model(out / "model", spec, trained)
    snap_dir = out / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)
    ind.write_log(log, out / "log.ndjson", weights_dir=snap_dir)
    print(model_path)
    print(out / "log.ndjson")
    return 0


def _cmd_extract(args) -> int:
    from .distance import ActivationTrace, batch_filter_means, save_trace_pair
    from .clustering import RepresentationSet, save_representation_set

    data, classes = load_dataset(args.data)
    spec, weights = _load_model(args.model)
    rep_layer = args.rep_layer if args.rep_layer >= 0 else mn.default_representation_layer(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rep_source = data
    if args.noisy:
        noisy, _ = load_dataset(args.noisy)
        _, acts_clean = mn.forward(spec, weights, data.images)
        _, acts_noisy = mn.forward(spec, weights, noisy.images)
        param_idx = mn.param_layer_indices(spec)
        clean_tr = ActivationTrace(tuple(batch_filter_means(acts_clean[i]) for i in param_idx))
        noisy_tr = ActivationTrace(tuple(batch_filter_means(acts_noisy[i]) for i in param_idx))
        names = [f"layer{i}" for i in param_idx]
        print(save_trace_pair(out, clean_tr, noisy_tr, names=names))
        rep_source = noisy
    reps = mn.extract_representations(spec, weights, rep_source.images, layer=rep_layer)
    rs = RepresentationSet(reps, rep_source.labels, classes)
    print(save_representation_set(out, rs))
    return 0


def _preindex_config(args) -> PreIndexConfig:
    return PreIndexConfig(init=args.init, lambda_=getattr(args, "lambda_"),
                          seed=args.seed, rep_layer=args.rep_layer,
                          samples=args.samples)


def _cmd_preindex(args) -> int:
    cfg = _preindex_config(args)
    if args.dump:
        if args.model or args.data:
            raise DataError("--dump replaces --model/--data")
        report = compute_preindex_from_dump(args.dump, args.kind, args.level,
                                            args.seed, cfg)
    else:
        if not args.model or not args.data:
            raise DataError("need --model and --data (or --dump)")
        data, _ = load_dataset(args.data)
        spec, weights = _load_model(args.model)
        noise = None if args.kind == "identity" else NoiseSpec(args.kind, args.level, args.seed)
        report = compute_preindex(spec, weights, data.images, data.labels, noise, cfg)
    payload = report.to_dict()
    payload["config"] = {"init": cfg.init, "lambda": cfg.lambda_, "seed": args.seed,
                         "rep_layer": cfg.rep_layer, "samples": cfg.samples}
    Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True))
    print(args.out)
    return 0


def _indicator_values(log: ind.RetrainLog, cutoff: float, denom: str) -> dict:
    epochs = ind.epochs_to_cutoff(log.accuracies, cutoff)
    values = {
        "epochs": epochs,
        "epochs_effective": epochs if epochs is not None else len(log.accuracies),
        "grad_norm_total": ind.grad_norm_total(log),
        "param_change_total": None,
        "energy_joules": None,
        "co2_kg": None,
    }
    if len(log.snapshots) >= 2:
        snaps = [w for _, w in log.snapshots]
        values["param_change_total"] = ind.param_change_total(snaps, denom=denom)
    if log.energy:
        values["energy_joules"] = sum(r.get("energy_joules", 0.0) for r in log.energy)
        values["co2_kg"] = sum(r.get("co2_kg", 0.0) for r in log.energy)
    return values


def _cmd_indicators(args) -> int:
    try:
        log = ind.read_log(args.log, weights_dir=args.weights_dir)
    except (OSError, ValueError, TensorFormatError) as exc:
        raise DataError(f"cannot read log {args.log}: {exc}") from exc
    values = _indicator_values(log, args.cutoff, args.denom)
    Path(args.out).write_text(json.dumps(values, indent=2, sort_keys=True))
    print(args.out)
    return 0


PLOT_HEADER = "kind,level,preindex,epochs,grad_norm,param_change,energy_j,co2_kg"
_INDICATOR_COLUMNS = ("epochs", "grad_norm", "param_change", "energy_j", "co2_kg")


def emit_plot_table(cells) -> str:
    """Long-format CSV; cells maps (kind, level) -> {preindex, epochs, ...}.

    Rows come out kind-alphabetical then level-ascending; optional energy
    columns stay empty when no records exist.
    """
    keys = sorted(cells)
    per_kind = {}
    for kind, level in keys:
        per_kind.setdefault(kind, []).append(level)
    level_lists = list(per_kind.values())
    if any(lv != sorted(set(lv)) for lv in level_lists) or len(set(map(tuple, level_lists))) > 1:
        raise DataError(f"misaligned grid: {per_kind}")
    lines = [PLOT_HEADER]
    for kind, level in keys:
        cell = cells[(kind, level)]
        row = [kind, str(level), _fmt(cell["preindex"])]
        for col in _INDICATOR_COLUMNS:
            v = cell.get(col)
            row.append("" if v is None else _fmt(v))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _read_plot_table(path) -> dict:
    try:
        lines = Path(path).read_text().strip().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read table {path}: {exc}") from exc
    if not lines or lines[0] != PLOT_HEADER:
        raise DataError(f"{path} is not a plot table (bad header)")
    cells = {}
    for line in lines[1:]:
        parts = line.split(",")
        kind, level = parts[0], int(parts[1])
        vals = {"preindex": float(parts[2])}
        for col, raw in zip(_INDICATOR_COLUMNS, parts[3:]):
            vals[col] = float(raw) if raw else None
        cells[(kind, level)] = vals
    return cells


def correlation_table(cells, model_name: str) -> str:
    """correlations.csv content: every populated indicator x both methods.

    Indicators that are missing for some cell, or constant across the grid
    (correlation undefined), are left out.
    """
    keys = sorted(cells)
    pre = [cells[k]["preindex"] for k in keys]
    lines = [ind.CORRELATION_CSV_HEADER]
    for col in _INDICATOR_COLUMNS:
        vals = [cells[k].get(col) for k in keys]
        if any(v is None for v in vals):
            continue
        for method in ("pearson", "spearman"):
            try:
                res = ind.correlate_report(pre, vals, method)
            except (ind.ZeroVariance, ind.TooFewPoints):
                continue
            lines.append(ind.correlation_csv_row(model_name, col, res))
    return "\n".join(lines) + "\n"


def _cmd_correlate(args) -> int:
    cells = _read_plot_table(args.table)
    Path(args.out).write_text(correlation_table(cells, args.model_name))
    print(args.out)
    return 0


# --- sweep ---

def _cfg_get(cfg: dict, key: str, default=None):
    if default is None and key not in cfg:
        raise DataError(f"config missing required key {key!r}")
    return cfg.get(key, default)


def _synth_from_cfg(d: dict) -> mn.SynthConfig:
    return mn.SynthConfig(d["n_s"], d["c"], tuple(d.get("shape", (8, 8, 1))),
                          d.get("seed", 0), d.get("bar_width", 1.0),
                          d.get("jitter", 1.0), d.get("pixel_noise", 0.05))


def _train_from_cfg(d: dict) -> mn.TrainConfig:
    return mn.TrainConfig(lr=d["lr"], batch_size=d.get("batch_size", 8),
                          max_epochs=d.get("max_epochs", 60), cutoff=d["cutoff"],
                          seed=d.get("seed", 0), snapshot_every=d.get("snapshot_every", 1))


def _sweep_cell(out, spec, base_weights, train_ds, test_ds, kind, level,
                noise_seed, train_cfg, pi_cfg, force):
    report_path = out / "reports" / f"{kind}_{level}.json"
    ind_path = out / "indicators" / f"{kind}_{level}.json"
    if report_path.exists() and ind_path.exists() and not force:
        return
    noise = NoiseSpec(kind, level, noise_seed)
    report = compute_preindex(spec, base_weights, train_ds.images, train_ds.labels,
                              noise, pi_cfg)
    noisy_train = mn.Dataset(corrupt_batch(train_ds.images, noise), train_ds.labels)
    noisy_test = mn.Dataset(corrupt_batch(test_ds.images, noise), test_ds.labels)
    _, log = mn.train(spec, base_weights, noisy_train, train_cfg, noisy_test)
    log_dir = out / "logs" / f"{kind}_{level}"
    log_dir.mkdir(parents=True, exist_ok=True)
    ind.write_log(log, log_dir / "log.ndjson", weights_dir=log_dir)
    values = _indicator_values(log, train_cfg.cutoff, "norm")
    report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    ind_path.write_text(json.dumps(values, indent=2, sort_keys=True))


def run_sweep(config_path, out_override=None, force=False) -> Path:
    try:
        cfg = json.loads(Path(config_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {config_path}: {exc}") from exc

    out = Path(out_override or _cfg_get(cfg, "out"))
    out.mkdir(parents=True, exist_ok=True)
    for sub in ("data", "reports", "logs", "indicators"):
        (out / sub).mkdir(exist_ok=True)

    data_cfg = _cfg_get(cfg, "dataset")
    test_cfg = {**data_cfg, **cfg.get("test_dataset", {})}
    train_ds = mn.synthetic_dataset(_synth_from_cfg(data_cfg))
    test_ds = mn.synthetic_dataset(_synth_from_cfg(test_cfg))
    classes = data_cfg["c"]
    save_dataset(out / "data" / "train", train_ds, classes)
    save_dataset(out / "data" / "test", test_ds, classes)

    model_cfg = _cfg_get(cfg, "model")
    spec = mn.ModelSpec(tuple(data_cfg.get("shape", (8, 8, 1))), classes,
                        tuple(mn.layers_from_json(model_cfg["layers"])))
    train_cfg = _train_from_cfg(_cfg_get(cfg, "train"))
    base_cfg = (_train_from_cfg(cfg["base_train"]) if "base_train" in cfg else train_cfg)

    base_manifest = out / "base" / "model.json"
    if base_manifest.exists() and not force:
        spec, base_weights = _load_model(base_manifest)
    else:
        init = mn.init_weights(spec, model_cfg.get("init_seed", 0))
        base_weights, base_log = mn.train(spec, init, train_ds, base_cfg, test_ds)
        mn.save_model(out / "base", spec, base_weights)
        ind.write_log(base_log, out / "base" / "log.ndjson", weights_dir=out / "base")

    noise_cfg = _cfg_get(cfg, "noise")
    kinds = noise_cfg.get("kinds", list(KINDS))
    levels = noise_cfg.get("levels", list(range(1, 10)))
    noise_seed = noise_cfg.get("seed", 0)
    for kind in kinds:
        if kind not in KINDS:
            raise DataError(f"unknown noise kind {kind!r} in config")

    pi_raw = cfg.get("preindex", {})
    pi_cfg = PreIndexConfig(init=pi_raw.get("init", "label"),
                            lambda_=pi_raw.get("lambda", 1.0),
                            seed=pi_raw.get("seed", 0),
                            rep_layer=pi_raw.get("rep_layer", -1),
                            samples=pi_raw.get("samples", 0))

    cells = [(k, lv) for k in kinds for lv in levels]
    workers = max(1, int(os.environ.get("PREINDEX_THREADS", "1")))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_cell, out, spec, base_weights, train_ds,
                                   test_ds, k, lv, noise_seed, train_cfg, pi_cfg, force)
                       for k, lv in cells]
            for f in futures:
                f.result()
    else:
        for k, lv in cells:
            _sweep_cell(out, spec, base_weights, train_ds, test_ds, k, lv,
                        noise_seed, train_cfg, pi_cfg, force)

    table_cells = {}
    for kind, level in cells:
        report = json.loads((out / "reports" / f"{kind}_{level}.json").read_text())
        values = json.loads((out / "indicators" / f"{kind}_{level}.json").read_text())
        table_cells[(kind, level)] = {
            "preindex": report["preindex"],
            "epochs": values["epochs_effective"],
            "grad_norm": values["grad_norm_total"],
            "param_change": values["param_change_total"],
            "energy_j": values["energy_joules"],
            "co2_kg": values["co2_kg"],
        }
    (out / "table.csv").write_text(emit_plot_table(table_cells))
    name = cfg.get("model_name", "model")
    (out / "correlations.csv").write_text(correlation_table(table_cells, name))
    return out / "correlations.csv"


def _cmd_sweep(args) -> int:
    print(run_sweep(args.config, args.out, args.force))
    return 0


# --- parser ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="preindex",
                                     description="Retraining-cost estimation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--height", type=int, default=8)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bar-width", type=float, default=1.0)
    p.add_argument("--jitter", type=float, default=1.0)
    p.add_argument("--pixel-noise", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("corrupt", help="corrupt a dataset or .pidx tensor")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_corrupt)

    p = sub.add_parser("train", help="train or retrain a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--test-data", default=None)
    p.add_argument("--lr", type=float, required=True)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--max-epochs", type=int, default=60)
    p.add_argument("--cutoff", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snapshot-every", type=int, default=1)
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("extract", help="dump representations (and traces)")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--noisy", default=None)
    p.add_argument("--rep-layer", type=int, default=-1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("preindex", help="compute a PreIndex report")
    p.add_argument("--model", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--dump", default=None, help="adapter dump manifest")
    p.add_argument("--kind", choices=KINDS + ("identity",), required=True)
    p.add_argument("--level", type=int, default=0)
    p.add_argument("--init", choices=("label", "kmeanspp", "minentropy"), default="label")
    p.add_argument("--lambda", dest="lambda_", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=0)
    p.add_argument("--rep-layer", type=int, default=-1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_preindex)

    p = sub.add_parser("indicators", help="summarize a retrain log")
    p.add_argument("--log", required=True)
    p.add_argument("--weights-dir", default=None)
    p.add_argument("--cutoff", type=float, required=True)
    p.add_argument("--denom", choices=("norm", "count"), default="norm")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_indicators)

    p = sub.add_parser("correlate", help="correlate a plot table")
    p.add_argument("--table", required=True)
    p.add_argument("--model-name", default="model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_correlate)

    p = sub.add_parser("sweep", help="run the full grid from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
