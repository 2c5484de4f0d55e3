"""Command line harness: presets, simulate, train, evaluate, sweep.

Configs are JSON files (see ``configs/``); any key can be overridden with
``--key=value`` (dotted for nested keys, e.g. ``--loss.lam=10``; the short
forms ``--lambda``, ``--c1``, ``--epochs`` ... also work). Outputs go under
``$NEGONETS_OUTPUT_ROOT`` (default ``runs/``) unless ``out_dir`` is set.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import re
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .baseline import BaselineSeller
from .data import IngestionError, Dataset, denormalize_prices, load_csv, save_csv
from .experiment import (
    ExperimentConfig,
    TrainedModels,
    effective_loss,
    evaluate_models,
    figure_files,
    load_dataset_bundle,
    prepare_data,
    simulate_bundle,
    train_models,
)
from .metrics import MetricsReport, render_table, reports_to_json
from .neural import ConfigurationError, TrainingError, dumps_mlp, load_mlp
from .simulator import PRESET_NAMES, ScenarioError, dump_scenarios, preset_bundle

log = logging.getLogger("negonets")

OUTPUT_ROOT_ENV = "NEGONETS_OUTPUT_ROOT"

ALIASES = {
    "lambda": "loss.lam",
    "lam": "loss.lam",
    **{k: f"loss.{k}" for k in ("c1", "c2", "fd_delta", "classification_threshold", "pointwise_in_seller")},
    **{
        k: f"train.{k}"
        for k in ("epochs", "batch_size", "buyer_lr", "seller_lr", "buyer_steps", "seller_steps", "hidden", "patience")
    },
}

SWEEP_PARAMS = {
    "lambda": "loss.lam",
    "c1": "loss.c1",
    "c2": "loss.c2",
    "seller_lr": "train.seller_lr",
    "buyer_lr": "train.buyer_lr",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # no prefix matching, so --key=value overrides never collide with real options
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- config loading -------------------------------------------------------------


def parse_overrides(tokens) -> dict[str, object]:
    """``['--loss.lam=10', '--seed=3']`` -> ``{'loss.lam': 10, 'seed': 3}``."""
    out = {}
    for tok in tokens:
        m = re.fullmatch(r"--([A-Za-z_][\w.]*)=(.*)", tok)
        if not m:
            raise UsageError(f"unrecognised argument {tok!r} (overrides take the form --key=value)")
        key, raw = m.groups()
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out[ALIASES.get(key, key)] = value
    return out


def apply_overrides(raw: dict, overrides: dict) -> dict:
    raw = json.loads(json.dumps(raw))
    for key, value in overrides.items():
        *parents, leaf = key.split(".")
        node = raw
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"cannot override {key!r}: {p!r} is not a section")
        node[leaf] = value
    return raw


def _locate(text: str, message: str) -> str:
    """Point at the config line of the first quoted name in an error message."""
    for name in re.findall(r"'([A-Za-z_]\w*)'", message):
        for lineno, line in enumerate(text.splitlines(), start=1):
            if f'"{name}"' in line:
                return f"line {lineno}: "
    return ""


def load_config(path, overrides=None) -> ExperimentConfig:
    text = "{}"
    label = "<defaults>"
    if path is not None:
        label = str(path)
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{label}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{label}: top level must be a JSON object")
    raw = apply_overrides(raw, overrides or {})
    if "dataset" in raw and "scenario" not in raw:
        raw["scenario"] = None
    try:
        return ExperimentConfig.from_dict(raw)
    except (ConfigurationError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"{label}: {_locate(text, str(exc))}{exc}") from exc


# -- output handling ------------------------------------------------------------


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


@contextmanager
def atomic_dir(target):
    """Yield a scratch directory that replaces ``target`` only on success."""
    target = Path(target)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    except OSError as exc:
        raise ConfigurationError(f"output directory {target} is not writable: {exc.strerror or exc}") from exc
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if target.exists():
        old = Path(tempfile.mkdtemp(prefix=f".{target.name}.old.", dir=target.parent))
        old.rmdir()
        target.rename(old)
        tmp.rename(target)
        shutil.rmtree(old, ignore_errors=True)
    else:
        tmp.rename(target)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def versions() -> dict:
    return {
        "negonets": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def write_manifest(directory: Path, body: dict) -> dict:
    """Manifest with versions and a hash of every file in ``directory``."""
    files = {
        str(p.relative_to(directory)): _sha256(p)
        for p in sorted(directory.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }
    manifest = {**body, "versions": versions(), "files": files}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def metric_summary(reports: dict[str, MetricsReport]) -> dict:
    keys = ("f1", "monotonicity", "pdf1", "pif1", "rs", "price_std")
    return {
        name: {k: (None if getattr(r, k) is None else round(float(getattr(r, k)), 6)) for k in keys}
        for name, r in reports.items()
    }


def _write_datasets(directory: Path, datasets: dict[str, Dataset]):
    directory.mkdir(parents=True, exist_ok=True)
    for name, ds in datasets.items():
        save_csv(ds, directory / f"{name}.csv")


def _data_summary(name: str, ds: Dataset) -> str:
    if len(ds) == 0:
        return f"{name}: N=0"
    lo, hi = denormalize_prices([ds.p.min(), ds.p.max()], ds.window)
    return (
        f"{name}: N={len(ds)} conversion={ds.conversion_rate():.3f} "
        f"price=[{ds.p.min():.3f}, {ds.p.max():.3f}] (raw {lo:.2f}-{hi:.2f})"
    )


# -- run directories --------------------------------------------------------------
#
#   config.json  manifest.json  history.csv
#   seller.mlp  buyer.mlp  [forecaster.mlp  baseline.json]
#   data/{train,val,test}.csv (+ .meta.json)


def save_models(directory: Path, models: TrainedModels):
    (directory / "seller.mlp").write_text(dumps_mlp(models.seller))
    (directory / "buyer.mlp").write_text(dumps_mlp(models.buyer))
    (directory / "history.csv").write_text(models.history.to_table(include_time=False))
    if models.baseline is not None:
        (directory / "forecaster.mlp").write_text(dumps_mlp(models.forecaster))
        b = models.baseline
        doc = {
            "price_grid": [float(v) for v in b.price_grid],
            "intercept": b.intercept,
            "slope": b.slope,
            "degenerate": b.degenerate,
            "forecaster_val_loss": [float(v) for v in models.forecaster_curve],
        }
        (directory / "baseline.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_models(directory) -> TrainedModels:
    directory = Path(directory)
    try:
        seller = load_mlp(directory / "seller.mlp")
        buyer = load_mlp(directory / "buyer.mlp")
    except FileNotFoundError as exc:
        raise ConfigurationError(f"{directory}: missing checkpoint {Path(exc.filename).name}") from exc
    models = TrainedModels(seller, buyer, history=None)
    if (directory / "baseline.json").exists():
        doc = json.loads((directory / "baseline.json").read_text())
        forecaster = load_mlp(directory / "forecaster.mlp")
        models.forecaster = forecaster
        models.baseline = BaselineSeller(
            forecaster, np.array(doc["price_grid"]), doc["intercept"], doc["slope"], doc["degenerate"]
        )
        models.forecaster_curve = doc.get("forecaster_val_loss", [])
    if seller.input_dim + 1 != buyer.input_dim:
        raise ConfigurationError(f"{directory}: seller and buyer checkpoints disagree on context size")
    return models


def read_manifest(directory) -> dict | None:
    path = Path(directory) / "manifest.json"
    return json.loads(path.read_text()) if path.exists() else None


def train_into(directory: Path, cfg: ExperimentConfig, init: TrainedModels | None = None, resumed_from=None):
    splits = prepare_data(cfg)
    models = train_models(
        cfg, splits, None if init is None else init.seller, None if init is None else init.buyer
    )
    save_models(directory, models)
    _write_datasets(directory / "data", {"train": splits.train, "val": splits.val, "test": splits.test})
    (directory / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    h = models.history
    body = {
        "command": "train",
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "effective_loss": effective_loss(cfg.loss),
        "data": {k: len(getattr(splits, k)) for k in ("train", "val", "test")},
        "training": {
            "epochs_run": len(h.records),
            "best_epoch": h.best_epoch,
            "stopped_early": h.stopped_early,
            "collapsed": h.collapsed,
        },
    }
    if resumed_from is not None:
        body["resumed_from"] = resumed_from
    return splits, models, write_manifest(directory, body)


def evaluate_into(directory: Path, models: TrainedModels, data: Dataset, cfg: ExperimentConfig, source: str):
    reports = evaluate_models(models, data, cfg)
    (directory / "report.json").write_text(reports_to_json(reports))
    (directory / "report.txt").write_text(render_table(reports))
    for name, text in figure_files(models, data).items():
        (directory / name).write_text(text)
    write_manifest(directory, {
        "command": "evaluate",
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "dataset": source,
        "n": len(data),
        "metrics": metric_summary(reports),
    })
    return reports


# -- subcommands ------------------------------------------------------------------


def cmd_presets(args) -> int:
    for name in PRESET_NAMES:
        bundle = preset_bundle(name, args.seed)
        parts = ", ".join(
            f"{k}: {len(s.flights)} flights, prices {min(f.min_price for f in s.flights):g}"
            f"-{max(f.max_price for f in s.flights):g}"
            for k, s in bundle.items()
        )
        print(f"{name:12s} {parts}")
    if args.dump:
        with atomic_dir(args.dump) as tmp:
            for name in PRESET_NAMES:
                (tmp / f"{name}.json").write_text(dump_scenarios(preset_bundle(name, args.seed)))
        print(f"wrote scenario files to {args.dump}")
    return 0


def cmd_simulate(args) -> int:
    bundle = simulate_bundle(args.scenario, args.seed)
    stem = Path(args.scenario).stem
    out = Path(args.out) if args.out else output_root() / f"data-{stem}-seed{args.seed}"
    with atomic_dir(out) as tmp:
        _write_datasets(tmp, bundle)
        write_manifest(tmp, {
            "command": "simulate",
            "scenario": args.scenario,
            "seed": args.seed,
            "n": {k: len(v) for k, v in bundle.items()},
        })
    for name, ds in bundle.items():
        print(_data_summary(name, ds))
    print(f"wrote {out}")
    return 0


def _run_dir(cfg: ExperimentConfig) -> Path:
    if cfg.out_dir:
        return Path(cfg.out_dir)
    return output_root() / f"run-{cfg.config_hash()[:10]}"


def cmd_train(args) -> int:
    cfg = load_config(args.config, parse_overrides(args.overrides))
    out = _run_dir(cfg)
    init = resumed_from = None
    if args.resume:
        previous = read_manifest(out)
        if previous is None:
            raise ConfigurationError(f"nothing to resume in {out}")
        if previous.get("config_hash") != cfg.config_hash():
            raise ConfigurationError(
                f"refusing to resume: {out} was trained with config {previous.get('config_hash', '?')[:10]}, "
                f"current config is {cfg.config_hash()[:10]}"
            )
        init = load_models(out)
        resumed_from = previous["files"].get("seller.mlp")
    with atomic_dir(out) as tmp:
        splits, models, manifest = train_into(tmp, cfg, init, resumed_from)
    for name in ("train", "val", "test"):
        print(_data_summary(name, getattr(splits, name)))
    t = manifest["training"]
    print(f"trained {t['epochs_run']} epochs (best {t['best_epoch']}); checkpoints in {out}")
    if t["collapsed"]:
        print("warning: suggested prices collapsed to a near-constant", file=sys.stderr)
    return 0


def _load_eval_data(path) -> Dataset:
    path = Path(path)
    if path.is_dir() and (path / "test.csv").is_file():
        return load_csv(path / "test.csv")
    bundle = load_dataset_bundle(path)
    return bundle.get("test", bundle.get("data"))


def cmd_evaluate(args) -> int:
    run = Path(args.run)
    if not (run / "config.json").is_file():
        raise ConfigurationError(f"{run} is not a training run directory (no config.json)")
    cfg = load_config(run / "config.json")
    models = load_models(run)
    source = args.dataset or str(run / "data" / "test.csv")
    data = _load_eval_data(source)
    out = Path(args.out) if args.out else run / "eval"
    with atomic_dir(out) as tmp:
        reports = evaluate_into(tmp, models, data, cfg, source)
    print(render_table(reports), end="")
    print(f"wrote {out}")
    return 0


def _sweep_one(cfg_dict: dict, directory: str) -> dict:
    cfg = ExperimentConfig.from_dict(cfg_dict)
    directory = Path(directory)
    directory.mkdir(parents=True)
    splits, models, manifest = train_into(directory, cfg)
    eval_dir = directory / "eval"
    eval_dir.mkdir()
    reports = evaluate_into(eval_dir, models, splits.test, cfg, "test split")
    return {"training": manifest["training"], "metrics": metric_summary(reports)}


def _format_value(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def cmd_sweep(args) -> int:
    if args.param not in SWEEP_PARAMS:
        raise UsageError(f"unknown sweep parameter {args.param!r}; choose from {sorted(SWEEP_PARAMS)}")
    try:
        values = sorted({float(v) for v in args.values.split(",") if v.strip()})
    except ValueError as exc:
        raise UsageError(f"--values must be comma-separated numbers: {exc}") from exc
    if not values:
        raise UsageError("--values is empty")
    base = load_config(args.config, parse_overrides(args.overrides))
    configs = []
    for v in values:
        cfg = load_config(args.config, {**parse_overrides(args.overrides), SWEEP_PARAMS[args.param]: v})
        configs.append(cfg)
    root = Path(base.out_dir) if base.out_dir else output_root()
    out = root / f"sweep-{args.param}"
    with atomic_dir(out) as tmp:
        dirs = [str(tmp / f"{args.param}={_format_value(v)}") for v in values]
        dicts = [c.to_dict() for c in configs]
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_sweep_one, dicts, dirs))
        else:
            results = [_sweep_one(d, p) for d, p in zip(dicts, dirs)]
        summary = sweep_summary(args.param, values, results)
        (tmp / "summary.csv").write_text(summary)
        write_manifest(tmp, {
            "command": "sweep",
            "param": args.param,
            "values": values,
            "config_hash": base.config_hash(),
            "seed": base.seed,
            "runs": {Path(d).name: c.config_hash() for d, c in zip(dirs, configs)},
        })
    print(summary, end="")
    print(f"wrote {out}")
    return 0


def sweep_summary(param: str, values, results) -> str:
    """One row per value (ascending); ``price_std`` flags seller collapse."""
    cols = ["f1", "monotonicity", "pdf1", "pif1", "rs", "price_std"]
    header = [param] + [f"negonets_{c}" for c in cols] + ["baseline_pif1", "baseline_rs", "collapsed"]
    lines = [",".join(header)]
    for v, res in sorted(zip(values, results), key=lambda t: t[0]):
        n = res["metrics"]["NegoNets"]
        b = res["metrics"].get("Baseline", {})
        cells = [_format_value(v)] + [_num(n[c]) for c in cols]
        cells += [_num(b.get("pif1")), _num(b.get("rs")), str(res["training"]["collapsed"]).lower()]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _num(v) -> str:
    return "" if v is None else f"{v:.6f}"


# -- entry point ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="negonets", description="Seller/buyer minimax pricing experiments.")
    parser.add_argument("--version", action="version", version=f"negonets {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("presets", help="list built-in scenarios")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump", metavar="DIR", help="write each preset as a scenario file")
    p.set_defaults(func=cmd_presets, overrides=[])

    p = sub.add_parser("simulate", help="simulate a scenario into CSV files")
    p.add_argument("scenario", help=f"preset ({', '.join(PRESET_NAMES)}) or scenario JSON file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate, overrides=[])

    p = sub.add_parser("train", help="train NegoNets (and the baseline) from a config")
    p.add_argument("config", nargs="?", help="JSON config (defaults apply when omitted)")
    p.add_argument("--resume", action="store_true", help="warm-start from the run's checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics and figure data for a trained run")
    p.add_argument("run", help="run directory written by 'train'")
    p.add_argument("--dataset", help="CSV or data directory (default: the run's test split)")
    p.add_argument("--out", help="output directory (default: RUN/eval)")
    p.set_defaults(func=cmd_evaluate, overrides=[])

    p = sub.add_parser("sweep", help="train + evaluate over values of one parameter")
    p.add_argument("config", nargs="?")
    p.add_argument("--param", required=True, help=", ".join(SWEEP_PARAMS))
    p.add_argument("--values", required=True, help="comma-separated, e.g. 0,1,10")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if extra and args.command not in ("train", "sweep"):
            raise UsageError(f"unrecognised arguments: {' '.join(extra)}")
        if args.command in ("train", "sweep"):
            args.overrides = extra
        return args.func(args)
    except UsageError as exc:
        print(f"negonets: error: {exc}", file=sys.stderr)
        return 1
    except (ConfigurationError, ScenarioError, IngestionError) as exc:
        print(f"negonets: error: {exc}", file=sys.stderr)
        return 1
    except TrainingError as exc:
        print(f"negonets: training failed: {exc}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError, FloatingPointError) as exc:
        print(f"negonets: runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
