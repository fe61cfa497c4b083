"""
Command-line interface.

Exit codes: 0 success, 1 runtime or data failure, 2 usage error.
Options may also come from a ``key = value`` file given by ``--config``;
explicit flags override the file, which overrides the built-in defaults.
"""

import argparse
import configparser
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .chem import (DEFAULT_VOCAB, MolDataset, fit_supernode_scale, load_csv, random_split,
                   skeleton_split, write_csv)
from .exceptions import GraphWarpError
from .gradcheck import TOLERANCE, component_names, run_suite
from .gwm import VARIANTS
from .layers import HOSTS
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .synthetic import long_range_dataset
from .training import evaluate, loss_reduction_ratio, make_batches, train_loop

logger = logging.getLogger("graphwarp")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
TASKS = {"classify": "classification", "regress": "regression"}

LOSS_COLUMNS = ["host", "variant", "L", "D", "seed", "epoch", "train_loss", "val_metric",
                "test_loss"]
REDUCTION_COLUMNS = ["host", "dataset", "r_train_mean", "r_test_mean", "variant", "L", "D",
                     "n_pairs"]


class UsageError(Exception):
    pass


def _float_list(text):
    return [float(x) for x in str(text).replace(",", " ").split()]


def _str_list(text):
    return [x for x in str(text).replace(",", " ").split() if x]


def _int_list(text):
    return [int(x) for x in _str_list(text)]


# name -> (type, default); shared by the flag parser and the config file reader
OPTIONS = {
    "data": (str, None),
    "host": (str, "rsgcn"),
    "variant": (str, "full"),
    "layers": (int, 3),
    "dim": (int, 50),
    "heads": (int, 8),
    "relations": (int, 4),
    "epochs": (int, 30),
    "batch_size": (int, 32),
    "lr": (float, 0.001),
    "dropout": (float, 0.5),
    "seed": (int, 0),
    "jobs": (int, 1),
    "out": (str, "."),
    "task": (str, "classify"),
    "split": (str, "skeleton"),
    "split_seed": (int, 0),
    "fractions": (_float_list, [0.8, 0.1, 0.1]),
    # sweep grid
    "hosts": (_str_list, ["rsgcn", "ggnn"]),
    "variants": (_str_list, ["none", "full"]),
    "layer_grid": (_int_list, [3]),
    "dim_grid": (_int_list, [50]),
    "seeds": (_int_list, [0, 1, 2, 3, 4]),
}

COMMAND_OPTIONS = {
    "train": ["data", "host", "variant", "layers", "dim", "heads", "relations", "epochs",
              "batch_size", "lr", "dropout", "seed", "out", "task", "split", "split_seed",
              "fractions"],
    "sweep": ["data", "heads", "relations", "epochs", "batch_size", "lr", "dropout", "jobs",
              "out", "task", "split", "split_seed", "fractions", "hosts", "variants",
              "layer_grid", "dim_grid", "seeds"],
}

CHOICES = {"host": HOSTS, "variant": VARIANTS, "task": tuple(TASKS),
           "split": ("skeleton", "random")}


def _add_options(parser, names):
    for name in names:
        kind, default = OPTIONS[name]
        flag = "--" + name.replace("_", "-")
        kwargs = dict(dest=name, default=argparse.SUPPRESS)
        if kind in (_float_list, _str_list, _int_list):
            kwargs["type"] = kind
            kwargs["help"] = f"comma-separated list (default {default})"
        else:
            kwargs["type"] = kind
            kwargs["help"] = f"default {default}"
        if name in CHOICES:
            kwargs["choices"] = CHOICES[name]
        parser.add_argument(flag, **kwargs)
    parser.add_argument("--config", default=None, help="key = value file of option defaults")


def read_config_file(path, allowed) -> Dict[str, object]:
    """Parse a sectionless ``key = value`` file into typed option values."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    try:
        parser.read_string("[options]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"malformed config file {path}: {exc}") from None
    values = {}
    for key, raw in parser["options"].items():
        name = key.strip().lstrip("-").replace("-", "_")
        if name not in allowed:
            raise UsageError(f"unknown option {key!r} in {path}")
        kind = OPTIONS[name][0]
        try:
            values[name] = kind(raw.strip())
        except ValueError:
            raise UsageError(f"bad value {raw!r} for {key!r} in {path}") from None
        if name in CHOICES and values[name] not in CHOICES[name]:
            raise UsageError(f"{key} must be one of {CHOICES[name]}, got {raw!r}")
    return values


def resolve_options(args, command) -> Dict[str, object]:
    names = COMMAND_OPTIONS[command]
    opts = {n: OPTIONS[n][1] for n in names}
    if args.config:
        opts.update(read_config_file(args.config, names))
    opts.update({n: getattr(args, n) for n in names if hasattr(args, n)})
    if not opts.get("data"):
        raise UsageError("--data is required")
    fractions = opts["fractions"]
    if len(fractions) != 3 or any(f < 0 for f in fractions) or \
            not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise UsageError("--fractions needs three non-negative values summing to 1")
    for key in ("layers", "dim", "epochs", "batch_size", "heads", "relations", "jobs"):
        if key in opts and opts[key] < 1:
            raise UsageError(f"--{key.replace('_', '-')} must be >= 1")
    if not 0.0 <= opts["dropout"] < 1.0 or not opts["lr"] > 0:
        raise UsageError("--dropout must lie in [0, 1) and --lr must be positive")
    grid = opts.get("layer_grid", []) + opts.get("dim_grid", [])
    if any(v < 1 for v in grid):
        raise UsageError("grid layer counts and widths must be >= 1")
    return opts


# --------------------------------------------------------------------------
# shared pieces

def split_dataset(data: MolDataset, opts):
    fractions = tuple(opts["fractions"])
    if opts["split"] == "skeleton":
        parts = skeleton_split(data.graphs, fractions, opts["split_seed"])
    else:
        parts = random_split(len(data), fractions, opts["split_seed"])
    return tuple(data.subset(p) for p in parts)


def make_config(opts, host, variant, layers, dim, seed, n_tasks) -> ModelConfig:
    return ModelConfig(host=host, variant=variant, n_layers=layers, dim=dim,
                       n_heads=opts["heads"], n_relations=opts["relations"], n_tasks=n_tasks,
                       task=TASKS[opts["task"]], dropout=opts["dropout"], seed=seed,
                       n_atom_types=len(DEFAULT_VOCAB))


def _check_task_labels(data: MolDataset, task: str):
    if task == "classify":
        observed = data.labels[~np.isnan(data.labels)]
        if not np.isin(observed, (0.0, 1.0)).all():
            raise ValueError("classification labels must be 0, 1 or empty")


# --------------------------------------------------------------------------
# commands

def cmd_train(args) -> int:
    opts = resolve_options(args, "train")
    data = load_csv(opts["data"])
    _check_task_labels(data, opts["task"])
    train, val, test = split_dataset(data, opts)
    config = make_config(opts, opts["host"], opts["variant"], opts["layers"], opts["dim"],
                         opts["seed"], len(data.tasks))
    record, params = train_loop(config, train, val, test, epochs=opts["epochs"],
                                batch_size=opts["batch_size"], lr=opts["lr"],
                                return_params=True)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "record.jsonl").write_text(record.to_jsonl())
    mean, std = fit_supernode_scale(train.graphs, DEFAULT_VOCAB, config.n_relations)
    save_checkpoint(out / "model.ckpt", config, params,
                    buffers={"supernode_mean": mean, "supernode_std": std})
    (out / "timing.json").write_text(json.dumps({"wall_time": record.wall_time}) + "\n")
    summary = record.summary()
    print(f"best epoch {summary['best_epoch']}: val {summary['best_val_metric']:.4f} "
          f"test {summary['test_metric']:.4f} (written to {out})")
    return 0


def cmd_evaluate(args) -> int:
    config, params, buffers = load_checkpoint(args.checkpoint, return_buffers=True)
    data = load_csv(args.data)
    if len(data.tasks) != config.n_tasks:
        raise ValueError(f"model predicts {config.n_tasks} tasks, data has {len(data.tasks)}")
    scale = None
    if "supernode_mean" in buffers:
        scale = (buffers["supernode_mean"], buffers["supernode_std"])
    batches = make_batches(data, args.batch_size, DEFAULT_VOCAB, config.n_relations, scale)
    loss, metric, preds = evaluate(config, params, batches)
    name = "auc" if config.task == "classification" else "mae"
    print(json.dumps({"n": len(data), "loss": loss, name: metric}, sort_keys=True))
    if args.predictions:
        if config.task == "classification":
            preds = 1.0 / (1.0 + np.exp(-preds))
        write_csv(args.predictions, data.smiles, preds, data.tasks)
    return 0


def cmd_gradcheck(args) -> int:
    faults = args.inject_fault or []
    unknown = [f for f in faults if f not in ad.BACKWARD_RULES]
    if unknown:
        raise UsageError(f"unknown op {unknown[0]!r}; choose from {sorted(ad.BACKWARD_RULES)}")
    names = component_names()
    if args.only:
        prefixes = _str_list(args.only)
        names = [n for n in names if any(n.startswith(p) for p in prefixes)]
        if not names:
            raise UsageError(f"no component matches {args.only!r}")
    started = time.perf_counter()
    with _faults(faults):
        results = run_suite(seed=args.seed, trials=args.trials, names=names)
    elapsed = time.perf_counter() - started
    offenders = [name for name, err in results.items() if not err < TOLERANCE]
    for name, err in results.items():
        print(f"{name:28s} {err:.3e} {'FAIL' if name in offenders else 'ok'}")
    print(f"{len(results)} components checked in {elapsed:.1f}s, tolerance {TOLERANCE:g}")
    if offenders:
        if faults:
            print(f"fault injected into: {', '.join(faults)}")
        print(f"failing components: {', '.join(offenders)}")
        return 1
    return 0


class _faults:
    def __init__(self, kinds):
        self.contexts = [ad.inject_fault(k) for k in kinds]

    def __enter__(self):
        for c in self.contexts:
            c.__enter__()

    def __exit__(self, *exc):
        for c in reversed(self.contexts):
            c.__exit__(*exc)


@dataclass(frozen=True)
class Cell:
    host: str
    variant: str
    layers: int
    dim: int
    seed: int

    @property
    def stem(self):
        return f"{self.host}_{self.variant}_L{self.layers}_D{self.dim}_s{self.seed}"


def _run_cell(cell: Cell, opts, splits, n_tasks):
    config = make_config(opts, cell.host, cell.variant, cell.layers, cell.dim, cell.seed,
                         n_tasks)
    return train_loop(config, *splits, epochs=opts["epochs"], batch_size=opts["batch_size"],
                      lr=opts["lr"])


def sweep_grid(opts) -> List[Cell]:
    for key in ("hosts", "variants", "layer_grid", "dim_grid", "seeds"):
        if not opts[key]:
            raise UsageError(f"sweep grid is empty: no {key.replace('_', '-')} given")
    bad = [h for h in opts["hosts"] if h not in HOSTS] + \
        [v for v in opts["variants"] if v not in VARIANTS]
    if bad:
        raise UsageError(f"unknown host or variant: {', '.join(bad)}")
    if len(set(opts["seeds"])) != len(opts["seeds"]):
        raise UsageError("sweep seeds must be distinct")
    return [Cell(h, v, L, D, s) for h in opts["hosts"] for L in opts["layer_grid"]
            for D in opts["dim_grid"] for v in opts["variants"] for s in opts["seeds"]]


def reduction_rows(loss_rows, dataset: str):
    """
    Seed-paired loss reduction of every variant against ``none``, per host/L/D.

    Uses each run's final-epoch train and test losses.
    """
    final = {}
    for row in loss_rows:
        key = (row["host"], row["variant"], int(row["L"]), int(row["D"]), int(row["seed"]))
        if key not in final or int(row["epoch"]) > final[key][0]:
            final[key] = (int(row["epoch"]), float(row["train_loss"]), float(row["test_loss"]))
    rows = []
    groups = sorted({(h, v, L, D) for h, v, L, D, _ in final if v != "none"})
    for host, variant, L, D in groups:
        seeds = sorted(s for h, v, l2, d2, s in final
                       if (h, v, l2, d2) == (host, variant, L, D)
                       and (host, "none", L, D, s) in final)
        if not seeds:
            continue
        base = [final[(host, "none", L, D, s)] for s in seeds]
        plus = [final[(host, variant, L, D, s)] for s in seeds]
        rows.append({"host": host, "dataset": dataset,
                     "r_train_mean": loss_reduction_ratio([b[1] for b in base],
                                                          [p[1] for p in plus]),
                     "r_test_mean": loss_reduction_ratio([b[2] for b in base],
                                                         [p[2] for p in plus]),
                     "variant": variant, "L": L, "D": D, "n_pairs": len(seeds)})
    return rows


def _write_rows(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def cmd_sweep(args) -> int:
    opts = resolve_options(args, "sweep")
    cells = sweep_grid(opts)
    data = load_csv(opts["data"])
    _check_task_labels(data, opts["task"])
    splits = split_dataset(data, opts)
    out = Path(opts["out"])
    (out / "cells").mkdir(parents=True, exist_ok=True)

    records, failures = {}, []
    if opts["jobs"] > 1:
        with ProcessPoolExecutor(max_workers=opts["jobs"]) as pool:
            futures = {c: pool.submit(_run_cell, c, opts, splits, len(data.tasks))
                       for c in cells}
            for c, fut in futures.items():
                try:
                    records[c] = fut.result()
                except Exception as exc:  # noqa: BLE001 - recorded, sweep continues
                    failures.append((c, exc))
    else:
        for c in cells:
            try:
                records[c] = _run_cell(c, opts, splits, len(data.tasks))
            except Exception as exc:  # noqa: BLE001
                failures.append((c, exc))
            logger.info("cell %s done", c.stem)

    loss_rows = []
    for c in cells:
        if c not in records:
            continue
        rec = records[c]
        (out / "cells" / f"{c.stem}.jsonl").write_text(rec.to_jsonl())
        for e in rec.epochs:
            loss_rows.append({"host": c.host, "variant": c.variant, "L": c.layers, "D": c.dim,
                              "seed": c.seed, "epoch": e.epoch, "train_loss": e.train_loss,
                              "val_metric": e.val_metric, "test_loss": e.test_loss})
    _write_rows(out / "losses.csv", LOSS_COLUMNS, loss_rows)
    dataset = Path(opts["data"]).stem
    _write_rows(out / "reduction.csv", REDUCTION_COLUMNS, reduction_rows(loss_rows, dataset))
    for c, exc in failures:
        print(f"cell {c.stem} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
    if failures:
        _write_rows(out / "failures.csv", ["cell", "error"],
                    [{"cell": c.stem, "error": f"{type(e).__name__}: {e}"} for c, e in failures])
    print(f"{len(records)}/{len(cells)} cells finished; results in {out}")
    return 1 if failures else 0


def cmd_make_synthetic(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    ds = long_range_dataset(args.n, args.min_nodes, args.max_nodes, seed=args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_csv(args.out, ds.smiles, ds.labels, ds.tasks)
    print(f"wrote {len(ds)} molecules to {args.out}")
    return 0


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphwarp",
                                     description="Train and probe supernode-augmented GNNs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model")
    _add_options(p, COMMAND_OPTIONS["train"])
    p.set_defaults(func=cmd_train, subparser=p)

    p = sub.add_parser("evaluate", help="score a checkpoint on a CSV dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--predictions", default=None, help="write per-molecule predictions here")
    p.set_defaults(func=cmd_evaluate, subparser=p)

    p = sub.add_parser("gradcheck", help="finite-difference check of every component")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--inject-fault", action="append", metavar="OP",
                   help="corrupt the backward rule of OP (repeatable)")
    p.add_argument("--only", default=None, metavar="PREFIXES",
                   help="comma-separated component name prefixes, e.g. op.,gwm.")
    p.set_defaults(func=cmd_gradcheck, subparser=p)

    p = sub.add_parser("sweep", help="paired grid of runs; writes losses.csv and reduction.csv")
    _add_options(p, COMMAND_OPTIONS["sweep"])
    p.set_defaults(func=cmd_sweep, subparser=p)

    p = sub.add_parser("make-synthetic", help="write the long-range parity dataset as CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--min-nodes", type=int, default=10)
    p.add_argument("--max-nodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_synthetic, subparser=p)
    return parser


def configure_logging():
    level = os.environ.get("GWM_LOG", "error").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        args.subparser.print_usage(sys.stderr)
        print(f"{args.subparser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (GraphWarpError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
