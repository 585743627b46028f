"""Command line entry point.

Subcommands: gen-data, train, eval, tune-wta, cluster. Exit codes: 0 on
success, 1 for configuration problems (bad flags, bad config files, missing
inputs), 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .data import generate_synthetic, read_dataset, write_dataset
from .errors import ConfigError, NcdError, ParseError
from .model import init_model, load_checkpoint, restore, save_checkpoint
from .numerics import RngState
from .trainer import (RunConfig, evaluate_acc, train, tune_wta, unsupervised_cluster,
                      write_metrics)

GEN_DEFAULTS = {
    "classes_labelled": 6,
    "classes_unlabelled": 4,
    "per_class": 100,
    "d_v": 16,
    "d_a": None,
    "class_sep": 10.0,
    "intra_sigma": 1.0,
    "modality_corr": 0.5,
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ncdkit", description="Category discovery on mixed "
                     "labelled/unlabelled data with WTA pseudo-labels")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write a synthetic dataset CSV")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--config", default=None, help="JSON with generation parameters")

    tr = sub.add_parser("train", help="train and write metrics + checkpoint")
    tr.add_argument("--config", required=True)
    tr.add_argument("--seed", type=int, default=None, help="override the config seed")
    tr.add_argument("--out", default=None, help="directory for metrics.csv, config.json, final.ckpt")

    ev = sub.add_parser("eval", help="clustering accuracy of a checkpoint on a dataset")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)

    tw = sub.add_parser("tune-wta", help="grid-search WTA threshold and window")
    tw.add_argument("--config", required=True)
    tw.add_argument("--mu-grid", default=None, help="comma-separated thresholds")
    tw.add_argument("--k-grid", default=None, help="comma-separated window sizes")
    tw.add_argument("--out", default=None)

    cl = sub.add_parser("cluster", help="unsupervised clustering (labelled data dropped)")
    cl.add_argument("--config", required=True)
    cl.add_argument("--seed", type=int, default=None)
    cl.add_argument("--out", default=None)
    return parser


def _load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return RunConfig.from_json(path.read_text(encoding="utf-8"))


def _load_dataset_for(cfg: RunConfig):
    if not cfg.data_path:
        raise ConfigError("config has no data_path")
    path = Path(cfg.data_path)
    if not path.exists():
        raise ConfigError(f"dataset file not found: {path}")
    return read_dataset(path)


def _cmd_gen_data(args) -> int:
    params = dict(GEN_DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        payload = json.loads(path.read_text(encoding="utf-8"))
        unknown = sorted(set(payload) - set(params))
        if unknown:
            raise ConfigError(f"unknown gen-data keys: {unknown}")
        params.update(payload)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = generate_synthetic(rng=RngState(args.seed), **params)
    target = out_dir / "dataset.csv"
    write_dataset(ds, target)
    print(f"wrote {len(ds.records)} records to {target}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    ds = _load_dataset_for(cfg)
    model, history = train(cfg, ds)
    print(f"final acc {history[-1].acc:.4f} after {cfg.epochs} epochs")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics(history, cfg, out_dir / "metrics.csv")
        (out_dir / "config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
        save_checkpoint(model, out_dir / "final.ckpt", cfg.to_json())
        print(f"wrote metrics.csv, config.json, final.ckpt to {out_dir}")
    return 0


def _cmd_eval(args) -> int:
    ckpt = Path(args.ckpt)
    if not ckpt.exists():
        raise ConfigError(f"checkpoint file not found: {ckpt}")
    data = Path(args.data)
    if not data.exists():
        raise ConfigError(f"dataset file not found: {data}")
    state, config_json = load_checkpoint(ckpt)
    if not config_json:
        raise ParseError(f"{ckpt}: checkpoint carries no config")
    cfg = RunConfig.from_json(config_json)
    model = init_model(cfg, RngState(0))
    restore(model, state)
    ds = read_dataset(data)
    acc = evaluate_acc(model, ds, cfg.classes_unlabelled)
    print(f"acc {acc:.17g}")
    return 0


def _parse_grid(text, fallback):
    if text is None:
        return fallback
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"grid must be comma-separated integers: {text!r}") from exc


def _cmd_tune_wta(args) -> int:
    cfg = _load_config(args.config)
    ds = _load_dataset_for(cfg)
    h = cfg.resolved_code_length()
    mu_grid = _parse_grid(args.mu_grid, [0, cfg.resolved_threshold(), int(0.8 * h)])
    k_grid = _parse_grid(args.k_grid, [2, cfg.wta_window])
    report = tune_wta(cfg, ds, mu_grid, k_grid)
    for cell in report.results:
        print(f"mu={cell.mu} k={cell.k} acc={cell.acc:.4f}")
    print(f"chosen mu={report.chosen[0]} k={report.chosen[1]}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = ["mu,k,acc"]
        lines += [f"{c.mu},{c.k},{c.acc:.17g}" for c in report.results]
        lines.append(f"# chosen: mu={report.chosen[0]} k={report.chosen[1]}")
        (out_dir / "tune_report.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def _cmd_cluster(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    ds = _load_dataset_for(cfg)
    acc, history = unsupervised_cluster(cfg, ds)
    print(f"unsupervised acc {acc:.4f}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics(history, replace(cfg, mode="unsupervised"), out_dir / "metrics.csv")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "tune-wta": _cmd_tune_wta,
    "cluster": _cmd_cluster,
}


def cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NcdError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(cli())
