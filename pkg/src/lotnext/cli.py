"""Command line entry point.

Subcommands: ``synth`` (generate a check-in file), ``prepare`` (raw
check-ins to a dataset directory), ``train`` (dataset to checkpoint and
log), ``eval`` (checkpoint to metric reports), and ``export-embeddings``.

Every dotted config key is exposed as a ``--<key>`` flag; the
``LOTNEXT_CONFIG`` environment variable or ``--config`` may point at a
config file. Precedence: flag > file > default.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import torch

from . import data as datamod
from .config import CONFIG_KEYS, ConfigError, RunConfig, parse_config_file
from .evaluate import (
    compute_metrics,
    export_embeddings,
    format_metrics_table,
    stratified_metrics,
    write_metrics_report,
)
from .train import Checkpoint, score_windows, train


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("configuration keys")
    for key, spec in CONFIG_KEYS.items():
        group.add_argument(
            f"--{key}",
            dest=key,
            metavar="V",
            default=None,
            help=f"{spec.help} (default: {spec.default})",
        )


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    file_values = {}
    path = args.config or os.environ.get("LOTNEXT_CONFIG")
    if path:
        file_values = parse_config_file(path)
    overrides = {}
    for key, spec in CONFIG_KEYS.items():
        raw = getattr(args, key, None)
        if raw is not None:
            try:
                overrides[key] = spec.parse(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for --{key}: {exc}") from exc
    return RunConfig(file_values, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lotnext",
        description="Long-tail adjusted next-POI prediction pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="config file (or set LOTNEXT_CONFIG)")
        _add_config_flags(p)

    p_synth = sub.add_parser("synth", help="generate a synthetic check-in file")
    p_synth.add_argument("--out", required=True, help="output check-in file (gowalla-tsv)")
    common(p_synth)

    p_prep = sub.add_parser("prepare", help="parse, filter, split, and window raw check-ins")
    p_prep.add_argument("--input", required=True, help="raw check-in file")
    p_prep.add_argument(
        "--format", default="gowalla-tsv", choices=("gowalla-tsv", "generic-csv")
    )
    p_prep.add_argument("--out", required=True, help="dataset directory to write")
    common(p_prep)

    p_train = sub.add_parser("train", help="train on a prepared dataset")
    p_train.add_argument("--data", required=True, help="dataset directory")
    p_train.add_argument("--out", required=True, help="output directory")
    common(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset's test windows")
    p_eval.add_argument("--data", required=True, help="dataset directory")
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint file")
    p_eval.add_argument("--out", required=True, help="output directory")
    common(p_eval)

    p_exp = sub.add_parser("export-embeddings", help="dump learned POI embeddings")
    p_exp.add_argument("--data", required=True, help="dataset directory")
    p_exp.add_argument("--checkpoint", required=True, help="checkpoint file")
    p_exp.add_argument("--out", required=True, help="output embedding file")
    common(p_exp)

    return parser


def _cmd_synth(args) -> int:
    cfg = _resolve_config(args)
    checkins = datamod.generate_synthetic(cfg.synthetic_config())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    datamod.write_checkins(checkins, out)
    print(f"wrote {len(checkins)} check-ins to {out}")
    return 0


def _cmd_prepare(args) -> int:
    cfg = _resolve_config(args)
    checkins, rejects = datamod.parse_checkins(args.input, args.format)
    if rejects:
        print(f"rejected {len(rejects)} malformed lines (first: {rejects[0]})")
    dataset = datamod.preprocess(
        checkins,
        min_checkins=cfg["data.min_checkins"],
        train_frac=cfg["data.train_frac"],
        window_len=cfg["data.window_len"],
    )
    datamod.save_dataset(dataset, args.out)
    print(
        f"dataset: {dataset.n_users} users, {dataset.n_pois} POIs, "
        f"{len(dataset.train_windows)} train / {len(dataset.test_windows)} test windows -> {args.out}"
    )
    return 0


def _cmd_train(args) -> int:
    cfg = _resolve_config(args)
    dataset = datamod.load_dataset(args.data)
    ckpt, report = train(dataset, cfg.train_config())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt.save(out / "checkpoint.npz")
    report.write_log(out / "train_log.txt")
    last = report.records[-1]
    print(f"trained {last.epoch} epochs; final joint loss {last.joint:.6f}")
    print(f"checkpoint: {out / 'checkpoint.npz'}")
    print(f"log: {out / 'train_log.txt'}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    dataset = datamod.load_dataset(args.data)
    ckpt = Checkpoint.load(args.checkpoint, dataset)
    net, adj, _ = ckpt.restore(dataset)
    windows = dataset.test_windows or dataset.train_windows
    loss_cfg = ckpt.config.loss
    scores, labels = score_windows(net, adj, windows, dataset, loss_cfg)
    overall = compute_metrics(scores, labels)
    strat = stratified_metrics(scores, labels, dataset.freq, cfg["eval.tail_threshold"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_report(strat, overall, out / "metrics.txt")
    rows = {"overall": overall, "head": strat.head}
    if strat.tail is not None:
        rows["tail"] = strat.tail
    print(format_metrics_table(rows))
    print(f"predicted_tail_proportion = {strat.predicted_tail_proportion:.4f}")
    print(f"report: {out / 'metrics.txt'}")
    return 0


def _cmd_export(args) -> int:
    dataset = datamod.load_dataset(args.data)
    ckpt = Checkpoint.load(args.checkpoint, dataset)
    net, adj, _ = ckpt.restore(dataset)
    with torch.no_grad():
        if adj is not None:
            table = adj(net.user_emb, net.poi_emb)[0]
        else:
            table = net.poi_emb
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_embeddings(dataset.poi_ids, dataset.freq, table.cpu().numpy(), out)
    print(f"wrote {dataset.n_pois} embeddings to {out}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "prepare": _cmd_prepare,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "export-embeddings": _cmd_export,
}


def run(argv=None) -> int:
    """Parse arguments and dispatch; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses exit code 2 for usage errors
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # surface a one-line diagnostic, not a traceback
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
