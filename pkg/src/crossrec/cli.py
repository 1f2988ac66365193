"""Command-line interface: synth-data, train, evaluate, report.

Configuration is a flat key=value file plus flag overrides (last one
wins); every known key is listed in --help. Exit codes: 0 success,
1 usage or validation error, 2 numerical failure during training.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from crossrec import checkpoint, evaluation, training
from crossrec.config import (ConfigError, OptimizerConfig, SynthSpec, TrainConfig,
                             config_fields)
from crossrec.data import DatasetFormatError, load_dataset, save_dataset, synthesize_dataset
from crossrec.nn import NumericalError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_value(raw: str):
    text = raw.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if "," in text:
        return tuple(int(p) for p in text.split(",") if p.strip())
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def read_config_file(path) -> dict:
    """Parse a flat key=value config file; '#' starts a comment line."""
    out = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        out[key.strip()] = _parse_value(value)
    return out


def build_configs(overrides: dict) -> tuple[SynthSpec, TrainConfig]:
    """Resolve a flat override mapping into typed config objects."""
    registry = config_fields()
    synth = SynthSpec()
    train = TrainConfig()
    opt = OptimizerConfig()
    targets = {SynthSpec: synth, TrainConfig: train, OptimizerConfig: opt}
    for key, value in overrides.items():
        if key not in registry:
            raise UsageError(f"unknown config key {key!r}")
        cls, field_name = registry[key]
        current = getattr(targets[cls], field_name)
        if isinstance(current, tuple) and not isinstance(value, tuple):
            value = (int(value),)
        if isinstance(current, float) and isinstance(value, int):
            value = float(value)
        setattr(targets[cls], field_name, value)
    train.optimizer = opt
    return synth, train


def resolved_config_text(synth: SynthSpec, train: TrainConfig) -> str:
    """Canonical key=value dump of every effective setting."""
    registry = config_fields()
    values = {}
    for key, (cls, field_name) in registry.items():
        owner = {SynthSpec: synth, TrainConfig: train, OptimizerConfig: train.optimizer}[cls]
        val = getattr(owner, field_name)
        if isinstance(val, tuple):
            val = ",".join(str(v) for v in val)
        values[key] = val
    return "\n".join(f"{k}={values[k]}" for k in sorted(values)) + "\n"


def _collect_overrides(args) -> dict:
    overrides = {}
    if args.config:
        overrides.update(read_config_file(args.config))
    flag_map = {
        "seed": args.seed, "variant": getattr(args, "variant", None),
        "topics": getattr(args, "topics", None),
        "latent_dim": getattr(args, "latent_dim", None),
        "encoding_dim": getattr(args, "encoding_dim", None),
        "users": getattr(args, "users", None), "items": getattr(args, "items", None),
        "intervals": getattr(args, "intervals", None),
    }
    for key, val in flag_map.items():
        if val is not None:
            overrides[key] = val
    if getattr(args, "top_n", None):
        overrides["top_n"] = _parse_value(args.top_n)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = _parse_value(value)
    return overrides


def _fingerprint(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_meta(out_dir: Path, name: str, payload: dict):
    (out_dir / name).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                                encoding="utf-8")


def cmd_synth_data(args) -> int:
    overrides = _collect_overrides(args)
    synth, train = build_configs(overrides)
    synth.validate()
    out = Path(args.out)
    if out.exists() and not args.force:
        raise UsageError(f"{out} exists; pass --force to overwrite")
    dataset = synthesize_dataset(synth, seed=train.seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out)
    total = sum(len(s) for u in dataset.users for s in u.interactions)
    print(f"wrote {out}: U={len(dataset.users)} M={dataset.num_items} "
          f"K_t={dataset.num_topics} T={dataset.num_intervals} "
          f"overlapped={len(dataset.overlapped_ids())} interactions={total}")
    return EXIT_OK


def _loss_trace_csv(traces, variant) -> str:
    gan_cols = variant in ("proposed", "crgan")
    header = "epoch,d_loss,g_loss,content_loss,r_loss" if gan_cols else "epoch,r_loss"
    lines = [header]
    for row in traces:
        if gan_cols:
            lines.append(f"{row['epoch']},{row['d_loss']!r},{row['g_loss']!r},"
                         f"{row['content_loss']!r},{row['r_loss']!r}")
        else:
            lines.append(f"{row['epoch']},{row['r_loss']!r}")
    return "\n".join(lines) + "\n"


def cmd_train(args) -> int:
    overrides = _collect_overrides(args)
    synth, cfg = build_configs(overrides)
    cfg.validate()
    dataset = load_dataset(args.dataset)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.resolved").write_text(resolved_config_text(synth, cfg),
                                             encoding="utf-8")
    meta = {"command": "train", "variant": cfg.variant, "seed": cfg.seed,
            "dataset": str(args.dataset), "dataset_sha256": _fingerprint(args.dataset)}
    try:
        bundle, traces = training.offline_train(dataset, cfg)
        rows, online_traces = training.online_run(dataset, bundle, cfg)
    except NumericalError as exc:
        (out_dir / "diagnostic.txt").write_text(f"numerical failure: {exc}\n",
                                                encoding="utf-8")
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    checkpoint.save_checkpoint(bundle, out_dir / "checkpoint.bin")
    (out_dir / "loss_traces.csv").write_text(_loss_trace_csv(traces, cfg.variant),
                                             encoding="utf-8")
    online_lines = ["interval,iteration,r_loss"]
    online_lines += [f"{r['interval']},{r['iteration']},{r['r_loss']!r}" for r in online_traces]
    (out_dir / "online_trace.csv").write_text("\n".join(online_lines) + "\n",
                                              encoding="utf-8")
    eval_path = out_dir / f"eval_{cfg.variant}.csv"
    evaluation.write_eval_csv(rows, eval_path)
    evaluation.write_aggregate_csv(evaluation.aggregate(rows),
                                   out_dir / f"eval_{cfg.variant}_agg.csv")
    _write_meta(out_dir, "meta.json", meta)
    _write_meta(out_dir, f"eval_{cfg.variant}.meta.json", meta)
    print(f"trained variant={cfg.variant} seed={cfg.seed}; "
          f"wrote checkpoint and reports to {out_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    overrides = _collect_overrides(args)
    synth, cfg = build_configs(overrides)
    dataset = load_dataset(args.dataset)
    bundle = checkpoint.load_checkpoint(args.checkpoint)
    if bundle.num_items != dataset.num_items or bundle.num_topics != dataset.num_topics:
        raise UsageError(
            f"checkpoint dimensions (M={bundle.num_items}, K_t={bundle.num_topics}) do not "
            f"match dataset (M={dataset.num_items}, K_t={dataset.num_topics})")
    cfg.variant = bundle.variant
    cfg.validate()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = training.evaluate_frozen(dataset, bundle, cfg)
    rows += evaluation.baseline_rows(dataset, cfg, "timepop", counters=bundle.counters)
    rows += evaluation.baseline_rows(dataset, cfg, "tbknn", counters=bundle.counters)
    eval_path = out_dir / "eval.csv"
    evaluation.write_eval_csv(rows, eval_path)
    evaluation.write_aggregate_csv(evaluation.aggregate(rows), out_dir / "eval_agg.csv")
    meta = {"command": "evaluate", "variant": bundle.variant, "seed": cfg.seed,
            "dataset": str(args.dataset), "dataset_sha256": _fingerprint(args.dataset)}
    _write_meta(out_dir, "meta.json", meta)
    _write_meta(out_dir, "eval.meta.json", meta)
    print(f"evaluated {args.checkpoint} on {args.dataset}; reports in {out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    all_rows = []
    fingerprints = {}
    for path in args.inputs:
        rows = evaluation.read_eval_csv(path)
        if not rows:
            raise UsageError(f"{path}: no data rows")
        all_rows.extend(rows)
        meta_file = Path(str(path).removesuffix(".csv") + ".meta.json")
        if meta_file.exists():
            meta = json.loads(meta_file.read_text(encoding="utf-8"))
            fingerprints[str(path)] = meta.get("dataset_sha256")
    if len(set(fingerprints.values())) > 1:
        print("warning: inputs were evaluated on DIFFERENT datasets; "
              "comparisons below are not like-for-like", file=sys.stderr)
        for path, fp in fingerprints.items():
            print(f"warning:   {path}: {fp}", file=sys.stderr)

    aggs = evaluation.aggregate(all_rows)
    aggs.sort(key=lambda a: (a["N"], -a["hr"], a["variant"]))
    lines = ["variant        N    rows      HR        NDCG      novelty   diversity"]
    for a in aggs:
        lines.append(f"{a['variant']:<13} {a['N']:>3} {a['rows']:>7}   "
                     f"{a['hr']:.4f}    {a['ndcg']:.4f}    {a['novelty']:.4f}    "
                     f"{a['diversity']:.4f}")
    table = "\n".join(lines)
    print(table)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        evaluation.write_aggregate_csv(aggs, out_dir / "comparison.csv")
        (out_dir / "comparison.txt").write_text(table + "\n", encoding="utf-8")
    return EXIT_OK


def _config_help() -> str:
    keys = sorted(config_fields())
    return ("config keys (usable in --config files and --set): " + ", ".join(keys))


def make_parser() -> _Parser:
    parser = _Parser(prog="crossrec",
                     description="Cross-network preference synthesis and "
                                 "time-aware Top-N recommendation.",
                     epilog=_config_help())
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_dims=True):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key; repeatable")
        if with_dims:
            p.add_argument("--topics", type=int, default=None)
            p.add_argument("--encoding-dim", dest="encoding_dim", type=int, default=None)
            p.add_argument("--latent-dim", dest="latent_dim", type=int, default=None)
            p.add_argument("--top-n", dest="top_n", default=None,
                           help="comma-separated list, e.g. 5,10,20")

    p_synth = sub.add_parser("synth-data", help="generate a synthetic dataset file")
    common(p_synth)
    p_synth.add_argument("--users", type=int, default=None)
    p_synth.add_argument("--items", type=int, default=None)
    p_synth.add_argument("--intervals", type=int, default=None)
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--force", action="store_true")
    p_synth.set_defaults(func=cmd_synth_data)

    p_train = sub.add_parser("train", help="offline training plus the online protocol")
    common(p_train)
    p_train.add_argument("--variant", choices=("proposed", "crgan", "nubpr_o", "nubpr_no"),
                         default=None)
    p_train.add_argument("--dataset", required=True)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="frozen evaluation plus baselines")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=cmd_evaluate)

    p_rep = sub.add_parser("report", help="tabulate one or more evaluation CSVs")
    p_rep.add_argument("inputs", nargs="+")
    p_rep.add_argument("--out", default=None)
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DatasetFormatError, checkpoint.CheckpointError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
