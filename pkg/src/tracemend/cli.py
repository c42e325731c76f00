"""Command-line surface: stats, inject, train, eval, correct, bench.

Every command takes one root --seed; stage seeds are derived from it, so a
single flag reproduces an entire experiment. A JSON run configuration given
with --config overrides the corresponding flags. Exit codes: 0 success,
1 usage or configuration error, 2 data error, 3 numeric failure.
"""

import argparse
import csv
import json
import sys
import time
from collections import Counter
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _util
from .anomaly import (
    ALL_KINDS,
    ANOMALOUS,
    AnomalyKind,
    InjectionConfig,
    build_dataset,
    load_dataset,
    max_padded_length,
    save_dataset,
)
from .errors import ConfigError, DataError, NumericError
from .eventlog import (
    CsvMapping,
    EventLog,
    compute_behavioral_profile,
    compute_stats,
    extract_variants,
    parse_csv,
    parse_xes,
    train_test_split,
)
from .evaluation import EvalReport, classify, evaluate_model, localize_events
from .model import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    """argparse reports usage problems with exit code 2; we reserve 2 for
    data errors, so route them through ConfigError instead."""

    def error(self, message):
        raise ConfigError(message)


def _mapping_from_args(args) -> CsvMapping:
    return CsvMapping(case=args.case_col, activity=args.activity_col,
                      timestamp=args.timestamp_col or None)


def _load_log(args) -> EventLog:
    path = Path(args.log)
    if not path.exists():
        raise DataError(f"log file not found: {path}")
    fmt = args.format
    if fmt == "auto":
        fmt = "xes" if path.suffix.lower() == ".xes" else "csv"
    with open(path, "rb") as fh:
        if fmt == "xes":
            return parse_xes(fh)
        return parse_csv(fh, _mapping_from_args(args))


def _add_log_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--log", required=True, help="event log file")
    p.add_argument("--format", choices=("auto", "csv", "xes"), default="auto")
    p.add_argument("--case-col", default="case_id")
    p.add_argument("--activity-col", default="activity")
    p.add_argument("--timestamp-col", default="timestamp",
                   help="empty string to parse without timestamps")


def _add_config_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None,
                   help="JSON run configuration; its values override flags")


# Maps config-document paths (section.key) onto argument names, per command.
_CONFIG_KEYS = {
    "stats": {
        "seed": "seed", "log.path": "log", "log.format": "format",
        "log.case_column": "case_col", "log.activity_column": "activity_col",
        "log.timestamp_column": "timestamp_col",
    },
    "inject": {
        "seed": "seed", "log.path": "log", "log.format": "format",
        "log.case_column": "case_col", "log.activity_column": "activity_col",
        "log.timestamp_column": "timestamp_col",
        "injection.r_case": "r_case", "injection.r_act": "r_act",
        "injection.fixed_count": "fixed_count", "injection.kinds": "kinds",
        "injection.l_max": "l_max", "injection.split": "split",
        "injection.train_fraction": "train_fraction",
        "injection.relabel_variant_matches": "variant_relabel",
        "output.dataset": "out",
    },
    "train": {
        "seed": "seed", "training.dataset": "dataset", "output.dir": "out",
        "model.variant": "variant", "model.d_model": "d_model",
        "model.n_heads_enc": "n_heads_enc", "model.n_heads_dec": "n_heads_dec",
        "model.n_layers_enc": "n_layers_enc", "model.n_layers_dec": "n_layers_dec",
        "model.d_ffn": "d_ffn", "model.mask_pad_attention": "mask_pad_attention",
        "training.epochs": "epochs", "training.batch_size": "batch_size",
        "training.lr": "lr", "training.patience": "patience",
        "training.val_fraction": "val_fraction",
    },
    "eval": {
        "seed": "seed", "eval.checkpoint": "checkpoint",
        "eval.datasets": "datasets", "output.dir": "out", "eval.force": "force",
    },
    "correct": {
        "seed": "seed", "correct.checkpoint": "checkpoint",
        "log.path": "log", "log.format": "format",
        "log.case_column": "case_col", "log.activity_column": "activity_col",
        "log.timestamp_column": "timestamp_col", "output.dir": "out",
    },
    "bench": {
        "seed": "seed", "bench.checkpoint": "checkpoint",
        "bench.n_traces": "n_traces", "bench.max_trace_len": "max_trace_len",
        "bench.iterative_sample": "iterative_sample",
    },
}


def _apply_config(args: argparse.Namespace, command: str) -> None:
    if not getattr(args, "config", None):
        return
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    for dotted, dest in _CONFIG_KEYS[command].items():
        node = doc
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                node = _MISSING
                break
            node = node[part]
        if node is not _MISSING:
            setattr(args, dest, node)
    for attr in ("log", "dataset", "checkpoint"):
        value = getattr(args, attr, None)
        if value and not Path(value).exists():
            raise ConfigError(f"config references missing path: {value}")
    datasets = getattr(args, "datasets", None)
    if datasets:
        for d in datasets:
            if not Path(d).exists():
                raise ConfigError(f"config references missing dataset: {d}")


_MISSING = object()


def _parse_kinds(spec: Optional[str]) -> tuple[AnomalyKind, ...]:
    if not spec or (isinstance(spec, str) and spec.strip() == "all"):
        return ALL_KINDS
    names = spec if isinstance(spec, (list, tuple)) else spec.split(",")
    try:
        return tuple(AnomalyKind(n.strip().lower()) for n in names if str(n).strip())
    except ValueError as exc:
        raise ConfigError(f"unknown anomaly kind in {spec!r}: {exc}") from None


def cmd_stats(args) -> int:
    log = _load_log(args)
    stats = compute_stats(log)
    if args.out_format == "json":
        print(json.dumps(stats.as_dict(), sort_keys=True))
        return EXIT_OK
    rows = [
        ("traces", stats.num_traces),
        ("activities", stats.num_activities),
        ("avg case length", stats.avg_case_length),
        ("max case length", stats.max_case_length),
    ]
    width = max(len(k) for k, _ in rows)
    for key, value in rows:
        print(f"{key:<{width}}  {value}")
    if log.skipped_empty_traces:
        print(f"(skipped {log.skipped_empty_traces} empty traces)")
    return EXIT_OK


def cmd_inject(args) -> int:
    log = _load_log(args)
    if args.split != "all":
        train_log, test_log = train_test_split(
            log, args.train_fraction, _util.derive_seed(args.seed, _util.STAGE_SPLIT)
        )
        part = train_log if args.split == "train" else test_log
    else:
        part = log
    stage = _util.STAGE_INJECT_TRAIN if args.split != "test" else _util.STAGE_INJECT_TEST
    config = InjectionConfig(
        r_case=args.r_case,
        r_act=None if args.fixed_count is not None else args.r_act,
        fixed_count=args.fixed_count,
        seed=_util.derive_seed(args.seed, stage),
        kinds=_parse_kinds(args.kinds),
        relabel_variant_matches=args.variant_relabel,
    )
    # Size sequences from the full log so train/test datasets line up even
    # when the longest trace lands in only one split.
    l_max = args.l_max or max_padded_length(
        log, r_act=config.r_act, fixed_count=config.fixed_count
    )
    dataset = build_dataset(
        part, config,
        variants=extract_variants(part),
        profile=compute_behavioral_profile(part),
        l_max=l_max,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out)

    kind_counts = Counter(r.kind.value for it in dataset.items for r in it.records)
    injected = sum(1 for it in dataset.items if it.records)
    anomalous = sum(1 for it in dataset.items if it.label == ANOMALOUS)
    summary = {
        "dataset": str(out),
        "num_traces": len(dataset),
        "injected": injected,
        "label_anomalous": anomalous,
        "label_normal": len(dataset) - anomalous,
        "relabeled_normal": injected - anomalous,
        "per_kind": dict(sorted(kind_counts.items())),
        "l_max": dataset.l_max,
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    path = Path(args.dataset)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    dataset = load_dataset(path)
    model_config = ModelConfig(
        vocab_size=dataset.vocab.size,
        max_len=dataset.l_max,
        d_model=args.d_model,
        n_heads_enc=args.n_heads_enc,
        n_heads_dec=args.n_heads_dec,
        n_layers_enc=args.n_layers_enc,
        n_layers_dec=args.n_layers_dec,
        d_ffn=args.d_ffn,
        variant=args.variant,
        mask_pad_attention=args.mask_pad_attention,
    )
    model = build_model(model_config, seed=_util.derive_seed(args.seed, _util.STAGE_MODEL_INIT))
    model.activity_names = dataset.activity_names
    train_config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        seed=_util.derive_seed(args.seed, _util.STAGE_TRAIN),
        patience=args.patience, val_fraction=args.val_fraction,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, metrics = train(model, dataset, train_config)
    metrics_path = out_dir / "metrics.jsonl"
    with open(metrics_path, "w", encoding="utf-8") as fh:
        for row in metrics:
            fh.write(json.dumps(row.as_dict(), sort_keys=True) + "\n")
    checkpoint_path = out_dir / "checkpoint.tmck"
    save_checkpoint(model, checkpoint_path, extras={
        "train_config": train_config.as_dict(),
        "dataset": str(path),
    })
    print(json.dumps({
        "checkpoint": str(checkpoint_path),
        "metrics": str(metrics_path),
        "epochs_run": len(metrics),
        "final_total_loss": metrics[-1].total_loss if metrics else None,
    }, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise DataError(f"checkpoint not found: {ckpt}")
    model, _ = load_checkpoint(ckpt)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_paths = []
    for dataset_path in args.datasets:
        dataset_path = Path(dataset_path)
        if not dataset_path.exists():
            raise DataError(f"dataset not found: {dataset_path}")
        report_path = out_dir / f"{dataset_path.stem}.report.json"
        if report_path.exists() and not args.force:
            print(f"skip {report_path} (exists; use --force to redo)", file=sys.stderr)
            report_paths.append(report_path)
            continue
        dataset = load_dataset(dataset_path)
        report = evaluate_model(model, dataset)
        report_path.write_text(
            json.dumps(report.as_dict(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
        report_paths.append(report_path)
        print(f"wrote {report_path}", file=sys.stderr)

    combined = out_dir / "reports.csv"
    with open(combined, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("dataset",) + EvalReport.CSV_FIELDS)
        for rp in report_paths:
            doc = json.loads(rp.read_text(encoding="utf-8"))
            writer.writerow([rp.stem.replace(".report", "")]
                            + [doc.get(k) for k in EvalReport.CSV_FIELDS])
    print(json.dumps({"reports": [str(p) for p in report_paths],
                      "combined_csv": str(combined)}, sort_keys=True))
    return EXIT_OK


def cmd_correct(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise DataError(f"checkpoint not found: {ckpt}")
    model, extras = load_checkpoint(ckpt)
    names = model.activity_names
    if names is None:
        raise DataError(f"{ckpt}: checkpoint carries no activity names; "
                        "re-train with this version to use `correct`")
    name_to_id = {n: i for i, n in enumerate(names)}
    l_max = model.config.max_len
    v = model.config.vocab_size
    pad_id, cls_id, missing_id = v - 3, v - 2, v - 1

    log = _load_log(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    entries = []  # (trace, tokens or None, error or None)
    for trace in log.traces:
        labels = [log.vocab.name_of(a) for a in trace.activities]
        unknown = [n for n in labels if n not in name_to_id]
        if unknown:
            entries.append((trace, None, f"unknown activities: {sorted(set(unknown))}"))
            continue
        if len(labels) > l_max - 1:
            entries.append((trace, None,
                            f"length {len(labels)} exceeds model maximum {l_max - 1}"))
            continue
        ids = [name_to_id[n] for n in labels]
        row = [cls_id] + ids + [pad_id] * (l_max - 1 - len(ids))
        entries.append((trace, np.asarray(row, dtype=np.int64), None))

    valid = [(i, toks) for i, (_, toks, err) in enumerate(entries) if err is None]
    probs = np.zeros(len(entries))
    preds = np.zeros((len(entries), l_max - 1), dtype=np.int64)
    batch = 128
    for start in range(0, len(valid), batch):
        chunk = valid[start:start + batch]
        tokens = np.stack([t for _, t in chunk])
        out = model.forward(tokens)
        for (idx, _), p, pr in zip(chunk, out.anomaly_prob.data, out.logits.data.argmax(axis=-1)):
            probs[idx] = p
            preds[idx] = pr

    corrected_log_rows = []
    jsonl_path = out_dir / "traces.jsonl"
    with open(jsonl_path, "w", encoding="utf-8") as fh:
        for idx, (trace, tokens, err) in enumerate(entries):
            if err is not None:
                fh.write(json.dumps({"case_id": trace.case_id, "error": err},
                                    sort_keys=True) + "\n")
                continue
            corrected_ids = [int(t) for t in preds[idx] if int(t) not in (pad_id, cls_id)]
            corrected_labels = ["[MISSING]" if t == missing_id else names[t]
                                for t in corrected_ids]
            input_labels = [names[int(t)] for t in tokens[1:] if int(t) < len(names)]
            script = localize_events(input_labels, corrected_labels)
            fh.write(json.dumps({
                "case_id": trace.case_id,
                "anomaly_prob": round(float(probs[idx]), 6),
                "label": "anomalous" if classify(float(probs[idx])) == ANOMALOUS else "normal",
                "corrected": corrected_labels,
                "edits": [[pos, kind] for pos, kind in script],
                "missing_unfilled": missing_id in corrected_ids,
                "empty": not corrected_ids,
            }, sort_keys=True) + "\n")
            for label in corrected_labels:
                corrected_log_rows.append((trace.case_id, label))

    corrected_csv = out_dir / "corrected.csv"
    mapping = _mapping_from_args(args)
    with open(corrected_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = [mapping.case, mapping.activity]
        if mapping.timestamp:
            header.append(mapping.timestamp)
        writer.writerow(header)
        for case_id, label in corrected_log_rows:
            row = [case_id, label]
            if mapping.timestamp:
                row.append("")
            writer.writerow(row)

    errors = sum(1 for _, _, err in entries if err is not None)
    print(json.dumps({
        "corrected_csv": str(corrected_csv),
        "traces_jsonl": str(jsonl_path),
        "num_traces": len(entries),
        "errors": errors,
    }, sort_keys=True))
    return EXIT_OK


def cmd_bench(args) -> int:
    """Single-pass batched inference against a per-position decoding loop."""
    rng = np.random.default_rng(args.seed)
    if args.checkpoint:
        model, _ = load_checkpoint(Path(args.checkpoint))
        l_max = model.config.max_len
        v = model.config.vocab_size
    else:
        l_max = args.max_trace_len + 1
        v = 8 + 3
        model = build_model(ModelConfig(vocab_size=v, max_len=l_max), seed=args.seed)
    pad_id, cls_id = v - 3, v - 2
    h = v - 3
    tokens = np.full((args.n_traces, l_max), pad_id, dtype=np.int64)
    tokens[:, 0] = cls_id
    for i in range(args.n_traces):
        length = int(rng.integers(2, l_max - 1))
        tokens[i, 1:1 + length] = rng.integers(h, size=length)

    batch = 128
    t0 = time.perf_counter()
    for start in range(0, args.n_traces, batch):
        out = model.forward(tokens[start:start + batch])
        out.logits.data.argmax(axis=-1)
    batched_seconds = time.perf_counter() - t0

    n_iter = min(args.iterative_sample or args.n_traces, args.n_traces)
    t0 = time.perf_counter()
    for i in range(n_iter):
        row = tokens[i:i + 1]
        for pos in range(l_max - 1):
            out = model.forward(row)
            int(out.logits.data[0, pos].argmax())
    iterative_seconds = time.perf_counter() - t0

    batched_per_trace = batched_seconds / args.n_traces
    iterative_per_trace = iterative_seconds / n_iter
    print(json.dumps({
        "n_traces": args.n_traces,
        "max_len": l_max,
        "batched_seconds": round(batched_seconds, 4),
        "batched_per_trace": batched_per_trace,
        "iterative_traces": n_iter,
        "iterative_seconds": round(iterative_seconds, 4),
        "iterative_per_trace": iterative_per_trace,
        "speedup": iterative_per_trace / batched_per_trace,
    }, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tracemend",
                     description="Detect and correct anomalous traces in event logs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", parents=[], help="event log statistics")
    _add_log_args(p)
    _add_config_arg(p)
    p.add_argument("--out-format", choices=("table", "json"), default="table")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("inject", help="build a labeled dataset by anomaly injection")
    _add_log_args(p)
    _add_config_arg(p)
    p.add_argument("--out", required=True, help="output dataset file (.jsonl)")
    p.add_argument("--r-case", type=float, default=0.5)
    p.add_argument("--r-act", type=float, default=0.5)
    p.add_argument("--fixed-count", type=int, default=None,
                   help="inject exactly this many anomalous events per trace")
    p.add_argument("--kinds", default="all",
                   help="comma list of anomaly kinds (default all six)")
    p.add_argument("--l-max", type=int, default=None,
                   help="override padded sequence length")
    p.add_argument("--split", choices=("all", "train", "test"), default="all")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--no-variant-relabel", dest="variant_relabel",
                   action="store_false",
                   help="disable relabeling of variant-colliding mutations")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("train", help="train a model on an injected dataset")
    _add_config_arg(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--variant", choices=("transformer-ae", "encoder-only", "dense-ae"),
                   default="transformer-ae")
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--n-heads-enc", type=int, default=8)
    p.add_argument("--n-heads-dec", type=int, default=8)
    p.add_argument("--n-layers-enc", type=int, default=2)
    p.add_argument("--n-layers-dec", type=int, default=2)
    p.add_argument("--d-ffn", type=int, default=64)
    p.add_argument("--mask-pad-attention", action="store_true")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over dataset grid cells")
    _add_config_arg(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", dest="datasets", action="append", required=True,
                   help="repeat for each grid cell")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true", help="recompute existing cells")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("correct", help="correct a raw event log with a checkpoint")
    _add_log_args(p)
    _add_config_arg(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("bench", help="batched vs per-position inference timing")
    _add_config_arg(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--n-traces", type=int, default=1000)
    p.add_argument("--max-trace-len", type=int, default=64)
    p.add_argument("--iterative-sample", type=int, default=100,
                   help="traces to run through the sequential loop (0 = all)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config(args, args.command)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
