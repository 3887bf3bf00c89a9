"""Command-line entry point.

Exit codes: 0 ok, 2 invalid spec/config, 3 unreadable or empty input,
4 checkpoint/dataset mismatch, 5 prediction id mismatch.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import pipeline, report
from .datagen import GenSpec, generate_dataset, read_dataset, write_splits
from .errors import (
    ConfigMismatch,
    EmptyInput,
    EmptySplit,
    IdMismatch,
    InvalidSpec,
    ParseError,
)
from .evaluation import build_hard_set, read_predictions, score_predictions, write_ids, write_predictions
from .training import evaluate, read_history, read_sweep_table, write_history, write_sweep_table

EXIT_OK, EXIT_SPEC, EXIT_INPUT, EXIT_MISMATCH, EXIT_IDS = 0, 2, 3, 4, 5


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _read_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CommandError(EXIT_INPUT, f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise CommandError(EXIT_SPEC, f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise CommandError(EXIT_SPEC, f"{path}: top level must be an object")
    return data


def cmd_generate_data(args) -> int:
    try:
        spec = GenSpec.from_dict(_read_json(args.config))
    except InvalidSpec as exc:
        raise CommandError(EXIT_SPEC, f"invalid spec: {exc}") from exc
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    paths = write_splits(generate_dataset(spec), spec.meta(), args.out)
    for p in paths:
        print(p)
    return EXIT_OK


def _run_config(args) -> pipeline.RunConfig:
    try:
        run = pipeline.RunConfig.from_dict(_read_json(args.config))
    except (InvalidSpec, TypeError) as exc:
        raise CommandError(EXIT_SPEC, f"invalid config: {exc}") from exc
    if args.seed is not None:
        run.seed = args.seed
    if args.out is not None:
        run.out_dir = args.out
    train = dict(run.train)
    sweep = dict(run.sweep)
    freeze = dict(train.get("freeze", {}))
    overrides = {
        "lr": args.lr,
        "text_frozen_epochs": args.freeze_text,
        "image_frozen_epochs": args.freeze_image,
        "num_image_embeddings": args.num_image_embeddings,
    }
    for axis, value in overrides.items():
        if value is None:
            continue
        sweep.pop(axis, None)  # flags win over config sweeps
        if axis == "lr":
            train["lr_grid"] = [value]
        elif axis == "num_image_embeddings":
            train[axis] = value
        else:
            freeze[axis] = value
    if freeze:
        train["freeze"] = freeze
    run.train, run.sweep = train, sweep
    return run


def cmd_train(args) -> int:
    run = _run_config(args)
    try:
        trained = pipeline.train_run(run)
    except (EmptySplit, ParseError) as exc:
        raise CommandError(EXIT_INPUT, str(exc)) from exc
    except OSError as exc:
        raise CommandError(EXIT_INPUT, f"cannot read dataset: {exc}") from exc
    except (InvalidSpec, ValueError) as exc:
        raise CommandError(EXIT_SPEC, f"invalid config: {exc}") from exc
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = trained.result
    header = pipeline.checkpoint_header(
        trained.model,
        trained.vocab,
        trained.meta,
        run,
        {"best_epoch": res.best_epoch, "dev_metric": res.best_metric, "metric": res.metric_name, "cell": trained.cell},
    )
    pipeline.save_model(out / "checkpoint.bin", trained.model, header)
    write_history(res.history, out / "history.jsonl")
    write_sweep_table(trained.table, out / "sweep.tsv")
    trained.vocab.save(out / "vocab.txt")
    summary = {
        "model": run.model,
        "best_epoch": res.best_epoch,
        "metric": res.metric_name,
        "dev_metric": res.best_metric,
        "cell": trained.cell,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"best_epoch={res.best_epoch} dev_{res.metric_name}={res.best_metric!r} cell={json.dumps(trained.cell, sort_keys=True)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        model, vocab, meta, _ = pipeline.load_model(args.checkpoint)
        dataset = read_dataset(args.dataset, "eval")
    except (OSError, ParseError) as exc:
        raise CommandError(EXIT_INPUT, f"unreadable input: {exc}") from exc
    except (ConfigMismatch, KeyError) as exc:
        raise CommandError(EXIT_MISMATCH, f"checkpoint mismatch: {exc}") from exc
    if not len(dataset):
        raise CommandError(EXIT_INPUT, "dataset is empty")
    try:
        pipeline.check_compatible(dataset, meta)
        rep = evaluate(model, pipeline.task_data(dataset, vocab, meta))
    except ConfigMismatch as exc:
        raise CommandError(EXIT_MISMATCH, str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(rep.records, out / "predictions.jsonl")
    (out / "metrics.json").write_text(json.dumps(rep.metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(" ".join(f"{k}={v!r}" for k, v in sorted(rep.metrics.items())))
    return EXIT_OK


def cmd_build_hardset(args) -> int:
    try:
        img = read_predictions(args.img)
        txt = read_predictions(args.bow)
    except (OSError, ParseError) as exc:
        raise CommandError(EXIT_INPUT, f"unreadable predictions: {exc}") from exc
    try:
        ids = build_hard_set(score_predictions(img, txt, args.variant), args.fraction)
    except IdMismatch as exc:
        raise CommandError(EXIT_IDS, str(exc)) from exc
    except EmptyInput as exc:
        raise CommandError(EXIT_INPUT, str(exc)) from exc
    except ValueError as exc:
        raise CommandError(EXIT_SPEC, str(exc)) from exc
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_ids(ids, args.out)
    print(f"{len(ids)} ids -> {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.history and not args.sweep:
        raise CommandError(EXIT_INPUT, "nothing to report: pass --history and/or --sweep")
    paths = []
    try:
        for i, h in enumerate(args.history or []):
            stem = "history" if len(args.history) == 1 else f"history{i}"
            paths += report.history_report(read_history(h), args.out, stem)
        for i, s in enumerate(args.sweep or []):
            stem = "sweep" if len(args.sweep) == 1 else f"sweep{i}"
            paths += report.sweep_report(read_sweep_table(s), args.out, stem)
    except (OSError, ParseError, EmptyInput, KeyError) as exc:
        raise CommandError(EXIT_INPUT, f"cannot build report: {exc}") from exc
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmbt", description="Multimodal bitransformer toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="write synthetic train/dev/test splits")
    g.add_argument("--config", required=True, help="generator spec (JSON)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_generate_data)

    t = sub.add_parser("train", help="sweep, train with early stopping, save the best checkpoint")
    t.add_argument("--config", required=True, help="run config (JSON)")
    t.add_argument("--out", help="output directory (overrides out_dir)")
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--freeze-text", type=int)
    t.add_argument("--freeze-image", type=int)
    t.add_argument("--num-image-embeddings", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="predict a dataset with a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("dataset")
    e.add_argument("--out", required=True, help="output directory")
    e.set_defaults(func=cmd_eval)

    h = sub.add_parser("build-hardset", help="rank examples by unimodal hardness")
    h.add_argument("--img", required=True, help="image-only predictions (JSONL)")
    h.add_argument("--bow", required=True, help="text-only predictions (JSONL)")
    h.add_argument("--variant", choices=("ground_truth", "disagreement"), default="ground_truth")
    h.add_argument("--fraction", type=float, default=0.10)
    h.add_argument("--out", required=True, help="id file")
    h.set_defaults(func=cmd_build_hardset)

    r = sub.add_parser("report", help="tables and plots from histories and sweep tables")
    r.add_argument("--history", action="append", help="history JSONL (repeatable)")
    r.add_argument("--sweep", action="append", help="sweep TSV (repeatable)")
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
