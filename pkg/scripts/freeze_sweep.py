"""Dev accuracy of MMBT on xor_fusion as a function of freeze epochs.

    python3 scripts/freeze_sweep.py --out results/freeze
"""

from __future__ import annotations

import argparse
from dataclasses import replace
from pathlib import Path

from mmbt.baselines import build_model
from mmbt.datagen import GenSpec, corpus, generate_dataset
from mmbt.encoders import build_vocab
from mmbt.experiments import FusionConfig, model_config
from mmbt.pipeline import task_data
from mmbt.report import history_report, sweep_report
from mmbt.training import FreezeSchedule, TrainConfig, read_history, sweep, train, write_history, write_sweep_table


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/freeze")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--text", type=int, nargs="+", default=[0, 2, 4])
    ap.add_argument("--image", type=int, nargs="+", default=[0, 2, 4])
    ap.add_argument("--max-epochs", type=int, default=12)
    ap.add_argument("--train-size", type=int, default=1000)
    args = ap.parse_args()

    cfg = FusionConfig()
    spec = GenSpec(task="xor_fusion", sizes=(args.train_size, 200, 500), seed=args.seed)
    splits = generate_dataset(spec)
    meta = spec.meta()
    vocab = build_vocab(corpus(splits["train"]), cfg.vocab_size)
    tr, dv = task_data(splits["train"], vocab, meta), task_data(splits["dev"], vocab, meta)
    mcfg = model_config(cfg, len(vocab), len(meta.classes))
    base = TrainConfig(lr_grid=(cfg.lr,), max_epochs=args.max_epochs, patience=args.max_epochs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def fit(cell, seed):
        tc = replace(base, seed=seed, freeze=FreezeSchedule(cell["text_frozen_epochs"], cell["image_frozen_epochs"]))
        res = train(build_model("mmbt", mcfg, seed), tr, dv, tc)
        write_history(res.history, out / f"history_t{cell['text_frozen_epochs']}_i{cell['image_frozen_epochs']}.jsonl")
        print(cell, f"dev={res.best_metric:.3f} best_epoch={res.best_epoch}", flush=True)
        return res.best_metric, {"best_epoch": res.best_epoch}

    result = sweep(
        {"lr": [cfg.lr], "text_frozen_epochs": args.text, "image_frozen_epochs": args.image}, fit, seed=args.seed
    )
    write_sweep_table(result.table, out / "sweep.tsv")
    for p in sweep_report(result.table, out):
        print(p)
    best = result.best

    history_report(
        read_history(out / f"history_t{best['text_frozen_epochs']}_i{best['image_frozen_epochs']}.jsonl"), out, "best_history"
    )
    print("best cell:", best)


if __name__ == "__main__":
    main()
