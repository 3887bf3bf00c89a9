"""Multimodal vs unimodal models on xor_fusion across seeds, plus the hard subset.

    python3 scripts/fusion_experiment.py --seeds 0 1 2 3 4 --out results/fusion
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from mmbt.experiments import FusionConfig, hard_subset, median_accuracy, run_seed
from mmbt.report import comparison_table


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", default="results/fusion")
    ap.add_argument("--lr", type=float, default=FusionConfig.lr)
    ap.add_argument("--max-epochs", type=int, default=FusionConfig.max_epochs)
    args = ap.parse_args()

    cfg = FusionConfig(lr=args.lr, max_epochs=args.max_epochs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    runs, hard = [], {}
    for seed in args.seeds:
        run = run_seed(seed, cfg, log=lambda m: print(m, flush=True))
        runs.append(run)
        hs = hard_subset(run, out / f"seed{seed}")
        hard[seed] = hs.accuracy
        scores = " ".join(f"{k}={v:.3f}" for k, v in hs.accuracy.items())
        print(f"seed={seed} hard subset ({len(hs.ids)} ids): {scores}", flush=True)

    med = median_accuracy(runs)
    table = {k: {"test_median": med[k], **{f"test_seed{r.seed}": r.results[k].test_accuracy for r in runs}} for k in med}
    for k in med:
        table[k]["hard_median"] = sorted(hard[s][k] for s in hard)[len(hard) // 2]
    comparison_table(table, out / "comparison.tsv")
    (out / "summary.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print("median test accuracy: " + " ".join(f"{k}={v:.3f}" for k, v in med.items()))
    print(f"total {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
