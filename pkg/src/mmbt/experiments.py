"""Synthetic fusion and hard-subset experiments shared by scripts and tests."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import build_model
from .datagen import GenSpec, corpus, generate_dataset
from .encoders import ImageEncoderConfig, build_vocab
from .evaluation import (
    build_hard_set,
    read_predictions,
    score_predictions,
    write_predictions,
)
from .model import Model, MMBTConfig
from .pipeline import task_data
from .training import FreezeSchedule, TaskData, TrainConfig, evaluate, train
from .transformer import EncoderConfig


@dataclass(frozen=True)
class FusionConfig:
    kinds: tuple[str, ...] = ("mmbt", "bow", "text_only", "img")
    sizes: tuple[int, int, int] = (2000, 200, 500)
    lr: float = 2e-3
    max_epochs: int = 20
    patience: int = 8
    batch_size: int = 32
    vocab_size: int = 200
    num_layers: int = 2
    model_dim: int = 32
    num_heads: int = 4
    ffn_dim: int = 64
    dropout_rate: float = 0.1
    patch_size: int = 2
    embed_dim: int = 16
    grid: tuple[int, int] = (2, 2)
    freeze: FreezeSchedule = field(default_factory=FreezeSchedule)


@dataclass
class KindResult:
    kind: str
    model: Model
    test_accuracy: float
    best_epoch: int
    epochs_run: int
    seconds: float


@dataclass
class SeedRun:
    seed: int
    data: dict[str, TaskData]
    results: dict[str, KindResult]


def model_config(cfg: FusionConfig, vocab_size: int, num_classes: int, image_size: int = 8) -> MMBTConfig:
    return MMBTConfig(
        encoder=EncoderConfig(cfg.num_layers, cfg.model_dim, cfg.num_heads, cfg.ffn_dim, cfg.dropout_rate),
        image=ImageEncoderConfig(1, image_size, image_size, cfg.patch_size, cfg.embed_dim, *cfg.grid),
        vocab_size=vocab_size,
        num_classes=num_classes,
    )


def run_seed(seed: int, cfg: FusionConfig = FusionConfig(), log=None) -> SeedRun:
    """Fresh xor data and fresh models, both derived from ``seed``."""
    spec = GenSpec(task="xor_fusion", sizes=cfg.sizes, seed=seed)
    splits = generate_dataset(spec)
    meta = spec.meta()
    vocab = build_vocab(corpus(splits["train"]), cfg.vocab_size)
    data = {name: task_data(ds, vocab, meta) for name, ds in splits.items()}
    mcfg = model_config(cfg, len(vocab), len(meta.classes))
    tc = TrainConfig(
        lr_grid=(cfg.lr,),
        max_epochs=cfg.max_epochs,
        patience=cfg.patience,
        batch_size=cfg.batch_size,
        seed=seed,
        freeze=cfg.freeze,
    )
    results = {}
    for kind in cfg.kinds:
        t0 = time.perf_counter()
        model = build_model(kind, mcfg, seed)
        res = train(model, data["train"], data["dev"], tc)
        acc = evaluate(model, data["test"]).metrics["accuracy"]
        results[kind] = KindResult(kind, model, acc, res.best_epoch, len(res.history), time.perf_counter() - t0)
        if log:
            log(f"seed={seed} {kind}: test_acc={acc:.4f} best_epoch={res.best_epoch} ({results[kind].seconds:.1f}s)")
    return SeedRun(seed, data, results)


def median_accuracy(runs: list[SeedRun]) -> dict[str, float]:
    kinds = runs[0].results
    return {k: statistics.median(r.results[k].test_accuracy for r in runs) for k in kinds}


# ---------------------------------------------------------------------------
# hard subset


@dataclass
class HardSetResult:
    ids: list[str]
    accuracy: dict[str, float]


def subset_accuracy(model: Model, data: TaskData, ids: list[str]) -> float:
    index = {i: n for n, i in enumerate(data.ids)}
    rows = [index[i] for i in ids]
    sub = TaskData([data.ids[r] for r in rows], [data.inputs[r] for r in rows], [data.targets[r] for r in rows], data.task_kind, data.num_classes)
    return evaluate(model, sub).metrics["accuracy"]


def hard_subset(run: SeedRun, out_dir, variant: str = "ground_truth", fraction: float = 0.10) -> HardSetResult:
    """Write Img and Bow test predictions, rank them, score every model on the top slice."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    test = run.data["test"]
    for kind in ("img", "bow"):
        write_predictions(evaluate(run.results[kind].model, test).records, out_dir / f"{kind}_test.jsonl")
    img = read_predictions(out_dir / "img_test.jsonl")
    bow = read_predictions(out_dir / "bow_test.jsonl")
    ids = build_hard_set(score_predictions(img, bow, variant), fraction)
    return HardSetResult(ids, {k: subset_accuracy(r.model, test, ids) for k, r in run.results.items()})

