"""Glue between files on disk, model construction and the training loop."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from .baselines import build_model
from .checkpoint import load_checkpoint, save_checkpoint
from .datagen import Dataset, DatasetMeta, corpus, model_inputs, read_dataset, read_meta, targets
from .encoders import ImageEncoderConfig, Vocabulary, build_vocab, grid_for
from .errors import ConfigMismatch, EmptySplit, InvalidSpec
from .model import Model, MMBTConfig
from .training import FreezeSchedule, TaskData, TrainConfig, TrainResult, cell_seed, sweep, train
from .transformer import EncoderConfig


@dataclass
class RunConfig:
    model: str = "mmbt"
    data_dir: str = "data"
    out_dir: str = "runs/default"
    seed: int = 0
    vocab_size: int = 200
    bow_dim: int = 16
    max_positions: int = 64
    encoder: dict = field(default_factory=lambda: {"num_layers": 2, "model_dim": 32, "num_heads": 4, "ffn_dim": 64})
    image: dict = field(default_factory=lambda: {"patch_size": 2, "embed_dim": 16})
    train: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidSpec(f"{sorted(unknown)[0]}: unknown config field")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def train_config(self) -> TrainConfig:
        t = dict(self.train)
        freeze = t.pop("freeze", {})
        if "lr_grid" in t:
            t["lr_grid"] = tuple(float(x) for x in t["lr_grid"])
        return TrainConfig(seed=self.seed, freeze=FreezeSchedule(**freeze), **t)

    def sweep_grid(self) -> dict[str, list]:
        tc = self.train_config()
        grid = {
            "lr": list(tc.lr_grid),
            "text_frozen_epochs": [tc.freeze.text_frozen_epochs],
            "image_frozen_epochs": [tc.freeze.image_frozen_epochs],
            "num_image_embeddings": [tc.num_image_embeddings],
        }
        for axis, values in self.sweep.items():
            if axis not in grid:
                raise InvalidSpec(f"sweep.{axis}: not a sweepable axis")
            grid[axis] = list(values)
        return grid


def model_config(run: RunConfig, meta: DatasetMeta, vocab: Vocabulary, num_image_embeddings: int) -> MMBTConfig:
    C, H, W = meta.image_shape
    K, M = grid_for(num_image_embeddings)
    image = ImageEncoderConfig(channels=C, height=H, width=W, grid_rows=K, grid_cols=M, **run.image)
    return MMBTConfig(
        encoder=EncoderConfig(**run.encoder),
        image=image,
        num_text_segments=meta.num_text_segments,
        vocab_size=len(vocab),
        num_classes=len(meta.classes),
        task_kind=meta.task_kind,
        max_positions=run.max_positions,
    )


def task_data(dataset: Dataset, vocab: Vocabulary, meta: DatasetMeta) -> TaskData:
    return TaskData(
        [ex.id for ex in dataset.examples],
        model_inputs(dataset, vocab),
        targets(dataset, meta.classes, meta.task_kind),
        meta.task_kind,
        len(meta.classes),
    )


def load_split(data_dir, split: str) -> Dataset:
    return read_dataset(Path(data_dir) / f"{split}.jsonl", split)


@dataclass
class TrainedRun:
    model: Model
    result: TrainResult
    cell: dict
    vocab: Vocabulary
    meta: DatasetMeta
    table: list[dict]


def train_run(run: RunConfig, train_ds: Dataset | None = None, dev_ds: Dataset | None = None, meta=None) -> TrainedRun:
    """Sweep the configured grid and keep the best cell's model."""
    meta = meta or read_meta(run.data_dir)
    train_ds = train_ds if train_ds is not None else load_split(run.data_dir, "train")
    dev_ds = dev_ds if dev_ds is not None else load_split(run.data_dir, "dev")
    if not len(train_ds) or not len(dev_ds):
        raise EmptySplit("train and dev splits must be non-empty")
    vocab = build_vocab(corpus(train_ds), run.vocab_size)
    tr, dv = task_data(train_ds, vocab, meta), task_data(dev_ds, vocab, meta)
    base = run.train_config()
    kept: dict[int, tuple[Model, TrainResult]] = {}

    def fit(cell: dict, seed: int):
        cfg = model_config(run, meta, vocab, int(cell["num_image_embeddings"]))
        model = build_model(run.model, cfg, seed, run.bow_dim)
        tc = replace(
            base,
            seed=seed,
            freeze=FreezeSchedule(int(cell["text_frozen_epochs"]), int(cell["image_frozen_epochs"])),
            num_image_embeddings=int(cell["num_image_embeddings"]),
        )
        res = train(model, tr, dv, tc, lr=float(cell["lr"]))
        kept[len(kept)] = (model, res)
        return res.best_metric, {"best_epoch": res.best_epoch, "epochs_run": len(res.history)}

    out = sweep(run.sweep_grid(), fit, seed=run.seed)
    model, res = kept[out.best_index]
    return TrainedRun(model, res, out.best, vocab, meta, out.table)


def checkpoint_header(model: Model, vocab: Vocabulary, meta: DatasetMeta, run: RunConfig, extra=None) -> dict:
    header = {
        "kind": model.kind,
        "config": model.config.to_dict(),
        "bow_dim": run.bow_dim,
        "vocab": vocab.tokens,
        "meta": meta.to_dict(),
    }
    header.update(extra or {})
    return header


def save_model(path, model: Model, header: dict) -> None:
    save_checkpoint(path, model.state_dict(), header)


def load_model(path) -> tuple[Model, Vocabulary, DatasetMeta, dict]:
    state, header = load_checkpoint(path)
    config = MMBTConfig.from_dict(header["config"])
    model = build_model(header["kind"], config, 0, header.get("bow_dim", 16))
    model.load_state_dict(state)
    return model, Vocabulary(header["vocab"]), DatasetMeta.from_dict(header["meta"]), header


def check_compatible(dataset: Dataset, meta: DatasetMeta) -> None:
    """Raise ConfigMismatch when records cannot be fed to a model trained on ``meta``."""
    known = set(meta.classes)
    for ex in dataset.examples:
        if ex.image is not None and (ex.image.channels, ex.image.height, ex.image.width) != tuple(meta.image_shape):
            raise ConfigMismatch(f"{ex.id}: image shape differs from the checkpoint")
        if len(ex.texts) > meta.num_text_segments:
            raise ConfigMismatch(f"{ex.id}: more text segments than the checkpoint supports")
        for lab in ex.labels:
            if lab not in known:
                raise ConfigMismatch(f"{ex.id}: unknown label {lab!r}")


def run_seed(base: int, index: int) -> int:
    return cell_seed(base, index)
