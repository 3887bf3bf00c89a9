"""Losses, Adam with optional linear warmup, staged freezing, early stopping, sweeps."""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import tensor as T
from .errors import EmptySplit, IndexOutOfRange, ShapeMismatch
from .evaluation import EvalReport, evaluate_probs
from .model import Model, ModelInput, probabilities
from .tensor import Tensor

ALWAYS_TRAINABLE = ("embeddings", "image_map", "head")


# ---------------------------------------------------------------------------
# losses


def class_weights(counts: Sequence[int]) -> np.ndarray:
    """Inverse-frequency weights total / (C * count), zero counts floored to 1."""
    counts = np.asarray(counts, dtype=np.float64)
    if (counts < 0).any() or counts.sum() <= 0:
        raise ValueError("counts must be non-negative with a positive total")
    return counts.sum() / (len(counts) * np.maximum(counts, 1.0))


def weighted_ce_loss(logits: Tensor, targets: Sequence[int], weights=None) -> Tensor:
    B, C = logits.shape
    t = np.asarray(targets, dtype=np.int64)
    if t.shape != (B,):
        raise ShapeMismatch("one target per row required")
    if t.size and (t.min() < 0 or t.max() >= C):
        raise IndexOutOfRange(f"target outside [0, {C})")
    w = np.ones(C) if weights is None else np.asarray(weights, dtype=np.float64)
    pick = np.zeros((B, C))
    pick[np.arange(B), t] = w[t]
    return T.scale(T.sum_(T.log_softmax_last(logits) * T.constant(pick)), -1.0 / B)


def weighted_bce_loss(logits: Tensor, targets, weights=None) -> Tensor:
    """Mean of w_c * (softplus(l) - t * l), i.e. BCE on sigmoid(l)."""
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.shape:
        raise ShapeMismatch(f"targets {t.shape} vs logits {logits.shape}")
    C = logits.shape[-1]
    w = T.constant(np.ones(C) if weights is None else np.asarray(weights, dtype=np.float64))
    per = (T.softplus(logits) - logits * T.constant(t)) * w
    return T.mean(per)


def task_loss(logits: Tensor, targets, task_kind: str, weights=None) -> Tensor:
    if task_kind == "multilabel":
        return weighted_bce_loss(logits, targets, weights)
    return weighted_ce_loss(logits, targets, weights)


# ---------------------------------------------------------------------------
# optimiser


def warmup_lr(step: int, total_steps: int, warmup_rate: float = 0.1) -> float:
    """Linear ramp to 1 over the first warmup_rate * total steps, then linear decay to 0."""
    warm = warmup_rate * total_steps
    if step < warm:
        return step / warm
    if total_steps <= warm:
        return 1.0
    return max(0.0, (total_steps - step) / (total_steps - warm))


@dataclass
class OptimizerState:
    base_lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: str = "constant"
    warmup_rate: float = 0.1
    total_steps: int = 1
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    param_steps: dict = field(default_factory=dict)

    def multiplier(self) -> float:
        if self.schedule == "warmup_linear":
            return warmup_lr(self.step, self.total_steps, self.warmup_rate)
        return 1.0


def adam_step(state: OptimizerState, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]):
    """One bias-corrected Adam update, in place, for every param with a gradient.

    Bias correction counts each parameter's own updates, so a group that
    unfreezes late starts with properly scaled moments.
    """
    state.step += 1
    lr = state.base_lr * state.multiplier()
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
            state.param_steps[name] = 0
        state.param_steps[name] += 1
        t = state.param_steps[name]
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p.data -= lr * mhat / (np.sqrt(vhat) + state.eps)
    return params


# ---------------------------------------------------------------------------
# freezing


@dataclass(frozen=True)
class FreezeSchedule:
    text_frozen_epochs: int = 0
    image_frozen_epochs: int = 0

    def __post_init__(self):
        if self.text_frozen_epochs < 0 or self.image_frozen_epochs < 0:
            raise ValueError("frozen epochs must be >= 0")


def apply_freeze_schedule(model: Model, epoch: int, schedule: FreezeSchedule) -> list[str]:
    """Mark groups trainable for this epoch; returns the trainable group names."""
    trainable = []
    for g in model.groups():
        if g == "text_encoder":
            on = epoch >= schedule.text_frozen_epochs
        elif g == "image_encoder":
            on = epoch >= schedule.image_frozen_epochs
        else:
            on = True
        if on:
            trainable.append(g)
    model.set_trainable(trainable)
    return trainable


# ---------------------------------------------------------------------------
# data and evaluation


@dataclass
class TaskData:
    ids: list[str]
    inputs: list[ModelInput]
    targets: object  # list[int] or bool [n, C]
    task_kind: str
    num_classes: int

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, idx) -> tuple[list[ModelInput], object]:
        items = [self.inputs[i] for i in idx]
        if self.task_kind == "multilabel":
            return items, np.asarray(self.targets)[idx]
        return items, [self.targets[i] for i in idx]

    def class_counts(self) -> list[int]:
        if self.task_kind == "multilabel":
            return [int(x) for x in np.asarray(self.targets).sum(axis=0)]
        return [int(x) for x in np.bincount(np.asarray(self.targets, dtype=np.int64), minlength=self.num_classes)]


def predict_probs(model: Model, data: TaskData, batch_size: int = 64) -> np.ndarray:
    out = []
    for start in range(0, len(data), batch_size):
        items = data.inputs[start : start + batch_size]
        out.append(probabilities(model.logits(items).data, data.task_kind))
    return np.concatenate(out, axis=0) if out else np.zeros((0, data.num_classes))


def evaluate(model: Model, data: TaskData, batch_size: int = 64) -> EvalReport:
    if not len(data):
        raise EmptySplit("cannot evaluate an empty split")
    return evaluate_probs(data.ids, predict_probs(model, data, batch_size), data.targets, data.task_kind)


def default_metric(task_kind: str) -> str:
    return "micro_f1" if task_kind == "multilabel" else "accuracy"


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    lr_grid: tuple[float, ...] = (1e-4, 5e-5)
    max_epochs: int = 10
    patience: int = 3
    batch_size: int = 32
    seed: int = 0
    early_stop_metric: str | None = None
    freeze: FreezeSchedule = field(default_factory=FreezeSchedule)
    num_image_embeddings: int = 4
    schedule: str | None = None  # None: warmup for transformer models, constant otherwise
    warmup_rate: float = 0.1
    class_weighting: bool = True

    def __post_init__(self):
        if not self.lr_grid:
            raise ValueError("lr_grid must be non-empty")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    metric_name: str
    dev_metric: float
    trainable_groups: list[str]

    def lines(self) -> list[dict]:
        return [
            {"epoch": self.epoch, "split": "train", "metric": "loss", "value": self.train_loss},
            {"epoch": self.epoch, "split": "dev", "metric": self.metric_name, "value": self.dev_metric},
            {"epoch": self.epoch, "split": "train", "metric": "trainable_groups", "value": self.trainable_groups},
        ]


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    best_epoch: int
    best_metric: float
    metric_name: str
    history: list[EpochRecord]
    lr: float

    @property
    def stopped_epoch(self) -> int:
        return self.history[-1].epoch


def train(
    model: Model,
    train_data: TaskData,
    dev_data: TaskData,
    config: TrainConfig,
    lr: float | None = None,
    dev_metric: Callable[[Model], float] | None = None,
    on_epoch: Callable[[int, Model], None] | None = None,
) -> TrainResult:
    """Minibatch training with per-epoch freezing and early stopping.

    The model is left holding the best-dev-metric parameters.
    """
    if not len(train_data) or not len(dev_data):
        raise EmptySplit("train and dev splits must be non-empty")
    lr = config.lr_grid[0] if lr is None else lr
    rng = np.random.default_rng(config.seed)
    metric_name = config.early_stop_metric or default_metric(train_data.task_kind)
    weights = class_weights(train_data.class_counts()) if config.class_weighting else None
    steps_per_epoch = math.ceil(len(train_data) / config.batch_size)
    schedule = config.schedule
    if schedule is None:
        from .baselines import TRANSFORMER_KINDS

        schedule = "warmup_linear" if model.kind in TRANSFORMER_KINDS else "constant"
    opt = OptimizerState(
        base_lr=lr, schedule=schedule, warmup_rate=config.warmup_rate, total_steps=steps_per_epoch * config.max_epochs
    )
    params = model.named_parameters()
    history: list[EpochRecord] = []
    best_metric, best_epoch, best_state, bad = -math.inf, -1, model.state_dict(), 0
    for epoch in range(config.max_epochs):
        trainable = apply_freeze_schedule(model, epoch, config.freeze)
        perm = rng.permutation(len(train_data))
        total_loss = 0.0
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start : start + config.batch_size]
            items, tgt = train_data.subset(idx)
            loss = task_loss(model.logits(items, training=True, rng=rng), tgt, train_data.task_kind, weights)
            grads = T.backward(loss)
            named = {k: grads[t] for k, t in params.items() if t in grads}
            adam_step(opt, params, named)
            total_loss += loss.item() * len(idx)
        if dev_metric is not None:
            metric = float(dev_metric(model))
        else:
            metric = evaluate(model, dev_data).metrics[metric_name]
        history.append(EpochRecord(epoch, total_loss / len(train_data), metric_name, metric, trainable))
        if on_epoch is not None:
            on_epoch(epoch, model)
        if metric > best_metric:
            best_metric, best_epoch, best_state, bad = metric, epoch, model.state_dict(), 0
        else:
            bad += 1
            if bad >= config.patience:
                break
    model.load_state_dict(best_state)
    model.set_trainable(model.groups())
    return TrainResult(best_state, best_epoch, best_metric, metric_name, history, lr)


def write_history(history: Sequence[EpochRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in history:
            for line in rec.lines():
                fh.write(json.dumps(line) + "\n")


def read_history(path) -> list[dict]:
    from .errors import ParseError

    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append({k: rec[k] for k in ("epoch", "split", "metric", "value")})
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"bad history record: {exc}", n) from exc
    return out


# ---------------------------------------------------------------------------
# sweeps


SWEEP_AXES = ("lr", "text_frozen_epochs", "image_frozen_epochs", "num_image_embeddings")


@dataclass
class SweepResult:
    best: dict
    best_index: int
    table: list[dict]
    outcomes: list


def cell_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def sweep(grid: Mapping[str, Sequence], train_fn: Callable[[dict, int], tuple[float, dict]], seed: int = 0) -> SweepResult:
    """Train every cell of the cartesian grid; best dev metric wins, ties go to the first cell.

    ``train_fn(cell, seed)`` returns ``(dev_metric, extra_columns)``; each
    cell's seed depends only on its grid position.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("sweep grid must be non-empty")
    axes = list(grid)
    table, outcomes = [], []
    best_i, best_m = 0, -math.inf
    for i, values in enumerate(itertools.product(*(grid[a] for a in axes))):
        cell = dict(zip(axes, values))
        metric, extra = train_fn(cell, cell_seed(seed, i))
        row = dict(cell)
        row.update(extra)
        row["dev_metric"] = metric
        table.append(row)
        outcomes.append(extra)
        if metric > best_m:
            best_i, best_m = i, metric
    return SweepResult(dict(zip(axes, list(itertools.product(*(grid[a] for a in axes)))[best_i])), best_i, table, outcomes)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_sweep_table(rows: Sequence[dict], path) -> None:
    cols = list(rows[0]) if rows else []
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])


def read_sweep_table(path) -> list[dict]:
    from .errors import ParseError

    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        rows = []
        for n, row in enumerate(reader, start=2):
            try:
                rows.append({k: float(v) for k, v in row.items()})
            except (TypeError, ValueError) as exc:
                raise ParseError(f"non-numeric sweep cell: {exc}", n) from exc
    return rows
