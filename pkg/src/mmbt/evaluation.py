"""Accuracy, macro/micro F1, prediction files and hard test-set construction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyInput, IdMismatch, ParseError, ShapeMismatch


def accuracy(preds: Sequence, targets: Sequence) -> float:
    if len(preds) != len(targets):
        raise ShapeMismatch("predictions and targets differ in length")
    if not len(preds):
        raise EmptyInput("accuracy of an empty set")
    return sum(int(p == t) for p, t in zip(preds, targets)) / len(preds)


def _f1(tp: int, fp: int, fn: int) -> Fraction:
    denom = 2 * tp + fp + fn
    return Fraction(2 * tp, denom) if denom else Fraction(0)


def f1_scores(preds, targets) -> tuple[float, float]:
    """(macro, micro) F1 over [B, C] bit matrices.

    Per-class F1 is 0 when the class has no predicted or true positives.
    Both scores are exact rationals rounded once to float.
    """
    p = np.asarray(preds, dtype=bool)
    t = np.asarray(targets, dtype=bool)
    if p.shape != t.shape or p.ndim != 2:
        raise ShapeMismatch(f"bit matrices differ: {p.shape} vs {t.shape}")
    tp = (p & t).sum(axis=0)
    fp = (p & ~t).sum(axis=0)
    fn = (~p & t).sum(axis=0)
    per_class = [_f1(int(a), int(b), int(c)) for a, b, c in zip(tp, fp, fn)]
    macro = float(sum(per_class) / len(per_class)) if per_class else 0.0
    micro = float(_f1(int(tp.sum()), int(fp.sum()), int(fn.sum())))
    return macro, micro


def to_bits(label_sets: Sequence, num_classes: int) -> np.ndarray:
    bits = np.zeros((len(label_sets), num_classes), dtype=bool)
    for i, labels in enumerate(label_sets):
        bits[i, list(labels)] = True
    return bits


# ---------------------------------------------------------------------------
# reports and prediction files


@dataclass
class PredictionRecord:
    id: str
    probs: list[float]
    target: int | list[int]  # class index, or bit vector for multilabel

    @property
    def multilabel(self) -> bool:
        return isinstance(self.target, list)


@dataclass
class EvalReport:
    task_kind: str
    metrics: dict[str, float]
    records: list[PredictionRecord] = field(default_factory=list)
    predictions: list = field(default_factory=list)


def evaluate_probs(ids, probs: np.ndarray, targets, task_kind: str, threshold: float = 0.5) -> EvalReport:
    """Metrics from per-class probabilities (softmax rows or sigmoid columns)."""
    probs = np.asarray(probs, dtype=np.float64)
    if task_kind == "multiclass":
        preds = [int(i) for i in np.argmax(probs, axis=1)]
        metrics = {"accuracy": accuracy(preds, list(targets))}
        records = [PredictionRecord(i, p.tolist(), int(t)) for i, p, t in zip(ids, probs, targets)]
    else:
        if not len(probs):
            raise EmptyInput("no predictions")
        bits = probs > threshold
        tbits = np.asarray(targets, dtype=bool)
        macro, micro = f1_scores(bits, tbits)
        metrics = {"macro_f1": macro, "micro_f1": micro}
        preds = [sorted(int(c) for c in np.flatnonzero(row)) for row in bits]
        records = [
            PredictionRecord(i, p.tolist(), [int(x) for x in t]) for i, p, t in zip(ids, probs, tbits)
        ]
    return EvalReport(task_kind, metrics, records, preds)


def write_predictions(records: Sequence[PredictionRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"id": r.id, "probs": r.probs, "target": r.target}) + "\n")


def read_predictions(path) -> list[PredictionRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(PredictionRecord(str(rec["id"]), [float(x) for x in rec["probs"]], rec["target"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad prediction record: {exc}", n) from exc
    return out


# ---------------------------------------------------------------------------
# hardness


def hardness_ground_truth(p_img, p_txt, target) -> float:
    """Probability both unimodal models miss the gold answer.

    Multiclass: (1 - p_I[t]) (1 - p_T[t]).  Multilabel (target is a bit
    vector): product of the mean absolute errors against the target bits.
    """
    p_img = np.asarray(p_img, dtype=np.float64)
    p_txt = np.asarray(p_txt, dtype=np.float64)
    if isinstance(target, (list, tuple, np.ndarray)):
        t = np.asarray(target, dtype=np.float64)
        return float(np.mean(np.abs(p_img - t)) * np.mean(np.abs(p_txt - t)))
    return float((1.0 - p_img[target]) * (1.0 - p_txt[target]))


def hardness_ground_truth_01(p_img, p_txt, target) -> float:
    """Hook: 1 when both argmax predictions are wrong, else 0 (multiclass)."""
    return float(int(np.argmax(p_img)) != target and int(np.argmax(p_txt)) != target)


def hardness_disagreement(p_img, p_txt, multilabel: bool = False) -> float:
    p_img = np.asarray(p_img, dtype=np.float64)
    p_txt = np.asarray(p_txt, dtype=np.float64)
    diff = np.abs(p_img - p_txt)
    return float(diff.mean() if multilabel else 0.5 * diff.sum())


def build_hard_set(scored: Sequence[tuple[str, float]], fraction: float = 0.10) -> list[str]:
    """Top ``ceil(fraction * n)`` ids by descending score, ties by ascending id."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    if not scored:
        raise EmptyInput("no scored examples")
    ranked = sorted(scored, key=lambda s: (-s[1], s[0]))
    k = math.ceil(fraction * len(ranked))
    return [i for i, _ in ranked[:k]]


def score_predictions(
    img: Sequence[PredictionRecord],
    txt: Sequence[PredictionRecord],
    variant: str = "ground_truth",
    scorer: Callable | None = None,
) -> list[tuple[str, float]]:
    """Pair two prediction files by id and score every example."""
    by_id = {r.id: r for r in txt}
    if len(by_id) != len(txt) or {r.id for r in img} != set(by_id) or len(img) != len(txt):
        raise IdMismatch("prediction files do not cover the same ids")
    scored = []
    for r in img:
        other = by_id[r.id]
        if scorer is not None:
            s = scorer(r.probs, other.probs, r.target)
        elif variant == "ground_truth":
            s = hardness_ground_truth(r.probs, other.probs, r.target)
        elif variant == "disagreement":
            s = hardness_disagreement(r.probs, other.probs, multilabel=r.multilabel)
        else:
            raise ValueError(f"unknown hardness variant {variant!r}")
        scored.append((r.id, s))
    return scored


def write_ids(ids: Sequence[str], path) -> None:
    Path(path).write_text("".join(i + "\n" for i in ids), encoding="utf-8")


def read_ids(path) -> list[str]:
    return [line for line in Path(path).read_text(encoding="utf-8").split("\n") if line]
