"""Synthetic multimodal datasets and the line-delimited record format.

Each task plants latent variables in the text (marker keywords among filler
words) and in the image (quadrant or cell brightness), so that which
modality carries the label is known by construction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoders import SyntheticImage, Vocabulary, tokenize
from .errors import InvalidSpec, MissingField, ParseError, UnknownLabel
from .model import ModelInput

TASKS = ("xor_fusion", "text_dominant", "image_dominant", "multilabel_union", "three_segment")
SPLITS = ("train", "dev", "test")
FILLER = (
    "the a of and to in is it that was for on with as by at from this be or "
    "an are not but had his they you were her all"
).split()
BRIGHT, DARK, PIXEL_JITTER = 0.8, 0.2, 0.05


@dataclass
class Example:
    id: str
    texts: list[str | None]
    image: SyntheticImage | None
    labels: list[str]

    def __post_init__(self):
        if not self.labels:
            raise ValueError(f"example {self.id}: labels must be non-empty")
        if self.image is None and all(t is None for t in self.texts):
            raise ValueError(f"example {self.id}: no modality present")


@dataclass
class Dataset:
    examples: list[Example] = field(default_factory=list)
    split: str = ""

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)


@dataclass
class DatasetMeta:
    task_kind: str
    classes: list[str]
    num_text_segments: int
    image_shape: tuple[int, int, int]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_shape"] = list(self.image_shape)
        return d

    @classmethod
    def from_dict(cls, d) -> "DatasetMeta":
        return cls(d["task_kind"], list(d["classes"]), int(d["num_text_segments"]), tuple(d["image_shape"]))


@dataclass
class GenSpec:
    task: str = "xor_fusion"
    num_classes: int = 2
    sizes: tuple[int, int, int] = (2000, 200, 500)
    text_noise: float = 0.0
    image_noise: float = 0.0
    seed: int = 0
    image_size: int = 8
    missing_image_rate: float = 0.0

    def validate(self) -> None:
        if self.task not in TASKS:
            raise InvalidSpec(f"task: unknown task {self.task!r}")
        if len(self.sizes) != 3 or any(int(s) < 1 for s in self.sizes):
            raise InvalidSpec("sizes: need three split sizes >= 1")
        for name in ("text_noise", "image_noise", "missing_image_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidSpec(f"{name}: must lie in [0, 1]")
        if self.image_size < 4 or self.image_size % 2:
            raise InvalidSpec("image_size: must be an even number >= 4")
        if self.task in ("xor_fusion", "three_segment") and self.num_classes != 2:
            raise InvalidSpec(f"num_classes: {self.task} is binary")
        cells = (self.image_size // 2) ** 2
        if self.task == "multilabel_union" and not 1 <= self.num_classes <= cells:
            raise InvalidSpec(f"num_classes: multilabel_union supports 1..{cells} labels")
        if self.task in ("text_dominant", "image_dominant") and self.num_classes < 2:
            raise InvalidSpec("num_classes: need at least 2")
        if self.task in ("xor_fusion", "three_segment", "multilabel_union") and self.missing_image_rate > 0:
            raise InvalidSpec("missing_image_rate: this task needs every image")

    @classmethod
    def from_dict(cls, d) -> "GenSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"{sorted(unknown)[0]}: unknown field")
        d = dict(d)
        if "sizes" in d:
            try:
                d["sizes"] = tuple(int(x) for x in d["sizes"])
            except (TypeError, ValueError) as exc:
                raise InvalidSpec("sizes: expected three integers") from exc
        try:
            spec = cls(**d)
            spec.validate()
        except TypeError as exc:
            raise InvalidSpec(f"spec: {exc}") from exc
        return spec

    @property
    def task_kind(self) -> str:
        return "multilabel" if self.task == "multilabel_union" else "multiclass"

    @property
    def num_text_segments(self) -> int:
        return 2 if self.task == "three_segment" else 1

    def classes(self) -> list[str]:
        if self.task == "multilabel_union":
            return [f"l{i}" for i in range(self.num_classes)]
        return [f"c{i}" for i in range(self.num_classes)]

    def meta(self) -> DatasetMeta:
        return DatasetMeta(self.task_kind, self.classes(), self.num_text_segments, (1, self.image_size, self.image_size))


# ---------------------------------------------------------------------------
# planting signals


def markers(value: int) -> list[str]:
    return [f"key{value}{c}" for c in "abc"]


def _text(rng: np.random.Generator, value: int) -> str:
    length = int(rng.integers(5, 16))
    n_mark = int(rng.integers(1, 4))
    marks = markers(value)
    words = [marks[int(i)] for i in rng.integers(0, len(marks), n_mark)]
    words += [FILLER[int(i)] for i in rng.integers(0, len(FILLER), length - n_mark)]
    order = rng.permutation(len(words))
    return " ".join(words[i] for i in order)


def _noise_text(rng: np.random.Generator) -> str:
    length = int(rng.integers(5, 16))
    return " ".join(FILLER[int(i)] for i in rng.integers(0, len(FILLER), length))


def _finish(rng: np.random.Generator, img: np.ndarray) -> SyntheticImage:
    img = img + rng.normal(0.0, PIXEL_JITTER, size=img.shape)
    img = np.round(np.clip(img, 0.0, 1.0), 4)
    return SyntheticImage(1, img.shape[0], img.shape[1], img)


def _quadrant_image(rng: np.random.Generator, bit: int, size: int) -> SyntheticImage:
    """bit 0: one bright quadrant; bit 1: three bright quadrants."""
    half = size // 2
    bright = np.zeros(4, dtype=bool)
    chosen = rng.permutation(4)[: (3 if bit else 1)]
    bright[chosen] = True
    img = np.full((size, size), DARK)
    for q in range(4):
        if bright[q]:
            r, c = divmod(q, 2)
            img[r * half : (r + 1) * half, c * half : (c + 1) * half] = BRIGHT
    return _finish(rng, img)


def _level_image(rng: np.random.Generator, cls: int, num_classes: int, size: int) -> SyntheticImage:
    level = DARK + (BRIGHT - DARK) * cls / (num_classes - 1)
    return _finish(rng, np.full((size, size), level))


def _noise_image(rng: np.random.Generator, size: int) -> SyntheticImage:
    return _finish(rng, np.full((size, size), rng.uniform(DARK, BRIGHT)))


def _cell_image(rng: np.random.Generator, bits: np.ndarray, size: int) -> SyntheticImage:
    """Bit c lights the c-th 2x2 cell in row-major order."""
    img = np.full((size, size), DARK)
    per_row = size // 2
    for c, on in enumerate(bits):
        if on:
            r, k = divmod(c, per_row)
            img[2 * r : 2 * r + 2, 2 * k : 2 * k + 2] = BRIGHT
    return _finish(rng, img)


def _flip(rng: np.random.Generator, bit: int, rate: float) -> int:
    return 1 - bit if rate > 0 and rng.random() < rate else bit


def _other_class(rng: np.random.Generator, y: int, num_classes: int) -> int:
    return int((y + rng.integers(1, num_classes)) % num_classes)


def _example(rng: np.random.Generator, spec: GenSpec, ex_id: str) -> Example:
    S, C = spec.image_size, spec.num_classes
    classes = spec.classes()
    if spec.task == "xor_fusion":
        u, v = int(rng.integers(0, 2)), int(rng.integers(0, 2))
        text = _text(rng, _flip(rng, u, spec.text_noise))
        image = _quadrant_image(rng, _flip(rng, v, spec.image_noise), S)
        return Example(ex_id, [text], image, [classes[u ^ v]])
    if spec.task == "three_segment":
        a, b, c = (int(x) for x in rng.integers(0, 2, 3))
        t1 = _text(rng, _flip(rng, a, spec.text_noise))
        t2 = _text(rng, _flip(rng, b, spec.text_noise))
        image = _quadrant_image(rng, _flip(rng, c, spec.image_noise), S)
        return Example(ex_id, [t1, t2], image, [classes[int(a + b + c >= 2)]])
    if spec.task in ("text_dominant", "image_dominant"):
        y = int(rng.integers(0, C))
        if spec.task == "text_dominant":
            shown = _other_class(rng, y, C) if rng.random() < spec.text_noise else y
            text, image = _text(rng, shown), _noise_image(rng, S)
        else:
            shown = _other_class(rng, y, C) if rng.random() < spec.image_noise else y
            text, image = _noise_text(rng), _level_image(rng, shown, C, S)
        if spec.missing_image_rate and rng.random() < spec.missing_image_rate:
            image = None
        return Example(ex_id, [text], image, [classes[y]])
    # multilabel_union
    while True:
        bits = rng.integers(0, 2, C)
        if bits.any():
            break
    text_bits = [_flip(rng, int(x), spec.text_noise) for x in bits]
    img_bits = np.array([_flip(rng, int(x), spec.image_noise) for x in bits])
    words = [markers(c)[int(rng.integers(0, 3))] for c in range(C) if text_bits[c]]
    words += [FILLER[int(i)] for i in rng.integers(0, len(FILLER), int(rng.integers(5, 16)))]
    order = rng.permutation(len(words))
    text = " ".join(words[i] for i in order)
    labels = [classes[c] for c in range(C) if bits[c]]
    return Example(ex_id, [text], _cell_image(rng, img_bits, S), labels)


def generate_dataset(spec: GenSpec) -> dict[str, Dataset]:
    """Deterministic train/dev/test splits; ids are prefixed by split name."""
    spec.validate()
    seeds = np.random.SeedSequence(spec.seed).spawn(len(SPLITS))
    out = {}
    for split, size, ss in zip(SPLITS, spec.sizes, seeds):
        rng = np.random.default_rng(ss)
        out[split] = Dataset([_example(rng, spec, f"{split}-{i:05d}") for i in range(int(size))], split)
    return out


# ---------------------------------------------------------------------------
# file format


def _record(ex: Example) -> dict:
    image = None
    if ex.image is not None:
        image = {
            "channels": ex.image.channels,
            "height": ex.image.height,
            "width": ex.image.width,
            "data": ex.image.data.tolist(),
        }
    return {"id": ex.id, "texts": ex.texts, "image": image, "labels": ex.labels}


def write_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in dataset.examples:
            fh.write(json.dumps(_record(ex), ensure_ascii=False) + "\n")


def _parse(rec, line: int) -> Example:
    if not isinstance(rec, dict):
        raise ParseError("record is not an object", line)
    for key in ("id", "texts", "image", "labels"):
        if key not in rec:
            raise MissingField(f"missing field {key!r}", line)
    image = rec["image"]
    try:
        if image is not None:
            image = SyntheticImage(int(image["channels"]), int(image["height"]), int(image["width"]), image["data"])
        texts = rec["texts"]
        if not isinstance(texts, list) or not all(t is None or isinstance(t, str) for t in texts):
            raise ParseError("texts must be a list of strings or nulls", line)
        return Example(str(rec["id"]), texts, image, [str(x) for x in rec["labels"]])
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(str(exc), line) from exc


def read_dataset(path, split: str = "") -> Dataset:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", n) from exc
            examples.append(_parse(rec, n))
    return Dataset(examples, split)


def write_splits(splits: dict[str, Dataset], meta: DatasetMeta, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, ds in splits.items():
        p = out_dir / f"{name}.jsonl"
        write_dataset(ds, p)
        paths.append(p)
    (out_dir / "meta.json").write_text(json.dumps(meta.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def read_meta(data_dir) -> DatasetMeta:
    return DatasetMeta.from_dict(json.loads((Path(data_dir) / "meta.json").read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# model-facing views


def label_counts(dataset: Dataset, classes: Sequence[str]) -> list[int]:
    index = {c: i for i, c in enumerate(classes)}
    counts = [0] * len(classes)
    for ex in dataset.examples:
        for lab in ex.labels:
            if lab not in index:
                raise UnknownLabel(lab)
            counts[index[lab]] += 1
    return counts


def targets(dataset: Dataset, classes: Sequence[str], task_kind: str):
    index = {c: i for i, c in enumerate(classes)}
    try:
        if task_kind == "multiclass":
            return [index[ex.labels[0]] for ex in dataset.examples]
        bits = np.zeros((len(dataset), len(classes)), dtype=bool)
        for i, ex in enumerate(dataset.examples):
            bits[i, [index[lab] for lab in ex.labels]] = True
        return bits
    except KeyError as exc:
        raise UnknownLabel(str(exc)) from exc


def model_inputs(dataset: Dataset, vocab: Vocabulary) -> list[ModelInput]:
    out = []
    for ex in dataset.examples:
        texts = [None if t is None else tokenize(t, vocab) for t in ex.texts]
        image = None if ex.image is None else ex.image.array()
        out.append(ModelInput(texts, image))
    return out


def corpus(dataset: Dataset) -> list[str]:
    return [t for ex in dataset.examples for t in ex.texts if t is not None]
