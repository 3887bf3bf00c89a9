"""Unimodal and late-fusion comparison models, plus a factory over all kinds."""

from __future__ import annotations

from dataclasses import replace
from enum import Enum
from typing import Sequence

import numpy as np

from . import tensor as T
from .encoders import (
    ImageEncoderConfig,
    image_encode_batch,
    image_encoder_shapes,
    init_image_encoder,
)
from .errors import MissingModality
from .model import (
    MMBT,
    MMBTConfig,
    Model,
    ModelInput,
    TextBackbone,
    build_inputs,
    init_mlp_head,
    mlp_head_forward,
    mlp_head_shapes,
    mmbt_forward,
)
from .tensor import Tensor


class BaselineKind(str, Enum):
    BOW = "bow"
    IMG = "img"
    TEXT_ONLY = "text_only"
    CONCAT_BOW = "concat_bow"
    CONCAT_BERT1 = "concat_bert1"
    CONCAT_BERT2 = "concat_bert2"
    CONCAT_BERT3 = "concat_bert3"

    @property
    def head_layers(self) -> int:
        return int(self.value[-1]) if self.value.startswith("concat_bert") else 1


MODEL_KINDS = ("mmbt",) + tuple(k.value for k in BaselineKind)
# models fine-tuning a transformer get the warmup optimizer
TRANSFORMER_KINDS = {"mmbt", "text_only", "concat_bert1", "concat_bert2", "concat_bert3"}


def pooled_image_config(config: ImageEncoderConfig) -> ImageEncoderConfig:
    return replace(config, grid_rows=1, grid_cols=1)


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def bow_forward(table: Tensor, ids: Sequence[int], head: dict[str, Tensor]) -> Tensor:
    """Sum of token embeddings through the head; empty text sums to zero."""
    out = mlp_head_forward(head, bow_sum(table, [ids]))
    return T.reshape(out, (out.shape[1],))


def bow_sum(table: Tensor, id_lists: Sequence[Sequence[int]]) -> Tensor:
    """[B, Db] summed embeddings via a constant count matrix."""
    counts = np.zeros((len(id_lists), table.shape[0]))
    for b, ids in enumerate(id_lists):
        np.add.at(counts[b], np.asarray(ids, dtype=np.int64), 1.0)
    return T.constant(counts) @ table


def _flat_ids(item: ModelInput) -> list[int] | None:
    present = [ids for ids in item.texts if ids is not None]
    if not present:
        return None
    return [i for ids in present for i in ids]


class BowModel(Model):
    kind = "bow"

    def __init__(self, config: MMBTConfig, rng=0, bow_dim: int = 16):
        rng = _rng(rng)
        self.config, self.bow_dim = config, bow_dim
        self.table = Tensor(rng.normal(0.0, 1.0, size=(config.vocab_size, bow_dim)), requires_grad=True)
        self.head = init_mlp_head(rng, bow_dim, config.num_classes, 1, config.init_std)

    @staticmethod
    def shapes(config: MMBTConfig, bow_dim: int = 16):
        return {"text_encoder": {"bow_table": (config.vocab_size, bow_dim)}, "head": mlp_head_shapes(bow_dim, config.num_classes)}

    def groups(self):
        return {"text_encoder": {"bow_table": self.table}, "head": dict(self.head)}

    def logits(self, items, training=False, rng=None):
        ids = []
        for it in items:
            flat = _flat_ids(it)
            if flat is None:
                raise MissingModality("bag-of-words model needs text")
            ids.append(flat)
        return mlp_head_forward(self.head, bow_sum(self.table, ids))


class ImgModel(Model):
    kind = "img"

    def __init__(self, config: MMBTConfig, rng=0):
        rng = _rng(rng)
        self.config = config
        self.image_config = pooled_image_config(config.image)
        self.image_params = init_image_encoder(self.image_config, rng)
        self.head = init_mlp_head(rng, self.image_config.embed_dim, config.num_classes, 1, config.init_std)

    @staticmethod
    def shapes(config: MMBTConfig):
        return {
            "image_encoder": image_encoder_shapes(pooled_image_config(config.image)),
            "head": mlp_head_shapes(config.image.embed_dim, config.num_classes),
        }

    def groups(self):
        return {"image_encoder": dict(self.image_params), "head": dict(self.head)}

    def embed(self, items) -> Tensor:
        if any(it.image is None for it in items):
            raise MissingModality("image-only model needs an image")
        pixels = np.stack([np.asarray(it.image, dtype=np.float64) for it in items])
        pooled = image_encode_batch(self.image_config, self.image_params, pixels)
        return T.reshape(pooled, (len(items), self.image_config.embed_dim))

    def logits(self, items, training=False, rng=None):
        return mlp_head_forward(self.head, self.embed(items))


def img_only_forward(model: ImgModel, image: np.ndarray) -> Tensor:
    return model.logits([ModelInput([], image)])


class TextOnlyModel(Model):
    """The bitransformer with the image path removed."""

    kind = "text_only"

    def __init__(self, config: MMBTConfig, rng=0, backbone: TextBackbone | None = None, head=None):
        rng = _rng(rng)
        self.config = config
        self.backbone = backbone if backbone is not None else TextBackbone(config, rng)
        self.head = head if head is not None else init_mlp_head(rng, config.encoder.model_dim, config.num_classes, 1, config.init_std)

    @classmethod
    def sharing(cls, mmbt: MMBT) -> "TextOnlyModel":
        return cls(mmbt.config, backbone=mmbt.backbone, head=mmbt.head)

    @staticmethod
    def shapes(config: MMBTConfig):
        out = TextBackbone.shapes(config)
        out["head"] = mlp_head_shapes(config.encoder.model_dim, config.num_classes)
        return out

    def groups(self):
        g = self.backbone.groups()
        g["head"] = dict(self.head)
        return g

    def build_inputs(self, items):
        if any(_flat_ids(it) is None for it in items):
            raise MissingModality("text-only model needs text")
        return build_inputs(self.config, self.backbone, items)

    def logits(self, items, training=False, rng=None):
        return mmbt_forward(self, self.build_inputs(items), training, rng)


def text_only_forward(model: TextOnlyModel, items, training=False, rng=None) -> Tensor:
    return model.logits(items, training, rng)


class ConcatModel(Model):
    """Text representation and pooled image vector concatenated into an MLP head.

    A missing modality contributes a zero block.
    """

    def __init__(self, config: MMBTConfig, rng=0, text: str = "bert", head_layers: int = 1, bow_dim: int = 16):
        rng = _rng(rng)
        self.config, self.text, self.head_layers, self.bow_dim = config, text, head_layers, bow_dim
        self.kind = "concat_bow" if text == "bow" else f"concat_bert{head_layers}"
        if text == "bow":
            self.table = Tensor(rng.normal(0.0, 1.0, size=(config.vocab_size, bow_dim)), requires_grad=True)
            self.text_dim = bow_dim
        else:
            self.backbone = TextBackbone(config, rng)
            self.text_dim = config.encoder.model_dim
        self.image_config = pooled_image_config(config.image)
        self.image_params = init_image_encoder(self.image_config, rng)
        self.concat_dim = self.text_dim + self.image_config.embed_dim
        self.head = init_mlp_head(rng, self.concat_dim, config.num_classes, head_layers, config.init_std)

    @staticmethod
    def shapes(config: MMBTConfig, text: str = "bert", head_layers: int = 1, bow_dim: int = 16):
        if text == "bow":
            out = {"text_encoder": {"bow_table": (config.vocab_size, bow_dim)}}
            text_dim = bow_dim
        else:
            out = TextBackbone.shapes(config)
            text_dim = config.encoder.model_dim
        out["image_encoder"] = image_encoder_shapes(pooled_image_config(config.image))
        out["head"] = mlp_head_shapes(text_dim + config.image.embed_dim, config.num_classes, head_layers)
        return out

    def groups(self):
        g = {"text_encoder": {"bow_table": self.table}} if self.text == "bow" else self.backbone.groups()
        g["image_encoder"] = dict(self.image_params)
        g["head"] = dict(self.head)
        return g

    def text_block(self, items, training=False, rng=None) -> Tensor:
        B = len(items)
        has_text = [i for i, it in enumerate(items) if _flat_ids(it) is not None]
        if not has_text:
            return T.constant(np.zeros((B, self.text_dim)))
        sub = [items[i] for i in has_text]
        if self.text == "bow":
            rep = bow_sum(self.table, [_flat_ids(it) for it in sub])
        else:
            batch = build_inputs(self.config, self.backbone, sub)
            rep = T.select(self.backbone.encode(batch, training, rng), 1, 0)
        return self._scatter(rep, has_text, B)

    def image_block(self, items) -> Tensor:
        B = len(items)
        has_img = [i for i, it in enumerate(items) if it.image is not None]
        if not has_img:
            return T.constant(np.zeros((B, self.image_config.embed_dim)))
        pixels = np.stack([np.asarray(items[i].image, dtype=np.float64) for i in has_img])
        pooled = image_encode_batch(self.image_config, self.image_params, pixels)
        rep = T.reshape(pooled, (len(has_img), self.image_config.embed_dim))
        return self._scatter(rep, has_img, B)

    @staticmethod
    def _scatter(rep: Tensor, rows: list[int], B: int) -> Tensor:
        if len(rows) == B:
            return rep
        place = np.zeros((B, len(rows)))
        place[rows, np.arange(len(rows))] = 1.0
        return T.constant(place) @ rep

    def features(self, items, training=False, rng=None) -> Tensor:
        return T.concat([self.text_block(items, training, rng), self.image_block(items)], axis=1)

    def logits(self, items, training=False, rng=None):
        return mlp_head_forward(self.head, self.features(items, training, rng))


def concat_forward(model: ConcatModel, items, training=False, rng=None) -> Tensor:
    return model.logits(items, training, rng)


def build_model(kind: str, config: MMBTConfig, rng=0, bow_dim: int = 16) -> Model:
    kind = kind.value if isinstance(kind, BaselineKind) else kind
    if kind == "mmbt":
        return MMBT(config, rng)
    if kind == "bow":
        return BowModel(config, rng, bow_dim)
    if kind == "img":
        return ImgModel(config, rng)
    if kind == "text_only":
        return TextOnlyModel(config, rng)
    if kind == "concat_bow":
        return ConcatModel(config, rng, text="bow", bow_dim=bow_dim)
    if kind.startswith("concat_bert"):
        return ConcatModel(config, rng, text="bert", head_layers=int(kind[-1]))
    raise ValueError(f"unknown model kind {kind!r}")


def model_shapes(kind: str, config: MMBTConfig, bow_dim: int = 16):
    """Parameter shapes by group without allocating anything."""
    kind = kind.value if isinstance(kind, BaselineKind) else kind
    if kind == "mmbt":
        return MMBT.shapes(config)
    if kind == "bow":
        return BowModel.shapes(config, bow_dim)
    if kind == "img":
        return ImgModel.shapes(config)
    if kind == "text_only":
        return TextOnlyModel.shapes(config)
    if kind == "concat_bow":
        return ConcatModel.shapes(config, "bow", 1, bow_dim)
    if kind.startswith("concat_bert"):
        return ConcatModel.shapes(config, "bert", int(kind[-1]))
    raise ValueError(f"unknown model kind {kind!r}")
