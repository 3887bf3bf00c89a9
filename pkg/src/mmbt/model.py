"""Multimodal bitransformer: input layer, model assembly and heads.

The fused sequence is laid out as::

    [CLS] I_1 .. I_N [SEP] text_1 [SEP] .. text_S [SEP]

[CLS], the image tokens and the first [SEP] form segment 0; text k is
segment k and owns its trailing [SEP].  Positions restart at 0 in every
segment.  Image tokens are I_n = f(img, n) W_n with a separate bias-free
map per grid cell.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .encoders import (
    CLS,
    PAD,
    SEP,
    ImageEncoderConfig,
    image_encode_batch,
    image_encoder_shapes,
    init_image_encoder,
)
from .errors import ConfigMismatch, EmptyInput, ShapeMismatch, TooLong
from .tensor import Tensor
from .transformer import EncoderConfig, encoder_forward, init_layer, layer_shapes

IMAGE_SLOT = -1
TASK_KINDS = ("multiclass", "multilabel")


@dataclass(frozen=True)
class MMBTConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    image: ImageEncoderConfig = field(default_factory=ImageEncoderConfig)
    num_text_segments: int = 1
    vocab_size: int = 64
    num_classes: int = 2
    task_kind: str = "multiclass"
    max_positions: int = 128
    image_first: bool = True
    extra_segment_noise_std: float = 0.1
    init_std: float = 0.02

    def __post_init__(self):
        if self.num_text_segments < 1:
            raise ValueError("need at least one text segment")
        if self.task_kind not in TASK_KINDS:
            raise ValueError(f"task_kind must be one of {TASK_KINDS}")
        if self.num_classes < 1 or self.vocab_size < 5:
            raise ValueError("num_classes >= 1 and vocab_size >= 5 required")

    @property
    def num_segments(self) -> int:
        return self.num_text_segments + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "MMBTConfig":
        d = dict(d)
        d["encoder"] = EncoderConfig(**d.get("encoder", {}))
        d["image"] = ImageEncoderConfig(**d.get("image", {}))
        return cls(**d)


@dataclass
class ModelInput:
    """One example after tokenisation: per-segment id lists and raw pixels."""

    texts: list[list[int] | None]
    image: np.ndarray | None = None  # [C, H, W]


@dataclass
class InputSequence:
    input_vectors: Tensor  # [T, D]
    token_ids: list[int]
    segment_ids: list[int]
    position_ids: list[int]
    mask: list[bool]


@dataclass
class InputBatch:
    input_vectors: Tensor  # [B, T, D]
    token_ids: np.ndarray
    segment_ids: np.ndarray
    position_ids: np.ndarray
    mask: np.ndarray  # bool [B, T]

    def __len__(self) -> int:
        return self.mask.shape[0]


# ---------------------------------------------------------------------------
# input layer


def map_image_embeddings(w_map: Tensor, feats: Tensor) -> Tensor:
    """[..., N, E] features through N independent [E, D] maps -> [..., N, D]."""
    N, E, D = w_map.shape
    if feats.shape[-2:] != (N, E):
        raise ShapeMismatch(f"features {feats.shape} do not fit map of {N} x [{E}, {D}]")
    lead = feats.shape[:-1]
    out = T.reshape(feats, lead + (1, E)) @ w_map
    return T.reshape(out, lead + (D,))


def init_extra_segment(s0, s1, rng: np.random.Generator, noise_std: float) -> np.ndarray:
    s0 = np.asarray(s0, dtype=np.float64)
    s1 = np.asarray(s1, dtype=np.float64)
    mid = 0.5 * (s0 + s1)
    if noise_std == 0:
        return mid
    return mid + rng.normal(0.0, noise_std, size=mid.shape)


def sequence_layout(
    texts: Sequence[Sequence[int] | None], num_image_tokens: int, image_first: bool = True
) -> tuple[list[int], list[int], list[int]]:
    """Token, segment and position ids; image slots carry ``IMAGE_SLOT``."""
    present = [t for t in texts if t is not None]
    if not present and num_image_tokens == 0:
        raise EmptyInput("example has neither text nor image")
    tok, seg, pos = [CLS], [0], [0]

    def image_block():
        if num_image_tokens:
            tok.extend([IMAGE_SLOT] * num_image_tokens + [SEP])
            seg.extend([0] * (num_image_tokens + 1))
            pos.extend(range(1, num_image_tokens + 2))

    if image_first:
        image_block()
    for k, ids in enumerate(texts, start=1):
        if ids is None:
            continue
        block = list(ids) + [SEP]
        tok.extend(block)
        seg.extend([k] * len(block))
        pos.extend(range(len(block)))
    if not image_first and num_image_tokens:
        start = sum(1 for s in seg if s == 0)
        for i in range(num_image_tokens):
            tok.append(IMAGE_SLOT)
            seg.append(0)
            pos.append(start + i)
        tok.append(SEP)
        seg.append(0)
        pos.append(start + num_image_tokens)
    return tok, seg, pos


class TextBackbone:
    """Token/segment/position tables plus the transformer stack."""

    def __init__(self, config: MMBTConfig, rng: np.random.Generator):
        D, std = config.encoder.model_dim, config.init_std
        self.config = config
        self.token_table = Tensor(rng.normal(0.0, std, size=(config.vocab_size, D)), requires_grad=True)
        seg = np.zeros((config.num_segments, D))
        seg[:2] = rng.normal(0.0, std, size=(2, D))
        for i in range(2, config.num_segments):
            seg[i] = init_extra_segment(seg[0], seg[1], rng, config.extra_segment_noise_std)
        self.segment_table = Tensor(seg, requires_grad=True)
        self.position_table = Tensor(
            rng.normal(0.0, std, size=(config.max_positions, D)), requires_grad=True
        )
        self.layers = [init_layer(config.encoder, rng, std) for _ in range(config.encoder.num_layers)]

    @staticmethod
    def shapes(config: MMBTConfig) -> dict[str, dict[str, tuple[int, ...]]]:
        D = config.encoder.model_dim
        text = {"token_table": (config.vocab_size, D)}
        for i in range(config.encoder.num_layers):
            for k, s in layer_shapes(config.encoder).items():
                text[f"layer{i}.{k}"] = s
        emb = {"segment_table": (config.num_segments, D), "position_table": (config.max_positions, D)}
        return {"text_encoder": text, "embeddings": emb}

    def groups(self) -> dict[str, dict[str, Tensor]]:
        text = {"token_table": self.token_table}
        for i, layer in enumerate(self.layers):
            for k, t in layer.items():
                text[f"layer{i}.{k}"] = t
        emb = {"segment_table": self.segment_table, "position_table": self.position_table}
        return {"text_encoder": text, "embeddings": emb}

    def encode(self, batch: InputBatch, training=False, rng=None) -> Tensor:
        return encoder_forward(self.config.encoder, self.layers, batch.input_vectors, batch.mask, training, rng)


def _lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    B, L = ids.shape
    return T.reshape(T.embedding_lookup(table, ids.reshape(-1)), (B, L, table.shape[1]))


def build_inputs(
    config: MMBTConfig,
    backbone: TextBackbone,
    items: Sequence[ModelInput],
    image_params: dict[str, Tensor] | None = None,
    w_map: Tensor | None = None,
) -> InputBatch:
    """Embed a batch of examples into one padded [B, T, D] tensor.

    Without ``image_params``/``w_map`` every image is ignored, which is how
    the text-only model shares this path.
    """
    use_images = image_params is not None and w_map is not None
    N = config.image.num_embeddings if use_images else 0
    layouts = []
    for item in items:
        if len(item.texts) > config.num_text_segments:
            raise ConfigMismatch(f"{len(item.texts)} texts but only {config.num_text_segments} segments")
        n_img = N if (use_images and item.image is not None) else 0
        lay = sequence_layout(item.texts, n_img, config.image_first)
        if len(lay[0]) > config.max_positions:
            raise TooLong(f"sequence of {len(lay[0])} exceeds max_positions={config.max_positions}")
        layouts.append(lay)
    B = len(items)
    L = max(len(lay[0]) for lay in layouts)
    D = config.encoder.model_dim
    tok = np.full((B, L), PAD, dtype=np.int64)
    seg = np.zeros((B, L), dtype=np.int64)
    pos = np.zeros((B, L), dtype=np.int64)
    mask = np.zeros((B, L), dtype=bool)
    for b, (t, s, p) in enumerate(layouts):
        n = len(t)
        tok[b, :n], seg[b, :n], pos[b, :n], mask[b, :n] = t, s, p, True
    is_text = mask & (tok != IMAGE_SLOT)
    tok_safe = np.where(is_text, tok, PAD)

    x = _lookup(backbone.token_table, tok_safe) * T.constant(np.repeat(is_text[..., None], D, axis=-1).astype(float))
    with_img = [b for b, it in enumerate(items) if use_images and it.image is not None]
    if with_img:
        pixels = np.stack([np.asarray(items[b].image, dtype=np.float64) for b in with_img])
        feats = image_encode_batch(config.image, image_params, pixels)
        img_tok = map_image_embeddings(w_map, feats)
        place = np.zeros((B, L, len(with_img) * N))
        for j, b in enumerate(with_img):
            slots = np.flatnonzero(tok[b] == IMAGE_SLOT)
            place[b, slots, j * N + np.arange(N)] = 1.0
        x = x + T.constant(place) @ T.reshape(img_tok, (len(with_img) * N, D))
    x = x + _lookup(backbone.segment_table, seg) + _lookup(backbone.position_table, pos)
    x = x * T.constant(np.repeat(mask[..., None], D, axis=-1).astype(float))
    return InputBatch(x, tok, seg, pos, mask)


def pad_batch(seqs: Sequence[InputSequence]) -> InputBatch:
    """Stack single sequences into a padded batch."""
    L = max(len(s.token_ids) for s in seqs)

    def padded(values, fill, dtype):
        out = np.full((len(seqs), L), fill, dtype=dtype)
        for i, v in enumerate(values):
            out[i, : len(v)] = v
        return out

    x = T.stack_padded([s.input_vectors for s in seqs], L)
    return InputBatch(
        x,
        padded([s.token_ids for s in seqs], PAD, np.int64),
        padded([s.segment_ids for s in seqs], 0, np.int64),
        padded([s.position_ids for s in seqs], 0, np.int64),
        padded([s.mask for s in seqs], False, bool),
    )


# ---------------------------------------------------------------------------
# heads and models


def init_mlp_head(rng: np.random.Generator, in_dim: int, out_dim: int, layers: int = 1, std: float = 0.02):
    p = {}
    for i in range(layers):
        fan_out = out_dim if i == layers - 1 else in_dim
        p[f"w{i}"], p[f"b{i}"] = (
            Tensor(rng.normal(0.0, std, size=(in_dim, fan_out)), requires_grad=True),
            Tensor(np.zeros(fan_out), requires_grad=True),
        )
    return p


def mlp_head_shapes(in_dim: int, out_dim: int, layers: int = 1) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for i in range(layers):
        fan_out = out_dim if i == layers - 1 else in_dim
        shapes[f"w{i}"], shapes[f"b{i}"] = (in_dim, fan_out), (fan_out,)
    return shapes


def mlp_head_forward(head: dict[str, Tensor], x: Tensor) -> Tensor:
    layers = len(head) // 2
    for i in range(layers):
        x = x @ head[f"w{i}"] + head[f"b{i}"]
        if i < layers - 1:
            x = T.relu(x)
    return x


class Model:
    """Common surface: named parameter groups plus ``logits``."""

    kind = "model"
    config: MMBTConfig

    def groups(self) -> dict[str, dict[str, Tensor]]:
        raise NotImplementedError

    def logits(self, items: Sequence[ModelInput], training: bool = False, rng=None) -> Tensor:
        raise NotImplementedError

    def named_parameters(self) -> dict[str, Tensor]:
        return {f"{g}/{k}": t for g, params in self.groups().items() for k, t in params.items()}

    def set_trainable(self, trainable_groups) -> None:
        trainable_groups = set(trainable_groups)
        for g, params in self.groups().items():
            for t in params.values():
                t.requires_grad = g in trainable_groups

    def trainable_groups(self) -> list[str]:
        return [g for g, params in self.groups().items() if all(t.requires_grad for t in params.values())]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_parameters().items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        params = self.named_parameters()
        if set(params) != set(state):
            missing = sorted(set(params) ^ set(state))
            raise ConfigMismatch(f"parameter names differ: {missing[:5]}")
        for k, t in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ConfigMismatch(f"{k}: shape {arr.shape} != {t.shape}")
            t.data[...] = arr


class MMBT(Model):
    kind = "mmbt"

    def __init__(self, config: MMBTConfig, rng: np.random.Generator | int = 0):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self.config = config
        self.backbone = TextBackbone(config, rng)
        self.image_params = init_image_encoder(config.image, rng)
        N, E, D = config.image.num_embeddings, config.image.embed_dim, config.encoder.model_dim
        self.w_map = Tensor(rng.normal(0.0, config.init_std, size=(N, E, D)), requires_grad=True)
        self.head = init_mlp_head(rng, D, config.num_classes, 1, config.init_std)

    @staticmethod
    def shapes(config: MMBTConfig) -> dict[str, dict[str, tuple[int, ...]]]:
        out = TextBackbone.shapes(config)
        img = config.image
        out["image_encoder"] = image_encoder_shapes(img)
        out["image_map"] = {"w_map": (img.num_embeddings, img.embed_dim, config.encoder.model_dim)}
        out["head"] = mlp_head_shapes(config.encoder.model_dim, config.num_classes)
        return out

    def groups(self):
        g = self.backbone.groups()
        g["image_encoder"] = dict(self.image_params)
        g["image_map"] = {"w_map": self.w_map}
        g["head"] = dict(self.head)
        return g

    def build_inputs(self, items: Sequence[ModelInput]) -> InputBatch:
        return build_inputs(self.config, self.backbone, items, self.image_params, self.w_map)

    def build_input(self, texts: Sequence[Sequence[int] | None], image: np.ndarray | None = None) -> InputSequence:
        batch = self.build_inputs([ModelInput(list(texts), image)])
        return InputSequence(
            T.reshape(batch.input_vectors, batch.input_vectors.shape[1:]),
            batch.token_ids[0].tolist(),
            batch.segment_ids[0].tolist(),
            batch.position_ids[0].tolist(),
            batch.mask[0].tolist(),
        )

    def logits(self, items, training=False, rng=None):
        return mmbt_forward(self, self.build_inputs(items), training, rng)


def mmbt_forward(model, batch: InputBatch | Sequence[InputSequence], training=False, rng=None) -> Tensor:
    """Encode, take each example's first output, apply the affine head."""
    if not isinstance(batch, InputBatch):
        batch = pad_batch(batch)
    h = model.backbone.encode(batch, training, rng)
    first = T.select(h, 1, 0)
    return mlp_head_forward(model.head, first)


def build_input(model: MMBT, texts, image=None) -> InputSequence:
    return model.build_input(texts, image)


# ---------------------------------------------------------------------------
# predictions and parameter accounting


def probabilities(logits: np.ndarray, task_kind: str) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if task_kind == "multilabel":
        return T._stable_sigmoid(logits)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def classify(logits, task_kind: str, threshold: float = 0.5):
    """Argmax class (lowest index on ties) or the set of classes above threshold.

    Accepts one logit vector or a [B, C] matrix.
    """
    arr = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if task_kind == "multiclass":
        preds = [int(i) for i in np.argmax(arr, axis=1)]
    elif task_kind == "multilabel":
        probs = T._stable_sigmoid(arr)
        preds = [set(int(c) for c in np.flatnonzero(row > threshold)) for row in probs]
    else:
        raise ValueError(f"unknown task kind {task_kind!r}")
    return preds[0] if single else preds


def count_parameters(model, include_frozen: bool = True, by_group: bool = False):
    """Scalar parameter count of a model, or of a ``{group: {name: shape}}`` map."""
    if isinstance(model, Model):
        counts = {}
        for g, params in model.groups().items():
            counts[g] = sum(t.size for t in params.values() if include_frozen or t.requires_grad)
    else:
        counts = {g: sum(int(np.prod(s)) for s in shapes.values()) for g, shapes in model.items()}
    return counts if by_group else sum(counts.values())
