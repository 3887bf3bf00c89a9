"""Text front end (vocabulary, tokenizer) and the grid-pooled image encoder."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigMismatch
from .tensor import Tensor

PAD, CLS, SEP, UNK = 0, 1, 2, 3
RESERVED = ("[PAD]", "[CLS]", "[SEP]", "[UNK]")


@dataclass
class Vocabulary:
    tokens: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._ids = {t: i + len(RESERVED) for i, t in enumerate(self.tokens)}
        if len(self._ids) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(RESERVED) + len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def token(self, idx: int) -> str:
        if idx < len(RESERVED):
            return RESERVED[idx]
        return self.tokens[idx - len(RESERVED)]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        return cls([line for line in text.split("\n") if line])


def _split(text: str) -> list[str]:
    return text.lower().split()


def build_vocab(corpus: Sequence[str], max_size: int) -> Vocabulary:
    """Most frequent tokens first, ties broken lexicographically."""
    if max_size <= len(RESERVED):
        raise ValueError("max_size must exceed the 4 reserved ids")
    counts = Counter(tok for text in corpus for tok in _split(text))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([tok for tok, _ in ranked[: max_size - len(RESERVED)]])


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    return [vocab.id(tok) for tok in _split(text)]


@dataclass
class SyntheticImage:
    channels: int
    height: int
    width: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64).reshape(-1)
        if self.channels * self.height * self.width != self.data.size:
            raise ValueError("image dims do not match data length")

    def array(self) -> np.ndarray:
        return self.data.reshape(self.channels, self.height, self.width)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SyntheticImage):
            return NotImplemented
        return (
            (self.channels, self.height, self.width) == (other.channels, other.height, other.width)
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True)
class ImageEncoderConfig:
    channels: int = 1
    height: int = 8
    width: int = 8
    patch_size: int = 2
    embed_dim: int = 16
    grid_rows: int = 2
    grid_cols: int = 2

    def __post_init__(self):
        P = self.patch_size
        if P < 1 or self.height % P or self.width % P:
            raise ConfigMismatch("image extents must be multiples of patch_size")
        if not (1 <= self.grid_rows <= self.height // P and 1 <= self.grid_cols <= self.width // P):
            raise ConfigMismatch("pooling grid exceeds the patch grid")

    @property
    def num_embeddings(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def patch_grid(self) -> tuple[int, int]:
        return self.height // self.patch_size, self.width // self.patch_size

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size**2


def grid_for(n: int) -> tuple[int, int]:
    """Most square K x M factorisation of n with K <= M."""
    k = int(np.floor(np.sqrt(n)))
    while n % k:
        k -= 1
    return k, n // k


def bin_bounds(length: int, bins: int) -> list[tuple[int, int]]:
    """Contiguous bins whose sizes differ by at most one, larger bins first."""
    base, extra = divmod(length, bins)
    bounds, start = [], 0
    for i in range(bins):
        size = base + (1 if i < extra else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


def pooling_matrix(config: ImageEncoderConfig) -> np.ndarray:
    """[N, num_patches] averaging weights, bins ordered row-major."""
    gh, gw = config.patch_grid
    rows = bin_bounds(gh, config.grid_rows)
    cols = bin_bounds(gw, config.grid_cols)
    pool = np.zeros((config.num_embeddings, gh * gw))
    for bi, (r0, r1) in enumerate(rows):
        for bj, (c0, c1) in enumerate(cols):
            members = [r * gw + c for r in range(r0, r1) for c in range(c0, c1)]
            pool[bi * config.grid_cols + bj, members] = 1.0 / len(members)
    return pool


def extract_patches(config: ImageEncoderConfig, images: np.ndarray) -> np.ndarray:
    """[B, C, H, W] -> [B, num_patches, C*P*P] with patches in row-major order."""
    B, C, H, W = images.shape
    if (C, H, W) != (config.channels, config.height, config.width):
        raise ConfigMismatch(
            f"image {C}x{H}x{W} does not match encoder {config.channels}x{config.height}x{config.width}"
        )
    P = config.patch_size
    gh, gw = H // P, W // P
    x = images.reshape(B, C, gh, P, gw, P).transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(x.reshape(B, gh * gw, C * P * P))


def init_image_encoder(config: ImageEncoderConfig, rng: np.random.Generator, std: float | None = None):
    std = 1.0 / np.sqrt(config.patch_dim) if std is None else std
    return {
        "w_patch": Tensor(rng.normal(0.0, std, size=(config.patch_dim, config.embed_dim)), requires_grad=True),
        "b_patch": Tensor(np.zeros(config.embed_dim), requires_grad=True),
    }


def image_encoder_shapes(config: ImageEncoderConfig) -> dict[str, tuple[int, ...]]:
    return {"w_patch": (config.patch_dim, config.embed_dim), "b_patch": (config.embed_dim,)}


def patch_features(config: ImageEncoderConfig, params: dict[str, Tensor], images: np.ndarray) -> Tensor:
    patches = T.constant(extract_patches(config, images))
    return T.gelu(patches @ params["w_patch"] + params["b_patch"])


def image_encode_batch(config: ImageEncoderConfig, params: dict[str, Tensor], images: np.ndarray) -> Tensor:
    """[B, C, H, W] pixels -> [B, N, E] grid-pooled embeddings."""
    feats = patch_features(config, params, images)
    return T.constant(pooling_matrix(config)) @ feats


def image_encode(config: ImageEncoderConfig, params: dict[str, Tensor], img: SyntheticImage) -> Tensor:
    """One image -> [N, E], N = grid_rows * grid_cols."""
    out = image_encode_batch(config, params, img.array()[None])
    return T.reshape(out, out.shape[1:])
