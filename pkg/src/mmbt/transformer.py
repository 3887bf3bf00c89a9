"""Bidirectional post-norm transformer encoder built on :mod:`mmbt.tensor`."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeMismatch
from .tensor import Tensor

MASK_LOGIT = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 2
    model_dim: int = 32
    num_heads: int = 4
    ffn_dim: int = 64
    dropout_rate: float = 0.1
    layer_norm_eps: float = 1e-12

    def __post_init__(self):
        if self.num_layers < 0 or self.model_dim < 1 or self.num_heads < 1 or self.ffn_dim < 1:
            raise ValueError("encoder extents must be positive")
        if self.model_dim % self.num_heads:
            raise ValueError("model_dim must be divisible by num_heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.layer_norm_eps <= 0:
            raise ValueError("layer_norm_eps must be positive")


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, std: float = 0.02):
    w = Tensor(rng.normal(0.0, std, size=(fan_in, fan_out)), requires_grad=True)
    b = Tensor(np.zeros(fan_out), requires_grad=True)
    return w, b


def init_layer(config: EncoderConfig, rng: np.random.Generator, std: float = 0.02) -> dict[str, Tensor]:
    D, F = config.model_dim, config.ffn_dim
    p: dict[str, Tensor] = {}
    for name in ("q", "k", "v", "o"):
        p[f"w_{name}"], p[f"b_{name}"] = init_linear(rng, D, D, std)
    # a key bias adds q . b_k to a whole softmax row, which cancels; leave it out
    del p["b_k"]
    p["ln1_g"] = Tensor(np.ones(D), requires_grad=True)
    p["ln1_b"] = Tensor(np.zeros(D), requires_grad=True)
    p["w_ff1"], p["b_ff1"] = init_linear(rng, D, F, std)
    p["w_ff2"], p["b_ff2"] = init_linear(rng, F, D, std)
    p["ln2_g"] = Tensor(np.ones(D), requires_grad=True)
    p["ln2_b"] = Tensor(np.zeros(D), requires_grad=True)
    return p


def layer_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    D, F = config.model_dim, config.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {}
    for name in ("q", "k", "v", "o"):
        shapes[f"w_{name}"] = (D, D)
        if name != "k":
            shapes[f"b_{name}"] = (D,)
    shapes.update(ln1_g=(D,), ln1_b=(D,), w_ff1=(D, F), b_ff1=(F,), w_ff2=(F, D), b_ff2=(D,), ln2_g=(D,), ln2_b=(D,))
    return shapes


def _batched(x: Tensor, mask) -> tuple[Tensor, np.ndarray, bool]:
    mask = np.asarray(mask, dtype=bool)
    if x.ndim == 2:
        x = T.reshape(x, (1,) + x.shape)
        mask = mask.reshape(1, -1)
        squeeze = True
    else:
        squeeze = False
    if mask.shape != x.shape[:2]:
        raise ShapeMismatch(f"mask shape {mask.shape} does not match sequence {x.shape[:2]}")
    if not mask.any(axis=1).all():
        raise ValueError("every example needs at least one unmasked position")
    return x, mask, squeeze


def mha_forward(
    params: dict[str, Tensor],
    x: Tensor,
    mask,
    num_heads: int,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    return_weights: bool = False,
):
    """Multi-head self-attention without causal masking.

    ``x`` is [T, D] or [B, T, D]; ``mask`` is True at real positions.
    Padded keys get an additive -1e9 logit before the softmax.
    """
    x, mask, squeeze = _batched(x, mask)
    B, L, D = x.shape
    H = num_heads
    dh = D // H

    def heads(t: Tensor) -> Tensor:
        return T.transpose(T.reshape(t, (B, L, H, dh)), (0, 2, 1, 3))

    q = heads(x @ params["w_q"] + params["b_q"])
    k = heads(x @ params["w_k"])
    v = heads(x @ params["w_v"] + params["b_v"])
    scores = T.scale(q @ T.swap_last(k), 1.0 / math.sqrt(dh))
    bias = np.where(mask, 0.0, MASK_LOGIT)[:, None, None, :]
    scores = scores + T.constant(np.broadcast_to(bias, scores.shape).copy())
    weights = T.softmax_last(scores)
    attn = T.dropout(weights, dropout_rate, rng, training)
    ctx = T.reshape(T.transpose(attn @ v, (0, 2, 1, 3)), (B, L, D))
    out = ctx @ params["w_o"] + params["b_o"]
    if squeeze:
        out = T.reshape(out, (L, D))
    if return_weights:
        w = weights.data[0] if squeeze else weights.data
        return out, w
    return out


def transformer_layer_forward(
    params: dict[str, Tensor],
    x: Tensor,
    mask,
    config: EncoderConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    eps = config.layer_norm_eps
    a = mha_forward(params, x, mask, config.num_heads, config.dropout_rate, training, rng)
    x1 = T.layer_norm(x + a, params["ln1_g"], params["ln1_b"], eps)
    h = T.gelu(x1 @ params["w_ff1"] + params["b_ff1"])
    h = T.dropout(h, config.dropout_rate, rng, training)
    f = h @ params["w_ff2"] + params["b_ff2"]
    return T.layer_norm(x1 + f, params["ln2_g"], params["ln2_b"], eps)


def encoder_forward(
    config: EncoderConfig,
    layers: list[dict[str, Tensor]],
    x: Tensor,
    mask,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    if x.shape[-2] != np.asarray(mask).shape[-1]:
        raise ShapeMismatch("sequence length and mask length differ")
    for params in layers:
        x = transformer_layer_forward(params, x, mask, config, training, rng)
    return x
