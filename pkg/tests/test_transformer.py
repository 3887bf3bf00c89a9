import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmbt import tensor as T
from mmbt.errors import ShapeMismatch
from mmbt.tensor import Tensor, grad_check
from mmbt.transformer import EncoderConfig, encoder_forward, init_layer, layer_shapes, mha_forward, transformer_layer_forward


def layer(config, seed=0, std=0.3):
    params = init_layer(config, np.random.default_rng(seed), std=std)
    for k in ("ln1_g", "ln2_g"):
        params[k].data[...] = 1.0 + np.random.default_rng(seed + 1).normal(0, 0.1, size=params[k].shape)
    return params


def loop_attention(x, p, mask, heads):
    """Explicit-loop oracle for multi-head attention on one sequence."""
    Tn, D = x.shape
    dh = D // heads
    q = x @ p["w_q"].data + p["b_q"].data
    k = x @ p["w_k"].data
    v = x @ p["w_v"].data + p["b_v"].data
    ctx = np.zeros((Tn, D))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(Tn):
            logits = []
            for j in range(Tn):
                s = sum(q[i, sl][c] * k[j, sl][c] for c in range(dh)) / math.sqrt(dh)
                logits.append(s if mask[j] else -math.inf)
            m = max(logits)
            w = [math.exp(s - m) for s in logits]
            z = sum(w)
            for j in range(Tn):
                ctx[i, sl] += (w[j] / z) * v[j, sl]
    return ctx @ p["w_o"].data + p["b_o"].data


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(model_dim=10, num_heads=4)
    with pytest.raises(ValueError):
        EncoderConfig(dropout_rate=1.0)


def test_single_position_weight_is_one(rng):
    cfg = EncoderConfig(1, 4, 1, 8)
    _, w = mha_forward(layer(cfg), Tensor(rng.normal(size=(1, 4))), [True], 1, return_weights=True)
    assert w.shape == (1, 1, 1)
    assert w[0, 0, 0] == 1.0


def test_only_position_zero_unmasked(rng):
    cfg = EncoderConfig(1, 8, 2, 8)
    _, w = mha_forward(layer(cfg), Tensor(rng.normal(size=(5, 8))), [True, False, False, False, False], 2, return_weights=True)
    np.testing.assert_allclose(w[:, :, 0], 1.0, atol=1e-12)
    assert np.all(w[:, :, 1:] < 1e-12)


def test_matches_loop_oracle(rng):
    cfg = EncoderConfig(1, 4, 1, 8)
    p = layer(cfg)
    x = rng.normal(size=(3, 4))
    out = mha_forward(p, Tensor(x), [True] * 3, 1).data
    np.testing.assert_allclose(out, loop_attention(x, p, [True] * 3, 1), atol=1e-12)


def test_matches_loop_oracle_multihead_masked(rng):
    cfg = EncoderConfig(1, 8, 2, 8)
    p = layer(cfg, seed=3)
    x = rng.normal(size=(4, 8))
    mask = [True, True, False, True]
    out = mha_forward(p, Tensor(x), mask, 2).data
    np.testing.assert_allclose(out, loop_attention(x, p, mask, 2), atol=1e-9)


def test_mask_length_mismatch(rng):
    cfg = EncoderConfig(1, 4, 1, 8)
    with pytest.raises(ShapeMismatch):
        mha_forward(layer(cfg), Tensor(rng.normal(size=(3, 4))), [True, True], 1)


@given(st.integers(2, 7), st.integers(0, 10_000))
def test_attention_rows_stochastic_and_masked(length, seed):
    r = np.random.default_rng(seed)
    cfg = EncoderConfig(1, 8, 2, 8)
    mask = r.random(length) < 0.6
    mask[r.integers(length)] = True
    x = Tensor(r.normal(size=(length, 8)) * 3)
    _, w = mha_forward(layer(cfg, seed % 7), x, mask, 2, return_weights=True)
    assert np.all(np.abs(w.sum(axis=-1) - 1) <= 1e-9)
    assert np.all(w[:, :, ~mask] < 1e-12)


def test_zero_input_is_finite_bias_pattern():
    cfg = EncoderConfig(1, 8, 2, 8)
    p = layer(cfg)
    for k in p:
        if k.startswith("b_"):
            p[k].data[...] = 0.0
    p["ln2_b"].data[...] = np.arange(8) / 10
    out = transformer_layer_forward(p, Tensor(np.zeros((3, 8))), [True] * 3, cfg).data
    np.testing.assert_allclose(out, np.broadcast_to(np.arange(8) / 10, (3, 8)), atol=1e-12)


def test_eval_mode_is_deterministic(rng):
    cfg = EncoderConfig(1, 8, 2, 8, dropout_rate=0.5)
    p, x = layer(cfg), Tensor(rng.normal(size=(4, 8)))
    a = transformer_layer_forward(p, x, [True] * 4, cfg).data
    b = transformer_layer_forward(p, x, [True] * 4, cfg).data
    assert np.array_equal(a, b)


def test_dropout_only_in_training(rng):
    cfg = EncoderConfig(1, 8, 2, 8, dropout_rate=0.5)
    p, x = layer(cfg), Tensor(rng.normal(size=(4, 8)))
    ev = transformer_layer_forward(p, x, [True] * 4, cfg).data
    tr = transformer_layer_forward(p, x, [True] * 4, cfg, training=True, rng=np.random.default_rng(0)).data
    assert not np.allclose(ev, tr)


def test_layer_grad_check(rng):
    cfg = EncoderConfig(1, 8, 2, 8)
    p = layer(cfg)
    for k in p:
        if k.startswith("b_"):
            p[k].data[...] = rng.normal(0, 0.3, size=p[k].shape)
    x = Tensor(rng.normal(size=(3, 8)), requires_grad=True)
    params = list(p.values()) + [x]
    assert grad_check(lambda: T.sum_(transformer_layer_forward(p, x, [True, True, False], cfg)), params) < 1e-4


def test_no_key_bias():
    # a per-row constant q . b_k would cancel in the softmax
    assert "b_k" not in layer(EncoderConfig(1, 8, 2, 8))
    assert "b_k" not in layer_shapes(EncoderConfig(1, 8, 2, 8))


def test_empty_stack_is_identity(rng):
    x = Tensor(rng.normal(size=(3, 8)))
    assert encoder_forward(EncoderConfig(1, 8, 2, 8), [], x, [True] * 3) is x


def test_padding_invariance(rng):
    cfg = EncoderConfig(2, 8, 2, 8)
    layers = [layer(cfg, s) for s in range(2)]
    x = rng.normal(size=(4, 8))
    base = encoder_forward(cfg, layers, Tensor(x), [True] * 4).data
    padded = np.vstack([x, rng.normal(size=(3, 8))])
    out = encoder_forward(cfg, layers, Tensor(padded), [True] * 4 + [False] * 3).data
    assert np.max(np.abs(out[:4] - base)) < 1e-9


def test_two_layers_finite(rng):
    cfg = EncoderConfig(2, 8, 2, 8)
    out = encoder_forward(cfg, [layer(cfg, s) for s in range(2)], Tensor(rng.normal(size=(6, 8)) * 10), [True] * 6).data
    assert np.isfinite(out).all()
    assert np.abs(out).max() < 100


def test_bidirectional(rng):
    cfg = EncoderConfig(2, 8, 2, 8)
    layers = [layer(cfg, s) for s in range(2)]
    x = rng.normal(size=(5, 8))
    a = encoder_forward(cfg, layers, Tensor(x), [True] * 5).data
    x[-1] += 1.0
    b = encoder_forward(cfg, layers, Tensor(x), [True] * 5).data
    assert np.abs(a[0] - b[0]).max() > 1e-6


def test_batched_equals_single(rng):
    cfg = EncoderConfig(1, 8, 2, 8)
    p = layer(cfg)
    x = rng.normal(size=(2, 5, 8))
    mask = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]], dtype=bool)
    batched = transformer_layer_forward(p, Tensor(x), mask, cfg).data
    for b in range(2):
        single = transformer_layer_forward(p, Tensor(x[b]), mask[b], cfg).data
        np.testing.assert_allclose(batched[b][mask[b]], single[mask[b]], atol=1e-12)
