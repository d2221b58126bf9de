"""Decoder forward/loss contracts: oracle match, causality, positions, scaling."""

import math

import numpy as np
import pytest

import growlab.model as gm
import growlab.numerics as ng
from growlab.errors import ConfigError, MaskError, ShapeError

from oracle_model import oracle_forward


def tiny_config(**overrides):
    base = dict(vocab_size=64, hidden_dim=32, n_layers=2, n_heads=2, head_dim=16,
                ffn_dim=128, context_len=16, softmax_temperature=2.0,
                mup_base_width=32, init_std=0.02)
    base.update(overrides)
    return gm.ModelConfig(**base)


# ---------------------------------------------------------------------------
# Configuration and initialization.


def test_config_validation():
    with pytest.raises(ConfigError):
        tiny_config(hidden_dim=33)  # not heads * head_dim
    with pytest.raises(ConfigError):
        tiny_config(head_dim=15, hidden_dim=30)  # odd head_dim
    with pytest.raises(ConfigError):
        tiny_config(softmax_temperature=0.0)
    with pytest.raises(ConfigError):
        tiny_config(init_std=-1.0)
    cfg = tiny_config()
    assert gm.ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_with_width_scales_family():
    cfg = tiny_config()
    wide = cfg.with_width(64)
    assert wide.n_heads == 4 and wide.head_dim == 16 and wide.ffn_dim == 256
    assert wide.mup_base_width == cfg.mup_base_width


def test_init_std_rules():
    cfg = tiny_config(hidden_dim=64, n_heads=4, ffn_dim=256, mup_base_width=64)
    sigma = cfg.init_std
    # At width == base width, hidden std equals sigma exactly.
    assert gm.init_std_for("layer0.wq", cfg) == pytest.approx(sigma)
    quad = gm.ModelConfig(**{**cfg.to_dict(), "hidden_dim": 256, "n_heads": 16,
                             "ffn_dim": 1024})
    # 4x the base width halves the hidden std.
    assert gm.init_std_for("layer0.wq", quad) == pytest.approx(sigma / 2)
    assert gm.init_std_for("embed", quad) == pytest.approx(sigma)
    assert gm.init_std_for("out_proj", quad) == pytest.approx(sigma / 2)
    # w2 reads its own fan-in (the FFN width).
    assert gm.init_std_for("layer0.w2", quad) == pytest.approx(
        sigma * math.sqrt(64 / 1024))


def test_init_determinism_and_measured_std():
    cfg = tiny_config(hidden_dim=128, n_heads=8, ffn_dim=512)
    a = gm.init_parameters(cfg, seed=11)
    b = gm.init_parameters(cfg, seed=11)
    for name in a.names():
        assert np.array_equal(a[name], b[name]), name
    c = gm.init_parameters(cfg, seed=12)
    assert not np.array_equal(a["embed"], c["embed"])
    measured = a["layer0.wq"].std()
    assert measured == pytest.approx(gm.init_std_for("layer0.wq", cfg), rel=0.05)
    assert np.all(a["layer1.ln1.gain"] == 1.0)
    assert np.all(a["layer1.ln1.bias"] == 0.0)


def test_parameter_names_cover_shapes():
    cfg = tiny_config()
    params = gm.init_parameters(cfg, 0)
    names = gm.param_names(cfg)
    assert params.names() == names
    for name in names:
        assert params[name].shape == gm.param_shape(name, cfg)
        assert params[name].dtype == np.float32
    assert {gm.group_of(n) for n in names} == {
        "hidden_matrix", "embedding_like", "norm"}


# ---------------------------------------------------------------------------
# Forward pass.


def test_forward_matches_straight_line_oracle():
    cfg = tiny_config()
    params = gm.init_parameters(cfg, seed=3)
    tokens = np.random.default_rng(5).integers(0, cfg.vocab_size, size=(2, 12))
    got = gm.forward(params, cfg, tokens).numpy()
    want = oracle_forward(params.arrays, cfg, tokens)
    assert np.max(np.abs(got - want)) <= 1e-5


def test_causality_exact():
    cfg = tiny_config()
    params = gm.init_parameters(cfg, seed=3)
    rng = np.random.default_rng(7)
    tokens = rng.integers(0, cfg.vocab_size, size=(2, 14))
    base = gm.forward(params, cfg, tokens).numpy()
    for t in (3, 7, 13):
        bumped = tokens.copy()
        bumped[:, t] = (bumped[:, t] + 1) % cfg.vocab_size
        out = gm.forward(params, cfg, bumped).numpy()
        assert np.array_equal(out[:, :t], base[:, :t]), f"leak before position {t}"
        assert np.max(np.abs(out[:, t:] - base[:, t:])) > 0


def test_temperature_scaling():
    cfg = tiny_config(softmax_temperature=1.0)
    params = gm.init_parameters(cfg, seed=4)
    tokens = np.arange(10) % cfg.vocab_size
    base = gm.forward(params, cfg, tokens).numpy()
    doubled = gm.forward(
        params, gm.ModelConfig(**{**cfg.to_dict(), "softmax_temperature": 2.0}), tokens
    ).numpy()
    assert np.allclose(doubled, base / 2.0, rtol=1e-6, atol=0)
    assert np.array_equal(np.argmax(doubled, axis=-1), np.argmax(base, axis=-1))


def test_output_multiplier_base_width_identity():
    cfg = tiny_config(mup_base_width=32)  # w0 == d: multiplier 1
    params = gm.init_parameters(cfg, seed=5)
    tokens = np.arange(8)
    unit = gm.forward(params, cfg, tokens).numpy()
    twice = gm.forward(
        params, gm.ModelConfig(**{**cfg.to_dict(), "mup_base_width": 64}), tokens
    ).numpy()
    assert np.array_equal(twice, 2.0 * unit)


def test_logit_rms_shrinks_inversely_with_width():
    # Init-time logit scale goes as 1/width for fixed base width: each
    # doubling of width halves the RMS (the coordinate-check precondition
    # that wide models never start louder than narrow ones).
    tokens = np.random.default_rng(0).integers(0, 64, size=(4, 16))
    rms = {}
    for width in (64, 128, 256):
        cfg = gm.ModelConfig(vocab_size=64, hidden_dim=width, n_layers=2,
                             n_heads=width // 16, head_dim=16, ffn_dim=4 * width,
                             context_len=16, softmax_temperature=1.0,
                             mup_base_width=64, init_std=0.02)
        params = gm.init_parameters(cfg, seed=9)
        logits = gm.forward(params, cfg, tokens).numpy()
        rms[width] = float(np.sqrt(np.mean(logits ** 2)))
    assert rms[64] / rms[128] == pytest.approx(2.0, rel=0.15)
    assert rms[128] / rms[256] == pytest.approx(2.0, rel=0.15)


def test_forward_input_validation():
    cfg = tiny_config()
    params = gm.init_parameters(cfg, seed=0)
    with pytest.raises(ShapeError):
        gm.forward(params, cfg, np.zeros(cfg.context_len + 1, dtype=np.int64))
    with pytest.raises(ShapeError):
        gm.forward(params, cfg, np.array([0, cfg.vocab_size]))
    with pytest.raises(ShapeError):
        gm.forward(params, cfg, np.array([0, -1]))


def test_forward_trace_records_blocks():
    cfg = tiny_config()
    params = gm.init_parameters(cfg, seed=0)
    trace = {}
    gm.forward(params, cfg, np.arange(6), trace=trace)
    assert set(trace) == {"block0", "block1", "logits"}
    assert trace["block0"].shape == (1, 6, cfg.hidden_dim)


# ---------------------------------------------------------------------------
# Rotary-with-decay positions.


def _rand_qk(rng, seq_len, head_dim):
    q = ng.Tensor(rng.standard_normal((1, seq_len, head_dim)))
    k = ng.Tensor(rng.standard_normal((1, seq_len, head_dim)))
    return q, k


def test_xpos_identity_at_position_zero():
    rng = np.random.default_rng(0)
    q, k = _rand_qk(rng, 3, 8)
    q2, k2 = gm.xpos_apply(q, k, np.zeros(3, dtype=np.int64), 0.4)
    assert np.array_equal(q2.numpy(), q.numpy())
    assert np.array_equal(k2.numpy(), k.numpy())


def test_xpos_pure_rotation_preserves_norm():
    rng = np.random.default_rng(1)
    q, k = _rand_qk(rng, 5, 8)
    q2, k2 = gm.xpos_apply(q, k, np.arange(5), math.inf)
    assert np.allclose(np.linalg.norm(q2.numpy(), axis=-1),
                       np.linalg.norm(q.numpy(), axis=-1), rtol=1e-12)
    assert np.allclose(np.linalg.norm(k2.numpy(), axis=-1),
                       np.linalg.norm(k.numpy(), axis=-1), rtol=1e-12)


def test_xpos_relative_shift_property():
    rng = np.random.default_rng(2)
    head_dim = 8
    qv = rng.standard_normal(head_dim)
    kv = rng.standard_normal(head_dim)

    def score(m, n):
        q = ng.Tensor(np.stack([qv, qv])[None])
        k = ng.Tensor(np.stack([kv, kv])[None])
        q2, k2 = gm.xpos_apply(q, k, np.array([m, n]), 0.4)
        return float(q2.numpy()[0, 0] @ k2.numpy()[0, 1])

    for _ in range(100):
        m = int(rng.integers(0, 40))
        n = int(rng.integers(0, 40))
        delta = int(rng.integers(0, 20))
        s0 = score(m, n)
        s1 = score(m + delta, n + delta)
        assert abs(s1 - s0) <= 1e-5 * max(1.0, abs(s0)), (m, n, delta)


def test_xpos_rejects_odd_head_dim():
    rng = np.random.default_rng(3)
    q = ng.Tensor(rng.standard_normal((1, 2, 7)))
    with pytest.raises(ConfigError):
        gm.xpos_apply(q, q, np.arange(2), 0.4)


# ---------------------------------------------------------------------------
# Loss.


def test_lm_loss_uniform_logits():
    vocab = 64
    logits = ng.Tensor(np.zeros((2, 5, vocab), dtype=np.float32))
    targets = np.ones((2, 5), dtype=np.int64)
    loss = gm.lm_loss(logits, targets, np.ones((2, 5)))
    assert loss.item() == pytest.approx(math.log(vocab), rel=1e-6)


def test_lm_loss_near_delta():
    vocab = 16
    targets = np.array([[3, 7]])
    logits = np.zeros((1, 2, vocab), dtype=np.float32)
    logits[0, 0, 3] = 1e4
    logits[0, 1, 7] = 1e4
    loss = gm.lm_loss(ng.Tensor(logits), targets, np.ones((1, 2)))
    assert loss.item() <= 1e-4


def test_lm_loss_single_position_hand_computed():
    # 4-token vocabulary, mask restricted to position 1.
    logits_row = np.array([0.5, -0.25, 1.5, 0.0])
    logits = np.zeros((1, 2, 4), dtype=np.float64)
    logits[0, 1] = logits_row
    targets = np.array([[0, 2]])
    mask = np.array([[0.0, 1.0]])
    z = np.exp(logits_row - logits_row.max())
    hand = -math.log(z[2] / z.sum())
    loss = gm.lm_loss(ng.Tensor(logits), targets, mask)
    assert loss.item() == pytest.approx(hand, rel=1e-12)


def test_lm_loss_masked_positions_have_zero_gradient():
    rng = np.random.default_rng(4)
    logits_data = rng.standard_normal((1, 4, 8))
    logits = ng.Tensor(logits_data, requires_grad=True)
    targets = rng.integers(0, 8, size=(1, 4))
    mask = np.array([[1.0, 0.0, 1.0, 0.0]])
    gm.lm_loss(logits, targets, mask).backward()
    grads = logits.grad
    assert np.all(grads[0, 1] == 0.0) and np.all(grads[0, 3] == 0.0)
    assert np.max(np.abs(grads[0, 0])) > 0


def test_lm_loss_errors():
    logits = ng.Tensor(np.zeros((1, 3, 4)))
    targets = np.zeros((1, 3), dtype=np.int64)
    with pytest.raises(MaskError):
        gm.lm_loss(logits, targets, np.zeros((1, 3)))
    with pytest.raises(MaskError):
        gm.lm_loss(logits, targets, np.full((1, 3), 0.5))
    with pytest.raises(ShapeError):
        gm.lm_loss(logits, np.zeros((1, 2), dtype=np.int64), np.ones((1, 3)))


# ---------------------------------------------------------------------------
# Full-model gradient check (float64 end to end).


def test_tiny_transformer_gradients_match_finite_differences():
    cfg = gm.ModelConfig(vocab_size=11, hidden_dim=8, n_layers=1, n_heads=2,
                         head_dim=4, ffn_dim=16, context_len=6,
                         softmax_temperature=1.3, mup_base_width=8, init_std=0.08)
    params = gm.init_parameters(cfg, seed=6)
    arrays = {k: v.astype(np.float64) for k, v in params.arrays.items()}
    rng = np.random.default_rng(8)
    tokens = rng.integers(0, cfg.vocab_size, size=(1, 5))
    targets = rng.integers(0, cfg.vocab_size, size=(1, 5))
    mask = np.array([[1.0, 1.0, 0.0, 1.0, 1.0]])

    def build(leaves):
        return gm.lm_loss(gm.forward(leaves, cfg, tokens), targets, mask)

    _, grads = ng.evaluate_with_gradients(build, arrays)
    for name in gm.param_names(cfg):
        def f(value, _name=name):
            alt = {k: ng.Tensor(v) for k, v in arrays.items()}
            alt[_name] = ng.Tensor(value)
            return float(build(alt).numpy())

        fd = ng.finite_difference_gradient(f, arrays[name], eps=1e-3)
        ad = grads[name]
        denom = max(np.linalg.norm(fd), 1e-6)
        rel = np.linalg.norm(ad - fd) / denom
        assert rel <= 1e-4, f"{name}: relative gradient error {rel:.3e}"


def test_greedy_completion_deterministic():
    cfg = tiny_config()
    params = gm.init_parameters(cfg, seed=1)
    prompt = np.arange(5)
    a = gm.greedy_completion(params, cfg, prompt, max_new_tokens=4)
    b = gm.greedy_completion(params, cfg, prompt, max_new_tokens=4)
    assert a == b and len(a) == 4
