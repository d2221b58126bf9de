"""Straight-line float64 reimplementation of the decoder forward pass.

No autodiff, no shared code with the package beyond numpy: plain loops over
batch rows, heads, and positions. Used as the independent oracle for the
model's forward pass.
"""

import math

import numpy as np


def _erf_gelu(x):
    return x * 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _layernorm_rows(x, gain, bias, eps=1e-5):
    out = np.zeros_like(x)
    for r in range(x.shape[0]):
        row = x[r]
        mu = row.mean()
        var = ((row - mu) ** 2).mean()
        out[r] = gain * (row - mu) / math.sqrt(var + eps) + bias
    return out


def oracle_forward(arrays, config, tokens):
    """Logits (batch, T, vocab) computed with explicit per-position loops."""
    d = config.hidden_dim
    n_heads, head_dim = config.n_heads, config.head_dim
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    batch, seq_len = tokens.shape

    pairs = np.arange(0, head_dim, 2, dtype=np.float64)
    theta = 10000.0 ** (-pairs / head_dim)
    if math.isinf(config.xpos_decay):
        zeta = np.ones_like(theta)
    else:
        zeta = (pairs / head_dim + config.xpos_decay) / (1.0 + config.xpos_decay)
    positions = np.arange(seq_len) - (seq_len - 1) // 2

    def rotate(vec, position, invert):
        out = np.zeros_like(vec)
        for p in range(head_dim // 2):
            angle = position * theta[p]
            c, s = math.cos(angle), math.sin(angle)
            scale = zeta[p] ** (-position if invert else position)
            even, odd = vec[2 * p], vec[2 * p + 1]
            out[2 * p] = (even * c - odd * s) * scale
            out[2 * p + 1] = (even * s + odd * c) * scale
        return out

    w = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
    logits = np.zeros((batch, seq_len, config.vocab_size))

    for b in range(batch):
        x = w["embed"][tokens[b]]  # (T, d)
        for layer in range(config.n_layers):
            pre = f"layer{layer}."
            h1 = _layernorm_rows(x, w[pre + "ln1.gain"], w[pre + "ln1.bias"])
            q_all = h1 @ w[pre + "wq"]
            k_all = h1 @ w[pre + "wk"]
            v_all = h1 @ w[pre + "wv"]
            merged = np.zeros((seq_len, d))
            for head in range(n_heads):
                lo, hi = head * head_dim, (head + 1) * head_dim
                q_rot = np.stack([
                    rotate(q_all[t, lo:hi], positions[t], invert=False)
                    for t in range(seq_len)
                ])
                k_rot = np.stack([
                    rotate(k_all[t, lo:hi], positions[t], invert=True)
                    for t in range(seq_len)
                ])
                for t in range(seq_len):
                    scores = np.array([
                        q_rot[t] @ k_rot[j] / head_dim for j in range(t + 1)
                    ])
                    scores -= scores.max()
                    weights = np.exp(scores)
                    weights /= weights.sum()
                    merged[t, lo:hi] = sum(
                        weights[j] * v_all[j, lo:hi] for j in range(t + 1)
                    )
            x = x + merged @ w[pre + "wo"]
            h2 = _layernorm_rows(x, w[pre + "ln2.gain"], w[pre + "ln2.bias"])
            inner = np.vectorize(_erf_gelu)(h2 @ w[pre + "w1"])
            x = x + inner @ w[pre + "w2"]
        h = _layernorm_rows(x, w["final_ln.gain"], w["final_ln.bias"])
        multiplier = (config.mup_base_width / d) / config.softmax_temperature
        logits[b] = multiplier * (h @ w["out_proj"])
    return logits
