"""GPT-style decoder-only transformer, width-robust parameterization, unified loss.

Parameterization follows the maximal-update (muP) convention relative to a
base width w0:

- hidden matrices init with std sigma_base * sqrt(w0 / fan_in),
- token embedding init with std sigma_base (width-independent),
- output projection init with std sigma_base * sqrt(w0 / d),
- logits are multiplied by (w0 / d) / temperature,
- attention scores are scaled by 1 / head_dim (not 1 / sqrt(head_dim)).

With the matching per-group learning rates (see ``group_of``), training
dynamics become width-invariant, which is what makes narrow-proxy
hyperparameter search and loss prediction transfer to wider models.

Position information uses rotary pairs with exponential decay: pair i is
rotated by m * theta_i and scaled by zeta_i^m for queries, zeta_i^(-m) for
keys, so attention logits depend on relative offsets only. The forward pass
centers positions around the sequence midpoint; that common factor cancels
in every attention score and keeps the decay powers representable.

Growth masks (an optional argument everywhere) modulate grown structures:
hidden-axis masks gate the embedding output, every residual contribution,
and all layernorm statistics; head and FFN masks gate the new slices inside
the block; freshly inserted layers fade in through a scalar gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

from . import numerics as ng
from .errors import ConfigError, MaskError, ShapeError
from .numerics import Tensor

if TYPE_CHECKING:  # pragma: no cover
    from .growth import GrowthMaskState


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden_dim: int
    n_layers: int
    n_heads: int
    head_dim: int
    ffn_dim: int
    context_len: int
    softmax_temperature: float = 1.0
    mup_base_width: int = 256
    init_std: float = 1.6e-2
    xpos_decay: float = 0.4  # the gamma_c constant; math.inf disables decay

    def __post_init__(self):
        counts = {
            "vocab_size": self.vocab_size,
            "hidden_dim": self.hidden_dim,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "head_dim": self.head_dim,
            "ffn_dim": self.ffn_dim,
            "context_len": self.context_len,
            "mup_base_width": self.mup_base_width,
        }
        for name, value in counts.items():
            if not (isinstance(value, int) and value >= 1):
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")
        if self.hidden_dim != self.n_heads * self.head_dim:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} != n_heads {self.n_heads} "
                f"* head_dim {self.head_dim}"
            )
        if self.head_dim % 2 != 0:
            raise ConfigError(f"head_dim must be even for rotary pairs, got {self.head_dim}")
        if not self.softmax_temperature > 0:
            raise ConfigError(f"softmax_temperature must be positive, got "
                              f"{self.softmax_temperature}")
        if not self.init_std > 0:
            raise ConfigError(f"init_std must be positive, got {self.init_std}")
        if self.xpos_decay < 0:
            raise ConfigError(f"xpos_decay must be >= 0, got {self.xpos_decay}")

    def with_width(self, hidden_dim: int, n_heads: int | None = None,
                   ffn_dim: int | None = None) -> "ModelConfig":
        """Same family, different width; head_dim stays fixed."""
        if n_heads is None:
            if hidden_dim % self.head_dim != 0:
                raise ConfigError(
                    f"hidden_dim {hidden_dim} not a multiple of head_dim {self.head_dim}"
                )
            n_heads = hidden_dim // self.head_dim
        if ffn_dim is None:
            if self.ffn_dim % self.hidden_dim == 0:
                ffn_dim = hidden_dim * (self.ffn_dim // self.hidden_dim)
            else:
                ffn_dim = 4 * hidden_dim
        return replace(self, hidden_dim=hidden_dim, n_heads=n_heads, ffn_dim=ffn_dim)

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "hidden_dim": self.hidden_dim,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "head_dim": self.head_dim,
            "ffn_dim": self.ffn_dim,
            "context_len": self.context_len,
            "softmax_temperature": self.softmax_temperature,
            "mup_base_width": self.mup_base_width,
            "init_std": self.init_std,
            "xpos_decay": self.xpos_decay,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


def param_names(config: ModelConfig) -> list:
    """Canonical, stable enumeration of parameter tensor names."""
    names = ["embed"]
    for i in range(config.n_layers):
        prefix = f"layer{i}."
        names += [
            prefix + "ln1.gain", prefix + "ln1.bias",
            prefix + "wq", prefix + "wk", prefix + "wv", prefix + "wo",
            prefix + "ln2.gain", prefix + "ln2.bias",
            prefix + "w1", prefix + "w2",
        ]
    names += ["final_ln.gain", "final_ln.bias", "out_proj"]
    return names


def param_shape(name: str, config: ModelConfig) -> tuple:
    d, f, v = config.hidden_dim, config.ffn_dim, config.vocab_size
    if name == "embed":
        return (v, d)
    if name == "out_proj":
        return (d, v)
    leaf = name.split(".", 1)[-1]
    if leaf in ("ln1.gain", "ln1.bias", "ln2.gain", "ln2.bias"):
        return (d,)
    if name in ("final_ln.gain", "final_ln.bias"):
        return (d,)
    if leaf in ("wq", "wk", "wv", "wo"):
        return (d, d)
    if leaf == "w1":
        return (d, f)
    if leaf == "w2":
        return (f, d)
    raise ConfigError(f"unknown parameter name {name!r}")


def group_of(name: str) -> str:
    """Learning-rate/decay group of a parameter.

    hidden_matrix: both axes scale with width; lr is divided by width ratio.
    embedding_like: one width axis plus a fixed axis; lr stays at base.
    norm: gains/biases; lr stays at base, exempt from weight decay.
    """
    leaf = name.split(".")[-1]
    if leaf in ("wq", "wk", "wv", "wo", "w1", "w2"):
        return "hidden_matrix"
    if name in ("embed", "out_proj"):
        return "embedding_like"
    if leaf in ("gain", "bias"):
        return "norm"
    raise ConfigError(f"unknown parameter name {name!r}")


class Parameters:
    """Named float32 arrays in canonical order."""

    def __init__(self, arrays: dict):
        self.arrays = dict(arrays)

    def __getitem__(self, name):
        return self.arrays[name]

    def __contains__(self, name):
        return name in self.arrays

    def names(self):
        return list(self.arrays)

    def copy(self) -> "Parameters":
        return Parameters({k: v.copy() for k, v in self.arrays.items()})

    def n_params(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def assert_finite(self):
        for name, arr in self.arrays.items():
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"parameter {name!r} contains non-finite values")


def init_std_for(name: str, config: ModelConfig) -> float:
    """Init std under the width-robust rule; 0 marks the ones/zeros tensors."""
    group = group_of(name)
    if group == "norm":
        return 0.0
    sigma, w0 = config.init_std, config.mup_base_width
    if name == "embed":
        return sigma
    if name == "out_proj":
        return sigma * math.sqrt(w0 / config.hidden_dim)
    fan_in = param_shape(name, config)[0]
    return sigma * math.sqrt(w0 / fan_in)


def init_parameters(config: ModelConfig, seed: int) -> Parameters:
    rng = np.random.default_rng(seed)
    arrays = {}
    for name in param_names(config):
        shape = param_shape(name, config)
        if group_of(name) == "norm":
            fill = np.ones if name.endswith("gain") else np.zeros
            arrays[name] = fill(shape, dtype=np.float32)
            continue
        std = init_std_for(name, config)
        arrays[name] = (rng.standard_normal(shape) * std).astype(np.float32)
    return Parameters(arrays)


def init_array(name: str, config: ModelConfig, rng: np.random.Generator) -> np.ndarray:
    """One freshly initialized tensor; growth surgery uses this for new slices."""
    shape = param_shape(name, config)
    if group_of(name) == "norm":
        fill = np.ones if name.endswith("gain") else np.zeros
        return fill(shape, dtype=np.float32)
    return (rng.standard_normal(shape) * init_std_for(name, config)).astype(np.float32)


# ---------------------------------------------------------------------------
# Positions.


def xpos_scales(head_dim: int, gamma_c: float, dtype=np.float64):
    """Rotation frequencies theta_i and decay bases zeta_i per rotary pair."""
    if head_dim % 2 != 0:
        raise ConfigError(f"head_dim must be even, got {head_dim}")
    even = np.arange(0, head_dim, 2, dtype=np.float64)  # 2i per pair
    theta = np.power(10000.0, -even / head_dim)
    if math.isinf(gamma_c):
        zeta = np.ones_like(theta)
    else:
        zeta = (even / head_dim + gamma_c) / (1.0 + gamma_c)
    return theta.astype(dtype), zeta.astype(dtype)


def xpos_apply(q: Tensor, k: Tensor, positions, gamma_c: float):
    """Rotate and decay query/key head vectors at the given integer positions.

    q, k: (..., T, head_dim) with rotary pairs at (2i, 2i+1). Queries scale
    by zeta^m, keys by zeta^(-m), so scores see zeta^(m-n) of the offset only.
    """
    if q.shape != k.shape:
        raise ShapeError(f"q/k shapes differ: {q.shape} vs {k.shape}")
    head_dim = q.shape[-1]
    positions = np.asarray(positions)
    if positions.shape != (q.shape[-2],):
        raise ShapeError(
            f"positions shape {positions.shape} != sequence length ({q.shape[-2]},)"
        )
    theta, zeta = xpos_scales(head_dim, gamma_c, dtype=np.float64)
    angles = positions[:, None].astype(np.float64) * theta[None, :]  # (T, pairs)
    cos = ng.constant(np.cos(angles), dtype=q.dtype)
    sin = ng.constant(np.sin(angles), dtype=q.dtype)
    scale = np.power(zeta[None, :], positions[:, None].astype(np.float64))
    q_scale = ng.constant(scale, dtype=q.dtype)
    k_scale = ng.constant(1.0 / scale, dtype=q.dtype)

    def rotate(x, out_scale):
        even = x[..., 0::2]
        odd = x[..., 1::2]
        r_even = (even * cos - odd * sin) * out_scale
        r_odd = (even * sin + odd * cos) * out_scale
        # Interleave pairs back: stack on a trailing axis and flatten.
        stacked = ng.concat(
            [ng.reshape(r_even, r_even.shape + (1,)),
             ng.reshape(r_odd, r_odd.shape + (1,))],
            axis=-1,
        )
        return ng.reshape(stacked, x.shape)

    return rotate(q, q_scale), rotate(k, k_scale)


# ---------------------------------------------------------------------------
# Forward pass.

_NEG_INF = -1e9  # additive causal mask; exp underflows to exactly 0 in float32


class _NoGrowth:
    """Mask provider for ungrown models: everything is live."""

    def hidden_mask(self, dim):
        return np.ones(dim, dtype=np.float32)

    def ffn_mask(self, dim):
        return np.ones(dim, dtype=np.float32)

    def head_mask(self, n_heads):
        return np.ones(n_heads, dtype=np.float32)

    def layer_gate(self, index):
        return 1.0

    def effective_hidden_dim(self, dim):
        return float(dim)


_NO_GROWTH = _NoGrowth()


def _as_leaves(params) -> dict:
    if isinstance(params, Parameters):
        return {
            name: Tensor(arr, requires_grad=False, name=name, validate=False)
            for name, arr in params.arrays.items()
        }
    return params


def wrap_trainable(params: Parameters) -> dict:
    """Parameters as gradient-tracking leaves, for the optimizer loop."""
    return {
        name: Tensor(arr, requires_grad=True, name=name, validate=False)
        for name, arr in params.arrays.items()
    }


def forward(params, config: ModelConfig, tokens, mask_state=None, trace=None) -> Tensor:
    """Logits (batch, T, vocab) for int token ids of shape (T,) or (batch, T)."""
    leaves = _as_leaves(params)
    state = mask_state if mask_state is not None else _NO_GROWTH

    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.ndim != 2:
        raise ShapeError(f"tokens must be 1-D or 2-D, got shape {tokens.shape}")
    batch, seq_len = tokens.shape
    if seq_len > config.context_len:
        raise ShapeError(f"sequence length {seq_len} exceeds context_len "
                         f"{config.context_len}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= config.vocab_size):
        raise ShapeError(
            f"token id out of range [0, {config.vocab_size}): "
            f"min={tokens.min()} max={tokens.max()}"
        )

    d = config.hidden_dim
    n_heads, head_dim = config.n_heads, config.head_dim
    dtype = leaves["embed"].dtype

    hidden_mask = np.asarray(state.hidden_mask(d), dtype=dtype)
    ffn_mask = np.asarray(state.ffn_mask(config.ffn_dim), dtype=dtype)
    head_mask = np.asarray(state.head_mask(n_heads), dtype=dtype)
    hidden_gate = ng.constant(hidden_mask)
    ffn_gate = ng.constant(ffn_mask)
    head_gate = ng.constant(head_mask[None, :, None, None])

    # Centered positions: the common decay factor cancels in attention scores
    # but keeps zeta^(-m) bounded for the longest sequences we support.
    positions = np.arange(seq_len) - (seq_len - 1) // 2
    causal = np.triu(np.full((seq_len, seq_len), _NEG_INF, dtype=dtype), k=1)
    causal_add = ng.constant(causal[None, None, :, :])

    x = ng.embedding(leaves["embed"], tokens) * hidden_gate

    for i in range(config.n_layers):
        prefix = f"layer{i}."
        gate = float(state.layer_gate(i))
        if gate == 0.0:
            if trace is not None:
                trace[f"block{i}"] = x.numpy()
            continue  # a fully dormant inserted layer contributes nothing
        x_in = x

        h1 = ng.masked_layernorm(x, hidden_mask,
                                 leaves[prefix + "ln1.gain"],
                                 leaves[prefix + "ln1.bias"])

        def heads(t):
            split = ng.reshape(t, (batch, seq_len, n_heads, head_dim))
            return ng.transpose(split, (0, 2, 1, 3))  # (B, H, T, hd)

        q = heads(h1 @ leaves[prefix + "wq"])
        k = heads(h1 @ leaves[prefix + "wk"])
        v = heads(h1 @ leaves[prefix + "wv"])
        q, k = xpos_apply(q, k, positions, config.xpos_decay)

        scores = (q @ ng.transpose(k, (0, 1, 3, 2))) * (1.0 / head_dim)
        att = ng.softmax(scores + causal_add, axis=-1)
        ctx = (att @ v) * head_gate
        merged = ng.reshape(ng.transpose(ctx, (0, 2, 1, 3)), (batch, seq_len, d))
        att_out = (merged @ leaves[prefix + "wo"]) * hidden_gate
        x = x + att_out

        h2 = ng.masked_layernorm(x, hidden_mask,
                                 leaves[prefix + "ln2.gain"],
                                 leaves[prefix + "ln2.bias"])
        inner = ng.gelu(h2 @ leaves[prefix + "w1"]) * ffn_gate
        ffn_out = (inner @ leaves[prefix + "w2"]) * hidden_gate
        x = x + ffn_out

        if gate != 1.0:
            # Mid-anneal inserted layer: scale the whole block delta once,
            # so the blend interpolates between identity and the full block.
            x = x_in + (x - x_in) * gate

        if trace is not None:
            trace[f"block{i}"] = x.numpy()

    h = ng.masked_layernorm(x, hidden_mask,
                            leaves["final_ln.gain"], leaves["final_ln.bias"])
    d_eff = float(state.effective_hidden_dim(d))
    multiplier = (config.mup_base_width / d_eff) / config.softmax_temperature
    logits = (h @ leaves["out_proj"]) * multiplier
    if trace is not None:
        trace["logits"] = logits.numpy()
    return logits


def lm_loss(logits: Tensor, targets, loss_mask) -> Tensor:
    """Mean cross-entropy over masked-in positions.

    Teacher samples set the mask 1 only at label positions; plain language
    samples set it 1 everywhere. Gradients at masked-out positions are
    exactly zero.
    """
    targets = np.asarray(targets)
    mask = np.asarray(loss_mask)
    lead = logits.shape[:-1]
    if targets.shape != lead or mask.shape != lead:
        raise ShapeError(
            f"targets {targets.shape} / loss_mask {mask.shape} do not match "
            f"logits leading shape {lead}"
        )
    values = np.unique(mask)
    if values.size and not np.all(np.isin(values, (0.0, 1.0))):
        raise MaskError(f"loss_mask entries must be 0 or 1, got values {values[:8]}")
    total = float(mask.sum())
    if total <= 0:
        raise MaskError("loss_mask selects no positions")
    log_probs = ng.log_softmax(logits, axis=-1)
    picked = ng.take_along_last(log_probs, targets)
    weighted = picked * ng.constant(mask.astype(logits.dtype))
    return weighted.sum() * (-1.0 / total)


def greedy_completion(params, config: ModelConfig, prompt, max_new_tokens: int,
                      stop_token: int | None = None) -> list:
    """Argmax continuation of a prompt; returns the generated ids."""
    ids = list(np.asarray(prompt).ravel())
    out = []
    for _ in range(max_new_tokens):
        window = ids[-config.context_len:]
        logits = forward(params, config, np.asarray(window, dtype=np.int64))
        next_id = int(np.argmax(logits.numpy()[0, -1]))
        out.append(next_id)
        ids.append(next_id)
        if stop_token is not None and next_id == stop_token:
            break
    return out
