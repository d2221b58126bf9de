"""Function-preserving growth operators applied as checkpoint surgery.

A grown model must compute the same function as its parent until training
moves it away. Every enlarged axis carries a mask entry whose gate m rises
linearly from 0 to 1 over a token budget: at m=0 the new hidden and ffn
dimensions are zeroed out of every contribution (embedding output, residual
writes, layernorm statistics), new heads are zeroed after softmax, and
inserted layers are skipped outright, so the grown network's logits match
the parent's to float32 precision. Old weights are embedded bit-identically
at their original indices; new slices draw from the standard init at the
target width. The masks, not the initialization, carry preservation.

Surgery is pure checkpoint-to-checkpoint transformation: no training state
is touched beyond zeroing optimizer moments for the new slices.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from .checkpoint import Checkpoint
from .errors import ConfigError, GrowthError
from .model import (ModelConfig, Parameters, forward, init_array, param_names,
                    param_shape)

_AXIS_KINDS = ("hidden_dim", "ffn_dim", "n_heads", "layer")


@dataclass(frozen=True)
class AxisMask:
    """One growth event on one axis, with its annealing clock."""

    kind: str
    old_size: int
    new_size: int
    anneal_tokens: int
    tokens_elapsed: int = 0
    layer_index: int | None = None

    def __post_init__(self):
        if self.kind not in _AXIS_KINDS:
            raise GrowthError(f"unknown mask axis kind {self.kind!r}")
        if self.new_size < self.old_size:
            raise GrowthError(f"mask entry shrinks {self.kind}: "
                              f"{self.old_size} -> {self.new_size}")
        if self.anneal_tokens < 1:
            raise GrowthError("anneal_tokens must be >= 1")
        if self.tokens_elapsed < 0:
            raise GrowthError("tokens_elapsed must be >= 0")
        if (self.kind == "layer") != (self.layer_index is not None):
            raise GrowthError("layer_index is set exactly for layer entries")

    @property
    def m(self) -> float:
        """Linear annealing gate: 0 at birth, 1 once the budget is consumed."""
        if self.tokens_elapsed >= self.anneal_tokens:
            return 1.0
        return self.tokens_elapsed / self.anneal_tokens

    def to_dict(self) -> dict:
        return {"kind": self.kind, "old_size": self.old_size,
                "new_size": self.new_size, "anneal_tokens": self.anneal_tokens,
                "tokens_elapsed": self.tokens_elapsed,
                "layer_index": self.layer_index}


@dataclass(frozen=True)
class GrowthMaskState:
    """All growth events so far; the forward pass reads masks from here.

    Implements the mask-provider protocol the model consumes: hidden_mask,
    ffn_mask, head_mask, layer_gate, effective_hidden_dim. An empty state
    (fresh checkpoint) yields all-ones masks and unit gates.
    """

    entries: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def _axis_mask(self, kind: str, dim: int) -> np.ndarray:
        mask = np.ones(dim, dtype=np.float32)
        for e in self.entries:
            if e.kind != kind:
                continue
            if e.new_size > dim:
                raise GrowthError(f"mask entry for {kind} covers size "
                                  f"{e.new_size} but the model has {dim}")
            mask[e.old_size:e.new_size] *= np.float32(e.m)
        return mask

    def hidden_mask(self, dim: int) -> np.ndarray:
        return self._axis_mask("hidden_dim", dim)

    def ffn_mask(self, dim: int) -> np.ndarray:
        return self._axis_mask("ffn_dim", dim)

    def head_mask(self, n_heads: int) -> np.ndarray:
        return self._axis_mask("n_heads", n_heads)

    def layer_gate(self, index: int) -> float:
        gate = 1.0
        for e in self.entries:
            if e.kind == "layer" and e.layer_index == index:
                gate *= e.m
        return gate

    def effective_hidden_dim(self, dim: int) -> float:
        """Width visible at the output: fully live dims plus annealed fractions."""
        eff = float(dim)
        for e in self.entries:
            if e.kind == "hidden_dim":
                eff -= (1.0 - e.m) * (e.new_size - e.old_size)
        return eff

    def advanced(self, token_delta: int) -> "GrowthMaskState":
        if token_delta < 0:
            raise GrowthError("token delta must be >= 0")
        return GrowthMaskState(tuple(
            replace(e, tokens_elapsed=e.tokens_elapsed + int(token_delta))
            for e in self.entries))

    def merged(self, new_entries) -> "GrowthMaskState":
        return GrowthMaskState(self.entries + tuple(new_entries))

    def fully_annealed(self) -> bool:
        return all(e.m == 1.0 for e in self.entries)

    def to_dicts(self) -> list:
        return [e.to_dict() for e in self.entries]

    @classmethod
    def from_dicts(cls, dicts) -> "GrowthMaskState":
        return cls(tuple(AxisMask(**d) for d in dicts))


def anneal_masks(state: GrowthMaskState, token_delta: int) -> GrowthMaskState:
    """Advance every annealing clock by the tokens just consumed."""
    return state.advanced(token_delta)


# ---------------------------------------------------------------------------
# Surgery.


def _check_family(current: ModelConfig, target: ModelConfig) -> None:
    """Growth changes width/depth only; everything else must match."""
    fixed = ("vocab_size", "context_len", "softmax_temperature",
             "mup_base_width", "init_std", "xpos_decay")
    for f in fixed:
        if getattr(current, f) != getattr(target, f):
            raise GrowthError(f"growth cannot change {f}: "
                              f"{getattr(current, f)} -> {getattr(target, f)}")
    if current.head_dim != target.head_dim:
        raise GrowthError(f"changing head_dim is unsupported: "
                          f"{current.head_dim} -> {target.head_dim}")


def _old_block(name: str, current: ModelConfig) -> tuple:
    """Index of the parent tensor inside its enlarged counterpart."""
    d, f = current.hidden_dim, current.ffn_dim
    if name == "embed":
        return (slice(None), slice(0, d))
    if name == "out_proj":
        return (slice(0, d), slice(None))
    leaf = name.split(".")[-1]
    if leaf in ("gain", "bias"):
        return (slice(0, d),)
    if leaf in ("wq", "wk", "wv", "wo"):
        return (slice(0, d), slice(0, d))
    if leaf == "w1":
        return (slice(0, d), slice(0, f))
    if leaf == "w2":
        return (slice(0, f), slice(0, d))
    raise GrowthError(f"unknown parameter name {name!r}")


def grow_width(ckpt: Checkpoint, target: ModelConfig,
               anneal_tokens: int = 1) -> Checkpoint:
    """Enlarge hidden/ffn/head axes in place, masks carrying preservation.

    Old entries keep their exact indices (heads append after existing heads,
    so the old head block is the leading hidden slice). New rows and columns
    are drawn from the standard initializer at the target width and start
    fully masked. A no-op target leaves parameters and RNG untouched and
    records a degenerate mask entry.
    """
    cur = ckpt.config
    _check_family(cur, target)
    if target.n_layers != cur.n_layers:
        raise GrowthError("grow_width cannot change layer count; "
                          "use grow_checkpoint for depth")
    for axis in ("hidden_dim", "ffn_dim", "n_heads"):
        if getattr(target, axis) < getattr(cur, axis):
            raise GrowthError(f"growth cannot shrink {axis}: "
                              f"{getattr(cur, axis)} -> {getattr(target, axis)}")

    grown_axes = [axis for axis in ("hidden_dim", "ffn_dim", "n_heads")
                  if getattr(target, axis) > getattr(cur, axis)]
    if not grown_axes:
        out = ckpt.copy()
        degenerate = AxisMask("hidden_dim", cur.hidden_dim, cur.hidden_dim,
                              anneal_tokens)
        out.mask_state = ckpt.mask_state.merged([degenerate])
        return out

    rng = ckpt.growth_rng()
    new_params, new_m, new_v = {}, {}, {}
    for name in param_names(target):
        shape = param_shape(name, target)
        old = ckpt.params[name]
        if old.shape == tuple(shape):
            new_params[name] = old.copy()
            new_m[name] = ckpt.opt_m[name].copy()
            new_v[name] = ckpt.opt_v[name].copy()
            continue
        fresh = init_array(name, target, rng)
        block = _old_block(name, cur)
        fresh[block] = old
        new_params[name] = fresh
        moments_m = np.zeros(shape, dtype=np.float32)
        moments_v = np.zeros(shape, dtype=np.float32)
        moments_m[block] = ckpt.opt_m[name]
        moments_v[block] = ckpt.opt_v[name]
        new_m[name] = moments_m
        new_v[name] = moments_v

    entries = [AxisMask(axis, getattr(cur, axis), getattr(target, axis),
                        anneal_tokens) for axis in grown_axes]
    rng_state = dict(ckpt.rng_state)
    rng_state["growth"] = rng.bit_generator.state
    return Checkpoint(
        config=target,
        params=Parameters(new_params),
        opt_m=new_m,
        opt_v=new_v,
        step=ckpt.step,
        stage_index=ckpt.stage_index,
        tokens_per_stage=list(ckpt.tokens_per_stage),
        samples_seen_stage=ckpt.samples_seen_stage,
        mask_state=ckpt.mask_state.merged(entries),
        rng_state=rng_state,
    )


_LAYER_LEAVES = ("ln1.gain", "ln1.bias", "wq", "wk", "wv", "wo",
                 "ln2.gain", "ln2.bias", "w1", "w2")


def grow_depth(ckpt: Checkpoint, insert_after, anneal_tokens: int = 1,
               zero_init_output: bool = False) -> Checkpoint:
    """Insert gated blocks after the given layer indices (-1 means the front).

    Each inserted layer computes x + m * block_delta(x) under its own mask
    entry born at m=0, an exact identity. With zero_init_output the block's
    output projections (wo, w2) are zeroed instead and no mask entry is
    attached: preservation then rests on the weights and is destroyed by the
    first optimizer step.
    """
    cur = ckpt.config
    n_old = cur.n_layers
    insert_after = list(insert_after)
    for idx in insert_after:
        if not (-1 <= idx <= n_old - 1):
            raise GrowthError(f"insert_after index {idx} out of range for "
                              f"{n_old} layers (valid: -1..{n_old - 1})")
    if not insert_after:
        return ckpt.copy()

    counts = Counter(insert_after)
    old_to_new = {}
    new_positions = []
    pos = 0
    for _ in range(counts.get(-1, 0)):
        new_positions.append(pos)
        pos += 1
    for j in range(n_old):
        old_to_new[j] = pos
        pos += 1
        for _ in range(counts.get(j, 0)):
            new_positions.append(pos)
            pos += 1
    new_cfg = replace(cur, n_layers=n_old + len(insert_after))

    new_to_old = {v: k for k, v in old_to_new.items()}
    rng = ckpt.growth_rng()
    new_params, new_m, new_v = {}, {}, {}
    for name in param_names(new_cfg):
        if not name.startswith("layer"):
            new_params[name] = ckpt.params[name].copy()
            new_m[name] = ckpt.opt_m[name].copy()
            new_v[name] = ckpt.opt_v[name].copy()
            continue
        head, leaf = name.split(".", 1)
        layer = int(head[len("layer"):])
        if layer in new_to_old:
            src = f"layer{new_to_old[layer]}.{leaf}"
            new_params[name] = ckpt.params[src].copy()
            new_m[name] = ckpt.opt_m[src].copy()
            new_v[name] = ckpt.opt_v[src].copy()
        else:
            fresh = init_array(name, new_cfg, rng)
            if zero_init_output and leaf in ("wo", "w2"):
                fresh = np.zeros_like(fresh)
            new_params[name] = fresh
            new_m[name] = np.zeros_like(fresh)
            new_v[name] = np.zeros_like(fresh)

    remapped = []
    for e in ckpt.mask_state.entries:
        if e.kind == "layer":
            remapped.append(replace(e, layer_index=old_to_new[e.layer_index]))
        else:
            remapped.append(e)
    if not zero_init_output:
        remapped.extend(AxisMask("layer", 0, 1, anneal_tokens, layer_index=p)
                        for p in new_positions)

    rng_state = dict(ckpt.rng_state)
    rng_state["growth"] = rng.bit_generator.state
    return Checkpoint(
        config=new_cfg,
        params=Parameters(new_params),
        opt_m=new_m,
        opt_v=new_v,
        step=ckpt.step,
        stage_index=ckpt.stage_index,
        tokens_per_stage=list(ckpt.tokens_per_stage),
        samples_seen_stage=ckpt.samples_seen_stage,
        mask_state=GrowthMaskState(tuple(remapped)),
        rng_state=rng_state,
    )


def grow_checkpoint(ckpt: Checkpoint, target: ModelConfig,
                    anneal_tokens: int = 1) -> Checkpoint:
    """Depth insertion followed by width enlargement, one merged mask state.

    New layers spread evenly through the existing stack. The training cursor
    (step, token counts, data RNG) passes through untouched; only the growth
    RNG substream advances.
    """
    cur = ckpt.config
    _check_family(cur, target)
    if target.n_layers < cur.n_layers:
        raise GrowthError(f"growth cannot shrink n_layers: "
                          f"{cur.n_layers} -> {target.n_layers}")
    for axis in ("hidden_dim", "ffn_dim", "n_heads"):
        if getattr(target, axis) < getattr(cur, axis):
            raise GrowthError(f"growth cannot shrink {axis}: "
                              f"{getattr(cur, axis)} -> {getattr(target, axis)}")

    n_new = target.n_layers - cur.n_layers
    if n_new == 0:
        return grow_width(ckpt, target, anneal_tokens)

    l = cur.n_layers
    insert_after = [math.floor((j + 0.5) * l / n_new - 0.5)
                    for j in range(n_new)]
    out = grow_depth(ckpt, insert_after, anneal_tokens)
    if (target.hidden_dim, target.ffn_dim, target.n_heads) != \
            (cur.hidden_dim, cur.ffn_dim, cur.n_heads):
        out = grow_width(out, target, anneal_tokens)
    return out


# ---------------------------------------------------------------------------
# Verification.


@dataclass(frozen=True)
class PreservationReport:
    max_abs_diff: float
    tol: float
    n_probes: int
    seq_len: int
    passed: bool

    def describe(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"function preservation: {status} "
                f"(max |dlogit| = {self.max_abs_diff:.3g} over "
                f"{self.n_probes} probes of length {self.seq_len}, "
                f"tol {self.tol:g})")


def verify_function_preservation(before: Checkpoint, after: Checkpoint,
                                 n_probes: int = 100, tol: float = 1e-5,
                                 seed: int = 0) -> PreservationReport:
    """Compare logits of two checkpoints on random token sequences.

    Trusts nothing about how `after` was produced; a corrupted weight or a
    half-annealed mask shows up as a large diff and a failed report rather
    than an exception.
    """
    if n_probes < 1:
        raise ConfigError("n_probes must be >= 1")
    if tol <= 0:
        raise ConfigError("tol must be positive")
    if before.config.vocab_size != after.config.vocab_size:
        raise GrowthError(
            f"vocabularies differ ({before.config.vocab_size} vs "
            f"{after.config.vocab_size}); logits are not comparable")

    seq_len = min(before.config.context_len, after.config.context_len)
    rng = np.random.default_rng(seed)
    tokens = rng.integers(0, before.config.vocab_size,
                          size=(n_probes, seq_len), dtype=np.int64)
    max_diff = 0.0
    chunk = 16
    for start in range(0, n_probes, chunk):
        batch = tokens[start:start + chunk]
        la = forward(before.params, before.config, batch,
                     mask_state=before.mask_state).numpy()
        lb = forward(after.params, after.config, batch,
                     mask_state=after.mask_state).numpy()
        max_diff = max(max_diff, float(np.max(np.abs(la - lb))))
    return PreservationReport(max_abs_diff=max_diff, tol=tol,
                              n_probes=n_probes, seq_len=seq_len,
                              passed=max_diff <= tol)


# ---------------------------------------------------------------------------
# Multi-stage plans.


@dataclass(frozen=True)
class StageConfig:
    """One training stage: the architecture and its token/schedule budget."""

    model: ModelConfig
    token_budget: int
    lr_start: float
    warmup_samples: int
    batch_tokens: int
    anneal_tokens: int | None = None

    def __post_init__(self):
        # Zero is allowed as an explicit no-op stage (train nothing).
        if self.token_budget < 0:
            raise ConfigError("token_budget must be >= 0")
        if self.lr_start <= 0:
            raise ConfigError("lr_start must be positive")
        if self.warmup_samples < 0:
            raise ConfigError("warmup_samples must be >= 0")
        if self.batch_tokens <= 0:
            raise ConfigError("batch_tokens must be positive")
        if self.batch_tokens % self.model.context_len != 0:
            raise ConfigError(
                f"batch_tokens ({self.batch_tokens}) must be a multiple of "
                f"context_len ({self.model.context_len})")
        if self.anneal_tokens is not None and self.anneal_tokens < 1:
            raise ConfigError("anneal_tokens must be >= 1 when given")

    @property
    def batch_size(self) -> int:
        return self.batch_tokens // self.model.context_len

    def resolved_anneal_tokens(self) -> int:
        """Default annealing horizon: 1% of the stage's token budget."""
        if self.anneal_tokens is not None:
            return self.anneal_tokens
        return max(1, self.token_budget // 100)


@dataclass(frozen=True)
class GrowthPlan:
    """Ordered stages with monotone architectures."""

    stages: tuple

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ConfigError("a growth plan needs at least one stage")
        for stage in self.stages:
            if stage.token_budget <= 0:
                raise ConfigError("every stage in a growth plan needs a "
                                  "positive token budget")
        for prev, nxt in zip(self.stages, self.stages[1:]):
            a, b = prev.model, nxt.model
            _check_family(a, b)
            for axis in ("hidden_dim", "ffn_dim", "n_heads", "n_layers"):
                if getattr(b, axis) < getattr(a, axis):
                    raise ConfigError(
                        f"growth plan shrinks {axis} between stages: "
                        f"{getattr(a, axis)} -> {getattr(b, axis)}")
