"""AdamW with per-group learning rates and the cosine schedule.

Learning-rate groups exist because width transfer rescales only the hidden
matrices: the optimizer config stores one relative multiplier per parameter
group, and the scheduled base rate is multiplied by the group's factor at
every step. Weight decay is decoupled and skipped for the norm group
(layernorm gains and biases).

Warmup is measured in samples, not steps: the ramp reaches lr_start after
warmup_samples sequences regardless of batch size, then a cosine takes the
rate down to lr_final over the remaining sample budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GradientError
from .model import group_of

PARAM_GROUPS = ("hidden_matrix", "embedding_like", "norm")


@dataclass(frozen=True)
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.1
    grad_clip_norm: float = 1.0
    eps: float = 1e-8
    lr_final: float = 6e-6
    # Relative multiplier per parameter group; width transfer sets
    # hidden_matrix below 1 for models wider than the base width.
    group_lr: dict = field(default_factory=lambda: {g: 1.0 for g in PARAM_GROUPS})

    def __post_init__(self):
        for name, beta in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 <= beta < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {beta}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not self.grad_clip_norm > 0:
            raise ConfigError(f"grad_clip_norm must be positive, got "
                              f"{self.grad_clip_norm}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if not self.lr_final > 0:
            raise ConfigError(f"lr_final must be positive, got {self.lr_final}")
        missing = [g for g in PARAM_GROUPS if g not in self.group_lr]
        if missing:
            raise ConfigError(f"group_lr missing groups: {missing}")
        for group, mult in self.group_lr.items():
            if not mult > 0:
                raise ConfigError(f"group_lr[{group!r}] must be positive, "
                                  f"got {mult}")


def cosine_lr(samples_seen: int, warmup_samples: int, total_samples: int,
              lr_start: float, lr_final: float) -> float:
    """Linear ramp 0 -> lr_start over the warmup, then cosine to lr_final."""
    if samples_seen < 0 or warmup_samples < 0:
        raise ConfigError("sample counts must be >= 0")
    if lr_final > lr_start:
        raise ConfigError(f"lr_final ({lr_final}) must not exceed lr_start "
                          f"({lr_start})")
    if total_samples <= warmup_samples:
        raise ConfigError(f"total_samples ({total_samples}) must exceed "
                          f"warmup_samples ({warmup_samples})")
    if samples_seen < warmup_samples:
        return lr_start * samples_seen / warmup_samples
    progress = (samples_seen - warmup_samples) / (total_samples - warmup_samples)
    progress = min(1.0, progress)
    return lr_final + (lr_start - lr_final) * (1.0 + math.cos(math.pi * progress)) / 2.0


def global_grad_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    return math.sqrt(total)


def adamw_step(params: dict, grads: dict, opt_m: dict, opt_v: dict,
               step: int, optimizer: OptimizerConfig, lr: float):
    """One decoupled-weight-decay Adam update; returns new (params, m, v).

    The gradient is clipped by global norm across all tensors first. Bias
    correction uses the global step counter. The norm group is exempt from
    weight decay; every group's rate is lr times its configured multiplier.
    """
    if step < 1:
        raise ConfigError(f"step must be >= 1, got {step}")
    if set(params) != set(grads):
        raise ConfigError("params and grads must cover the same names")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape "
                              f"{params[name].shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient for parameter {name!r}")

    norm = global_grad_norm(grads)
    clip_scale = optimizer.grad_clip_norm / norm \
        if norm > optimizer.grad_clip_norm else 1.0

    bias1 = 1.0 - optimizer.beta1 ** step
    bias2 = 1.0 - optimizer.beta2 ** step
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name] if clip_scale == 1.0 else grads[name] * np.float32(clip_scale)
        g = g.astype(np.float32, copy=False)
        m = optimizer.beta1 * opt_m[name] + (1.0 - optimizer.beta1) * g
        v = optimizer.beta2 * opt_v[name] + (1.0 - optimizer.beta2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        group = group_of(name)
        lr_g = lr * optimizer.group_lr[group]
        update = m_hat / (np.sqrt(v_hat) + optimizer.eps)
        if optimizer.weight_decay > 0.0 and group != "norm":
            update = update + optimizer.weight_decay * p
        new_params[name] = (p - lr_g * update).astype(np.float32)
        new_m[name] = m.astype(np.float32)
        new_v[name] = v.astype(np.float32)
    return new_params, new_m, new_v
