"""Stability toolkit: proxy grid search, width transfer, coordinate checks,
and loss prediction across widths.

The width-robust parameterization lives in three places: initialization
standard deviations (scaled by base width over fan-in), the output logit
multiplier (base width over effective width), and per-group learning rates
(hidden matrices get the base-over-width factor, everything else keeps the
base rate). A config whose mup_base_width equals its own hidden_dim washes
all three factors out to 1, which is exactly the standard parameterization;
the coordinate check's negative control is built that way, so one code path
serves both.

Loss prediction fits L(w) = A * w^(-alpha) + L_inf to per-width losses at a
fixed step: a one-dimensional search over L_inf, a log-log linear regression
for each candidate, and a local refinement of the best candidate.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .data import SampleStream
from .errors import ConfigError
from .model import (ModelConfig, Parameters, forward, init_parameters,
                    lm_loss, wrap_trainable)
from .optim import OptimizerConfig, adamw_step

SMOOTHING = 0.9  # exponential smoothing factor for reported training losses


def smooth_losses(losses, factor: float = SMOOTHING) -> float:
    """Final exponentially smoothed value of a loss sequence.

    The first value seeds the average, so a constant sequence smooths to
    that constant and a single value smooths to itself. An empty sequence
    smooths to +inf (nothing trained, nothing to rank).
    """
    smoothed = None
    for value in losses:
        smoothed = value if smoothed is None else \
            factor * smoothed + (1.0 - factor) * value
    return math.inf if smoothed is None else float(smoothed)


@dataclass(frozen=True)
class HpTriple:
    """The three searched hyperparameters, valued at the proxy width."""

    learning_rate: float
    init_std: float
    softmax_temperature: float

    def __post_init__(self):
        for name in ("learning_rate", "init_std", "softmax_temperature"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class HpGrid:
    learning_rates: tuple
    init_stds: tuple
    softmax_temperatures: tuple

    def __post_init__(self):
        for name in ("learning_rates", "init_stds", "softmax_temperatures"):
            values = tuple(sorted(getattr(self, name)))
            if not values:
                raise ConfigError(f"{name} must be non-empty")
            if any(not v > 0 for v in values):
                raise ConfigError(f"{name} must be strictly positive")
            object.__setattr__(self, name, values)

    def triples(self) -> list:
        """Grid cells in deterministic order (lr-major)."""
        return [HpTriple(*combo) for combo in itertools.product(
            self.learning_rates, self.init_stds, self.softmax_temperatures)]


def materialize_batches(data, steps: int, batch_size: int, seed: int) -> list:
    """Freeze a batch sequence so every run consumes identical data."""
    if isinstance(data, SampleStream):
        rng = np.random.default_rng([seed, 11])
        return [data.draw_batch(batch_size, rng=rng)[:2] for _ in range(steps)]
    return list(data)


def _hidden_multiplier(config: ModelConfig) -> float:
    return config.mup_base_width / config.hidden_dim


def _train_proxy(config: ModelConfig, batches, lr: float, seed: int,
                 trace_steps: bool = False):
    """Short fixed-rate training run shared by grid search and checks.

    Returns (smoothed final loss, per-step activation records, diverged).
    Records hold the root-mean-square of each block output and the logits,
    taken at the forward pass of every step (step 0 is the init forward).
    """
    params = init_parameters(config, seed)
    opt = OptimizerConfig(group_lr={"hidden_matrix": _hidden_multiplier(config),
                                    "embedding_like": 1.0, "norm": 1.0})
    opt_m = {n: np.zeros_like(params[n]) for n in params.names()}
    opt_v = {n: np.zeros_like(v) for n, v in opt_m.items()}
    losses = []
    records = []
    arrays = params.arrays
    for step, (tokens, loss_mask) in enumerate(batches, start=1):
        leaves = wrap_trainable(Parameters(arrays))
        trace = {} if trace_steps else None
        logits = forward(leaves, config, tokens[:, :-1], trace=trace)
        loss = lm_loss(logits, tokens[:, 1:], loss_mask)
        loss_value = float(loss.item())
        if trace_steps:
            records.append({key: float(np.sqrt(np.mean(value ** 2)))
                            for key, value in trace.items()})
        if not math.isfinite(loss_value):
            return math.inf, records, True
        losses.append(loss_value)
        loss.backward()
        grads = {name: (leaf.grad if leaf.grad is not None
                        else np.zeros_like(leaf.numpy()))
                 for name, leaf in leaves.items()}
        try:
            arrays, opt_m, opt_v = adamw_step(arrays, grads, opt_m, opt_v,
                                              step, opt, lr)
        except Exception:
            return math.inf, records, True
    return smooth_losses(losses), records, False


# ---------------------------------------------------------------------------
# Grid search.


def select_best(results: dict, order: list) -> "HpTriple":
    """Deterministic argmin: smallest loss, ties broken by grid order."""
    best = None
    best_loss = math.inf
    for triple in order:
        loss = results[triple]
        if loss < best_loss:
            best, best_loss = triple, loss
    if best is None:
        best = order[0]  # every cell diverged; report the first
    return best


def hp_grid_search(proxy: ModelConfig, grid: HpGrid, steps: int, data,
                   seed: int, batch_size: int = 8):
    """Train one proxy model per grid cell on identical data.

    Cells are ranked by exponentially smoothed final training loss; a
    diverged cell scores +inf and never wins unless everything diverged.
    Cells are independent runs merged in grid order, so executing them
    concurrently cannot change the result.
    """
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    batches = materialize_batches(data, steps, batch_size, seed)
    order = grid.triples()
    results = {}
    for triple in order:
        config = replace(proxy, init_std=triple.init_std,
                         softmax_temperature=triple.softmax_temperature)
        loss, _, _ = _train_proxy(config, batches, triple.learning_rate,
                                  seed=seed + 13)
        results[triple] = loss
    return results, select_best(results, order)


# ---------------------------------------------------------------------------
# Width transfer.


def mup_transfer(hp: HpTriple, proxy: ModelConfig,
                 target: ModelConfig) -> dict:
    """Per-group learning rates for a wider model under the same tuning.

    Hidden matrices scale the proxy's rate by proxy width over target
    width; embedding-like and norm parameters keep it unchanged. Under the
    usual convention the proxy sits at the base width, so the hidden rate
    equals eta * base_width / target_width; stating it relative to the
    proxy width keeps transfer with target == proxy an exact identity for
    any proxy. The other two searched values transfer as-is, since their
    width dependence lives inside init_parameters and the forward pass.
    """
    if proxy.mup_base_width != target.mup_base_width:
        raise ConfigError(
            f"base width mismatch: proxy {proxy.mup_base_width} vs target "
            f"{target.mup_base_width}; these are not the same family")
    eta = hp.learning_rate
    return {
        "hidden_matrix": eta * proxy.hidden_dim / target.hidden_dim,
        "embedding_like": eta,
        "norm": eta,
    }


def transferred_optimizer(hp: HpTriple, proxy: ModelConfig,
                          target: ModelConfig, lr_final: float = 6e-6,
                          **overrides):
    """(OptimizerConfig, lr_start) ready for the trainer at the target width."""
    absolute = mup_transfer(hp, proxy, target)
    eta = hp.learning_rate
    multipliers = {group: rate / eta for group, rate in absolute.items()}
    opt = OptimizerConfig(group_lr=multipliers, lr_final=lr_final, **overrides)
    return opt, eta


# ---------------------------------------------------------------------------
# Coordinate check.


def mup_width_family(base: ModelConfig, widths) -> list:
    """Configs at several widths sharing the base width (transfer rule on)."""
    return [base.with_width(w) for w in widths]


def standard_width_family(base: ModelConfig, widths) -> list:
    """The negative control: every width is its own base, so no factor
    deviates from 1 and the parameterization is the standard one."""
    return [replace(base.with_width(w), mup_base_width=w) for w in widths]


@dataclass(frozen=True)
class CoordCheckReport:
    widths: tuple
    steps: int
    records: dict        # width -> list over steps of {key: rms}
    ratios: dict         # key -> per-step widest/narrowest rms ratio
    diverged: tuple
    passed: bool
    max_ratio: float

    def describe(self) -> str:
        status = "pass" if self.passed else "FAIL"
        div = f", diverged widths: {list(self.diverged)}" if self.diverged else ""
        return (f"coordinate check: {status} (widths {list(self.widths)}, "
                f"{self.steps} steps, max rms ratio {self.max_ratio:.2f}, "
                f"bound 4){div}")


def coordinate_check(widths, steps: int, data, seed: int,
                     base_lr: float = 1e-2, batch_size: int = 8) -> CoordCheckReport:
    """Track activation scale across widths through early training.

    `widths` is a list of full model configs differing only in
    width-derived fields. Every config trains on identical data at its own
    per-group rates (the hidden multiplier follows each config's base
    width). The check passes when, at every step from 1 to `steps`, the
    widest model's block-output and logit RMS stay within a factor of 4 of
    the narrowest model's. Step 0 (the init forward) is recorded but not
    gated: the output multiplier deliberately scales init logits down with
    width, and training is what pulls them up to a width-independent scale.
    Record i holds the RMS values measured on batch i after i updates, so
    the report covers steps 0 through `steps` inclusive.
    """
    configs = list(widths)
    if not configs:
        raise ConfigError("coordinate check needs at least one config")
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    ref = configs[0]
    for cfg in configs[1:]:
        same = ("vocab_size", "context_len", "n_layers", "head_dim",
                "softmax_temperature", "init_std", "xpos_decay")
        for f in same:
            if getattr(cfg, f) != getattr(ref, f):
                raise ConfigError(f"configs must differ only in width; "
                                  f"{f} differs")
    widths = tuple(cfg.hidden_dim for cfg in configs)
    if len(set(widths)) != len(widths):
        raise ConfigError("widths must be distinct")

    # One extra batch so the record after the final update is measured the
    # same way as every other step (fresh batch, pre-update forward).
    batches = materialize_batches(data, steps + 1, batch_size, seed)
    records = {}
    diverged = []
    for cfg in configs:
        _, recs, bad = _train_proxy(cfg, batches, base_lr, seed=seed + 13,
                                    trace_steps=True)
        records[cfg.hidden_dim] = recs
        if bad or any(not all(math.isfinite(v) for v in r.values())
                      for r in recs):
            diverged.append(cfg.hidden_dim)

    narrow, wide = min(widths), max(widths)
    ratios = {}
    max_ratio = 1.0
    passed = not diverged
    if len(widths) > 1 and not diverged:
        keys = sorted(records[narrow][0])
        n_recorded = min(len(records[narrow]), len(records[wide]))
        for key in keys:
            per_step = []
            for step in range(n_recorded):
                lo = records[narrow][step][key]
                hi = records[wide][step][key]
                ratio = hi / lo if lo > 0 else math.inf
                per_step.append(ratio)
                if step >= 1:
                    spread = max(ratio, 1.0 / ratio) if ratio > 0 else math.inf
                    max_ratio = max(max_ratio, spread)
            ratios[key] = per_step
        passed = max_ratio <= 4.0
    return CoordCheckReport(widths=widths, steps=steps, records=records,
                            ratios=ratios, diverged=tuple(diverged),
                            passed=passed, max_ratio=max_ratio)


# ---------------------------------------------------------------------------
# Loss prediction.


@dataclass(frozen=True)
class ScalingFit:
    """Parameters of L(w) = amplitude * w^(-exponent) + irreducible_loss."""

    amplitude: float
    exponent: float
    irreducible_loss: float
    fit_residual: float
    step: int = 0
    flagged: bool = False

    def __post_init__(self):
        if self.exponent < 0:
            raise ConfigError("exponent must be >= 0")
        if self.irreducible_loss < 0:
            raise ConfigError("irreducible_loss must be >= 0")


def _log_fit(widths, losses, floor):
    y = np.log(losses - floor)
    x = np.log(widths)
    slope, intercept = np.polyfit(x, y, deg=1)
    residual = float(np.sum((y - (slope * x + intercept)) ** 2))
    return slope, intercept, residual


def fit_loss_scaling(points, step: int = 0) -> ScalingFit:
    """Least-squares power-law-plus-floor fit over per-width losses.

    The floor is grid-searched at a resolution of 1e-3 of the loss range
    and then refined locally; each candidate reduces the problem to a
    linear regression of log(L - floor) on log w. Non-monotone input
    (a wider model losing to a narrower one) flags the fit rather than
    rejecting it.
    """
    points = sorted(points)
    widths = np.array([float(w) for w, _ in points])
    losses = np.array([float(l) for _, l in points])
    if len(set(widths.tolist())) < 3:
        raise ConfigError("need at least 3 distinct widths to fit")
    if np.any(losses <= 0):
        raise ConfigError("losses must be positive")

    flagged = bool(np.any(np.diff(losses) > 0))
    lo, hi = float(losses.min()), float(losses.max())
    loss_range = hi - lo
    if loss_range == 0.0:
        return ScalingFit(amplitude=0.0, exponent=0.0, irreducible_loss=lo,
                          fit_residual=0.0, step=step, flagged=True)

    ceiling = lo * (1.0 - 1e-9)
    cell = max(1e-3 * loss_range, 1e-12)
    candidates = np.arange(0.0, ceiling, cell)
    if candidates.size == 0:
        candidates = np.array([0.0])
    residuals = [_log_fit(widths, losses, c)[2] for c in candidates]
    best = candidates[int(np.argmin(residuals))]

    result = optimize.minimize_scalar(
        lambda c: _log_fit(widths, losses, c)[2], method="bounded",
        bounds=(max(0.0, best - cell), min(ceiling, best + cell)),
        options={"xatol": 1e-12})
    floor = float(result.x)
    if _log_fit(widths, losses, floor)[2] > _log_fit(widths, losses, best)[2]:
        floor = float(best)
    slope, intercept, residual = _log_fit(widths, losses, floor)
    exponent = -slope
    amplitude = math.exp(intercept)
    if exponent <= 0:
        # Degenerate: wider is not better at all; report a flat fit.
        return ScalingFit(amplitude=amplitude, exponent=0.0,
                          irreducible_loss=floor, fit_residual=residual,
                          step=step, flagged=True)
    return ScalingFit(amplitude=amplitude, exponent=exponent,
                      irreducible_loss=floor, fit_residual=residual,
                      step=step, flagged=flagged)


def predict_loss(fit: ScalingFit, width) -> float:
    if width < 1:
        raise ConfigError("width must be >= 1")
    return fit.amplitude * float(width) ** (-fit.exponent) + \
        fit.irreducible_loss
