"""The training loop and multi-stage growth orchestration.

One step is: advance mask annealing by the batch's tokens, draw a batch,
forward, loss, backward, clip, AdamW, cursor update. Everything the step
consumes (data order, schedule position, annealing clocks) lives in the
checkpoint, so a save/load round trip resumes bit-identically.

run_growth_plan strings stages together: grow the checkpoint to the next
stage's architecture, verify function preservation (refusing to train on a
broken growth), measure held-out loss continuity across the boundary, then
train the stage. The stitched curve keeps per-stage indices so boundaries
stay visible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import (Checkpoint, fresh_checkpoint, load_checkpoint,
                         save_checkpoint)
from .errors import ConfigError, GrowthError, TrainingDiverged
from .growth import (GrowthPlan, PreservationReport, StageConfig,
                     anneal_masks, grow_checkpoint,
                     verify_function_preservation)
from .model import Parameters, forward, lm_loss, wrap_trainable
from .optim import OptimizerConfig, adamw_step, cosine_lr

__all__ = [
    "Checkpoint", "OptimizerConfig", "StageConfig", "GrowthPlan",
    "StageReport", "fresh_checkpoint", "save_checkpoint", "load_checkpoint",
    "train_stage", "run_growth_plan", "evaluate_loss", "curve_to_csv",
]


def evaluate_loss(ckpt: Checkpoint, tokens, loss_mask) -> float:
    """Held-out loss of a checkpoint on one batch; no state is touched."""
    tokens = np.asarray(tokens)
    inputs, targets = tokens[:, :-1], tokens[:, 1:]
    logits = forward(ckpt.params, ckpt.config, inputs,
                     mask_state=ckpt.mask_state)
    return float(lm_loss(logits, targets, loss_mask).item())


def train_stage(stage: StageConfig, start, stream,
                optimizer: OptimizerConfig, *, seed: int = 0,
                curve_every: int = 10, checkpoint_dir=None,
                checkpoint_every=None, max_steps=None):
    """Train until the stage's token budget is consumed.

    Returns (checkpoint, curve) where curve rows are
    (total tokens, training loss, stage index), sampled every curve_every
    steps plus the final step. A NaN loss aborts with the last finite
    state attached to the raised error. max_steps interrupts after that
    many steps of this call; resuming later continues the same schedule,
    since the cosine horizon comes from the stage, not from the call.
    """
    ckpt = start.copy() if start is not None else \
        fresh_checkpoint(stage.model, seed)
    if ckpt.config != stage.model:
        raise ConfigError("checkpoint architecture differs from the stage's "
                          "model config; grow the checkpoint first")
    curve = []
    if ckpt.tokens_per_stage[-1] >= stage.token_budget:
        return ckpt, curve

    batch_size = stage.batch_size
    steps_total = math.ceil(stage.token_budget / stage.batch_tokens)
    total_samples = steps_total * batch_size
    if stage.warmup_samples >= total_samples:
        raise ConfigError(
            f"warmup ({stage.warmup_samples} samples) consumes the whole "
            f"stage ({total_samples} samples); nothing left for the cosine")
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    rng = ckpt.data_rng()
    steps_this_call = 0
    while ckpt.tokens_per_stage[-1] < stage.token_budget:
        if max_steps is not None and steps_this_call >= max_steps:
            break
        steps_this_call += 1
        pre_anneal = ckpt.mask_state
        ckpt.mask_state = anneal_masks(ckpt.mask_state, stage.batch_tokens)

        tokens, loss_mask, _ = stream.draw_batch(batch_size, rng=rng)
        # Constant batch shape within a stage; there is no batch-size warmup.
        assert tokens.shape == (batch_size, stage.model.context_len + 1)
        inputs, targets = tokens[:, :-1], tokens[:, 1:]

        leaves = wrap_trainable(ckpt.params)
        logits = forward(leaves, stage.model, inputs,
                         mask_state=ckpt.mask_state)
        loss = lm_loss(logits, targets, loss_mask)
        loss_value = float(loss.item())
        if not math.isfinite(loss_value):
            ckpt.mask_state = pre_anneal  # roll back to the last finite step
            raise TrainingDiverged(
                f"training loss became non-finite at step {ckpt.step + 1}",
                checkpoint=ckpt)
        loss.backward()
        grads = {name: (leaf.grad if leaf.grad is not None
                        else np.zeros_like(leaf.numpy()))
                 for name, leaf in leaves.items()}

        samples_after = ckpt.samples_seen_stage + batch_size
        lr = cosine_lr(samples_after, stage.warmup_samples, total_samples,
                       stage.lr_start, optimizer.lr_final)
        new_params, new_m, new_v = adamw_step(
            ckpt.params.arrays, grads, ckpt.opt_m, ckpt.opt_v,
            ckpt.step + 1, optimizer, lr)
        ckpt.params = Parameters(new_params)
        ckpt.opt_m = new_m
        ckpt.opt_v = new_v
        ckpt.step += 1
        ckpt.tokens_per_stage[-1] += stage.batch_tokens
        ckpt.samples_seen_stage = samples_after
        ckpt.rng_state = {**ckpt.rng_state, "data": rng.bit_generator.state}

        finished = ckpt.tokens_per_stage[-1] >= stage.token_budget
        if ckpt.step % curve_every == 0 or finished:
            curve.append((ckpt.tokens_total, loss_value, ckpt.stage_index))
        if (checkpoint_dir is not None and checkpoint_every
                and ckpt.step % checkpoint_every == 0 and not finished):
            save_checkpoint(ckpt, checkpoint_dir / f"step{ckpt.step:08d}.ckpt")

    if checkpoint_dir is not None:
        save_checkpoint(ckpt, checkpoint_dir / "final.ckpt")
    return ckpt, curve


@dataclass(frozen=True)
class StageReport:
    stage_index: int
    hidden_dim: int
    n_layers: int
    tokens_trained: int
    final_loss: float | None
    preservation: PreservationReport | None
    heldout_before: float | None
    heldout_after: float | None

    @property
    def continuity_gap(self) -> float | None:
        """Relative held-out loss change across the growth boundary."""
        if self.heldout_before is None or self.heldout_after is None:
            return None
        return abs(self.heldout_after - self.heldout_before) / \
            max(abs(self.heldout_before), 1e-12)


def run_growth_plan(plan: GrowthPlan, stream, optimizer: OptimizerConfig, *,
                    seed: int = 0, start=None, verify_probes: int = 50,
                    verify_tol: float = 1e-5, heldout_batch=None,
                    heldout_size: int = 8, curve_every: int = 10,
                    checkpoint_dir=None):
    """Grow-verify-train through every stage of the plan.

    Returns (final checkpoint, stitched curve, per-stage reports). A failed
    preservation check aborts before any training touches the grown model.
    """
    stages = plan.stages
    ckpt = start.copy() if start is not None else \
        fresh_checkpoint(stages[0].model, seed)
    if heldout_batch is None:
        # Drawn from an independent generator: training data order is not
        # disturbed by the held-out evaluation set.
        heldout_rng = np.random.default_rng([seed, 777])
        heldout_batch = stream.draw_batch(heldout_size, rng=heldout_rng)[:2]
    held_tokens, held_mask = heldout_batch

    curve = []
    reports = []
    for i, stage in enumerate(stages):
        preservation = None
        before = after = None
        if i > 0:
            before = evaluate_loss(ckpt, held_tokens, held_mask)
            parent = ckpt
            ckpt = grow_checkpoint(ckpt, stage.model,
                                   stage.resolved_anneal_tokens())
            preservation = verify_function_preservation(
                parent, ckpt, n_probes=verify_probes, tol=verify_tol,
                seed=seed + 1000 * i)
            if not preservation.passed:
                raise GrowthError(
                    f"aborting before stage {i}: {preservation.describe()}")
            after = evaluate_loss(ckpt, held_tokens, held_mask)
            ckpt.stage_index = i
            ckpt.tokens_per_stage.append(0)
            ckpt.samples_seen_stage = 0

        stage_dir = None if checkpoint_dir is None else \
            Path(checkpoint_dir) / f"stage{i}"
        ckpt, stage_curve = train_stage(stage, ckpt, stream, optimizer,
                                        curve_every=curve_every,
                                        checkpoint_dir=stage_dir)
        curve.extend(stage_curve)
        reports.append(StageReport(
            stage_index=i,
            hidden_dim=stage.model.hidden_dim,
            n_layers=stage.model.n_layers,
            tokens_trained=ckpt.tokens_per_stage[-1],
            final_loss=stage_curve[-1][1] if stage_curve else None,
            preservation=preservation,
            heldout_before=before,
            heldout_after=after,
        ))
    return ckpt, curve, reports


def curve_to_csv(curve) -> str:
    lines = ["tokens,loss,stage"]
    lines.extend(f"{tokens},{loss:.6f},{stage}"
                 for tokens, loss, stage in curve)
    return "\n".join(lines) + "\n"
