#!/usr/bin/env python3
"""Tune a small proxy, transfer its hyperparameters to a wider model.

Width transfer keeps one base width fixed across the family; forward
multipliers and per-group learning rates then scale with width so the best
proxy settings remain near-optimal at larger sizes. The coordinate check
is the cheap diagnostic: activation scales should stay flat across widths
through early training. The standard parameterization is the negative
control and fails it.
"""

import numpy as np

import growlab.model as gm
from growlab.config import synthetic_motif_stream
from growlab.data import MixSpec, TokenWindowSource, mix_streams
from growlab.growth import StageConfig
from growlab.stability import (HpGrid, coordinate_check, hp_grid_search,
                               mup_width_family, standard_width_family,
                               transferred_optimizer)
from growlab.trainer import evaluate_loss, train_stage


def build_stream(seed):
    ids = synthetic_motif_stream(vocab_size=64, motif_len=23, length=8000,
                                 noise=0.05, seed=0)
    source = TokenWindowSource("synthetic", ids, 16)
    return mix_streams(MixSpec({"synthetic": 1.0}), {"synthetic": source},
                       seed=seed)


def width_config(width):
    return gm.ModelConfig(vocab_size=64, hidden_dim=width,
                          n_layers=2, n_heads=width // 32, head_dim=32,
                          ffn_dim=4 * width, context_len=16,
                          softmax_temperature=2.0, mup_base_width=32,
                          init_std=0.02)


def main():
    proxy = width_config(32)

    print("grid search on the width-32 proxy (300 steps per cell):")
    grid = HpGrid(learning_rates=(3e-3, 1e-2, 3e-2),
                  init_stds=(0.02,), softmax_temperatures=(1.0, 2.0))
    results, best = hp_grid_search(proxy, grid, steps=300,
                                   data=build_stream(0), seed=0)
    for triple, loss in results.items():
        marker = "  <- best" if triple == best else ""
        print(f"  lr {triple.learning_rate:<6g} temp "
          f"{triple.softmax_temperature:<4g} loss {loss:.4f}{marker}")

    target = width_config(128)
    optimizer, lr_start = transferred_optimizer(best, proxy, target)
    print(f"\ntransfer to width 128: lr_start {lr_start:g}, group "
          f"multipliers { {k: round(v, 4) for k, v in optimizer.group_lr.items()} }")

    stage = StageConfig(model=target, token_budget=400 * 128,
                        lr_start=lr_start, warmup_samples=64,
                        batch_tokens=128)
    ckpt, _ = train_stage(stage, None, build_stream(0), optimizer, seed=0)
    held = build_stream(0).draw_batch(64,
                                      rng=np.random.default_rng([0, 777]))[:2]
    print(f"width-128 held-out loss under transferred settings: "
          f"{evaluate_loss(ckpt, *held):.4f}")

    print("\ncoordinate check (activation rms across widths, 10 steps):")
    widths = (32, 64, 128)
    flat = coordinate_check(mup_width_family(proxy, widths), steps=10,
                            data=build_stream(5), seed=5)
    print(f"  transfer rule on:  {flat.describe()}")
    control = coordinate_check(standard_width_family(proxy, widths),
                               steps=10, data=build_stream(5), seed=5)
    print(f"  standard control:  {control.describe()}")


if __name__ == "__main__":
    main()
