#!/usr/bin/env python3
"""Function-preserving growth: enlarge a model without changing its logits.

Growth inserts new layers and widens existing ones behind multiplicative
masks that start at zero, so the grown model computes exactly what the
parent did. The masks then anneal toward one on a token clock, letting the
new capacity fade in during further training. Verification compares parent
and child logits on random probes and trusts nothing about how the child
was produced.
"""

from dataclasses import replace

import numpy as np

import growlab.model as gm
from growlab.checkpoint import fresh_checkpoint
from growlab.growth import (anneal_masks, grow_checkpoint,
                            verify_function_preservation)


def small_config():
    return gm.ModelConfig(vocab_size=64, hidden_dim=64, n_layers=2,
                          n_heads=2, head_dim=32, ffn_dim=256,
                          context_len=16, softmax_temperature=2.0,
                          mup_base_width=64, init_std=0.02)


def show(label, report):
    print(f"  {label:<28} -> {report.describe()}")


def main():
    base = small_config()
    parent = fresh_checkpoint(base, seed=7)
    n0 = parent.params.n_params()
    print(f"parent: hidden 64, 2 layers, {n0:,} params\n")

    print("single-axis growth, each verified against the parent:")
    wider = grow_checkpoint(parent, base.with_width(128), anneal_tokens=1000)
    show("width 64 -> 128",
         verify_function_preservation(parent, wider, seed=0))
    deeper = grow_checkpoint(parent, replace(base, n_layers=4),
                             anneal_tokens=1000)
    show("depth 2 -> 4",
         verify_function_preservation(parent, deeper, seed=0))
    both = grow_checkpoint(parent, replace(base.with_width(128), n_layers=3),
                           anneal_tokens=1000)
    show("width and depth together",
         verify_function_preservation(parent, both, seed=0))
    print(f"\ngrown model: hidden 128, 3 layers, "
          f"{both.params.n_params():,} params "
          f"({both.params.n_params() / n0:.1f}x the parent)")

    # The mask clock: new capacity fades in over the annealing horizon.
    print("\nmask annealing (1000-token horizon):")
    probe = np.arange(16).reshape(1, 16) % 64
    base_logits = gm.forward(parent.params, parent.config, probe).numpy()
    state = both.mask_state
    for tokens in (0, 250, 500, 1000):
        advanced = anneal_masks(state, tokens) if tokens else state
        trial = both.copy()
        trial.mask_state = advanced
        logits = gm.forward(trial.params, trial.config, probe,
                            mask_state=advanced).numpy()
        drift = float(np.max(np.abs(logits - base_logits)))
        gates = [f"{e.m:.2f}" for e in advanced.entries]
        print(f"  after {tokens:>4} tokens: gates {gates}, "
              f"max logit drift {drift:.4f}")

    # Verification catches a real change: scale one projection by 1.5.
    corrupted = wider.copy()
    arrays = dict(corrupted.params.arrays)
    arrays["layer0.wo"] = arrays["layer0.wo"] * 1.5
    corrupted.params = gm.Parameters(arrays)
    print("\nmutation control:")
    show("layer0.wo scaled by 1.5",
         verify_function_preservation(parent, corrupted, seed=0))

    # Shrinking is refused outright.
    try:
        grow_checkpoint(wider, base, anneal_tokens=1)
    except Exception as e:
        print(f"\nshrinking is rejected: {e}")


if __name__ == "__main__":
    main()
