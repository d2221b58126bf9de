#!/usr/bin/env python3
"""Fit a width-scaling law on small proxies and predict a larger model's loss.

With one shared base width and transferred hyperparameters, final proxy
losses at a handful of widths trace a saturating power law
L(w) = A * w^(-alpha) + L_inf. Fitting the three smallest widths is enough
to predict the next octave before training it. The demo then trains the
larger model anyway and compares.
"""

import numpy as np

import growlab.model as gm
from growlab.config import synthetic_motif_stream
from growlab.data import MixSpec, TokenWindowSource, mix_streams
from growlab.stability import HpGrid, fit_loss_scaling, hp_grid_search, predict_loss


def build_stream(seed):
    ids = synthetic_motif_stream(vocab_size=64, motif_len=23, length=8000,
                                 noise=0.05, seed=0)
    source = TokenWindowSource("synthetic", ids, 16)
    return mix_streams(MixSpec({"synthetic": 1.0}), {"synthetic": source},
                       seed=seed)


def width_config(width):
    return gm.ModelConfig(vocab_size=64, hidden_dim=width, n_layers=2,
                          n_heads=width // 32, head_dim=32, ffn_dim=4 * width,
                          context_len=16, softmax_temperature=2.0,
                          mup_base_width=64, init_std=0.02)


def proxy_loss(width, steps, seeds):
    """Smoothed final loss at one width, averaged over training seeds."""
    grid = HpGrid(learning_rates=(1e-2,), init_stds=(0.02,),
                  softmax_temperatures=(2.0,))
    losses = []
    for seed in seeds:
        results, _ = hp_grid_search(width_config(width), grid, steps,
                                    build_stream(seed), seed=seed)
        losses.append(next(iter(results.values())))
    return float(np.mean(losses))


def main():
    steps = 300
    seeds = (0, 1, 2)
    fit_widths = (32, 64, 128)
    holdout_width = 256

    print(f"training {len(fit_widths)} proxy widths x {len(seeds)} seeds, "
          f"{steps} steps each:")
    measured = {}
    for width in fit_widths:
        measured[width] = proxy_loss(width, steps, seeds)
        print(f"  width {width:>3}: mean final loss {measured[width]:.4f}")

    fit = fit_loss_scaling([(w, measured[w]) for w in fit_widths], step=steps)
    print(f"\nfit: L(w) = {fit.amplitude:.4f} * w^(-{fit.exponent:.4f}) "
          f"+ {fit.irreducible_loss:.4f}"
          f"{'  (flagged as unreliable)' if fit.flagged else ''}")

    predicted = predict_loss(fit, holdout_width)
    print(f"\npredicted loss at width {holdout_width}: {predicted:.4f}")
    actual = proxy_loss(holdout_width, steps, seeds)
    rel = abs(predicted - actual) / actual
    print(f"measured  loss at width {holdout_width}: {actual:.4f} "
          f"(prediction off by {rel:.1%})")


if __name__ == "__main__":
    main()
