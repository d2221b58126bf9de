#!/usr/bin/env python3
"""Account for training cost: FLOPs, walltime, energy, carbon, utilization.

The cost model prices a training run from four architecture numbers and a
token budget, brackets the estimate by activation-recompute policy, and
carries a registry of published runs to check itself against. This demo
walks the registry end to end: FLOPs tables, a staged-growth walltime plan,
and the energy/carbon ledger.
"""

import growlab.costmodel as cm


def main():
    registry = cm.load_registry()

    print("training FLOPs for published runs (bracketed by recompute "
          "policy):")
    for name, entry in registry["models"].items():
        estimate = cm.training_flops(cm.registry_arch(entry),
                                     float(entry["tokens"]), entry["policy"])
        print(f"  {name:<12} {estimate.describe():>28}   "
              f"policy {entry['policy']}")

    stated = registry["stated"]["staged_101b"]
    total = float(stated["total_zettaflops"]) * cm.ZETTA
    staged = cm.FlopsEstimate(total, total, total)
    print(f"\nstaged 101B run, stated total {stated['total_zettaflops']} "
          f"zettaFLOPs, split by language:")
    for lang, part in cm.split_cost_by_language(
            staged, stated["language_ratios"]).items():
        print(f"  {lang}: {part.in_zetta().mid:.2f} zettaFLOPs")

    schedule = registry["schedules"]["staged_101b"]
    tokens = [float(t) for t in schedule["stage_tokens"]]
    rates = [t / d for t, d in zip(tokens, schedule["stage_days"])]
    plan = cm.plan_schedule(list(zip(tokens, rates)))
    print("\nwalltime plan for the staged run:")
    for name, days, toks in zip(schedule["stage_names"], plan.stage_days,
                                tokens):
        print(f"  stage {name:<5} {days:>6.2f} days  ({toks:.4g} tokens)")
    print(f"  total {plan.total_days:.2f} days vs {plan.scratch_days:.2f} "
          f"days training the full model from scratch")
    print(f"  speedup {plan.speedup:.2f}x, time saved "
          f"{plan.time_saving_pct:.1f}%")

    print("\nenergy and carbon ledger:")
    print(f"  {'run':<12} {'GPU-hours':>12} {'MWh':>8} {'tCO2e':>8}")
    for name, entry in registry["runs"].items():
        report = cm.energy_and_carbon(float(entry["gpu_hours"]),
                                      cm.registry_profile(entry))
        tco2e = "-" if report.tco2e is None else f"{report.tco2e:.0f}"
        print(f"  {name:<12} {float(entry['gpu_hours']):>12,.0f} "
              f"{report.energy_mwh:>8.1f} {tco2e:>8}")

    throughput = registry["throughput"]["staged_101b"]
    peak = float(throughput["peak_tflops_per_gpu"])
    print(f"\nper-stage hardware utilization (peak {peak:.0f} TFLOPs/GPU):")
    for name, measured in zip(throughput["stage_names"],
                              throughput["measured_tflops_per_gpu"]):
        print(f"  stage {name:<5} {measured:.0f} TFLOPs/GPU = "
              f"{cm.utilization(float(measured), peak):.2f}% of peak")


if __name__ == "__main__":
    main()
