"""Command-line entry point: one tool, twelve subcommands.

Every subcommand reads a strict TOML run config (``--config``) plus
overrides (``--set key=value``), writes its artifacts under ``--out``,
and prints a short report to stdout. Exit codes: 0 success, 1 runtime
failure, 2 invalid config or usage. Subcommands that consume randomness
refuse to run without an explicit ``--seed``, and identical config plus
seed reproduces identical output files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .costmodel import (ArchCost, FlopsEstimate, HardwareProfile, ZETTA,
                        energy_and_carbon, load_registry, plan_schedule,
                        registry_arch, registry_profile, render_csv,
                        render_table, split_cost_by_language, training_flops)
from .errors import ConfigError, GrowlabError
from .evalgen import (TASK_FAMILIES, generate_family, read_instances, score,
                      write_instances)
from .growth import grow_checkpoint, verify_function_preservation
from .model import greedy_completion
from .stability import (HpGrid, coordinate_check, fit_loss_scaling,
                        hp_grid_search, mup_width_family, predict_loss,
                        standard_width_family)
from .tokenizer import VOCAB_SIZE, decode, encode, tokenize_documents
from .trainer import curve_to_csv, run_growth_plan, train_stage
from .data import write_manifest, write_token_stream

NEWLINE_BYTE = 10  # generation stop token for line-oriented answers


# ---------------------------------------------------------------------------
# Small shared helpers.


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> RunConfig:
    return RunConfig.load(args.config, args.set)


def _registry_entry(registry: dict, table: str, name: str) -> dict:
    entries = registry.get(table, {})
    if name not in entries:
        known = ", ".join(sorted(entries)) or "none"
        raise ConfigError(f"unknown registry entry {table}.{name}; "
                          f"known: {known}")
    return entries[name]


def _fmt(value, digits: int = 2) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


# ---------------------------------------------------------------------------
# Cost, carbon, schedule reports.


def cmd_cost(args) -> int:
    cfg = _config(args)
    sec = cfg.section("cost", required=True)
    registry = load_registry()
    rows = []

    if "stated_zettaflops" in sec:
        stated = float(sec["stated_zettaflops"]) * ZETTA
        estimate = FlopsEstimate(stated, stated, stated)
        label = sec.get("model", "stated")
    elif "model" in sec:
        entry = _registry_entry(registry, "models", sec["model"])
        arch = registry_arch(entry)
        tokens = float(sec.get("tokens", entry["tokens"]))
        policy = sec.get("policy", entry.get("policy", "unknown"))
        estimate = training_flops(arch, tokens, policy)
        label = sec["model"]
    else:
        for key in ("layers", "hidden", "seq_len", "vocab", "tokens"):
            if key not in sec:
                raise ConfigError(f"missing config key: cost.{key}")
        arch = ArchCost(layers=sec["layers"], hidden=sec["hidden"],
                        seq_len=sec["seq_len"], vocab=sec["vocab"])
        estimate = training_flops(arch, float(sec["tokens"]),
                                  sec.get("policy", "unknown"))
        label = "custom"

    print(f"training cost ({label}): {estimate.describe()}")
    z = estimate.in_zetta()
    rows.append((label, f"{z.low:.4f}", f"{z.mid:.4f}", f"{z.high:.4f}"))
    languages = sec.get("languages")
    if languages:
        for lang, part in split_cost_by_language(estimate,
                                                 languages).items():
            print(f"  {lang}: {part.describe()}")
            zp = part.in_zetta()
            rows.append((f"{label}/{lang}", f"{zp.low:.4f}", f"{zp.mid:.4f}",
                         f"{zp.high:.4f}"))

    out = _out_dir(args)
    (out / "cost.csv").write_text(render_csv(
        ("item", "low_zettaflops", "mid_zettaflops", "high_zettaflops"),
        rows))
    return 0


def cmd_carbon(args) -> int:
    cfg = _config(args)
    sec = cfg.section("carbon", required=True)
    registry = load_registry()
    rows = []

    if sec.get("run") == "all":
        for name, entry in registry.get("runs", {}).items():
            report = energy_and_carbon(float(entry["gpu_hours"]),
                                       registry_profile(entry))
            rows.append((name, f"{entry['gpu_hours']:.0f}",
                         _fmt(report.energy_mwh), _fmt(report.tco2e)))
    elif "run" in sec:
        entry = _registry_entry(registry, "runs", sec["run"])
        report = energy_and_carbon(float(entry["gpu_hours"]),
                                   registry_profile(entry))
        rows.append((sec["run"], f"{entry['gpu_hours']:.0f}",
                     _fmt(report.energy_mwh), _fmt(report.tco2e)))
    else:
        for key in ("gpu_hours", "tdp_watts"):
            if key not in sec:
                raise ConfigError(f"missing config key: carbon.{key}")
        profile = HardwareProfile(
            tdp_watts=float(sec["tdp_watts"]),
            pue=float(sec.get("pue", 1.0)),
            grid_intensity=sec.get("grid_intensity"))
        report = energy_and_carbon(float(sec["gpu_hours"]), profile)
        rows.append(("custom", f"{sec['gpu_hours']:.0f}",
                     _fmt(report.energy_mwh), _fmt(report.tco2e)))

    headers = ("run", "gpu_hours", "energy_mwh", "tco2e")
    print(render_table(headers, rows), end="")
    (_out_dir(args) / "carbon.csv").write_text(render_csv(headers, rows))
    return 0


def cmd_plan(args) -> int:
    cfg = _config(args)
    sec = cfg.section("schedule", required=True)

    if "name" in sec:
        entry = _registry_entry(load_registry(), "schedules", sec["name"])
        tokens = [float(t) for t in entry["stage_tokens"]]
        days = [float(d) for d in entry["stage_days"]]
        rates = [t / d for t, d in zip(tokens, days)]
        names = list(entry.get("stage_names", []))
    else:
        if "stage_tokens" not in sec:
            raise ConfigError("missing config key: schedule.stage_tokens")
        tokens = [float(t) for t in sec["stage_tokens"]]
        if "stage_rates" in sec:
            rates = [float(r) for r in sec["stage_rates"]]
        elif "stage_days" in sec:
            rates = [t / float(d) for t, d in zip(tokens, sec["stage_days"])]
        else:
            raise ConfigError("config section [schedule] needs stage_rates "
                              "or stage_days")
        names = list(sec.get("stage_names", []))
    if len(rates) != len(tokens):
        raise ConfigError("schedule stage lists have mismatched lengths")
    if not names:
        names = [f"stage{i}" for i in range(len(tokens))]

    plan = plan_schedule(list(zip(tokens, rates)), sec.get("total_tokens"))
    rows = []
    for name, toks, day in zip(names, tokens, plan.stage_days):
        print(f"stage {name}: {day:.2f} days ({toks:.4g} tokens)")
        rows.append((name, f"{toks:.6g}", f"{day:.4f}"))
    print(f"total {plan.total_days:.2f} days, "
          f"scratch {plan.scratch_days:.2f} days, "
          f"speedup {plan.speedup:.2f}x, "
          f"saving {plan.time_saving_pct:.1f}%")
    (_out_dir(args) / "plan.csv").write_text(render_csv(
        ("stage", "tokens", "days"), rows))
    return 0


# ---------------------------------------------------------------------------
# Training, growth, verification.


def cmd_train(args) -> int:
    cfg = _config(args)
    optimizer = cfg.optimizer_config()
    stream = cfg.build_stream(args.seed)
    train = cfg.section("train", required=True)
    out = _out_dir(args)
    plan = cfg.growth_plan()

    if plan is not None:
        growth = cfg.section("growth")
        ckpt, curve, reports = run_growth_plan(
            plan, stream, optimizer, seed=args.seed,
            verify_probes=growth.get("verify_probes", 50),
            verify_tol=growth.get("verify_tol", 1e-5),
            heldout_size=train.get("heldout_size", 8),
            curve_every=train.get("curve_every", 10),
            checkpoint_dir=out)
        for report in reports:
            line = (f"stage {report.stage_index}: "
                    f"hidden {report.hidden_dim}, layers {report.n_layers}, "
                    f"{report.tokens_trained} tokens, "
                    f"final loss {_fmt(report.final_loss, 4)}")
            if report.continuity_gap is not None:
                line += (f", boundary {_fmt(report.heldout_before, 4)} -> "
                         f"{_fmt(report.heldout_after, 4)} "
                         f"({100 * report.continuity_gap:.3f}% gap)")
            print(line)
    else:
        stage = cfg.train_stage_config(cfg.model_config())
        start = None
        if "resume" in train:
            start = load_checkpoint(train["resume"])
        ckpt, curve = train_stage(
            stage, start, stream, optimizer, seed=args.seed,
            curve_every=train.get("curve_every", 10),
            checkpoint_dir=out,
            checkpoint_every=train.get("checkpoint_every"),
            max_steps=train.get("max_steps"))

    save_checkpoint(ckpt, out / "final.ckpt")
    (out / "curve.csv").write_text(curve_to_csv(curve))
    if curve:
        print(f"trained to {ckpt.tokens_total} tokens in {ckpt.step} steps, "
              f"final training loss {curve[-1][1]:.4f}")
    else:
        print("token budget already satisfied; nothing to train")
    return 0


def cmd_grow(args) -> int:
    cfg = _config(args)
    ckpt = load_checkpoint(cfg.require("grow", "checkpoint"))
    target = cfg.model_config()
    anneal = cfg.require("growth", "anneal_tokens")
    old = ckpt.config

    grown = grow_checkpoint(ckpt, target, anneal)
    # Open a fresh stage cursor so a follow-up train run starts its own
    # budget and warmup rather than inheriting the parent stage's.
    grown.stage_index += 1
    grown.tokens_per_stage.append(0)
    grown.samples_seen_stage = 0

    out = _out_dir(args)
    save_checkpoint(grown, out / "grown.ckpt")
    print(f"grew hidden {old.hidden_dim} -> {target.hidden_dim}, "
          f"layers {old.n_layers} -> {target.n_layers}, "
          f"heads {old.n_heads} -> {target.n_heads}, "
          f"ffn {old.ffn_dim} -> {target.ffn_dim}")
    print(f"{len(grown.mask_state.entries)} growth masks annealing over "
          f"{anneal} tokens")
    return 0


def cmd_verify_growth(args) -> int:
    cfg = _config(args)
    sec = cfg.section("verify", required=True)
    before = load_checkpoint(cfg.require("verify", "before"))
    after = load_checkpoint(cfg.require("verify", "after"))
    report = verify_function_preservation(
        before, after, n_probes=sec.get("probes", 100),
        tol=sec.get("tol", 1e-5), seed=args.seed)
    print(report.describe())
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------
# Hyperparameter machinery.


def cmd_hpsearch(args) -> int:
    cfg = _config(args)
    sec = cfg.section("hpsearch", required=True)
    for key in ("learning_rates", "init_stds", "softmax_temperatures",
                "steps"):
        if key not in sec:
            raise ConfigError(f"missing config key: hpsearch.{key}")
    proxy = cfg.model_config()
    grid = HpGrid(learning_rates=tuple(sec["learning_rates"]),
                  init_stds=tuple(sec["init_stds"]),
                  softmax_temperatures=tuple(sec["softmax_temperatures"]))
    stream = cfg.build_stream(args.seed)
    results, best = hp_grid_search(proxy, grid, sec["steps"], stream,
                                   seed=args.seed,
                                   batch_size=sec.get("batch_size", 8))

    headers = ("learning_rate", "init_std", "softmax_temperature",
               "smoothed_loss")
    rows = [(f"{t.learning_rate:g}", f"{t.init_std:g}",
             f"{t.softmax_temperature:g}",
             "diverged" if not np.isfinite(loss) else f"{loss:.5f}")
            for t, loss in results.items()]
    print(render_table(headers, rows), end="")
    print(f"best: learning_rate={best.learning_rate:g} "
          f"init_std={best.init_std:g} "
          f"softmax_temperature={best.softmax_temperature:g}")
    (_out_dir(args) / "hpsearch.csv").write_text(render_csv(headers, rows))
    return 0


def cmd_coord_check(args) -> int:
    cfg = _config(args)
    sec = cfg.section("coordcheck", required=True)
    if "widths" not in sec:
        raise ConfigError("missing config key: coordcheck.widths")
    base = cfg.model_config()
    mode = sec.get("parameterization", "mup")
    if mode == "mup":
        family = mup_width_family(base, sec["widths"])
    elif mode == "standard":
        family = standard_width_family(base, sec["widths"])
    else:
        raise ConfigError(f"coordcheck.parameterization must be 'mup' or "
                          f"'standard', got {mode!r}")
    stream = cfg.build_stream(args.seed, window=base.context_len)
    report = coordinate_check(family, sec.get("steps", 10), stream,
                              seed=args.seed,
                              base_lr=sec.get("base_lr", 1e-2),
                              batch_size=sec.get("batch_size", 8))
    print(report.describe())

    rows = [(step, key, f"{ratio:.6f}")
            for key, series in sorted(report.ratios.items())
            for step, ratio in enumerate(series)]
    (_out_dir(args) / "coordcheck.csv").write_text(render_csv(
        ("step", "activation", "rms_ratio"), rows))
    return 0 if report.passed else 1


def cmd_predict_loss(args) -> int:
    cfg = _config(args)
    sec = cfg.section("predict", required=True)
    if "points" not in sec:
        raise ConfigError("missing config key: predict.points")
    points = [(int(w), float(loss)) for w, loss in sec["points"]]
    fit = fit_loss_scaling(points, step=sec.get("step", 0))
    print(f"loss(width) = {fit.amplitude:.6g} * width^-{fit.exponent:.6g} "
          f"+ {fit.irreducible_loss:.6g}  (residual {fit.fit_residual:.3g})")
    if fit.flagged:
        print("warning: fit flagged (loss did not improve monotonically "
              "with width); treat predictions as unreliable")
    rows = []
    for width in sec.get("widths", []):
        predicted = predict_loss(fit, width)
        print(f"predicted loss at width {width}: {predicted:.6f}")
        rows.append((width, f"{predicted:.6f}"))
    (_out_dir(args) / "predict.csv").write_text(render_csv(
        ("width", "predicted_loss"), rows))
    return 0


# ---------------------------------------------------------------------------
# Evaluation and tokenization.


def cmd_gen_eval(args) -> int:
    cfg = _config(args)
    sec = cfg.section("eval", required=True)
    families = sec.get("families", ["all"])
    if families == ["all"]:
        families = list(TASK_FAMILIES)
    for family in families:
        if family not in TASK_FAMILIES:
            known = ", ".join(TASK_FAMILIES)
            raise ConfigError(f"unknown eval family {family!r}; "
                              f"known: {known}")
    n = sec.get("n", 100)
    instances = []
    for family in families:
        batch = generate_family(family, n, seed=args.seed,
                                shots=sec.get("shots"))
        instances.extend(batch)
        print(f"{family}: {len(batch)} instances")
    path = _out_dir(args) / "instances.jsonl"
    write_instances(path, instances)
    print(f"wrote {len(instances)} instances to {path}")
    return 0


def _read_outputs(path) -> list:
    outputs = []
    try:
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    value = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ConfigError(f"outputs file {path} line {lineno} "
                                      f"is not valid JSON: {e}")
                if not isinstance(value, str):
                    raise ConfigError(f"outputs file {path} line {lineno} "
                                      f"must be a JSON string")
                outputs.append(value)
    except OSError as e:
        raise ConfigError(f"cannot read outputs {path}: {e}")
    return outputs


def _complete_with_model(ckpt, instances, max_new_tokens: int) -> list:
    if ckpt.config.vocab_size < VOCAB_SIZE:
        raise ConfigError(
            f"checkpoint vocab_size {ckpt.config.vocab_size} cannot embed "
            f"byte-tokenized prompts (needs >= {VOCAB_SIZE})")
    outputs = []
    for instance in instances:
        prompt = encode(instance.prompt)
        generated = greedy_completion(ckpt.params, ckpt.config, prompt,
                                      max_new_tokens,
                                      stop_token=NEWLINE_BYTE)
        text = decode(np.asarray(generated, dtype=np.int64))
        outputs.append(text.split("\n", 1)[0].strip())
    return outputs


def cmd_eval(args) -> int:
    cfg = _config(args)
    sec = cfg.section("eval", required=True)
    instances = read_instances(cfg.require("eval", "instances"))
    has_outputs = "outputs" in sec
    has_checkpoint = "checkpoint" in sec
    if has_outputs == has_checkpoint:
        raise ConfigError("config section [eval] needs exactly one of "
                          "outputs or checkpoint")
    if has_outputs:
        outputs = _read_outputs(sec["outputs"])
    else:
        ckpt = load_checkpoint(sec["checkpoint"])
        outputs = _complete_with_model(ckpt, instances,
                                       sec.get("max_new_tokens", 16))
    report = score(instances, outputs,
                   matching=sec.get("matching", "normalized"))
    print(report.describe())
    (_out_dir(args) / "eval.csv").write_text(report.to_csv())
    return 0


def cmd_tokenize(args) -> int:
    cfg = _config(args)
    sec = cfg.section("tokenize", required=True)
    if "inputs" not in sec or not sec["inputs"]:
        raise ConfigError("missing config key: tokenize.inputs")
    mode = sec.get("mode", "bytes")
    if mode != "bytes":
        raise ConfigError(f"tokenize.mode must be 'bytes', got {mode!r}")
    documents = []
    for path in sec["inputs"]:
        try:
            documents.append(Path(path).read_bytes())
        except OSError as e:
            raise ConfigError(f"cannot read input {path}: {e}")
    ids = tokenize_documents(documents)

    name = sec.get("name", "corpus")
    out = _out_dir(args)
    stream_file = f"{name}.bin"
    write_token_stream(out / stream_file, ids)
    write_manifest(out / f"{name}.manifest.json",
                   [{"name": name, "path": stream_file, "kind": "lm",
                     "ratio": 1.0, "tokens": int(ids.size)}])
    print(f"wrote {ids.size} tokens from {len(documents)} file(s) "
          f"to {out / stream_file}")
    return 0


# ---------------------------------------------------------------------------
# Parser and dispatch.

_STOCHASTIC = {"train", "verify-growth", "hpsearch", "coord-check",
               "gen-eval"}

_HANDLERS = {
    "train": cmd_train,
    "grow": cmd_grow,
    "verify-growth": cmd_verify_growth,
    "plan": cmd_plan,
    "cost": cmd_cost,
    "carbon": cmd_carbon,
    "hpsearch": cmd_hpsearch,
    "predict-loss": cmd_predict_loss,
    "coord-check": cmd_coord_check,
    "gen-eval": cmd_gen_eval,
    "eval": cmd_eval,
    "tokenize": cmd_tokenize,
}

_SUMMARIES = {
    "train": "train a model, staged if the config declares growth stages",
    "grow": "expand a checkpoint to a wider/deeper architecture",
    "verify-growth": "check that a grown checkpoint preserves its parent",
    "plan": "walltime plan for a staged schedule vs training from scratch",
    "cost": "training FLOPs estimate for an architecture",
    "carbon": "energy and emissions estimate from GPU-hours",
    "hpsearch": "grid-search proxy hyperparameters",
    "predict-loss": "fit width scaling and extrapolate loss",
    "coord-check": "activation-scale check across widths",
    "gen-eval": "generate synthetic evaluation instances",
    "eval": "score model or offline outputs on generated instances",
    "tokenize": "byte-tokenize text files into a binary stream + manifest",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="growlab",
        description="Desk-scale lab for growth-based language model "
                    "training.")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, handler in _HANDLERS.items():
        sub = subparsers.add_parser(name, help=_SUMMARIES[name])
        sub.add_argument("--config", default=None,
                         help="TOML run config path")
        sub.add_argument("--set", action="append", default=[],
                         metavar="KEY=VALUE",
                         help="override a config key (repeatable)")
        sub.add_argument("--out", default=".",
                         help="directory for output artifacts")
        sub.add_argument("--seed", type=int, required=name in _STOCHASTIC,
                         default=None,
                         help="run seed" + (" (required: this command is "
                              "stochastic)" if name in _STOCHASTIC else ""))
        sub.set_defaults(handler=handler)
    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except GrowlabError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
