"""Strict run configuration for the command line.

A run config is a TOML document validated against a fixed schema before
any work starts: unknown sections or keys are rejected by name, so a typo
fails loudly instead of silently falling back to a default. Overrides from
the command line (``--set key=value``) are merged into the document first
and then validated together with it.

Seeding policy: the command line's ``--seed`` flag is the only source of
run randomness (initialization, data order, probe inputs). The one seed
key that lives in the config, ``data.synthetic.seed``, controls the
*content* of the generated corpus, which should stay fixed while the run
seed varies.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .data import (MixSpec, TokenWindowSource, load_corpus, mix_streams)
from .errors import ConfigError
from .growth import GrowthPlan, StageConfig
from .model import ModelConfig
from .optim import PARAM_GROUPS, OptimizerConfig
from .tokenizer import DOC_SEPARATOR

# ---------------------------------------------------------------------------
# Schema.
#
# Leaves map a key to a type tag; nested dicts describe sub-tables. The
# special key "*stages" marks an array of tables validated element-wise.

_MODEL_KEYS = {
    "vocab_size": "int",
    "hidden_dim": "int",
    "n_layers": "int",
    "n_heads": "int",
    "head_dim": "int",
    "ffn_dim": "int",
    "context_len": "int",
    "softmax_temperature": "float",
    "mup_base_width": "int",
    "init_std": "float",
    "xpos_decay": "float",
}

_STAGE_KEYS = {
    "hidden_dim": "int",
    "n_layers": "int",
    "n_heads": "int",
    "ffn_dim": "int",
    "token_budget": "int",
    "lr_start": "float",
    "warmup_samples": "int",
    "batch_tokens": "int",
    "anneal_tokens": "int",
}

_SCHEMA = {
    "model": dict(_MODEL_KEYS),
    "optimizer": {
        "beta1": "float",
        "beta2": "float",
        "weight_decay": "float",
        "grad_clip_norm": "float",
        "eps": "float",
        "lr_final": "float",
        "group_lr": {group: "float" for group in PARAM_GROUPS},
    },
    "train": {
        "token_budget": "int",
        "lr_start": "float",
        "warmup_samples": "int",
        "batch_tokens": "int",
        "anneal_tokens": "int",
        "curve_every": "int",
        "checkpoint_every": "int",
        "max_steps": "int",
        "resume": "str",
        "heldout_size": "int",
    },
    "data": {
        "manifest": "str",
        "synthetic": {
            "vocab_size": "int",
            "motif_len": "int",
            "length": "int",
            "noise": "float",
            "seed": "int",
        },
    },
    "growth": {
        "anneal_tokens": "int",
        "verify_probes": "int",
        "verify_tol": "float",
        "stages": {"*stages": _STAGE_KEYS},
    },
    "grow": {
        "checkpoint": "str",
    },
    "verify": {
        "before": "str",
        "after": "str",
        "probes": "int",
        "tol": "float",
    },
    "cost": {
        "model": "str",
        "layers": "int",
        "hidden": "int",
        "seq_len": "int",
        "vocab": "int",
        "tokens": "float",
        "policy": "str",
        "stated_zettaflops": "float",
        "languages": "float_table",
    },
    "carbon": {
        "run": "str",
        "gpu_hours": "float",
        "tdp_watts": "float",
        "pue": "float",
        "grid_intensity": "float",
    },
    "schedule": {
        "name": "str",
        "stage_names": "str_list",
        "stage_tokens": "float_list",
        "stage_days": "float_list",
        "stage_rates": "float_list",
        "total_tokens": "float",
    },
    "hpsearch": {
        "learning_rates": "float_list",
        "init_stds": "float_list",
        "softmax_temperatures": "float_list",
        "steps": "int",
        "batch_size": "int",
    },
    "coordcheck": {
        "widths": "int_list",
        "steps": "int",
        "base_lr": "float",
        "parameterization": "str",
        "batch_size": "int",
    },
    "predict": {
        "points": "point_list",
        "widths": "int_list",
        "step": "int",
    },
    "eval": {
        "families": "str_list",
        "n": "int",
        "shots": "int",
        "matching": "str",
        "max_new_tokens": "int",
        "instances": "str",
        "checkpoint": "str",
        "outputs": "str",
    },
    "tokenize": {
        "inputs": "str_list",
        "name": "str",
        "mode": "str",
    },
}


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return _is_int(value) or isinstance(value, float)


def _check_leaf(path: str, tag: str, value) -> None:
    ok = {
        "int": lambda v: _is_int(v),
        "float": lambda v: _is_number(v),
        "str": lambda v: isinstance(v, str),
        "bool": lambda v: isinstance(v, bool),
        "int_list": lambda v: isinstance(v, list) and all(_is_int(x) for x in v),
        "float_list": lambda v: isinstance(v, list) and all(_is_number(x) for x in v),
        "str_list": lambda v: isinstance(v, list) and all(isinstance(x, str) for x in v),
        "point_list": lambda v: isinstance(v, list) and all(
            isinstance(p, list) and len(p) == 2 and all(_is_number(x) for x in p)
            for p in v),
        "float_table": lambda v: isinstance(v, dict) and all(
            isinstance(k, str) and _is_number(x) for k, x in v.items()),
    }[tag]
    if not ok(value):
        raise ConfigError(f"config key {path} has wrong type: expected {tag}, "
                          f"got {value!r}")


def _validate(tree: dict, schema: dict, prefix: str = "") -> None:
    for key, value in tree.items():
        path = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(f"unknown config key: {path}")
        rule = schema[key]
        if isinstance(rule, dict):
            if "*stages" in rule:
                if not isinstance(value, list):
                    raise ConfigError(f"config key {path} must be an array "
                                      f"of tables")
                for i, item in enumerate(value):
                    if not isinstance(item, dict):
                        raise ConfigError(f"config key {path}[{i}] must be "
                                          f"a table")
                    _validate(item, rule["*stages"], f"{path}[{i}].")
            else:
                if not isinstance(value, dict):
                    raise ConfigError(f"config key {path} must be a table")
                _validate(value, rule, f"{path}.")
        else:
            _check_leaf(path, rule, value)


# ---------------------------------------------------------------------------
# Override parsing.


def _parse_override_value(text: str):
    """TOML-style literal if it parses, bare string otherwise."""
    try:
        return tomllib.loads(f"x = {text}")["x"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(tree: dict, assignment: str) -> None:
    """Applies one ``dotted.key=value`` assignment in place.

    Integer components index into arrays of tables, so
    ``growth.stages.1.token_budget=4096`` adjusts the second stage.
    """
    key, sep, value = assignment.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override {assignment!r} is not of the form "
                          f"key=value")
    parts = key.split(".")
    node = tree
    for i, part in enumerate(parts[:-1]):
        if isinstance(node, list):
            node = _index_into(node, part, parts[:i + 1])
        elif part in node and isinstance(node[part], (dict, list)):
            node = node[part]
        else:
            node[part] = {}
            node = node[part]
    last = parts[-1]
    parsed = _parse_override_value(value)
    if isinstance(node, list):
        idx = _index_position(node, last, parts)
        node[idx] = parsed
    else:
        node[last] = parsed


def _index_position(array: list, part: str, parts) -> int:
    if not part.isdigit():
        raise ConfigError(f"override path {'.'.join(parts)} indexes an array "
                          f"with non-integer {part!r}")
    idx = int(part)
    if idx >= len(array):
        raise ConfigError(f"override path {'.'.join(parts)} is out of range "
                          f"(array has {len(array)} entries)")
    return idx


def _index_into(array: list, part: str, parts):
    return array[_index_position(array, part, parts)]


# ---------------------------------------------------------------------------
# The config object and its domain-object builders.


@dataclass
class RunConfig:
    """A validated TOML document plus helpers that build domain objects."""

    raw: dict = field(default_factory=dict)
    source: str = "<empty>"

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        if path is None:
            tree = {}
            source = "<overrides>"
        else:
            try:
                with open(path, "rb") as f:
                    tree = tomllib.load(f)
            except OSError as e:
                raise ConfigError(f"cannot read config {path}: {e}")
            except tomllib.TOMLDecodeError as e:
                raise ConfigError(f"config {path} is not valid TOML: {e}")
            source = str(path)
        for assignment in overrides:
            apply_override(tree, assignment)
        _validate(tree, _SCHEMA)
        return cls(raw=tree, source=source)

    def section(self, name: str, required: bool = False) -> dict:
        sec = self.raw.get(name)
        if sec is None:
            if required:
                raise ConfigError(f"config section [{name}] is required "
                                  f"for this command")
            return {}
        return sec

    def require(self, section: str, key: str):
        sec = self.section(section, required=True)
        if key not in sec:
            raise ConfigError(f"missing config key: {section}.{key}")
        return sec[key]

    # -- model / optimizer ------------------------------------------------

    def model_config(self) -> ModelConfig:
        sec = self.section("model", required=True)
        for key in ("vocab_size", "hidden_dim", "n_layers", "n_heads",
                    "head_dim", "ffn_dim", "context_len"):
            if key not in sec:
                raise ConfigError(f"missing config key: model.{key}")
        return ModelConfig(**{k: sec[k] for k in _MODEL_KEYS if k in sec})

    def optimizer_config(self) -> OptimizerConfig:
        sec = dict(self.section("optimizer"))
        group_lr = sec.pop("group_lr", None)
        kwargs = {k: float(v) for k, v in sec.items()}
        if group_lr is not None:
            full = {g: 1.0 for g in PARAM_GROUPS}
            full.update({k: float(v) for k, v in group_lr.items()})
            kwargs["group_lr"] = full
        return OptimizerConfig(**kwargs)

    # -- training stages ---------------------------------------------------

    def _stage_from(self, model: ModelConfig, train: dict,
                    extra: dict | None = None) -> StageConfig:
        merged = dict(train)
        if extra:
            merged.update(extra)
        for key in ("token_budget", "lr_start", "batch_tokens"):
            if key not in merged:
                raise ConfigError(f"missing config key: train.{key}")
        return StageConfig(
            model=model,
            token_budget=merged["token_budget"],
            lr_start=float(merged["lr_start"]),
            warmup_samples=merged.get("warmup_samples", 0),
            batch_tokens=merged["batch_tokens"],
            anneal_tokens=merged.get("anneal_tokens"),
        )

    def train_stage_config(self, model: ModelConfig) -> StageConfig:
        return self._stage_from(model, self.section("train", required=True))

    def growth_stage_models(self, base: ModelConfig) -> list:
        """Architectures for each planned stage, widening from the base.

        Structural fields default to the base model's; n_heads follows
        hidden_dim / head_dim and ffn_dim scales with the width unless
        given explicitly, so a stage entry usually only names the axis it
        grows.
        """
        models = []
        for entry in self.section("growth").get("stages", []):
            hidden = entry.get("hidden_dim", base.hidden_dim)
            default_heads = hidden // base.head_dim
            default_ffn = base.ffn_dim * hidden // base.hidden_dim
            models.append(ModelConfig(
                vocab_size=base.vocab_size,
                hidden_dim=hidden,
                n_layers=entry.get("n_layers", base.n_layers),
                n_heads=entry.get("n_heads", default_heads),
                head_dim=base.head_dim,
                ffn_dim=entry.get("ffn_dim", default_ffn),
                context_len=base.context_len,
                softmax_temperature=base.softmax_temperature,
                mup_base_width=base.mup_base_width,
                init_std=base.init_std,
                xpos_decay=base.xpos_decay,
            ))
        return models

    def growth_plan(self) -> GrowthPlan | None:
        """The staged plan, or None when the config trains a single stage.

        Stage 0 is the [model] architecture with the [train] schedule;
        each [[growth.stages]] entry adds one stage, inheriting schedule
        fields from [train] unless it overrides them.
        """
        entries = self.section("growth").get("stages")
        if not entries:
            return None
        base = self.model_config()
        train = self.section("train", required=True)
        stages = [self._stage_from(base, train)]
        schedule_keys = ("token_budget", "lr_start", "warmup_samples",
                         "batch_tokens", "anneal_tokens")
        for entry, model in zip(entries, self.growth_stage_models(base)):
            extra = {k: entry[k] for k in schedule_keys if k in entry}
            stages.append(self._stage_from(model, train, extra))
        return GrowthPlan(tuple(stages))

    # -- data ----------------------------------------------------------------

    def build_stream(self, seed: int, window: int | None = None):
        """A SampleStream from [data]; draws are ordered by ``seed``."""
        sec = self.section("data", required=True)
        if ("manifest" in sec) == ("synthetic" in sec):
            raise ConfigError("config section [data] needs exactly one of "
                              "manifest or synthetic")
        if window is None:
            window = self.model_config().context_len
        if "manifest" in sec:
            spec, sources = load_corpus(sec["manifest"], window=window,
                                        separator=DOC_SEPARATOR)
            return mix_streams(spec, sources, seed=seed)
        ids = synthetic_motif_stream(**sec["synthetic"])
        source = TokenWindowSource("synthetic", ids, window)
        return mix_streams(MixSpec({"synthetic": 1.0}),
                           {"synthetic": source}, seed=seed)


def synthetic_motif_stream(vocab_size: int = 64, motif_len: int = 11,
                           length: int = 8000, noise: float = 0.1,
                           seed: int = 0) -> np.ndarray:
    """A repeating random motif with a fraction of positions corrupted.

    The pattern is learnable by a tiny model in a few hundred steps, and
    the noise keeps the loss floor away from zero so curves stay
    informative. Content depends only on ``seed`` here, never on the run
    seed.
    """
    if not 0.0 <= noise <= 1.0:
        raise ConfigError(f"noise must be in [0, 1], got {noise}")
    if min(vocab_size, motif_len, length) < 1:
        raise ConfigError("vocab_size, motif_len, and length must be >= 1")
    rng = np.random.default_rng([seed, 23])
    motif = rng.integers(0, vocab_size, size=motif_len)
    reps = -(-length // motif_len)
    ids = np.tile(motif, reps)[:length]
    flips = rng.random(length) < noise
    ids[flips] = rng.integers(0, vocab_size, size=int(flips.sum()))
    return ids.astype(np.int64)
