"""Sample sources, ratio mixing, and the binary corpus format.

Every source is memoryless: draw(rng) produces one sample using only the
generator passed in, so the training loop owns data order through the RNG
state stored in its checkpoint, and resuming reproduces the exact sequence.

A sample is a window of context+1 token ids plus a loss mask aligned with
the targets: mask[i] gates the prediction of tokens[i+1]. Plain language
modeling masks everything in; teacher samples mask in only the label spans,
which is how instruction data and ordinary text share one objective.

On disk a corpus is flat little-endian uint32 token ids; a JSON manifest
names the streams, their files, kinds, and mixing ratios.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

SEPARATOR_FILL = 0  # overridden per call; see TeacherSource


@dataclass
class Sample:
    tokens: np.ndarray     # (window + 1,) int64
    loss_mask: np.ndarray  # (window,) float32, aligned with targets
    source: str


class TokenWindowSource:
    """Uniform random windows from one flat token stream."""

    def __init__(self, name: str, ids, window: int):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 1:
            raise ConfigError(f"stream {name!r} must be one-dimensional")
        if window < 1:
            raise ConfigError("window must be >= 1")
        if ids.size < window + 1:
            raise ConfigError(f"stream {name!r} has {ids.size} tokens; "
                              f"needs at least {window + 1}")
        self.name = name
        self.ids = ids
        self.window = window

    def draw(self, rng: np.random.Generator) -> Sample:
        start = int(rng.integers(0, self.ids.size - self.window))
        tokens = self.ids[start:start + self.window + 1].copy()
        mask = np.ones(self.window, dtype=np.float32)
        return Sample(tokens=tokens, loss_mask=mask, source=self.name)


class TeacherSource:
    """Packs (prompt, label) pairs into windows, loss on labels only."""

    def __init__(self, name: str, pairs, window: int, separator: int):
        if not pairs:
            raise ConfigError(f"teacher stream {name!r} is empty")
        if window < 1:
            raise ConfigError("window must be >= 1")
        self.name = name
        self.window = window
        self.separator = int(separator)
        self.pairs = []
        for prompt, label in pairs:
            prompt = np.asarray(prompt, dtype=np.int64)
            label = np.asarray(label, dtype=np.int64)
            if label.size == 0:
                raise ConfigError(f"teacher stream {name!r} has an empty label")
            self.pairs.append((prompt, label))

    def draw(self, rng: np.random.Generator) -> Sample:
        need = self.window + 1
        tokens = np.empty(need, dtype=np.int64)
        label_flags = np.zeros(need, dtype=bool)
        filled = 0
        while filled < need:
            prompt, label = self.pairs[int(rng.integers(0, len(self.pairs)))]
            piece = np.concatenate([prompt, label, [self.separator]])
            flags = np.zeros(piece.size, dtype=bool)
            flags[prompt.size:prompt.size + label.size] = True
            take = min(piece.size, need - filled)
            tokens[filled:filled + take] = piece[:take]
            label_flags[filled:filled + take] = flags[:take]
            filled += take
        # mask[i] gates the prediction of tokens[i+1].
        mask = label_flags[1:].astype(np.float32)
        return Sample(tokens=tokens, loss_mask=mask, source=self.name)


@dataclass(frozen=True)
class MixSpec:
    """Named positive weights; normalized on use."""

    weights: dict

    def __post_init__(self):
        if not self.weights:
            raise ConfigError("mix spec needs at least one stream")
        for name, w in self.weights.items():
            if not w > 0:
                raise ConfigError(f"mix weight for {name!r} must be positive, "
                                  f"got {w}")

    def normalized(self) -> dict:
        total = sum(self.weights.values())
        return {name: w / total for name, w in self.weights.items()}


class SampleStream:
    """Mixes sources sample-by-sample at the MixSpec ratios.

    Each sample's source is an independent draw, so teacher samples land
    interleaved inside ordinary batches rather than in whole batches of
    their own.
    """

    def __init__(self, spec: MixSpec, sources: dict, seed: int = 0):
        missing = [name for name in spec.weights if name not in sources]
        if missing:
            raise ConfigError(f"mix spec references missing streams: {missing}")
        self.spec = spec
        self.names = list(spec.weights)
        self.probs = np.array([spec.normalized()[n] for n in self.names])
        self.sources = {name: sources[name] for name in self.names}
        self.rng = np.random.default_rng(seed)

    @property
    def state(self) -> dict:
        return self.rng.bit_generator.state

    def set_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state

    def draw_sample(self, rng=None) -> Sample:
        rng = self.rng if rng is None else rng
        idx = int(rng.choice(len(self.names), p=self.probs))
        return self.sources[self.names[idx]].draw(rng)

    def draw_batch(self, batch_size: int, rng=None):
        """(tokens (B, W+1) int64, loss_mask (B, W) float32, source names)."""
        if batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        samples = [self.draw_sample(rng) for _ in range(batch_size)]
        tokens = np.stack([s.tokens for s in samples])
        mask = np.stack([s.loss_mask for s in samples])
        return tokens, mask, [s.source for s in samples]


def mix_streams(spec: MixSpec, sources: dict, seed: int) -> SampleStream:
    """The mixing entry point; returns a stream owning its RNG."""
    return SampleStream(spec, sources, seed=seed)


# ---------------------------------------------------------------------------
# On-disk corpus format.


def write_token_stream(path, ids) -> None:
    ids = np.asarray(ids)
    if ids.ndim != 1:
        raise ConfigError("token stream must be one-dimensional")
    if ids.size and (np.any(ids < 0) or np.any(ids > np.iinfo(np.uint32).max)):
        raise ConfigError("token ids must fit in uint32")
    ids.astype("<u4").tofile(path)


def read_token_stream(path) -> np.ndarray:
    return np.fromfile(path, dtype="<u4").astype(np.int64)


def write_teacher_stream(path, pairs) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for prompt, label in pairs:
            row = {"prompt": [int(t) for t in prompt],
                   "label": [int(t) for t in label]}
            f.write(json.dumps(row) + "\n")


def read_teacher_stream(path) -> list:
    pairs = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            pairs.append((row["prompt"], row["label"]))
    return pairs


def write_manifest(path, streams) -> None:
    """streams: list of dicts with name, path, kind ('lm'|'teacher'), ratio."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"streams": streams}, f, indent=2)


def load_corpus(manifest_path, window: int, separator: int):
    """Builds (MixSpec, sources) from a manifest; paths resolve relative to it."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read manifest {manifest_path}: {e}")
    entries = manifest.get("streams")
    if not entries:
        raise ConfigError(f"manifest {manifest_path} lists no streams")
    weights, sources = {}, {}
    for entry in entries:
        try:
            name, rel, kind, ratio = (entry["name"], entry["path"],
                                      entry["kind"], entry["ratio"])
        except (KeyError, TypeError) as e:
            raise ConfigError(f"manifest stream entry malformed: {e}")
        full = manifest_path.parent / rel
        if kind == "lm":
            sources[name] = TokenWindowSource(name, read_token_stream(full),
                                              window)
        elif kind == "teacher":
            sources[name] = TeacherSource(name, read_teacher_stream(full),
                                          window, separator)
        else:
            raise ConfigError(f"unknown stream kind {kind!r} for {name!r}")
        weights[name] = float(ratio)
    return MixSpec(weights), sources
