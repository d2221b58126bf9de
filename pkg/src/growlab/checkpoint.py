"""Checkpoint container and its binary on-disk format.

A checkpoint is the complete training state: config, parameters, optimizer
moments, the training cursor (global step, per-stage token counts, samples
seen in the current stage), growth-mask state, and the named RNG substreams
(data order and growth surgery). Saving and loading round-trips every bit:
resuming from a checkpoint continues the exact run.

File layout (all integers little-endian inside array blobs):

    growlab-checkpoint-v1\n
    <decimal header length>\n
    <header JSON>
    <raw float32 blob, concatenated tensors>

The header carries the tensor index (name, kind, shape, offset) plus a
sha256 over the blob; any payload corruption is detected at load time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointFormatError, ChecksumError, GrowthError
from .model import ModelConfig, Parameters, init_parameters, param_names

FORMAT_VERSION = 1
_MAGIC = b"growlab-checkpoint-v1\n"


def _rng_from_state(state: dict) -> np.random.Generator:
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = state
    return gen


def _rng_state(seed_seq) -> dict:
    return np.random.default_rng(seed_seq).bit_generator.state


@dataclass
class Checkpoint:
    config: ModelConfig
    params: Parameters
    opt_m: dict
    opt_v: dict
    step: int
    stage_index: int
    tokens_per_stage: list
    samples_seen_stage: int
    mask_state: "GrowthMaskState"
    rng_state: dict = field(default_factory=dict)

    @property
    def tokens_total(self) -> int:
        return int(sum(self.tokens_per_stage))

    @property
    def tokens_stage(self) -> int:
        return int(self.tokens_per_stage[-1])

    def data_rng(self) -> np.random.Generator:
        return _rng_from_state(self.rng_state["data"])

    def growth_rng(self) -> np.random.Generator:
        return _rng_from_state(self.rng_state["growth"])

    def copy(self) -> "Checkpoint":
        return Checkpoint(
            config=self.config,
            params=self.params.copy(),
            opt_m={k: v.copy() for k, v in self.opt_m.items()},
            opt_v={k: v.copy() for k, v in self.opt_v.items()},
            step=self.step,
            stage_index=self.stage_index,
            tokens_per_stage=list(self.tokens_per_stage),
            samples_seen_stage=self.samples_seen_stage,
            mask_state=self.mask_state,
            rng_state=json.loads(json.dumps(self.rng_state)),
        )

    def equals(self, other: "Checkpoint") -> bool:
        """Bit-level equality of the full training state."""
        if self.config != other.config:
            return False
        cursor = ("step", "stage_index", "samples_seen_stage")
        if any(getattr(self, f) != getattr(other, f) for f in cursor):
            return False
        if list(self.tokens_per_stage) != list(other.tokens_per_stage):
            return False
        if self.mask_state.to_dicts() != other.mask_state.to_dicts():
            return False
        if self.rng_state != other.rng_state:
            return False
        for mine, theirs in ((self.params.arrays, other.params.arrays),
                             (self.opt_m, other.opt_m), (self.opt_v, other.opt_v)):
            if list(mine) != list(theirs):
                return False
            for name in mine:
                a, b = mine[name], theirs[name]
                if a.dtype != b.dtype or not np.array_equal(a, b):
                    return False
        return True


def fresh_checkpoint(config: ModelConfig, seed: int) -> Checkpoint:
    """A step-0 checkpoint with freshly initialized parameters."""
    from .growth import GrowthMaskState  # deferred: growth imports this module

    params = init_parameters(config, seed)
    zeros = {n: np.zeros_like(params[n]) for n in params.names()}
    return Checkpoint(
        config=config,
        params=params,
        opt_m=zeros,
        opt_v={n: z.copy() for n, z in zeros.items()},
        step=0,
        stage_index=0,
        tokens_per_stage=[0],
        samples_seen_stage=0,
        mask_state=GrowthMaskState(()),
        rng_state={"data": _rng_state([seed, 101]), "growth": _rng_state([seed, 202])},
    )


# ---------------------------------------------------------------------------
# Serialization.


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    expected = param_names(ckpt.config)
    if ckpt.params.names() != expected:
        raise GrowthError("parameter names out of canonical order; refusing to save")
    chunks = []
    index = []
    offset = 0
    for kind, table in (("param", ckpt.params.arrays),
                        ("m", ckpt.opt_m), ("v", ckpt.opt_v)):
        for name in expected:
            arr = np.ascontiguousarray(table[name], dtype="<f4")
            raw = arr.tobytes()
            index.append({"name": name, "kind": kind, "shape": list(arr.shape),
                          "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
    blob = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "step": ckpt.step,
        "stage_index": ckpt.stage_index,
        "tokens_per_stage": [int(t) for t in ckpt.tokens_per_stage],
        "samples_seen_stage": int(ckpt.samples_seen_stage),
        "mask_entries": ckpt.mask_state.to_dicts(),
        "rng_state": ckpt.rng_state,
        "tensors": index,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(f"{len(payload)}\n".encode("ascii"))
        f.write(payload)
        f.write(blob)


def load_checkpoint(path) -> Checkpoint:
    from .growth import GrowthMaskState

    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {e}")
    if not raw.startswith(_MAGIC):
        raise CheckpointFormatError(f"{path} is not a growlab checkpoint "
                                    f"(bad magic)")
    rest = raw[len(_MAGIC):]
    newline = rest.find(b"\n")
    if newline < 0:
        raise CheckpointFormatError(f"{path}: truncated header length")
    try:
        header_len = int(rest[:newline])
    except ValueError:
        raise CheckpointFormatError(f"{path}: malformed header length")
    header_start = newline + 1
    header_bytes = rest[header_start:header_start + header_len]
    if len(header_bytes) != header_len:
        raise CheckpointFormatError(f"{path}: truncated header")
    try:
        header = json.loads(header_bytes)
    except json.JSONDecodeError as e:
        raise CheckpointFormatError(f"{path}: header is not valid JSON: {e}")
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(
            f"{path}: format version {version!r} unsupported; this build reads "
            f"version {FORMAT_VERSION}"
        )
    blob = rest[header_start + header_len:]
    digest = hashlib.sha256(blob).hexdigest()
    if digest != header["blob_sha256"]:
        raise ChecksumError(f"{path}: payload checksum mismatch (file corrupted)")

    tables = {"param": {}, "m": {}, "v": {}}
    for entry in header["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        segment = blob[start:start + nbytes]
        if len(segment) != nbytes:
            raise ChecksumError(f"{path}: tensor {entry['name']!r} extends past blob")
        arr = np.frombuffer(segment, dtype="<f4").reshape(entry["shape"]).copy()
        tables[entry["kind"]][entry["name"]] = arr

    config = ModelConfig.from_dict(header["config"])
    expected = param_names(config)
    for kind in tables:
        if sorted(tables[kind]) != sorted(expected):
            raise CheckpointFormatError(
                f"{path}: tensor index does not cover the declared architecture"
            )
    ordered = lambda table: {name: table[name] for name in expected}
    return Checkpoint(
        config=config,
        params=Parameters(ordered(tables["param"])),
        opt_m=ordered(tables["m"]),
        opt_v=ordered(tables["v"]),
        step=int(header["step"]),
        stage_index=int(header["stage_index"]),
        tokens_per_stage=[int(t) for t in header["tokens_per_stage"]],
        samples_seen_stage=int(header["samples_seen_stage"]),
        mask_state=GrowthMaskState.from_dicts(header["mask_entries"]),
        rng_state=header["rng_state"],
    )
