"""Closed-form training cost accounting: FLOPs, schedule time, energy, carbon.

Training FLOPs per token for a decoder-only transformer follow the
Megatron-style closed form

    c * l * h^2 * (1 + s/(6h) + V/(16*l*h))

with l layers, hidden width h, sequence length s and vocabulary V. The
coefficient c counts matmul passes: 72 for forward plus backward, 96 when
activations are recomputed in full during the backward pass. Runs that do
not disclose their recomputation policy are bracketed by the pair [72, 96]
and reported as mid +/- half-range.

Reference architectures and disclosed deployment numbers live in
``registry.toml`` next to this module; they are inputs, not constants baked
into code.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError

ZETTA = 1e21

# Matmul-pass coefficients per activation recomputation policy, as
# (low, high) bounds.
RECOMPUTE_COEFF = {
    "none": (72.0, 72.0),
    "full": (96.0, 96.0),
    "unknown": (72.0, 96.0),
}


def _require_positive(name, value):
    if not value > 0:
        raise ConfigError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class ArchCost:
    """Architectural inputs to the FLOPs formula."""

    layers: int
    hidden: int
    seq_len: int
    vocab: int

    def __post_init__(self):
        for name in ("layers", "hidden", "seq_len", "vocab"):
            _require_positive(name, getattr(self, name))

    # Single-letter aliases matching the formula's notation.
    @property
    def l(self):
        return self.layers

    @property
    def h(self):
        return self.hidden

    @property
    def s(self):
        return self.seq_len

    @property
    def V(self):
        return self.vocab


@dataclass(frozen=True)
class FlopsEstimate:
    """A bracketed FLOPs value; low = mid = high for known policies."""

    low: float
    mid: float
    high: float

    def __post_init__(self):
        if not (self.low <= self.mid <= self.high):
            raise ConfigError(
                f"estimate out of order: low={self.low} mid={self.mid} high={self.high}"
            )
        expected_mid = (self.low + self.high) / 2.0
        # mid is defined as the midpoint; tolerate only float rounding.
        if abs(self.mid - expected_mid) > 1e-9 * max(1.0, abs(expected_mid)):
            raise ConfigError(f"mid {self.mid} is not the midpoint of [{self.low}, {self.high}]")

    @property
    def half_range(self):
        return (self.high - self.low) / 2.0

    def scaled(self, factor: float) -> "FlopsEstimate":
        if factor < 0:
            raise ConfigError(f"scale factor must be nonnegative, got {factor}")
        return FlopsEstimate(self.low * factor, self.mid * factor, self.high * factor)

    def __add__(self, other: "FlopsEstimate") -> "FlopsEstimate":
        return FlopsEstimate(self.low + other.low, self.mid + other.mid, self.high + other.high)

    def in_zetta(self) -> "FlopsEstimate":
        # True division, not reciprocal multiplication, so x/ZETTA*ZETTA
        # round-trips cleanly for representable values.
        return FlopsEstimate(self.low / ZETTA, self.mid / ZETTA, self.high / ZETTA)

    def describe(self, unit: str = "zettaFLOPs") -> str:
        z = self.in_zetta()
        if z.half_range == 0.0:
            return f"{z.mid:.2f} {unit}"
        return f"{z.mid:.2f} ± {z.half_range:.2f} {unit}"


@dataclass(frozen=True)
class HardwareProfile:
    """Per-GPU power/throughput description of a deployment."""

    tdp_watts: float
    peak_tflops_per_gpu: float = 312.0
    measured_tflops_per_gpu: float | None = None
    n_gpus: int | None = None
    pue: float = 1.0
    grid_intensity: float | None = None  # tCO2e per MWh; no default exists

    def __post_init__(self):
        _require_positive("tdp_watts", self.tdp_watts)
        _require_positive("peak_tflops_per_gpu", self.peak_tflops_per_gpu)
        if self.measured_tflops_per_gpu is not None:
            if not 0 < self.measured_tflops_per_gpu <= self.peak_tflops_per_gpu:
                raise ConfigError(
                    f"measured throughput {self.measured_tflops_per_gpu} must lie in "
                    f"(0, peak={self.peak_tflops_per_gpu}]"
                )
        if self.pue < 1.0:
            raise ConfigError(f"pue must be >= 1, got {self.pue}")
        if self.grid_intensity is not None and self.grid_intensity < 0:
            raise ConfigError(f"grid_intensity must be >= 0, got {self.grid_intensity}")


def flops_per_token(arch: ArchCost, policy: str) -> FlopsEstimate:
    """Bracketed FLOPs spent per training token under the given policy."""
    if policy not in RECOMPUTE_COEFF:
        raise ConfigError(f"unknown recompute policy {policy!r}; expected one of "
                          f"{sorted(RECOMPUTE_COEFF)}")
    c_low, c_high = RECOMPUTE_COEFF[policy]
    l, h, s, V = float(arch.layers), float(arch.hidden), float(arch.seq_len), float(arch.vocab)
    base = l * h * h * (1.0 + s / (6.0 * h) + V / (16.0 * l * h))
    low, high = c_low * base, c_high * base
    return FlopsEstimate(low, (low + high) / 2.0, high)


def training_flops(arch: ArchCost, tokens: float, policy: str) -> FlopsEstimate:
    """Total training FLOPs for a token budget."""
    if tokens < 0:
        raise ConfigError(f"tokens must be >= 0, got {tokens}")
    return flops_per_token(arch, policy).scaled(float(tokens))


def training_flops_staged(stages, policy: str) -> FlopsEstimate:
    """Sum of per-stage estimates; stages is an iterable of (arch, tokens)."""
    total = FlopsEstimate(0.0, 0.0, 0.0)
    for arch, tokens in stages:
        total = total + training_flops(arch, tokens, policy)
    return total


def split_cost_by_language(estimate: FlopsEstimate, ratios: dict) -> dict:
    """Split an estimate proportionally across languages.

    Ratios must be positive and sum to 1 within rounding.
    """
    if not ratios:
        raise ConfigError("ratios must be non-empty")
    total = sum(ratios.values())
    if any(r <= 0 for r in ratios.values()):
        raise ConfigError(f"ratios must be positive, got {ratios}")
    if abs(total - 1.0) > 1e-6:
        raise ConfigError(f"ratios must sum to 1, got {total}")
    return {lang: estimate.scaled(r) for lang, r in ratios.items()}


@dataclass(frozen=True)
class SchedulePlan:
    """Durations of a staged run vs training everything at the final rate."""

    stage_days: tuple
    total_days: float
    scratch_days: float
    speedup: float
    time_saving_pct: float


def plan_schedule(stages, total_tokens: float | None = None) -> SchedulePlan:
    """Walltime plan for a staged run.

    ``stages`` is a list of (tokens, tokens_per_day) pairs in stage order.
    The scratch alternative spends the whole budget at the final stage's
    rate, which is the slowest (largest model) rate in a growth run.
    """
    stages = list(stages)
    if not stages:
        raise ConfigError("at least one stage required")
    for tokens, rate in stages:
        if tokens < 0:
            raise ConfigError(f"stage tokens must be >= 0, got {tokens}")
        if not rate > 0:
            raise ConfigError(f"stage rate must be positive, got {rate}")
    if total_tokens is None:
        total_tokens = sum(tokens for tokens, _ in stages)
    stage_days = tuple(tokens / rate for tokens, rate in stages)
    total_days = sum(stage_days)
    final_rate = stages[-1][1]
    scratch_days = total_tokens / final_rate
    speedup = scratch_days / total_days
    saving = 100.0 * (1.0 - total_days / scratch_days)
    return SchedulePlan(stage_days, total_days, scratch_days, speedup, saving)


def utilization(measured_tflops_per_gpu: float, peak_tflops_per_gpu: float) -> float:
    """Achieved fraction of peak throughput, in percent."""
    _require_positive("peak_tflops_per_gpu", peak_tflops_per_gpu)
    if measured_tflops_per_gpu <= 0:
        raise ConfigError(f"measured throughput must be positive, got {measured_tflops_per_gpu}")
    if measured_tflops_per_gpu > peak_tflops_per_gpu:
        raise ConfigError(
            f"measured throughput {measured_tflops_per_gpu} exceeds peak {peak_tflops_per_gpu}"
        )
    return 100.0 * measured_tflops_per_gpu / peak_tflops_per_gpu


@dataclass(frozen=True)
class CarbonReport:
    energy_mwh: float
    tco2e: float | None  # None when the profile supplies no grid intensity


def energy_and_carbon(gpu_hours: float, profile: HardwareProfile) -> CarbonReport:
    """Site energy from GPU-hours x TDP x PUE; emissions need a grid intensity."""
    if gpu_hours < 0:
        raise ConfigError(f"gpu_hours must be >= 0, got {gpu_hours}")
    energy_mwh = gpu_hours * profile.tdp_watts * profile.pue / 1e6
    tco2e = None
    if profile.grid_intensity is not None:
        tco2e = energy_mwh * profile.grid_intensity
    return CarbonReport(energy_mwh, tco2e)


# ---------------------------------------------------------------------------
# Registry of published reference runs.

_REGISTRY_PATH = Path(__file__).with_name("registry.toml")


def load_registry(path=None) -> dict:
    """Load the bundled (or a user-supplied) registry of reference runs."""
    p = Path(path) if path is not None else _REGISTRY_PATH
    try:
        with open(p, "rb") as f:
            return tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"registry file not found: {p}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"registry file {p} is not valid TOML: {e}")


def registry_arch(entry: dict) -> ArchCost:
    """Build an ArchCost from a registry model entry."""
    try:
        return ArchCost(
            layers=int(entry["layers"]),
            hidden=int(entry["hidden"]),
            seq_len=int(entry["seq_len"]),
            vocab=int(entry["vocab"]),
        )
    except KeyError as e:
        raise ConfigError(f"registry model entry missing key {e.args[0]!r}")


def registry_profile(entry: dict) -> HardwareProfile:
    """Build a HardwareProfile from a registry run entry."""
    if "tdp_watts" not in entry:
        raise ConfigError("registry run entry missing key 'tdp_watts'")
    return HardwareProfile(
        tdp_watts=float(entry["tdp_watts"]),
        peak_tflops_per_gpu=float(entry.get("peak_tflops_per_gpu", 312.0)),
        measured_tflops_per_gpu=(
            float(entry["measured_tflops_per_gpu"])
            if "measured_tflops_per_gpu" in entry
            else None
        ),
        pue=float(entry.get("pue", 1.0)),
        grid_intensity=(
            float(entry["grid_intensity"]) if "grid_intensity" in entry else None
        ),
    )


# ---------------------------------------------------------------------------
# Report rendering shared by the CLI.


def render_table(headers, rows) -> str:
    """Align rows of stringable cells under headers into a plain-text table."""
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for j, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_csv(headers, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(headers)
    writer.writerows(rows)
    return buf.getvalue()
