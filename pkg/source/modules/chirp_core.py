from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from modules.errors import GeometryError, ParameterError

logger = logging.getLogger()

SPEED_OF_SOUND = 343.0  # m/s, dry air at 20 degC


def round_half_up(x: float) -> int:
    """Nearest integer sample, halves rounded up (Python's round() is banker's rounding)."""
    return math.floor(x + 0.5)


@dataclass(frozen=True)
class ChirpParams:
    """Linear chirp excitation: x(t) = sin(2pi(beta/2 t^2 + f0 t) + phi0), repeated every `cycle` seconds."""

    f0: float = 20_000.0
    "Lower bound frequency (Hz)"

    f1: float = 40_000.0
    "Upper bound frequency (Hz)"

    tau: float = 1.5e-3
    "Chirp length (s)"

    cycle: float = 11.8e-3
    "Repetition period T (s)"

    fs: float = 96_000.0
    "Sample rate (Hz)"

    phi0: float = 0.0
    "Initial phase (rad)"

    taper: float = 0.0
    "Fraction of the pulse covered by raised-cosine edges, 0 = rectangular"

    def __post_init__(self):
        for name in ("f0", "f1", "tau", "cycle", "fs", "phi0", "taper"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        if not 0 < self.f0 < self.f1 <= self.fs / 2:
            raise ParameterError(f"0 < f0 < f1 <= fs/2 violated (f0={self.f0}, f1={self.f1}, fs={self.fs})")
        if self.tau <= 0:
            raise ParameterError(f"tau > 0 violated (tau={self.tau})")
        if self.cycle <= self.tau:
            raise ParameterError(f"cycle > tau violated (cycle={self.cycle}, tau={self.tau})")
        if not 0.0 <= self.taper <= 1.0:
            raise ParameterError(f"taper must lie in [0, 1] (taper={self.taper})")
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ParameterError(f"beta = (f1 - f0)/tau must be finite and positive (beta={self.beta})")

    @property
    def beta(self) -> float:
        return (self.f1 - self.f0) / self.tau

    @property
    def n_tau(self) -> int:
        return round_half_up(self.tau * self.fs)

    @property
    def n_cycle(self) -> int:
        return round_half_up(self.cycle * self.fs)

    @property
    def band(self) -> tuple[float, float]:
        return (self.f0, self.f1)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, dct: dict):
        return cls(**{k: float(v) for k, v in dct.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class SensingGeometry:
    d_min: float = 0.30
    "Minimum sensing distance (m)"

    d_max: float = 2.0
    "Maximum sensing distance (m)"

    c: float = SPEED_OF_SOUND
    "Speed of sound in air (m/s)"

    def __post_init__(self):
        if not self.c > 0:
            raise GeometryError(f"c > 0 violated (c={self.c})")
        if not 0 < self.d_min < self.d_max:
            raise GeometryError(f"0 < d_min < d_max violated (d_min={self.d_min}, d_max={self.d_max})")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, dct: dict):
        return cls(**{k: float(v) for k, v in dct.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class CycleIndexing:
    n_tau: int
    n_cycle: int
    n_min: int
    n_max: int

    def __post_init__(self):
        if not self.n_tau < self.n_min < self.n_max < self.n_cycle:
            raise GeometryError(
                "n_tau < n_min < n_max < n_cycle violated "
                f"(n_tau={self.n_tau}, n_min={self.n_min}, n_max={self.n_max}, n_cycle={self.n_cycle})"
            )

    @property
    def gate_width(self) -> int:
        return self.n_max - self.n_min + 1


@dataclass(frozen=True)
class TimingCheck:
    name: str
    inequality: str
    value: float
    bound: float
    margin: float
    "Seconds of slack; negative when the inequality fails"

    @property
    def passed(self) -> bool:
        return self.margin >= 0


@dataclass(frozen=True)
class TimingReport:
    checks: tuple[TimingCheck, ...]
    effective_cycle: float
    n_cycle: int

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def __getitem__(self, name: str) -> TimingCheck:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def __str__(self) -> str:
        lines = []
        for check in self.checks:
            status = "pass" if check.passed else "FAIL"
            lines.append(
                f"{check.name:<10} {check.inequality:<16} {check.value * 1e3:8.4f} ms vs "
                f"{check.bound * 1e3:8.4f} ms  margin {check.margin * 1e3:+8.4f} ms  {status}"
            )
        lines.append(f"effective T = {self.effective_cycle * 1e3:.4f} ms ({self.n_cycle} samples)")
        return "\n".join(lines)


def chirp_waveform(params: ChirpParams, t: np.ndarray) -> np.ndarray:
    """Evaluates the (optionally tapered) chirp at arbitrary times; zero outside [0, tau)."""
    t = np.asarray(t, dtype=np.float64)
    inside = (t >= 0.0) & (t < params.tau)
    phase = 2.0 * np.pi * (params.beta / 2.0 * t**2 + params.f0 * t) + params.phi0
    x = np.where(inside, np.sin(phase), 0.0)

    if params.taper > 0.0:
        edge = params.taper * params.tau / 2.0
        w = np.ones_like(t)
        rising = t < edge
        falling = t > params.tau - edge
        w[rising] = 0.5 * (1.0 - np.cos(np.pi * t[rising] / edge))
        w[falling] = 0.5 * (1.0 - np.cos(np.pi * (params.tau - t[falling]) / edge))
        x = x * w

    return x


def design_chirp(params: ChirpParams) -> np.ndarray:
    t = np.arange(params.n_tau) / params.fs
    return chirp_waveform(params, t)


def validate_timing(geometry: SensingGeometry, params: ChirpParams) -> TimingReport:
    """Checks tau <= 2 d_min / c and T >= 2 d_max / c; T is the whole-sample period actually emitted."""
    n_cycle = params.n_cycle
    effective_cycle = n_cycle / params.fs

    tau_bound = 2.0 * geometry.d_min / geometry.c
    cycle_bound = 2.0 * geometry.d_max / geometry.c

    checks = (
        TimingCheck(
            name="chirp",
            inequality="tau <= 2 d_min/c",
            value=params.tau,
            bound=tau_bound,
            margin=tau_bound - params.tau,
        ),
        TimingCheck(
            name="cycle",
            inequality="T >= 2 d_max/c",
            value=effective_cycle,
            bound=cycle_bound,
            margin=effective_cycle - cycle_bound,
        ),
    )
    report = TimingReport(checks=checks, effective_cycle=effective_cycle, n_cycle=n_cycle)
    if not report.passed:
        logger.warning(f"Timing validation failed:\n{report}")
    return report


def cycle_indexing(geometry: SensingGeometry, params: ChirpParams) -> CycleIndexing:
    indexing = CycleIndexing(
        n_tau=params.n_tau,
        n_cycle=params.n_cycle,
        n_min=round_half_up(2.0 * params.fs * geometry.d_min / geometry.c),
        n_max=round_half_up(2.0 * params.fs * geometry.d_max / geometry.c),
    )
    logger.debug(f"Cycle indexing: {indexing}")
    return indexing


def build_excitation(params: ChirpParams, n_cycles: int) -> np.ndarray:
    if int(n_cycles) != n_cycles or n_cycles < 1:
        raise ParameterError(f"n_cycles must be a positive integer (got {n_cycles})")

    period = np.zeros(params.n_cycle)
    period[: params.n_tau] = design_chirp(params)
    return np.tile(period, int(n_cycles))


def param_hash(*parts: dict) -> str:
    """Short stable digest of configuration dictionaries, used as feature provenance."""
    payload = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(payload).hexdigest()[:16]
