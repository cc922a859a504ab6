"""Square-pulse baseline against the shaped identity control, under dephasing."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .ansatz import SystemConfig
from .linalg import I2, PAULI_X
from .propagator import (NoiseModel, block_superoperator, channel_average_fidelity,
                         lindblad_superoperator, propagate_constant, unitary_superoperator)
from .analytic import DETUNED, RESONANT

SQUARE = "square"
SHAPED = "shaped"
SWEEP_RANGE = (0.02, 1.5)
MIN_SWEEP_POINTS = 30
# RK4 phase error per step ~ (h w)^5 / 120; 3e-3 rad per step keeps the
# accumulated error below 1e-8 even for the longest swept pulses
_RADIANS_PER_STEP = 3e-3
CSV_COLUMNS = ("ratio", "method", "fidelity_detuned", "fidelity_resonant", "gate_time_s")


@dataclass(frozen=True)
class SweepPoint:
    ratio: float
    method: str
    fidelity_detuned: float
    fidelity_resonant: float
    gate_time: float

    def __post_init__(self):
        if self.method not in (SQUARE, SHAPED):
            raise ValueError("method must be 'square' or 'shaped'")
        if not self.gate_time > 0:
            raise ValueError("gate_time must be positive")
        for name in ("fidelity_detuned", "fidelity_resonant"):
            v = getattr(self, name)
            if not -1e-9 <= v <= 1 + 1e-9:
                raise ValueError(f"{name} = {v} outside [0, 1]")

    @property
    def fidelity_product(self) -> float:
        return self.fidelity_detuned * self.fidelity_resonant


def _block_fidelities(superop, target_detuned, target_resonant):
    return (channel_average_fidelity(block_superoperator(superop, DETUNED), target_detuned),
            channel_average_fidelity(block_superoperator(superop, RESONANT), target_resonant))


def _unitary_as_superop(u4):
    return unitary_superoperator(u4)


def square_pulse_duration(ratio: float, config: SystemConfig) -> float:
    """Resonant pi pulse: Omega T = pi with Omega = ratio * delta."""
    if not ratio > 0:
        raise ValueError("ratio must be positive")
    return math.pi / (ratio * config.delta)


def square_pulse_steps(ratio: float, config: SystemConfig) -> int:
    omega_prime = ratio * config.delta / config.rabi_ratio
    fastest = max(math.hypot(config.delta, omega_prime), ratio * config.delta)
    return max(16, math.ceil(fastest * square_pulse_duration(ratio, config) / _RADIANS_PER_STEP))


def square_pulse_fidelity(ratio: float, config: SystemConfig,
                          noise: NoiseModel | None = None) -> SweepPoint:
    """Constant drive with Omega = ratio * delta for one resonant pi pulse.

    Detuned block compared with I, resonant block with X. noise=None means noiseless.
    """
    duration = square_pulse_duration(ratio, config)
    omega_prime = ratio * config.delta / config.rabi_ratio
    steps = square_pulse_steps(ratio, config)
    if noise is None or not noise.enabled:
        s = _unitary_as_superop(propagate_constant(omega_prime, 0.0, duration, config, steps))
    else:
        s = propagate_constant(omega_prime, 0.0, duration, config, steps, noise)
    fd, fr = _block_fidelities(s, I2, PAULI_X)
    return SweepPoint(ratio, SQUARE, fd, fr, duration)


def rabi_detuned_fidelity(ratio: float, config: SystemConfig) -> float:
    """Closed form for the noiseless square pulse: off-resonant Rabi precession vs I.

    The detuned pair turns by Omega_g T about a tilted axis, Omega_g = sqrt(delta^2 + Omega'^2),
    so |Tr U|^2 = 4 cos^2(Omega_g T / 2) and F_avg = (|Tr U|^2 + 2) / 6.
    """
    duration = square_pulse_duration(ratio, config)
    omega_prime = ratio * config.delta / config.rabi_ratio
    half_angle = 0.5 * math.hypot(config.delta, omega_prime) * duration
    return (4.0 * math.cos(half_angle) ** 2 + 2.0) / 6.0


def mean_drive_ratio(waveform, config: SystemConfig) -> float:
    """Time-averaged resonant Rabi rate |Omega| over delta."""
    t = waveform.t
    omega = np.abs(waveform.omega)
    mean = np.sum(0.5 * (omega[1:] + omega[:-1]) * np.diff(t)) / (t[-1] - t[0])
    return float(mean / config.delta)


def shaped_pulse_fidelity(program, config: SystemConfig | None = None,
                          noise: NoiseModel | None = None) -> SweepPoint:
    """Propagate a designed program's waveform under the noise model; ratio = mean |Omega| / delta."""
    config = config if config is not None else program.config
    wf = program.waveform()
    noise = noise if noise is not None else NoiseModel.disabled()
    s = lindblad_superoperator(wf, config, noise)
    fd, fr = _block_fidelities(s, program.target.u_prime, program.target.u)
    return SweepPoint(mean_drive_ratio(wf, config), SHAPED, fd, fr, program.total_time)


def default_ratios(points: int = 40) -> np.ndarray:
    return np.geomspace(SWEEP_RANGE[0], SWEEP_RANGE[1], points)


def sweep(ratios: Sequence[float], config: SystemConfig,
          noise: NoiseModel | None = None) -> list[SweepPoint]:
    return [square_pulse_fidelity(float(r), config, noise) for r in ratios]


@dataclass(frozen=True)
class SpeedupSummary:
    optimal_square_ratio: float
    optimal_square_fidelity: float
    optimal_square_time: float
    shaped_ratio: float
    shaped_fidelity: float
    shaped_time: float

    @property
    def time_ratio(self) -> float:
        return self.optimal_square_time / self.shaped_time

    def to_dict(self) -> dict:
        return {**asdict(self), "time_ratio": self.time_ratio}


def speedup_report(points: Sequence[SweepPoint], shaped: SweepPoint | None = None) -> SpeedupSummary:
    """Best square point (by detuned fidelity) against the shaped pulse.

    Without an explicit shaped point the sweep must contain one.
    """
    square = sorted((p for p in points if p.method == SQUARE), key=lambda p: p.ratio)
    if len(square) < MIN_SWEEP_POINTS:
        raise ValueError(f"sweep too sparse: {len(square)} square points, need {MIN_SWEEP_POINTS}")
    lo, hi = SWEEP_RANGE
    if square[0].ratio > lo * (1 + 1e-9) or square[-1].ratio < hi * (1 - 1e-9):
        raise ValueError(f"sweep must cover ratios {lo}..{hi}")
    if shaped is None:
        shaped_pts = [p for p in points if p.method == SHAPED]
        if not shaped_pts:
            raise ValueError("no shaped point to compare against")
        shaped = shaped_pts[0]
    best = max(square, key=lambda p: p.fidelity_detuned)
    return SpeedupSummary(best.ratio, best.fidelity_detuned, best.gate_time,
                          shaped.ratio, shaped.fidelity_detuned, shaped.gate_time)


def write_sweep_csv(points: Sequence[SweepPoint], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for p in points:
            w.writerow([repr(p.ratio), p.method, repr(p.fidelity_detuned),
                        repr(p.fidelity_resonant), repr(p.gate_time)])


def read_sweep_csv(path) -> list[SweepPoint]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [SweepPoint(float(r["ratio"]), r["method"], float(r["fidelity_detuned"]),
                       float(r["fidelity_resonant"]), float(r["gate_time_s"])) for r in rows]
