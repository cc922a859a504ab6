"""Pulse ansatz: zeta(t) as a sum of sin^n terms, its inversion to the drive
amplitude Omega'(t), validity checks and waveform sampling/export."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import SynthesisError, UndersamplingError
from .quadrature import gauss_legendre

TWO_PI = 2.0 * math.pi
KHZ = TWO_PI * 1e3  # angular frequency of 1 kHz
US = 1e-6

VALIDITY_MARGIN = 1e-9
PROBE_POINTS = 10_000
DEFAULT_SAMPLE_RATE = 1e9
# sample rate must exceed this many times the highest Rabi frequency
OVERSAMPLING = 20.0

CSV_HEADER = ("t_s", "omega_prime_rad_s", "omega_rad_s", "phase_rad")

RATE_CONSTRAINT = "|2*zeta_dot/delta| < 1"
SIN_CONSTRAINT = "sin(2*zeta) != 0"


def _finite_or_inf(x):
    return None if x is None or math.isinf(x) else float(x)


@dataclass(frozen=True)
class SystemConfig:
    """Detuning, Rabi ratio and coherence times. Frequencies are angular (rad/s)."""

    delta: float
    rabi_ratio: float = 1.7
    t2_detuned: float = math.inf
    t2_resonant: float = math.inf
    omega12: float | None = None
    omega34: float | None = None

    def __post_init__(self):
        for name in ("delta", "rabi_ratio"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")
        for name in ("t2_detuned", "t2_resonant"):
            v = getattr(self, name)
            if v is None:
                object.__setattr__(self, name, math.inf)
            elif not v > 0:
                raise ValueError(f"{name} must be positive or infinite, got {v!r}")

    @classmethod
    def reference(cls) -> "SystemConfig":
        """The 9Be+ hyperfine configuration: 81 kHz detuning, ratio 1.7."""
        return cls(
            delta=81.0 * KHZ,
            rabi_ratio=1.7,
            t2_detuned=1.1e-3,
            t2_resonant=1.9e-3,
            omega12=TWO_PI * 48.798e6,
            omega34=TWO_PI * 48.879e6,
        )

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        # JSON has no infinity; null means "no dephasing"
        return {
            "delta": self.delta,
            "rabi_ratio": self.rabi_ratio,
            "t2_detuned": _finite_or_inf(self.t2_detuned),
            "t2_resonant": _finite_or_inf(self.t2_resonant),
            "omega12": self.omega12,
            "omega34": self.omega34,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        return cls(
            delta=float(d["delta"]),
            rabi_ratio=float(d.get("rabi_ratio", 1.7)),
            t2_detuned=math.inf if d.get("t2_detuned") is None else float(d["t2_detuned"]),
            t2_resonant=math.inf if d.get("t2_resonant") is None else float(d["t2_resonant"]),
            omega12=d.get("omega12"),
            omega34=d.get("omega34"),
        )


@dataclass(frozen=True)
class PulseAnsatz:
    """zeta(t) = phi_z + sum_n A_n sin^n(pi t / T), with n = 3, 4, ...

    Starting at n = 3 pins zeta_dot and zeta_ddot to zero at both ends, so the
    drive starts and stops smoothly when phi_z = pi/4.
    """

    phi_z: float
    coefficients: tuple[float, ...]
    duration: float
    drive_phase: float = 0.0

    def __post_init__(self):
        coeffs = tuple(float(a) for a in self.coefficients)
        object.__setattr__(self, "coefficients", coeffs)
        if not all(math.isfinite(a) for a in coeffs):
            raise ValueError("coefficients must be finite")
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ValueError(f"duration must be positive, got {self.duration!r}")
        if not (math.isfinite(self.phi_z) and math.isfinite(self.drive_phase)):
            raise ValueError("phi_z and drive_phase must be finite")

    @property
    def orders(self) -> range:
        return range(3, 3 + len(self.coefficients))

    def derivatives(self, t):
        """(zeta, zeta_dot, zeta_ddot) at t, analytic, no range checking."""
        t = np.asarray(t, dtype=float)
        w = math.pi / self.duration
        s = np.sin(w * t)
        c = np.cos(w * t)
        z = np.full_like(s, self.phi_z)
        zd = np.zeros_like(s)
        zdd = np.zeros_like(s)
        for n, a in zip(self.orders, self.coefficients):
            s_n2 = s ** (n - 2)
            s_n1 = s_n2 * s
            z = z + a * s_n1 * s
            zd = zd + a * n * s_n1 * c * w
            zdd = zdd + a * w * w * (n * (n - 1) * s_n2 * c * c - n * s_n1 * s)
        return z, zd, zdd

    def with_coefficients(self, coefficients) -> "PulseAnsatz":
        return dataclasses.replace(self, coefficients=tuple(coefficients))

    def with_duration(self, duration: float) -> "PulseAnsatz":
        return dataclasses.replace(self, duration=float(duration))

    def to_dict(self) -> dict:
        return {
            "phi_z": self.phi_z,
            "coefficients": list(self.coefficients),
            "duration": self.duration,
            "drive_phase": self.drive_phase,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PulseAnsatz":
        return cls(
            phi_z=float(d["phi_z"]),
            coefficients=tuple(d["coefficients"]),
            duration=float(d["duration"]),
            drive_phase=float(d.get("drive_phase", 0.0)),
        )


def _check_range(ansatz: PulseAnsatz, t):
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t < 0) or np.any(t > ansatz.duration):
        raise ValueError(f"t must lie in [0, {ansatz.duration!r}]")
    return t


def eval_zeta(ansatz: PulseAnsatz, t):
    """zeta, zeta_dot, zeta_ddot at t in [0, T]. Scalars in, floats out."""
    t = _check_range(ansatz, t)
    z, zd, zdd = ansatz.derivatives(t)
    if t.ndim == 0:
        return float(z), float(zd), float(zdd)
    return z, zd, zdd


def _violations(z, zd, delta, margin=VALIDITY_MARGIN):
    rate = (2.0 * zd / delta) ** 2
    bad_rate = ~(rate < 1.0 - margin)
    s2 = np.sin(2.0 * z)
    bad_sin = ~(np.abs(s2) > margin)
    if s2.ndim and s2.size > 1:
        # a zero crossing between two probes is a violation too
        flips = np.signbit(s2[1:]) != np.signbit(s2[:-1])
        bad_sin[1:] |= flips
    return bad_rate, bad_sin


def _raise_first_violation(t, bad_rate, bad_sin):
    t = np.atleast_1d(t)
    bad_rate = np.atleast_1d(bad_rate)
    bad_sin = np.atleast_1d(bad_sin)
    i_rate = int(np.argmax(bad_rate)) if bad_rate.any() else None
    i_sin = int(np.argmax(bad_sin)) if bad_sin.any() else None
    if i_rate is not None and (i_sin is None or i_rate <= i_sin):
        raise SynthesisError(
            f"ansatz invalid at t = {t[i_rate]:.6e} s: {RATE_CONSTRAINT} violated",
            t=float(t[i_rate]), constraint=RATE_CONSTRAINT)
    raise SynthesisError(
        f"ansatz invalid at t = {t[i_sin]:.6e} s: {SIN_CONSTRAINT} violated",
        t=float(t[i_sin]), constraint=SIN_CONSTRAINT)


def omega_prime_from_zeta(z, zd, zdd, delta):
    """Detuned-transition Rabi rate that makes zeta(t) the exact solution.

    Omega' = 2 zeta_ddot / (delta q) - delta q cot(2 zeta), q = sqrt(1 - (2 zeta_dot/delta)^2).
    No validity checks.
    """
    q = np.sqrt(1.0 - (2.0 * zd / delta) ** 2)
    return 2.0 * zdd / (delta * q) - delta * q * np.cos(2.0 * z) / np.sin(2.0 * z)


def omega_prime_of_t(ansatz: PulseAnsatz, config: SystemConfig, t):
    """Signed Omega'(t) in rad/s; raises SynthesisError where the ansatz is invalid."""
    t = _check_range(ansatz, t)
    z, zd, zdd = ansatz.derivatives(t)
    bad_rate, bad_sin = _violations(z, zd, config.delta)
    if bad_rate.any() or bad_sin.any():
        _raise_first_violation(t, bad_rate, bad_sin)
    out = omega_prime_from_zeta(z, zd, zdd, config.delta)
    return float(out) if t.ndim == 0 else out


class ValidityMargins(NamedTuple):
    rate: float  # min of 1 - (2 zeta_dot/delta)^2 over the probe grid
    sin: float  # min of |sin 2 zeta|


def validity_margins(ansatz: PulseAnsatz, config: SystemConfig,
                     points: int = PROBE_POINTS) -> ValidityMargins:
    t = np.linspace(0.0, ansatz.duration, points + 1)
    z, zd, _ = ansatz.derivatives(t)
    return _margins(z, zd, config.delta)


def _margins(z, zd, delta):
    s2 = np.sin(2.0 * z)
    crossed = np.any(np.signbit(s2[1:]) != np.signbit(s2[:-1]))
    return ValidityMargins(
        rate=float(np.min(1.0 - (2.0 * zd / delta) ** 2)),
        sin=0.0 if crossed else float(np.min(np.abs(s2))),
    )


def check_validity(ansatz: PulseAnsatz, config: SystemConfig,
                   points: int = PROBE_POINTS) -> ValidityMargins:
    """Probe the ansatz on points+1 evenly spaced times; raise on the first violation."""
    if points < PROBE_POINTS:
        raise ValueError(f"need at least {PROBE_POINTS} probe points")
    t = np.linspace(0.0, ansatz.duration, points + 1)
    z, zd, _ = ansatz.derivatives(t)
    bad_rate, bad_sin = _violations(z, zd, config.delta)
    if bad_rate.any() or bad_sin.any():
        _raise_first_violation(t, bad_rate, bad_sin)
    return _margins(z, zd, config.delta)


def _omega_prime_unchecked(ansatz, config):
    def f(t):
        z, zd, zdd = ansatz.derivatives(t)
        return omega_prime_from_zeta(z, zd, zdd, config.delta)
    return f


def design_area(ansatz: PulseAnsatz, config: SystemConfig, atol: float = 1e-12) -> float:
    """Signed resonant pulse area r * integral(Omega') by Gauss-Legendre."""
    f = _omega_prime_unchecked(ansatz, config)
    return config.rabi_ratio * gauss_legendre(f, 0.0, ansatz.duration, atol=atol / config.rabi_ratio)


class MeanRabiRates(NamedTuple):
    resonant: float  # mean |Omega|
    detuned: float  # mean |Omega'|


def mean_rabi_rates(ansatz: PulseAnsatz, config: SystemConfig) -> MeanRabiRates:
    check_validity(ansatz, config)
    f = _omega_prime_unchecked(ansatz, config)
    scale = config.delta * ansatz.duration
    integral = gauss_legendre(lambda t: np.abs(f(t)), 0.0, ansatz.duration, atol=1e-9 * scale)
    mean_detuned = integral / ansatz.duration
    return MeanRabiRates(resonant=config.rabi_ratio * mean_detuned, detuned=mean_detuned)


@dataclass(frozen=True)
class WaveformSegment:
    """Samples of one ansatz, endpoints included, at absolute times t."""

    t: np.ndarray
    omega_prime: np.ndarray
    omega: np.ndarray
    phase: np.ndarray
    drive_phase: float
    ansatz: PulseAnsatz | None = None

    @property
    def start(self) -> float:
        return float(self.t[0])

    @property
    def end(self) -> float:
        return float(self.t[-1])

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def spacing(self) -> float:
        return self.duration / (len(self.t) - 1)

    def envelope(self) -> np.ndarray:
        """Complex detuned-transition envelope Omega' e^{i phase}."""
        return self.omega_prime * np.exp(1j * self.phase)


@dataclass(frozen=True)
class Waveform:
    segments: tuple[WaveformSegment, ...]
    sample_rate: float
    rabi_ratio: float
    folded: bool = False
    provenance: dict = field(default_factory=dict, compare=False)

    def _cat(self, name):
        return np.concatenate([getattr(s, name) for s in self.segments])

    @property
    def t(self):
        return self._cat("t")

    @property
    def omega_prime(self):
        return self._cat("omega_prime")

    @property
    def omega(self):
        return self._cat("omega")

    @property
    def phase(self):
        return self._cat("phase")

    @property
    def duration(self) -> float:
        return self.segments[-1].end - self.segments[0].start

    @property
    def n_samples(self) -> int:
        return sum(len(s.t) for s in self.segments)

    def to_folded(self) -> "Waveform":
        """Nonnegative amplitudes; negative samples get phase + pi."""
        if self.folded:
            return self
        segs = []
        for s in self.segments:
            neg = s.omega_prime < 0
            segs.append(dataclasses.replace(
                s,
                omega_prime=np.abs(s.omega_prime),
                omega=np.abs(s.omega),
                phase=np.where(neg, s.phase + math.pi, s.phase),
            ))
        return dataclasses.replace(self, segments=tuple(segs), folded=True)

    @classmethod
    def constant(cls, duration: float, omega_prime: float, config: SystemConfig,
                 drive_phase: float = 0.0, sample_rate: float = DEFAULT_SAMPLE_RATE) -> "Waveform":
        """Hard-edged constant drive, e.g. a square pulse or (omega_prime=0) free evolution."""
        n = max(1, int(round(duration * sample_rate)))
        t = np.linspace(0.0, duration, n + 1)
        op = np.full(n + 1, float(omega_prime))
        seg = WaveformSegment(t=t, omega_prime=op, omega=config.rabi_ratio * op,
                              phase=np.full(n + 1, float(drive_phase)), drive_phase=float(drive_phase))
        return cls(segments=(seg,), sample_rate=sample_rate, rabi_ratio=config.rabi_ratio)


def _sample_segment(ansatz, config, start, sample_rate):
    check_validity(ansatz, config)
    n = max(1, int(round(ansatz.duration * sample_rate)))
    # endpoint-inclusive grid; spacing is T/n, which is 1/sample_rate when T sits on the grid
    t_local = np.linspace(0.0, ansatz.duration, n + 1)
    op = omega_prime_of_t(ansatz, config, t_local)
    probe = np.linspace(0.0, ansatz.duration, PROBE_POINTS + 1)
    peak = max(float(np.max(np.abs(op))), float(np.max(np.abs(omega_prime_of_t(ansatz, config, probe)))))
    if sample_rate < OVERSAMPLING * peak / TWO_PI:
        raise UndersamplingError(
            f"sample rate {sample_rate:.4g} Hz is below {OVERSAMPLING:g} x max|Omega'|/2pi "
            f"= {OVERSAMPLING * peak / TWO_PI:.4g} Hz")
    return WaveformSegment(
        t=start + t_local,
        omega_prime=op,
        omega=config.rabi_ratio * op,
        phase=np.full(n + 1, ansatz.drive_phase),
        drive_phase=ansatz.drive_phase,
        ansatz=ansatz,
    )


def synthesize_waveform(ansatz_list: Sequence[PulseAnsatz], config: SystemConfig,
                        sample_rate: float = DEFAULT_SAMPLE_RATE,
                        fold_sign: bool = False) -> Waveform:
    """Sample each ansatz back to back.

    Every segment holds round(T*fs) + 1 samples so both of its endpoints are
    present; the boundary time therefore appears twice in a multi-segment
    waveform, once as the last sample of one segment and once as the first of
    the next.
    """
    ansatz_list = list(ansatz_list)
    if not ansatz_list:
        raise ValueError("ansatz list is empty")
    if not (math.isfinite(sample_rate) and sample_rate > 0):
        raise ValueError("sample_rate must be positive")
    segments = []
    start = 0.0
    for a in ansatz_list:
        seg = _sample_segment(a, config, start, sample_rate)
        segments.append(seg)
        start += a.duration
    wf = Waveform(segments=tuple(segments), sample_rate=sample_rate, rabi_ratio=config.rabi_ratio)
    return wf.to_folded() if fold_sign else wf


class PulseArea(NamedTuple):
    segments: tuple[float, ...]
    total: float


def _trapezoid(y, x):
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def resonant_pulse_area(waveform: Waveform) -> PulseArea:
    """Trapezoidal integral of Omega(t), signed along each segment's drive phase."""
    per = []
    for s in waveform.segments:
        signed = s.omega * np.cos(s.phase - s.drive_phase)
        per.append(_trapezoid(signed, s.t))
    return PulseArea(segments=tuple(per), total=float(sum(per)))


def save_waveform(waveform: Waveform, csv_path, config: SystemConfig | None = None,
                  extra: dict | None = None) -> Path:
    """Write the sample CSV plus a JSON sidecar next to it; returns the sidecar path."""
    csv_path = Path(csv_path)
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for s in waveform.segments:
            for row in zip(s.t, s.omega_prime, s.omega, s.phase):
                w.writerow([repr(float(v)) for v in row])
    side = {
        "format": "crowdctl-waveform",
        "version": 1,
        "sample_rate": waveform.sample_rate,
        "rabi_ratio": waveform.rabi_ratio,
        "folded": waveform.folded,
        "config": config.to_dict() if config is not None else None,
        "segments": [
            {
                "samples": len(s.t),
                "drive_phase": s.drive_phase,
                "ansatz": s.ansatz.to_dict() if s.ansatz is not None else None,
            }
            for s in waveform.segments
        ],
    }
    if extra:
        side["extra"] = extra
    sidecar = csv_path.with_suffix(".json")
    sidecar.write_text(json.dumps(side, indent=2))
    return sidecar


def load_waveform(csv_path) -> tuple[Waveform, SystemConfig | None]:
    csv_path = Path(csv_path)
    side = json.loads(csv_path.with_suffix(".json").read_text())
    with csv_path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        data = np.array([[float(v) for v in row] for row in reader], dtype=float).reshape(-1, 4)
    counts = [seg["samples"] for seg in side["segments"]]
    if sum(counts) != len(data):
        raise ValueError("sidecar sample counts do not match the CSV")
    segments = []
    i = 0
    for seg, n in zip(side["segments"], counts):
        block = data[i:i + n]
        i += n
        segments.append(WaveformSegment(
            t=block[:, 0].copy(), omega_prime=block[:, 1].copy(), omega=block[:, 2].copy(),
            phase=block[:, 3].copy(), drive_phase=float(seg["drive_phase"]),
            ansatz=PulseAnsatz.from_dict(seg["ansatz"]) if seg.get("ansatz") else None,
        ))
    cfg = SystemConfig.from_dict(side["config"]) if side.get("config") else None
    wf = Waveform(segments=tuple(segments), sample_rate=float(side["sample_rate"]),
                  rabi_ratio=float(side["rabi_ratio"]), folded=bool(side["folded"]),
                  provenance=side.get("extra") or {})
    return wf, cfg
