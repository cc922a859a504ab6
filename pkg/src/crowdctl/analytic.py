"""Closed-form propagators.

Detuned pair: U'(t) = U_R U_0(t) U_0(0)^dag U_R^dag, with U_0 built from
zeta(t) and the accumulated phases xi_+/-(t). Resonant pair: a fixed-phase
rotation whose angle is the pulse area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .ansatz import PulseAnsatz, SystemConfig, _check_range, check_validity, design_area
from .linalg import I2, PAULI_X, PAULI_Y, as_matrix, unitarity_error
from .quadrature import gauss_legendre

DETUNED = "detuned"
RESONANT = "resonant"
SUBSPACES = (DETUNED, RESONANT)

XI_ATOL = 1e-10


@dataclass(frozen=True)
class SubspaceUnitary:
    matrix: np.ndarray
    subspace: str
    time: float = 0.0

    def __post_init__(self):
        if self.subspace not in SUBSPACES:
            raise ValueError(f"subspace must be one of {SUBSPACES}")
        m = as_matrix(self.matrix, name="subspace unitary")
        err = unitarity_error(m)
        if err > 1e-8:
            raise ValueError(f"not unitary (error {err:.2e})")
        object.__setattr__(self, "matrix", m)

    def __matmul__(self, other: "SubspaceUnitary") -> "SubspaceUnitary":
        return compose_segments([other, self])

    def dagger(self) -> "SubspaceUnitary":
        return SubspaceUnitary(self.matrix.conj().T, self.subspace, self.time)


class XiPair(NamedTuple):
    xi_plus: float
    xi_minus: float
    t: float


def xi_integrand(ansatz: PulseAnsatz, config: SystemConfig):
    """t -> delta q(t) csc(2 zeta(t)) / 2."""
    delta = config.delta

    def f(t):
        z, zd, _ = ansatz.derivatives(t)
        q = np.sqrt(1.0 - (2.0 * zd / delta) ** 2)
        return 0.5 * delta * q / np.sin(2.0 * z)
    return f


def xi_common(ansatz: PulseAnsatz, config: SystemConfig, t: float, atol: float = XI_ATOL) -> float:
    """The shared integral part of xi_+/-, no validity checks."""
    return gauss_legendre(xi_integrand(ansatz, config), 0.0, float(t), atol=atol)


def compute_xi(ansatz: PulseAnsatz, config: SystemConfig, t: float) -> XiPair:
    t = float(_check_range(ansatz, t))
    check_validity(ansatz, config)
    common = xi_common(ansatz, config, t)
    _, zd, _ = ansatz.derivatives(t)
    half_asin = 0.5 * math.asin(2.0 * float(zd) / config.delta)
    return XiPair(common + half_asin, common - half_asin, t)


def _u0(zeta, xi_plus, xi_minus, phi):
    c, s = math.cos(zeta), math.sin(zeta)
    return np.array([
        [np.exp(1j * xi_minus) * c, -np.exp(-1j * (xi_plus + phi)) * s],
        [np.exp(1j * (xi_plus + phi)) * s, np.exp(-1j * xi_minus) * c],
    ])


def build_u0(ansatz: PulseAnsatz, config: SystemConfig, t: float) -> np.ndarray:
    xi = compute_xi(ansatz, config, t)
    z, _, _ = ansatz.derivatives(xi.t)
    return _u0(float(z), xi.xi_plus, xi.xi_minus, ansatz.drive_phase)


def frame_rotation(phi: float) -> np.ndarray:
    """U_R = exp(-i pi/4 (cos(phi+pi/2) X + sin(phi+pi/2) Y))."""
    n = (math.cos(phi + math.pi / 2), math.sin(phi + math.pi / 2))
    return math.cos(math.pi / 4) * I2 - 1j * math.sin(math.pi / 4) * (n[0] * PAULI_X + n[1] * PAULI_Y)


def build_u_prime(ansatz: PulseAnsatz, config: SystemConfig, t: float) -> SubspaceUnitary:
    """Detuned-pair propagator from 0 to t in the drive frame."""
    t = float(_check_range(ansatz, t))
    if t == 0.0:
        return SubspaceUnitary(I2.copy(), DETUNED, 0.0)
    ur = frame_rotation(ansatz.drive_phase)
    u0_t = build_u0(ansatz, config, t)
    u0_0 = _u0(ansatz.phi_z, 0.0, 0.0, ansatz.drive_phase)
    return SubspaceUnitary(ur @ u0_t @ u0_0.conj().T @ ur.conj().T, DETUNED, t)


def build_u_prime_many(ansatz: PulseAnsatz, config: SystemConfig, times) -> np.ndarray:
    """U'(t) for an increasing array of times, integrating xi panel by panel."""
    times = np.asarray(_check_range(ansatz, times), dtype=float)
    if np.any(np.diff(times) < 0):
        raise ValueError("times must be nondecreasing")
    check_validity(ansatz, config)
    f = xi_integrand(ansatz, config)
    ur = frame_rotation(ansatz.drive_phase)
    left = ur
    right = _u0(ansatz.phi_z, 0.0, 0.0, ansatz.drive_phase).conj().T @ ur.conj().T
    out = np.empty((len(times), 2, 2), dtype=complex)
    acc, prev = 0.0, 0.0
    z, zd, _ = ansatz.derivatives(times)
    for k, t in enumerate(times):
        acc += gauss_legendre(f, prev, t, atol=XI_ATOL / max(len(times), 1))
        prev = t
        h = 0.5 * math.asin(2.0 * zd[k] / config.delta)
        out[k] = left @ _u0(z[k], acc + h, acc - h, ansatz.drive_phase) @ right
    return out


def resonant_unitary(area: float, phase: float) -> SubspaceUnitary:
    """exp(-i area/2 (cos(phase) X + sin(phase) Y)) for any envelope with that area."""
    half = 0.5 * area
    gen = math.cos(phase) * PAULI_X + math.sin(phase) * PAULI_Y
    return SubspaceUnitary(math.cos(half) * I2 - 1j * math.sin(half) * gen, RESONANT)


def compose_segments(ops: Sequence[SubspaceUnitary]) -> SubspaceUnitary:
    """Time-ordered product: ops[0] acts first, so the result is U_n ... U_2 U_1."""
    ops = list(ops)
    if not ops:
        raise ValueError("nothing to compose")
    tags = {op.subspace for op in ops}
    if len(tags) != 1:
        raise ValueError(f"cannot compose operators from different subspaces: {sorted(tags)}")
    m = I2.copy()
    for op in ops:
        m = op.matrix @ m
    return SubspaceUnitary(m, ops[0].subspace, sum(op.time for op in ops))


def endpoint_phase(ansatz: PulseAnsatz, config: SystemConfig) -> float:
    """xi at t = T, where xi_+ = xi_- because zeta_dot(T) = 0."""
    check_validity(ansatz, config)
    return xi_common(ansatz, config, ansatz.duration)


def segment_unitaries(ansatz: PulseAnsatz, config: SystemConfig, area: float | None = None):
    """Closed-form (U'(T), U(T)) for one segment; area defaults to r * integral(Omega')."""
    if area is None:
        area = design_area(ansatz, config)
    u_prime = build_u_prime(ansatz, config, ansatz.duration)
    u = resonant_unitary(area, ansatz.drive_phase)
    return u_prime, SubspaceUnitary(u.matrix, RESONANT, ansatz.duration)

