"""Dense 2x2 / 4x4 helpers: Pauli algebra, SU(2) exponentials, distances."""

from __future__ import annotations

import numpy as np

I2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)

# Ordered operator basis with Tr(E_j^dag E_k) = 2 delta_jk.
PAULI_BASIS = (I2, PAULI_X, PAULI_Y, PAULI_Z)
PAULI_LABELS = ("I", "X", "Y", "Z")

HADAMARD = (PAULI_X + PAULI_Z) / np.sqrt(2.0)
SQRT_Y = (I2 - 1j * PAULI_Y) / np.sqrt(2.0)

# Algebraically constructed matrices vs. matrices that came out of an integrator.
CONSTRUCTED_TOL = 1e-10
INTEGRATED_TOL = 1e-6


def as_matrix(m, shape=(2, 2), name="matrix") -> np.ndarray:
    a = np.asarray(m, dtype=complex)
    if a.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def unitarity_error(m) -> float:
    """max |(M^dag M - I)_ij|"""
    a = np.asarray(m, dtype=complex)
    return float(np.max(np.abs(a.conj().T @ a - np.eye(a.shape[0]))))


def is_unitary(m, tol: float = CONSTRUCTED_TOL) -> bool:
    return unitarity_error(m) <= tol


def require_unitary(m, tol: float = INTEGRATED_TOL, name="matrix", shape=(2, 2)) -> np.ndarray:
    a = as_matrix(m, shape, name)
    err = unitarity_error(a)
    if err > tol:
        raise ValueError(f"{name} is not unitary (|M^dag M - I|_max = {err:.3e} > {tol:.1e})")
    return a


def pauli_vector(axis) -> np.ndarray:
    """sigma . n for a real 3-vector n."""
    n = np.asarray(axis, dtype=float)
    return n[0] * PAULI_X + n[1] * PAULI_Y + n[2] * PAULI_Z


def expm_su2(axis, angle: float) -> np.ndarray:
    """Closed form of exp(-i angle/2 sigma.n) = cos(angle/2) I - i sin(angle/2) sigma.n."""
    n = np.asarray(axis, dtype=float)
    if n.shape != (3,) or not np.all(np.isfinite(n)):
        raise ValueError("axis must be a finite real 3-vector")
    if abs(np.linalg.norm(n) - 1.0) > 1e-12:
        raise ValueError(f"axis must be a unit vector, |n| = {np.linalg.norm(n)!r}")
    half = 0.5 * angle
    return np.cos(half) * I2 - 1j * np.sin(half) * pauli_vector(n)


def rz(angle: float) -> np.ndarray:
    """Z rotation in the full-angle convention diag(e^{i angle}, e^{-i angle}).

    Note the factor of two relative to the common exp(-i angle/2 Z). The gate
    designer's S and T are rz(pi/4) and rz(pi/8); up to global phase these
    equal diag(1, -i) and diag(1, e^{-i pi/4}), the conjugates of the
    textbook S and T.
    """
    return np.diag([np.exp(1j * angle), np.exp(-1j * angle)])


def operator_distance(a, b, up_to_global_phase: bool = False,
                      tol: float = INTEGRATED_TOL) -> float:
    """Frobenius distance ||a - b||, optionally minimised over a global phase.

    The phase-minimised value is sqrt(||a||^2 + ||b||^2 - 2|Tr(a^dag b)|).
    """
    a = require_unitary(a, tol, "a", shape=np.shape(a))
    b = require_unitary(b, tol, "b", shape=np.shape(b))
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    if not up_to_global_phase:
        return float(np.linalg.norm(a - b))
    overlap = abs(np.trace(a.conj().T @ b))
    sq = np.sum(np.abs(a) ** 2) + np.sum(np.abs(b) ** 2) - 2.0 * overlap
    # roundoff can push this a hair below zero for equal inputs
    return float(np.sqrt(max(sq, 0.0)))


def average_gate_fidelity(u_actual, u_target, tol: float = INTEGRATED_TOL) -> float:
    """(|Tr(U_t^dag U_a)|^2 / d + 1) / (d + 1)."""
    ua = require_unitary(u_actual, tol, "u_actual", shape=np.shape(u_actual))
    ut = require_unitary(u_target, tol, "u_target", shape=np.shape(u_target))
    d = ua.shape[0]
    tr = np.trace(ut.conj().T @ ua)
    f = (abs(tr) ** 2 / d + 1.0) / (d + 1.0)
    return float(min(max(f, 0.0), 1.0))


def block_diag2(upper, lower) -> np.ndarray:
    """4x4 block-diagonal matrix with exactly zero off-diagonal blocks."""
    m = np.zeros((4, 4), dtype=complex)
    m[:2, :2] = as_matrix(upper, name="upper block")
    m[2:, 2:] = as_matrix(lower, name="lower block")
    return m


def off_block_norm(m4) -> float:
    """Largest magnitude in the two off-diagonal 2x2 blocks of a 4x4 matrix."""
    m = as_matrix(m4, (4, 4), "4x4 operator")
    return float(max(np.max(np.abs(m[:2, 2:])), np.max(np.abs(m[2:, :2]))))


def random_su2(rng: np.random.Generator) -> np.ndarray:
    """Haar-random 2x2 unitary (QR of a complex Ginibre matrix)."""
    z = (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))
