"""Fixed-step RK4 integration of the four-level drive-frame Hamiltonian

    H = 1/2 [[ delta,  W'^*,   0,     0  ],
             [ W',    -delta,  0,     0  ],
             [ 0,      0,      0,     W^*],
             [ 0,      0,      W,     0  ]]

with W' = Omega' e^{i phi} and W = r W'. Levels are ordered |1>, |2>, |3>, |4>.
The same stepper integrates the 16x16 Lindblad generator (column-stacked
vec) when pure dephasing is switched on.

Each sample interval is split into `refine` RK4 steps. For a linear ODE an
RK4 step is a fixed matrix, so the steps are built in batches and multiplied
together instead of being applied one state at a time.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from scipy.interpolate import CubicSpline

from .analytic import DETUNED, RESONANT, SubspaceUnitary
from .ansatz import SystemConfig, Waveform
from .errors import IntegrationError, StructuralError
from .linalg import as_matrix, unitarity_error

DEFAULT_REFINE = 10
NORM_TOL = 1e-6
BLOCK_TOL = 1e-8
NEG_EIG_TOL = 1e-6
_CHUNK_STEPS = 4096

SIGMA_Z_DETUNED = np.diag([1.0, -1.0, 0.0, 0.0]).astype(complex)
SIGMA_Z_RESONANT = np.diag([0.0, 0.0, 1.0, -1.0]).astype(complex)
_BLOCKS = {DETUNED: (0, 1), RESONANT: (2, 3)}


@dataclass(frozen=True)
class NoiseModel:
    """Pure dephasing per 2x2 block; coherences decay as exp(-t/T2)."""

    t2_detuned: float = math.inf
    t2_resonant: float = math.inf
    enabled: bool = True

    def __post_init__(self):
        for name in ("t2_detuned", "t2_resonant"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive or infinite")

    @classmethod
    def from_config(cls, config: SystemConfig) -> "NoiseModel":
        return cls(config.t2_detuned, config.t2_resonant)

    @classmethod
    def from_rate(cls, rate: float) -> "NoiseModel":
        """Same coherence decay rate 1/T2 on both blocks."""
        return cls(1.0 / rate, 1.0 / rate)

    @classmethod
    def disabled(cls) -> "NoiseModel":
        return cls(enabled=False)

    def scaled(self, factor: float) -> "NoiseModel":
        """Multiply both dephasing rates by factor."""
        return NoiseModel(self.t2_detuned / factor, self.t2_resonant / factor, self.enabled)

    @property
    def gammas(self) -> tuple[float, float]:
        """Lindblad rates 1/(2 T2) for the sigma_z collapse operators."""
        if not self.enabled:
            return 0.0, 0.0
        return 0.5 / self.t2_detuned, 0.5 / self.t2_resonant

    def to_dict(self) -> dict:
        f = lambda v: None if math.isinf(v) else v  # noqa: E731
        return {"t2_detuned": f(self.t2_detuned), "t2_resonant": f(self.t2_resonant),
                "enabled": self.enabled}


def hamiltonians(envelope: np.ndarray, config: SystemConfig) -> np.ndarray:
    """Batch of 4x4 Hamiltonians for complex detuned-transition envelopes."""
    env = np.asarray(envelope, dtype=complex)
    h = np.zeros(env.shape + (4, 4), dtype=complex)
    h[..., 0, 0] = 0.5 * config.delta
    h[..., 1, 1] = -0.5 * config.delta
    h[..., 1, 0] = 0.5 * env
    h[..., 0, 1] = 0.5 * np.conj(env)
    res = config.rabi_ratio * env
    h[..., 3, 2] = 0.5 * res
    h[..., 2, 3] = 0.5 * np.conj(res)
    return h


def _dissipator(noise: NoiseModel) -> np.ndarray:
    eye = np.eye(4)
    d = np.zeros((16, 16), dtype=complex)
    for gamma, op in zip(noise.gammas, (SIGMA_Z_DETUNED, SIGMA_Z_RESONANT)):
        if gamma == 0.0:
            continue
        ldl = op.conj().T @ op
        d += gamma * (np.kron(op.conj(), op) - 0.5 * np.kron(eye, ldl) - 0.5 * np.kron(ldl.T, eye))
    return d


def liouvillians(h: np.ndarray, noise: NoiseModel) -> np.ndarray:
    """Column-stacked generator: vec(d rho/dt) = L vec(rho)."""
    eye = np.eye(4)
    # I (x) H and H^T (x) I for a batch of H
    left = np.einsum("ij,...kl->...ikjl", eye, h).reshape(h.shape[:-2] + (16, 16))
    right = np.einsum("...ji,kl->...ikjl", h, eye).reshape(h.shape[:-2] + (16, 16))
    return -1j * (left - right) + _dissipator(noise)


def _rk4_steps(a1, a2, a3, h):
    """Per-step propagators of the classical RK4 scheme for y' = A(t) y."""
    k1 = a1
    k2 = a2 + 0.5 * h * (a2 @ k1)
    k3 = a2 + 0.5 * h * (a2 @ k2)
    k4 = a3 + h * (a3 @ k3)
    eye = np.eye(a1.shape[-1])
    return eye + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def ordered_product(m: np.ndarray) -> np.ndarray:
    """m[..., k-1, :, :] @ ... @ m[..., 0, :, :] by pairwise reduction."""
    while m.shape[-3] > 1:
        k = m.shape[-3]
        tail = m[..., k - 1:, :, :] if k % 2 else None
        m = m[..., 1:k - (k % 2):2, :, :] @ m[..., 0:k - (k % 2):2, :, :]
        if tail is not None:
            m = np.concatenate([m, tail], axis=-3)
    return m[..., 0, :, :]


def _sample_propagators(seg, make_generator, refine):
    """Yield (sample indices, per-sample propagators) chunk by chunk."""
    spline = CubicSpline(seg.t, seg.envelope())
    n = len(seg.t) - 1
    h = seg.duration / (n * refine)
    per_chunk = max(1, _CHUNK_STEPS // refine)
    for c0 in range(0, n, per_chunk):
        c1 = min(n, c0 + per_chunk)
        m = c1 - c0
        # start, midpoint and end of every RK4 step in this chunk
        fine = seg.t[c0] + (0.5 * h) * np.arange(2 * refine * m + 1)
        gen = make_generator(spline(fine))
        steps = _rk4_steps(gen[0:-1:2], gen[1::2], gen[2::2], h)
        d = steps.shape[-1]
        yield c0, ordered_product(steps.reshape(m, refine, d, d))


def _record_indices(n_samples, record_every):
    idx = set(range(0, n_samples + 1, record_every))
    idx.add(n_samples)
    return idx


class PropagationResult(NamedTuple):
    final: np.ndarray  # state amplitudes (4,)
    trajectory: np.ndarray  # rows (t, P1, P2, P3, P4)
    u_total: np.ndarray  # 4x4


class LindbladResult(NamedTuple):
    final: np.ndarray  # 4x4 density matrix
    trajectory: np.ndarray  # rows (t, P1, P2, P3, P4)
    superop: np.ndarray  # 16x16 column-stacked propagator


def _initial_state(initial):
    if initial is None:
        psi = np.zeros(4, dtype=complex)
        psi[0] = 1.0
        return psi
    if isinstance(initial, (int, np.integer)):
        psi = np.zeros(4, dtype=complex)
        psi[int(initial)] = 1.0
        return psi
    psi = np.asarray(initial, dtype=complex).reshape(4)
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > 1e-9:
        raise ValueError(f"initial state must be normalised, |psi| = {norm}")
    return psi


def _check_record(record_every):
    if int(record_every) < 1:
        raise ValueError("record_every must be >= 1")
    return int(record_every)


def propagate_unitary(waveform: Waveform, config: SystemConfig, initial=None,
                      record_every: int = 1, refine: int = DEFAULT_REFINE) -> PropagationResult:
    """Integrate all four basis columns; trajectory is for `initial` (default |1>)."""
    record_every = _check_record(record_every)
    psi0 = _initial_state(initial)

    def gen(env):
        return -1j * hamiltonians(env, config)

    u = np.eye(4, dtype=complex)
    rows = [(waveform.segments[0].start, *np.abs(psi0) ** 2)]
    for seg in waveform.segments:
        n = len(seg.t) - 1
        keep = _record_indices(n, record_every)
        for c0, props in _sample_propagators(seg, gen, refine):
            for j in range(props.shape[0]):
                u = props[j] @ u
                k = c0 + j + 1
                if k in keep:
                    err = unitarity_error(u)
                    if err > NORM_TOL:
                        raise IntegrationError(
                            f"norm drift {err:.2e} at t = {seg.t[k]:.6e} s; refine the time step")
                    rows.append((seg.t[k], *np.abs(u @ psi0) ** 2))
    return PropagationResult(u @ psi0, np.array(rows), u)


def _vec(rho):
    return np.asarray(rho, dtype=complex).reshape(-1, order="F")


def _unvec(v):
    return v.reshape(4, 4, order="F")


def _initial_density(initial):
    if initial is None or isinstance(initial, (int, np.integer)) or np.ndim(initial) == 1:
        psi = _initial_state(initial)
        return np.outer(psi, psi.conj())
    rho = as_matrix(initial, (4, 4), "initial density matrix")
    if abs(np.trace(rho) - 1.0) > 1e-10 or np.max(np.abs(rho - rho.conj().T)) > 1e-10:
        raise ValueError("initial density matrix must be Hermitian with unit trace")
    return rho


def _check_density(rho, t):
    tr = np.trace(rho).real
    if abs(tr - 1.0) > NORM_TOL:
        raise IntegrationError(f"trace drift {abs(tr - 1.0):.2e} at t = {t:.6e} s")
    lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if lam[0] < -NEG_EIG_TOL:
        raise IntegrationError(f"negative eigenvalue {lam[0]:.2e} at t = {t:.6e} s")


def propagate_lindblad(waveform: Waveform, config: SystemConfig, noise: NoiseModel,
                       initial=None, record_every: int = 1,
                       refine: int = DEFAULT_REFINE) -> LindbladResult:
    """Master-equation run with sigma_z dephasing on each block at rate 1/(2 T2)."""
    record_every = _check_record(record_every)
    rho0 = _initial_density(initial)
    v0 = _vec(rho0)

    def gen(env):
        return liouvillians(hamiltonians(env, config), noise)

    s = np.eye(16, dtype=complex)
    rows = [(waveform.segments[0].start, *np.diag(rho0).real)]
    for seg in waveform.segments:
        n = len(seg.t) - 1
        keep = _record_indices(n, record_every)
        for c0, props in _sample_propagators(seg, gen, refine):
            for j in range(props.shape[0]):
                s = props[j] @ s
                k = c0 + j + 1
                if k in keep:
                    rho = _unvec(s @ v0)
                    _check_density(rho, seg.t[k])
                    rows.append((seg.t[k], *np.diag(rho).real))
    return LindbladResult(_unvec(s @ v0), np.array(rows), s)


def lindblad_superoperator(waveform: Waveform, config: SystemConfig, noise: NoiseModel,
                           refine: int = DEFAULT_REFINE) -> np.ndarray:
    """16x16 propagator of the whole waveform, without per-sample bookkeeping."""
    def gen(env):
        return liouvillians(hamiltonians(env, config), noise)

    s = np.eye(16, dtype=complex)
    for seg in waveform.segments:
        for _, props in _sample_propagators(seg, gen, refine):
            s = ordered_product(props[None])[0] @ s
    return s


def propagate_envelope(envelope: Callable[[np.ndarray], np.ndarray], duration: float,
                       config: SystemConfig, steps: int,
                       noise: NoiseModel | None = None) -> np.ndarray:
    """RK4 with `steps` equal steps for an analytic envelope t -> Omega'(t) e^{i phi(t)}.

    Returns the 4x4 propagator, or the 16x16 superoperator when noise is given.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    h = duration / steps
    out = None
    for c0 in range(0, steps, _CHUNK_STEPS):
        c1 = min(steps, c0 + _CHUNK_STEPS)
        fine = (0.5 * h) * np.arange(2 * c0, 2 * c1 + 1)
        ham = hamiltonians(envelope(fine), config)
        gen = -1j * ham if noise is None else liouvillians(ham, noise)
        p = ordered_product(_rk4_steps(gen[0:-1:2], gen[1::2], gen[2::2], h))
        out = p if out is None else p @ out
    return out


def propagate_constant(omega_prime: float, phase: float, duration: float, config: SystemConfig,
                       steps: int, noise: NoiseModel | None = None) -> np.ndarray:
    """Square drive: the RK4 step matrix is constant, so raise it to the power `steps`."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    h = duration / steps
    ham = hamiltonians(np.array(omega_prime * np.exp(1j * phase)), config)
    gen = -1j * ham if noise is None else liouvillians(ham, noise)
    return np.linalg.matrix_power(_rk4_steps(gen, gen, gen, h), steps)


def unitary_blocks(u_total) -> tuple[SubspaceUnitary, SubspaceUnitary]:
    """Split a block-diagonal 4x4 propagator into (U' detuned, U resonant)."""
    u = as_matrix(u_total, (4, 4), "u_total")
    leak = max(np.max(np.abs(u[:2, 2:])), np.max(np.abs(u[2:, :2])))
    if leak > BLOCK_TOL:
        raise StructuralError(f"off-diagonal block magnitude {leak:.2e} exceeds {BLOCK_TOL:g}")
    return (SubspaceUnitary(u[:2, :2].copy(), DETUNED),
            SubspaceUnitary(u[2:, 2:].copy(), RESONANT))


def block_superoperator(superop, subspace: str) -> np.ndarray:
    """Restrict a 16x16 column-stacked superoperator to one 2x2 block (4x4, column-stacked)."""
    s = np.asarray(superop)
    idx = _BLOCKS[subspace]
    flat = [a + 4 * b for b in idx for a in idx]
    return s[np.ix_(flat, flat)]


def unitary_superoperator(u) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    return np.kron(u.conj(), u)


def apply_superoperator(s2, rho):
    rho = np.asarray(rho, dtype=complex)
    d = rho.shape[0]
    return (s2 @ rho.reshape(-1, order="F")).reshape(d, d, order="F")


def channel_process_fidelity(s2, target) -> float:
    """Entanglement fidelity Tr(S_U^dag S) / d^2 of a channel against a unitary."""
    target = np.asarray(target, dtype=complex)
    d = target.shape[0]
    return float(np.real(np.trace(unitary_superoperator(target).conj().T @ s2)) / d ** 2)


def channel_average_fidelity(s2, target) -> float:
    d = np.asarray(target).shape[0]
    return (d * channel_process_fidelity(s2, target) + 1.0) / (d + 1.0)


def write_trajectory_csv(trajectory, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("t_s", "P1", "P2", "P3", "P4"))
        for row in np.asarray(trajectory):
            w.writerow([repr(float(v)) for v in row])
