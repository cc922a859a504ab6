import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from crowdctl.analytic import DETUNED, RESONANT, build_u_prime
from crowdctl.ansatz import PulseAnsatz, SystemConfig, Waveform, synthesize_waveform
from crowdctl.designer import ID_SEED
from crowdctl.errors import StructuralError
from crowdctl.linalg import I2, PAULI_X, block_diag2, off_block_norm, operator_distance, unitarity_error
from crowdctl.propagator import (NoiseModel, apply_superoperator, block_superoperator,
                                 channel_average_fidelity, channel_process_fidelity, hamiltonians,
                                 lindblad_superoperator, liouvillians, propagate_constant,
                                 propagate_envelope, propagate_lindblad, propagate_unitary,
                                 unitary_blocks, unitary_superoperator, write_trajectory_csv)

REFERENCE_ID = PulseAnsatz(math.pi / 4, ID_SEED, 8.88e-6)


@pytest.fixture(scope="module")
def id_waveform(config):
    return synthesize_waveform([REFERENCE_ID], config, 1e9)


def test_hamiltonian_structure(config):
    h = hamiltonians(np.array(2e4 * np.exp(0.3j)), config)
    assert np.allclose(h, h.conj().T)
    assert off_block_norm(h) == 0.0
    assert h[0, 0] == pytest.approx(config.delta / 2)
    assert abs(h[3, 2]) == pytest.approx(config.rabi_ratio * abs(h[1, 0]))


def test_numeric_matches_closed_form(config, id_waveform):
    u = propagate_unitary(id_waveform, config, record_every=10 ** 9).u_total
    closed = build_u_prime(REFERENCE_ID, config, REFERENCE_ID.duration).matrix
    assert operator_distance(u[:2, :2], closed) < 1e-6


def test_norm_conservation(config, id_waveform):
    res = propagate_unitary(id_waveform, config, record_every=500)
    assert unitarity_error(res.u_total) < 1e-9
    assert np.allclose(res.trajectory[:, 1:].sum(axis=1), 1.0, atol=1e-9)


def test_block_preservation(config, id_waveform):
    u = propagate_unitary(id_waveform, config, record_every=10 ** 9).u_total
    assert off_block_norm(u) < 1e-12


def test_trajectory_initial_state(config, id_waveform):
    res = propagate_unitary(id_waveform, config, initial=2, record_every=1000)
    assert res.trajectory[0, 3] == 1.0
    # resonant pair ends near |4> for a near-pi pulse
    assert res.trajectory[-1, 4] > 0.99
    with pytest.raises(ValueError):
        propagate_unitary(id_waveform, config, initial=np.ones(4))
    with pytest.raises(ValueError):
        propagate_unitary(id_waveform, config, record_every=0)


def test_constant_drive_matches_expm(config):
    omega, phase, dur = 3e4, 0.7, 20e-6
    u = propagate_constant(omega, phase, dur, config, 4000)
    ref = expm(-1j * dur * hamiltonians(np.array(omega * np.exp(1j * phase)), config))
    assert np.max(np.abs(u - ref)) < 1e-10


def test_constant_waveform_matches_constant_propagator(config):
    wf = Waveform.constant(10e-6, 4e4, config, drive_phase=0.2)
    u = propagate_unitary(wf, config, record_every=10 ** 9).u_total
    ref = expm(-1e-5j * hamiltonians(np.array(4e4 * np.exp(0.2j)), config))
    assert np.max(np.abs(u - ref)) < 1e-9


def test_rk4_fourth_order(config):
    """Halving the step cuts the error by about 16."""
    a = PulseAnsatz(math.pi / 4, (-0.6, 0.3, 0.1), 10e-6)
    ref = build_u_prime(a, config, a.duration).matrix

    def env(t):
        from crowdctl.ansatz import omega_prime_from_zeta
        z, zd, zdd = a.derivatives(t)
        return omega_prime_from_zeta(z, zd, zdd, config.delta).astype(complex)

    errs = [operator_distance(propagate_envelope(env, a.duration, config, n)[:2, :2], ref)
            for n in (50, 100, 200)]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert all(3.7 < p < 4.3 for p in orders), orders


def test_unitary_blocks_detect_leakage():
    m = block_diag2(I2, PAULI_X)
    up, u = unitary_blocks(m)
    assert up.subspace == DETUNED and u.subspace == RESONANT
    bad = m.copy()
    bad[0, 2] = 1e-6
    with pytest.raises(StructuralError):
        unitary_blocks(bad)


def test_dephasing_matches_exponential_decay():
    """Free evolution with zero drive: coherence decays as exp(-t/T2)."""
    cfg = SystemConfig(delta=1e5)
    noise = NoiseModel(1e-4, 2e-4)
    dur = 5e-5
    s = propagate_constant(0.0, 0.0, dur, cfg, 2000, noise)
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = rho[1, 1] = rho[0, 1] = rho[1, 0] = 0.25
    rho[2, 2] = rho[3, 3] = rho[2, 3] = rho[3, 2] = 0.25
    out = apply_superoperator(s, rho)
    assert abs(out[0, 1]) == pytest.approx(0.25 * math.exp(-dur / 1e-4), rel=1e-8)
    assert abs(out[2, 3]) == pytest.approx(0.25 * math.exp(-dur / 2e-4), rel=1e-8)
    assert out[0, 0].real == pytest.approx(0.25)


def test_lindblad_noiseless_reduces_to_unitary(config, id_waveform):
    u = propagate_unitary(id_waveform, config, record_every=10 ** 9).u_total
    s = lindblad_superoperator(id_waveform, config, NoiseModel.disabled())
    assert np.max(np.abs(s - unitary_superoperator(u))) < 1e-9


def test_lindblad_trace_and_positivity(config, id_waveform, tmp_path):
    res = propagate_lindblad(id_waveform, config, NoiseModel(2e-5, 3e-5), initial=0, record_every=300)
    assert np.trace(res.final).real == pytest.approx(1.0, abs=1e-9)
    assert np.linalg.eigvalsh(res.final)[0] > -1e-9
    assert np.allclose(res.trajectory[:, 1:].sum(axis=1), 1.0, atol=1e-9)
    write_trajectory_csv(res.trajectory, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().startswith("t_s,P1,P2,P3,P4")


def test_block_superoperator_and_fidelities():
    u = block_diag2(I2, PAULI_X)
    s = unitary_superoperator(u)
    assert channel_process_fidelity(block_superoperator(s, DETUNED), I2) == pytest.approx(1.0)
    assert channel_process_fidelity(block_superoperator(s, RESONANT), PAULI_X) == pytest.approx(1.0)
    assert channel_average_fidelity(block_superoperator(s, RESONANT), I2) == pytest.approx(1 / 3)


def test_noise_model_validation():
    with pytest.raises(ValueError):
        NoiseModel(-1.0, 1.0)
    assert NoiseModel.from_rate(100.0).t2_detuned == pytest.approx(0.01)
    assert NoiseModel(1.0, 2.0).scaled(2.0).gammas == pytest.approx((1.0, 0.5))
    assert NoiseModel.disabled().gammas == (0.0, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1e5), st.floats(-math.pi, math.pi), st.floats(1e-6, 2e-5),
       st.floats(1e-5, 1e-3), st.floats(1e-5, 1e-3))
def test_constant_lindblad_is_trace_preserving_and_blockwise(omega, phase, dur, t2a, t2b):
    cfg = SystemConfig.reference()
    s = propagate_constant(omega, phase, dur, cfg, 400, NoiseModel(t2a, t2b))
    rho0 = np.diag([0.5, 0.0, 0.5, 0.0]).astype(complex)
    rho = apply_superoperator(s, rho0)
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-10)
    assert np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0] > -1e-10
    assert off_block_norm(rho) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2e5), st.floats(-math.pi, math.pi), st.floats(1e-6, 3e-5))
def test_constant_unitary_property(omega, phase, dur):
    cfg = SystemConfig.reference()
    u = propagate_constant(omega, phase, dur, cfg, 2000)
    assert unitarity_error(u) < 1e-9
    assert off_block_norm(u) < 1e-12


def test_liouvillian_hermiticity_preserving(config):
    h = hamiltonians(np.array([1e4 + 2e4j]), config)
    lv = liouvillians(h, NoiseModel(1e-4, 1e-4))[0]
    rho = np.diag([0.3, 0.2, 0.4, 0.1]).astype(complex)
    rho[0, 1] = rho[1, 0] = 0.1
    d = (lv @ rho.reshape(-1, order="F")).reshape(4, 4, order="F")
    assert np.allclose(d, d.conj().T)
    assert abs(np.trace(d)) < 1e-6
