import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdctl.linalg import (HADAMARD, I2, PAULI_X, PAULI_Y, PAULI_Z, SQRT_Y, average_gate_fidelity,
                             block_diag2, expm_su2, is_unitary, off_block_norm, operator_distance,
                             random_su2, require_unitary, rz, unitarity_error)
from scipy.linalg import expm

angles = st.floats(-4 * math.pi, 4 * math.pi, allow_nan=False)
seeds = st.integers(0, 2 ** 32 - 1)


@st.composite
def unit_axes(draw):
    v = np.array([draw(st.floats(-1, 1)) for _ in range(3)])
    n = np.linalg.norm(v)
    if n < 1e-3:
        return np.array([0.0, 0.0, 1.0])
    return v / n


def test_named_gates_are_unitary():
    for g in (I2, PAULI_X, PAULI_Y, PAULI_Z, HADAMARD, SQRT_Y):
        assert is_unitary(g)


def test_expm_su2_matches_scipy():
    n = np.array([1.0, 2.0, -2.0]) / 3.0
    gen = n[0] * PAULI_X + n[1] * PAULI_Y + n[2] * PAULI_Z
    assert np.allclose(expm_su2(n, 1.234), expm(-0.617j * gen), atol=1e-14)


def test_expm_su2_pi_about_x_is_minus_i_x():
    assert np.allclose(expm_su2([1, 0, 0], math.pi), -1j * PAULI_X, atol=1e-15)


def test_expm_su2_rejects_non_unit_axis():
    with pytest.raises(ValueError, match="unit vector"):
        expm_su2([1.0, 1.0, 0.0], 0.3)
    with pytest.raises(ValueError):
        expm_su2([1.0, 0.0], 0.3)


def test_rz_full_angle_convention():
    assert np.allclose(rz(0.3), np.diag([np.exp(0.3j), np.exp(-0.3j)]))
    # full angle: rz(theta) = exp(-i theta/2 Z) at twice the angle, sign flipped
    assert np.allclose(rz(0.3), expm(0.3j * PAULI_Z))
    s_dag = np.diag([1, -1j])
    assert operator_distance(rz(math.pi / 4), s_dag, up_to_global_phase=True) < 1e-7
    t_dag = np.diag([1, np.exp(-1j * math.pi / 4)])
    assert operator_distance(rz(math.pi / 8), t_dag, up_to_global_phase=True) < 1e-7


def test_sqrt_y_squares_to_y():
    assert operator_distance(SQRT_Y @ SQRT_Y, PAULI_Y, up_to_global_phase=True) < 1e-12


def test_x_sqrt_y_is_hadamard():
    assert operator_distance(PAULI_X @ SQRT_Y, HADAMARD, up_to_global_phase=True) < 1e-12


def test_phase_invariant_distance_ignores_global_phase():
    assert operator_distance(PAULI_X, -PAULI_X) == pytest.approx(2 * math.sqrt(2))
    assert operator_distance(PAULI_X, -PAULI_X, up_to_global_phase=True) < 1e-7


def test_distance_rejects_non_unitary():
    with pytest.raises(ValueError, match="not unitary"):
        operator_distance(2 * I2, I2)
    with pytest.raises(ValueError):
        require_unitary(np.ones((2, 3)))


def test_average_gate_fidelity_known_values():
    assert average_gate_fidelity(PAULI_X, PAULI_X) == pytest.approx(1.0)
    # orthogonal Paulis: |Tr|^2 = 0 so F = 1/(d+1)
    assert average_gate_fidelity(PAULI_X, PAULI_Z) == pytest.approx(1 / 3)


def test_block_helpers():
    m = block_diag2(PAULI_X, HADAMARD)
    assert off_block_norm(m) == 0.0
    m[0, 3] = 1e-3
    assert off_block_norm(m) == pytest.approx(1e-3)


@given(unit_axes(), angles)
def test_expm_su2_unitary_and_special(axis, angle):
    u = expm_su2(axis, angle)
    assert unitarity_error(u) < 1e-12
    assert abs(np.linalg.det(u) - 1) < 1e-12


@given(seeds)
def test_random_su2_unitary(seed):
    assert unitarity_error(random_su2(np.random.default_rng(seed))) < 1e-12


@given(seeds, st.floats(0, 2 * math.pi))
def test_distance_phase_invariance(seed, phase):
    rng = np.random.default_rng(seed)
    u, v = random_su2(rng), random_su2(rng)
    d = operator_distance(u, v, up_to_global_phase=True)
    assert operator_distance(np.exp(1j * phase) * u, v, up_to_global_phase=True) == pytest.approx(d, abs=1e-7)
    assert d <= operator_distance(u, v) + 1e-12


@settings(max_examples=50)
@given(seeds)
def test_fidelity_in_unit_interval_and_symmetric(seed):
    rng = np.random.default_rng(seed)
    u, v = random_su2(rng), random_su2(rng)
    f = average_gate_fidelity(u, v)
    assert 1 / 3 - 1e-12 <= f <= 1.0
    assert f == pytest.approx(average_gate_fidelity(v, u), abs=1e-12)
