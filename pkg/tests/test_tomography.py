import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import poisson

from crowdctl.linalg import HADAMARD, I2, PAULI_X, random_su2, rz
from crowdctl.tomography import (REFERENCE_CHI, STANDARD_PREPS, ProcessFidelityStatistic,
                                 ProcessMatrix, ShotRecord, apply_chi, bootstrap_ci, chi_of_unitary,
                                 detection_error, load_reference_chi, mle_bloch, mle_state,
                                 mle_state_from_frequencies, parse_chi_text, physical_projection,
                                 prep_density, process_fidelity, read_records, reconstruct_chi,
                                 run_process_tomography, simulate_shots, superoperator_channel,
                                 unitary_channel, write_records)

IDENTITY = unitary_channel(I2)


def trace_distance(a, b):
    return 0.5 * np.sum(np.abs(np.linalg.eigvalsh(a - b)))


def test_chi_of_named_unitaries():
    chi = chi_of_unitary(I2).chi
    assert chi[0, 0] == pytest.approx(1) and np.sum(np.abs(chi)) == pytest.approx(1)
    assert chi_of_unitary(PAULI_X).chi[1, 1] == pytest.approx(1)
    h = chi_of_unitary(HADAMARD).chi
    for j, k in ((1, 1), (3, 3), (1, 3), (3, 1)):
        assert h[j, k] == pytest.approx(0.5)


def test_chi_of_non_unitary_rejected():
    with pytest.raises(ValueError):
        chi_of_unitary(np.diag([1.0, 0.5]))


def test_process_matrix_validation():
    with pytest.raises(ValueError, match="Tr chi"):
        ProcessMatrix(np.eye(4))
    with pytest.raises(ValueError, match="negative"):
        ProcessMatrix(np.diag([1.5, -0.5, 0, 0]))
    with pytest.raises(ValueError, match="Hermitian"):
        ProcessMatrix(np.triu(np.ones((4, 4))) / 4)


def test_apply_chi_reproduces_unitary():
    u = rz(0.3) @ HADAMARD
    rho = prep_density("+i")
    assert np.allclose(apply_chi(chi_of_unitary(u).chi, rho), u @ rho @ u.conj().T)


def test_shots_bright_fraction_for_zero():
    rec = simulate_shots(IDENTITY, "0", "Z", 1000, seed=1)
    assert rec.bright() / rec.trials >= 0.999


def test_shots_born_rule_for_plus():
    rec = simulate_shots(IDENTITY, "+", "Z", 1000, seed=2)
    assert abs(rec.bright() / rec.trials - 0.5) <= 0.05


def test_shots_deterministic():
    a = simulate_shots(IDENTITY, "+", "X", 500, seed=9)
    b = simulate_shots(IDENTITY, "+", "X", 500, seed=9)
    assert a == b


def test_detection_error_oracle():
    err = detection_error()
    assert err == pytest.approx(max(poisson.cdf(4, 25.0), poisson.sf(4, 0.2)))
    assert err < 5e-3


def test_shot_validation():
    with pytest.raises(ValueError):
        simulate_shots(IDENTITY, "0", "Z", 0)
    with pytest.raises(ValueError):
        simulate_shots(IDENTITY, "0", "W", 10)
    with pytest.raises(ValueError):
        simulate_shots(IDENTITY, "2", "Z", 10)
    with pytest.raises(ValueError):
        simulate_shots(IDENTITY, "0", "Z", 10, dark_mean=0)
    with pytest.raises(ValueError):
        ShotRecord("0", "Z", 3, (1, 1))


def test_label_aliases():
    assert ShotRecord("|+i>", "Y", 1, (1,)).prep == "+i"


def test_records_jsonl_roundtrip(tmp_path):
    recs = [simulate_shots(IDENTITY, p, b, 50, seed=3) for p in STANDARD_PREPS for b in ("Z", "X", "Y")]
    write_records(recs, tmp_path / "r.jsonl")
    assert read_records(tmp_path / "r.jsonl") == recs


def test_mle_exact_frequencies_plus():
    rho = mle_state_from_frequencies({"Z": 0.5, "X": 1.0, "Y": 0.5})
    assert trace_distance(rho, prep_density("+")) < 1e-6


def test_mle_simulated_zero():
    recs = [simulate_shots(IDENTITY, "0", b, 1000, seed=s) for s, b in enumerate("ZXY")]
    rho = mle_state(recs)
    assert np.real(rho[0, 0]) >= 0.99


def test_mle_maximally_mixed():
    mixed = lambda rho: I2 / 2  # noqa: E731
    recs = [simulate_shots(mixed, "0", b, 1000, seed=10 + s) for s, b in enumerate("ZXY")]
    assert trace_distance(mle_state(recs), I2 / 2) < 0.05


def test_mle_needs_all_bases():
    with pytest.raises(ValueError):
        mle_state([simulate_shots(IDENTITY, "0", "Z", 10, seed=0)])


def test_mle_pulls_outside_estimate_onto_sphere():
    s = mle_bloch(np.array([[1000.0, 1000.0, 500.0]]), np.array([[1000.0, 1000.0, 1000.0]]))
    assert np.linalg.norm(s) <= 1.0 + 1e-12
    assert np.linalg.norm(s) > 0.99


def test_reconstruct_identity_and_x():
    outs = [prep_density(p) for p in STANDARD_PREPS]
    assert reconstruct_chi(STANDARD_PREPS, outs).chi[0, 0] == pytest.approx(1, abs=1e-8)
    outs_x = [PAULI_X @ prep_density(p) @ PAULI_X for p in STANDARD_PREPS]
    assert reconstruct_chi(STANDARD_PREPS, outs_x).chi[1, 1] == pytest.approx(1, abs=1e-8)


def test_reconstruct_rejects_incomplete_preps():
    with pytest.raises(ValueError, match="informationally complete"):
        reconstruct_chi(("0", "1", "+", "-"), [prep_density(p) for p in ("0", "1", "+", "-")])


def test_infinite_shot_pipeline_matches_chi_of_unitary():
    u = random_su2(np.random.default_rng(5))
    stat = ProcessFidelityStatistic(chi_of_unitary(u))
    freqs = []
    for p in STANDARD_PREPS:
        rho = u @ prep_density(p) @ u.conj().T
        freqs.append([0.5 * (1 + np.real(np.trace(rho @ s))) for s in (PAULI_X, np.array([[0, -1j], [1j, 0]]),
                                                                         np.diag([1, -1]))])
    chi = stat._chi_batch(np.array(freqs)[None], np.ones((4, 3)))[0]
    assert np.max(np.abs(chi - chi_of_unitary(u).chi)) < 1e-6


def test_physical_projection_is_nearest():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    a = 0.5 * (a + a.conj().T)
    p = physical_projection(a)
    ProcessMatrix(p)
    base = np.linalg.norm(a - p)
    # random physical matrices are never closer
    for _ in range(200):
        g = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        q = g @ g.conj().T
        q /= np.trace(q).real
        assert np.linalg.norm(a - q) >= base - 1e-12


def test_process_fidelity_examples():
    cx = chi_of_unitary(PAULI_X)
    assert process_fidelity(cx, cx) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        process_fidelity(np.zeros((4, 4)), cx)
    with pytest.raises(ValueError):
        process_fidelity(np.eye(3), cx)


@pytest.mark.parametrize("name, ideal, expected", [
    ("detuned_id", I2, 0.996),
    ("resonant_h", HADAMARD, 0.992),
])
def test_reference_chi_fidelities(name, ideal, expected):
    f = process_fidelity(load_reference_chi(name), chi_of_unitary(ideal))
    assert f == pytest.approx(expected, abs=0.005)


def test_fixture_loader():
    assert len(REFERENCE_CHI) == 8
    chi = load_reference_chi("detuned_id")
    assert chi[0, 0] == pytest.approx(0.997)
    assert chi[0, 2] == pytest.approx(0.019 - 0.05j)
    with pytest.raises(ValueError):
        load_reference_chi("nope")
    with pytest.raises(ValueError):
        parse_chi_text("# Re\n1 2\n# Im\n1 2\n")


def test_bootstrap_degenerate_records():
    """All-bright records for every setting: every resample is identical."""
    recs = [ShotRecord(p, b, 100, (0,) * 20 + (100,)) for p in STANDARD_PREPS for b in "ZXY"]
    rep = bootstrap_ci(recs, ProcessFidelityStatistic(chi_of_unitary(I2)), resamples=200, seed=0)
    assert rep.ci_low <= rep.value <= rep.ci_high
    assert rep.ci_high - rep.ci_low < 1e-12


def test_bootstrap_needs_resamples():
    with pytest.raises(ValueError):
        bootstrap_ci([], lambda r: 1.0, resamples=50)


def test_bootstrap_generic_statistic_matches_batch():
    u = rz(0.2)
    run = run_process_tomography(unitary_channel(u), u, trials=300, seed=4, resamples=100)
    stat = ProcessFidelityStatistic(chi_of_unitary(u))
    slow = bootstrap_ci(run.records, lambda r: stat(r), resamples=100, seed=7)
    fast = bootstrap_ci(run.records, stat, resamples=100, seed=7)
    assert slow.ci_low == pytest.approx(fast.ci_low, abs=1e-12)
    assert slow.ci_high == pytest.approx(fast.ci_high, abs=1e-12)


def test_pipeline_deterministic_and_contains_estimate():
    a = run_process_tomography(IDENTITY, I2, seed=11, resamples=200)
    b = run_process_tomography(IDENTITY, I2, seed=11, resamples=200)
    assert a.report == b.report
    assert a.report.ci_low <= a.report.value <= a.report.ci_high


def test_ci_shrinks_with_trials():
    """Median half-width over seeds scales like 1/sqrt(trials); noisy channel keeps it away from 1."""
    noisy = superoperator_channel(np.diag([1, 0.9, 0.9, 1]).astype(complex))
    ideal = I2

    def median_hw(trials):
        return np.median([run_process_tomography(noisy, ideal, trials=trials, seed=s, resamples=300)
                          .report.half_width for s in range(8)])
    ratio = median_hw(2000) / median_hw(1000)
    assert ratio == pytest.approx(1 / math.sqrt(2), rel=0.2)


def test_fewer_trials_wider_ci():
    u = HADAMARD
    few = run_process_tomography(unitary_channel(u), u, trials=100, seed=1, resamples=300).report
    many = run_process_tomography(unitary_channel(u), u, trials=1000, seed=1, resamples=300).report
    assert few.half_width > many.half_width


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(0, 2 ** 31))
def test_fidelity_of_unitaries_identity(seed_a, seed_b):
    u = random_su2(np.random.default_rng(seed_a))
    v = random_su2(np.random.default_rng(seed_b))
    cu, cv = chi_of_unitary(u), chi_of_unitary(v)
    assert process_fidelity(cu, cv) == pytest.approx(abs(np.trace(u.conj().T @ v)) ** 2 / 4, abs=1e-10)
    for c in (cu, cv):
        lam = np.linalg.eigvalsh(c.chi)
        assert lam[-1] == pytest.approx(1, abs=1e-10) and abs(lam[:-1]).max() < 1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(20, 300))
def test_mle_output_always_physical(seed, trials):
    rng = np.random.default_rng(seed)
    bright = rng.integers(0, trials + 1, size=(5, 3)).astype(float)
    s = mle_bloch(bright, np.full((5, 3), float(trials)))
    assert np.all(np.linalg.norm(s, axis=-1) <= 1 + 1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_reconstructed_chi_physical(seed):
    rng = np.random.default_rng(seed)
    outs = []
    for _ in STANDARD_PREPS:
        g = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        r = g @ g.conj().T
        outs.append(r / np.trace(r))
    chi = reconstruct_chi(STANDARD_PREPS, outs).chi
    assert np.max(np.abs(chi - chi.conj().T)) < 1e-10
    assert np.linalg.eigvalsh(chi)[0] > -1e-10
    assert np.trace(chi).real == pytest.approx(1, abs=1e-10)
