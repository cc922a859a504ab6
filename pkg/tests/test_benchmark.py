import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdctl.ansatz import SystemConfig
from crowdctl.benchmark import (SHAPED, SQUARE, SweepPoint, default_ratios, rabi_detuned_fidelity,
                                read_sweep_csv, shaped_pulse_fidelity, speedup_report,
                                square_pulse_duration, square_pulse_fidelity, sweep, write_sweep_csv)
from crowdctl.propagator import NoiseModel


@pytest.fixture(scope="module")
def strong_noise(config):
    return NoiseModel.from_rate(config.delta / 40)


@pytest.mark.parametrize("ratio", [0.01, 0.08, 0.3, 1.0, 1.5])
def test_square_matches_rabi_closed_form(config, ratio):
    p = square_pulse_fidelity(ratio, config)
    assert p.fidelity_detuned == pytest.approx(rabi_detuned_fidelity(ratio, config), abs=1e-8)
    assert p.fidelity_resonant == pytest.approx(1.0, abs=1e-8)


def test_square_duration_is_pi_pulse(config):
    assert square_pulse_duration(0.5, config) * 0.5 * config.delta == pytest.approx(math.pi)
    with pytest.raises(ValueError):
        square_pulse_duration(0.0, config)


def test_weak_drive_limits(config, strong_noise):
    quiet = square_pulse_fidelity(0.001, config)
    noisy = square_pulse_fidelity(0.001, config, strong_noise)
    assert quiet.fidelity_detuned > 0.9999
    assert noisy.fidelity_product < 0.6


def test_strong_drive_departs_from_identity(config):
    assert square_pulse_fidelity(1.0, config).fidelity_detuned < 0.9


def test_shaped_noiseless_and_ratio(programs, config):
    p = shaped_pulse_fidelity(programs("id"), config)
    assert p.method == SHAPED
    assert p.fidelity_detuned >= 0.9999
    assert p.gate_time == pytest.approx(programs("id").total_time)


def test_noiseless_square_optimum_at_smallest_ratio(programs, config):
    pts = sweep(default_ratios(40), config)
    shaped = shaped_pulse_fidelity(programs("id"), config)
    assert speedup_report(pts, shaped).optimal_square_ratio == pytest.approx(pts[0].ratio)


def test_stronger_dephasing_moves_optimum_up(config, strong_noise, programs):
    shaped = shaped_pulse_fidelity(programs("id"), config)
    base = speedup_report(sweep(default_ratios(40), config, strong_noise), shaped)
    doubled = speedup_report(sweep(default_ratios(40), config, strong_noise.scaled(2.0)), shaped)
    assert doubled.optimal_square_ratio > base.optimal_square_ratio


def test_report_rejects_sparse_or_narrow_sweeps(config):
    pts = sweep(default_ratios(10), config)
    shaped = SweepPoint(0.7, SHAPED, 0.99, 0.99, 1e-5)
    with pytest.raises(ValueError, match="sparse"):
        speedup_report(pts, shaped)
    narrow = sweep(np.linspace(0.1, 1.5, 35), config)
    with pytest.raises(ValueError, match="cover"):
        speedup_report(narrow, shaped)
    with pytest.raises(ValueError, match="shaped"):
        speedup_report(sweep(default_ratios(30), config))


def test_sweep_order_independent(config, strong_noise):
    r = default_ratios(30)
    fwd = sweep(r, config, strong_noise)
    rev = sweep(r[::-1], config, strong_noise)[::-1]
    assert fwd == rev


def test_csv_roundtrip(tmp_path, config):
    pts = sweep(default_ratios(30), config) + [SweepPoint(0.7, SHAPED, 0.99, 0.98, 1e-5)]
    write_sweep_csv(pts, tmp_path / "s.csv")
    assert read_sweep_csv(tmp_path / "s.csv") == pts
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == \
        "ratio,method,fidelity_detuned,fidelity_resonant,gate_time_s"


def test_sweep_point_validation():
    with pytest.raises(ValueError):
        SweepPoint(0.1, "ramp", 0.9, 0.9, 1e-6)
    with pytest.raises(ValueError):
        SweepPoint(0.1, SQUARE, 1.5, 0.9, 1e-6)
    with pytest.raises(ValueError):
        SweepPoint(0.1, SQUARE, 0.9, 0.9, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.02, 1.5))
def test_square_fidelities_bounded(ratio):
    cfg = SystemConfig.reference()
    p = square_pulse_fidelity(ratio, cfg, NoiseModel.from_rate(cfg.delta / 40))
    assert 0 <= p.fidelity_detuned <= 1 and 0 <= p.fidelity_resonant <= 1
