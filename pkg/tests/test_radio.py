import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tvwsdb.radio import (DtvTransmitter, InterferenceParams, Location, PropagationParams,
                          coverage_distance_km, coverage_probability, coverage_threshold_dbm,
                          dbm_to_watt, distance_km, interference_power_limit_dbm,
                          interference_probability, mean_received_power_dbm, path_loss_db,
                          q_tail, q_tail_inverse, watt_to_dbm, worst_case_interference_range_km)

DTV = PropagationParams(4.0, 615.0, 5.5)
D2D = PropagationParams(2.5, 615.0, 5.5)
TX = DtvTransmitter(Location(0.0, 0.0), 90.0, -92.2, 0.9, DTV)
IP = InterferenceParams(-98.2, 0.1, -10.0, D2D)
ORIGIN = Location(0.0, 0.0)


# frozen reference values (independent hand evaluation of the closed forms)
def test_path_loss_reference_values():
    assert path_loss_db(1.0, DTV) == pytest.approx(88.2275023, abs=1e-6)
    assert path_loss_db(100.0, DTV) == pytest.approx(168.2275023, abs=1e-6)
    assert path_loss_db(1.0, D2D) == pytest.approx(88.2275023, abs=1e-6)


def test_path_loss_vectorised_and_domain():
    d = np.array([0.5, 1.0, 2.0])
    assert np.all(np.diff(path_loss_db(d, DTV)) > 0)
    with pytest.raises(ValueError):
        path_loss_db(0.0, DTV)
    with pytest.raises(ValueError):
        path_loss_db(np.array([1.0, -1.0]), DTV)


def test_q_tail_values():
    assert q_tail(0.0) == 0.5
    assert q_tail_inverse(0.9) == pytest.approx(-1.2815516, abs=1e-6)
    assert q_tail_inverse(0.1) == pytest.approx(1.2815516, abs=1e-6)
    assert q_tail_inverse(0.5) == pytest.approx(0.0, abs=1e-12)
    for bad in (0.0, 1.0, -0.2, 1.5):
        with pytest.raises(ValueError):
            q_tail_inverse(bad)


@given(st.floats(-6, 6))
def test_q_tail_symmetry_and_roundtrip(x):
    assert q_tail(x) + q_tail(-x) == pytest.approx(1.0, abs=1e-12)
    assert q_tail_inverse(q_tail(x)) == pytest.approx(x, abs=1e-6)


def test_mean_received_power():
    assert mean_received_power_dbm(TX, Location(100, 0)) == pytest.approx(-78.2275023, abs=1e-6)
    assert mean_received_power_dbm(TX, Location(100, 0), 20.0) == pytest.approx(-98.2275023, abs=1e-6)
    assert mean_received_power_dbm(TX, Location(148.94, 0)) == pytest.approx(-85.15, abs=0.01)
    with pytest.raises(ValueError):
        mean_received_power_dbm(TX, TX.loc)


def test_coverage_threshold():
    assert coverage_threshold_dbm(TX) == pytest.approx(-85.1514664, abs=1e-6)
    half = DtvTransmitter(TX.loc, 90.0, -92.2, 0.5, DTV)
    assert coverage_threshold_dbm(half) == pytest.approx(-92.2, abs=1e-12)
    flat = DtvTransmitter(TX.loc, 90.0, -92.2, 0.9, PropagationParams(4.0, 615.0, 0.0))
    assert coverage_threshold_dbm(flat) == -92.2


def test_coverage_distance_and_probability():
    d = coverage_distance_km(TX)
    assert d == pytest.approx(148.970097, abs=1e-5)
    assert coverage_probability(TX, Location(d, 0)) == pytest.approx(0.9, abs=1e-9)
    assert coverage_probability(TX, Location(1e7, 0)) == pytest.approx(0.0, abs=1e-12)
    flat = DtvTransmitter(TX.loc, 90.0, -92.2, 0.9, PropagationParams(4.0, 615.0, 0.0))
    assert coverage_probability(flat, Location(1.0, 0)) == 1.0
    assert coverage_probability(flat, Location(1e4, 0)) == 0.0


@given(st.floats(1.0, 400.0), st.floats(-10, 30))
def test_coverage_equivalence(d, shadow):
    loc = Location(d, 0.0)
    p = mean_received_power_dbm(TX, loc, shadow)
    covered = coverage_probability(TX, loc, shadow) >= 0.9
    if abs(p - coverage_threshold_dbm(TX)) > 1e-9:
        assert covered == (p >= coverage_threshold_dbm(TX))


def test_interference_limit_values():
    dev = ORIGIN
    assert interference_power_limit_dbm(dev, Location(1.0, 0), IP) == pytest.approx(-17.0210313, abs=1e-6)
    r = worst_case_interference_range_km(IP)
    assert r == pytest.approx(1.9091553, abs=1e-6)
    assert interference_power_limit_dbm(dev, Location(r, 0), IP) == pytest.approx(-10.0, abs=1e-9)
    half = InterferenceParams(-98.2, 0.5, -10.0, D2D)
    assert interference_power_limit_dbm(dev, Location(3.0, 0), half) == pytest.approx(
        -98.2 + path_loss_db(3.0, D2D), abs=1e-12)
    with pytest.raises(ValueError):
        interference_power_limit_dbm(dev, dev, IP)


def test_interference_probability_values():
    rx = Location(1.0, 0.0)
    lim = interference_power_limit_dbm(ORIGIN, rx, IP)
    assert interference_probability(ORIGIN, lim, rx, IP) == pytest.approx(0.1, abs=1e-12)
    assert interference_probability(ORIGIN, -1e4, rx, IP) == pytest.approx(0.0, abs=1e-15)
    assert interference_probability(ORIGIN, -10.0, rx, IP) == pytest.approx(0.4980051, abs=1e-6)


def test_interference_probability_monte_carlo():
    rng = np.random.default_rng(7)
    s = rng.normal(0.0, 5.5, 400_000)
    empirical = np.mean(-10.0 - 88.2275023 - s >= -98.2)
    assert empirical == pytest.approx(0.498, abs=0.003)


@settings(max_examples=60)
@given(st.floats(0.05, 5.0), st.floats(-60, 20))
def test_interference_equivalence(d, power):
    rx = Location(d, 0.0)
    lim = interference_power_limit_dbm(ORIGIN, rx, IP)
    if abs(power - lim) > 1e-9:
        assert (interference_probability(ORIGIN, power, rx, IP) <= 0.1) == (power <= lim)


def test_watts():
    assert dbm_to_watt(0.0) == pytest.approx(1e-3, rel=1e-12)
    assert dbm_to_watt(-95.2) == pytest.approx(3.0200e-13, rel=1e-4)
    assert watt_to_dbm(1.234e-10) == pytest.approx(-69.087, abs=1e-3)
    assert dbm_to_watt(watt_to_dbm(1.234e-10)) == pytest.approx(1.234e-10, rel=1e-12)
    with pytest.raises(ValueError):
        watt_to_dbm(0.0)


@given(st.floats(-30, 30))
def test_translation_covariance(c):
    loc = Location(50.0, 10.0)
    shifted = DtvTransmitter(TX.loc, TX.power_dbm + c, TX.p_min_dbm, TX.cov_threshold, DTV)
    assert mean_received_power_dbm(shifted, loc) == pytest.approx(
        mean_received_power_dbm(TX, loc) + c, abs=1e-9)


def test_param_validation():
    with pytest.raises(ValueError):
        PropagationParams(0.0, 615.0, 5.5)
    with pytest.raises(ValueError):
        PropagationParams(4.0, -1.0, 5.5)
    with pytest.raises(ValueError):
        DtvTransmitter(ORIGIN, 90.0, -92.2, 1.0, DTV)
    with pytest.raises(ValueError):
        InterferenceParams(-98.2, 0.0, -10.0, D2D)
    assert distance_km(ORIGIN, Location(3.0, 4.0)) == 5.0
    assert math.isclose(path_loss_db(10.0, DTV) - path_loss_db(10.0, D2D), 15.0)
