import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from galstwin.analysis import (Diagnostics, DisjointRanges, InterconnectGraph, MalformedEpisode,
                               NonUniformSampling, TimeSeries, UnknownNode, anomalous,
                               classify_fault, detect_fault_components, fft, inspection_episodes,
                               localize_causes, measure_inspection_times, power_spectrum, residual,
                               threshold_detect)
from galstwin.physics import ConveyorParams, conveyor_power, eccentricity_harmonics


def direct_dft(x):
    n = len(x)
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ np.asarray(x, dtype=complex)


@settings(max_examples=60)
@given(st.integers(0, 8), st.integers(0, 2 ** 31))
def test_fft_matches_direct_dft(log_n, seed):
    rng = np.random.default_rng(seed)
    n = 1 << log_n
    x = rng.normal(size=n) + 1j * rng.normal(size=n)
    ref = direct_dft(x)
    assert np.max(np.abs(fft(x) - ref)) <= 1e-9 * max(1.0, np.max(np.abs(ref)))


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        fft(np.ones(6))


def _series(f, n=2048, rate=1000.0, amp=1.0):
    t = np.arange(n) / rate
    return TimeSeries("s", t, amp * np.cos(2 * np.pi * f * t))


def test_on_bin_tone_reads_its_amplitude():
    s = power_spectrum(_series(125.0, amp=3.0), 1024)  # bin 128 at 1 kHz / 1024
    assert s.magnitude_near(125.0) == pytest.approx(3.0, rel=1e-9)
    assert s.dominant() == pytest.approx(125.0)


@settings(max_examples=40)
@given(st.floats(20, 400))
def test_off_bin_scalloping_bounded(f):
    s = power_spectrum(_series(f, amp=1.0), 1024)
    loss_db = -20 * math.log10(s.magnitude_near(f))
    assert -0.01 < loss_db <= 1.43


def test_spectrum_guards():
    with pytest.raises(ValueError):
        power_spectrum(_series(10.0, n=100), 1024)
    with pytest.raises(ValueError):
        power_spectrum(_series(10.0), 1000)
    t = np.cumsum(np.r_[0, np.full(1023, 1e-3)])
    t[500:] += 1e-4
    with pytest.raises(NonUniformSampling):
        power_spectrum(TimeSeries("x", t, np.zeros(1024)), 1024)


def test_spectrum_csv_header():
    assert power_spectrum(_series(50.0), 1024).to_csv().startswith("freq_hz,magnitude\n")


def _power(harmonics=()):
    p = ConveyorParams(harmonics=harmonics)
    t = np.arange(4096) / 1000.0
    return power_spectrum(TimeSeries("p", t, conveyor_power(p, t)), 1024)


def test_fault_ratios_healthy_vs_faulty():
    flag, ratios = detect_fault_components(_power())
    assert not flag and max(ratios.values()) < 0.02
    flag, ratios = detect_fault_components(_power(eccentricity_harmonics(5.0)))
    assert flag and min(ratios.values()) > 0.02


def test_residual_interpolates_twin_on_plant_times():
    twin = TimeSeries("twin", np.array([0.0, 1.0, 2.0]), np.array([0.0, 10.0, 20.0]))
    plant = TimeSeries("plant", np.array([0.5, 1.5, 3.0]), np.array([6.0, 15.0, 0.0]))
    r = residual(twin, plant)
    assert r.times.tolist() == [0.5, 1.5]
    assert r.values.tolist() == pytest.approx([1.0, 0.0])
    with pytest.raises(DisjointRanges):
        residual(twin, plant.shifted(10.0))


def test_threshold_detect_hold():
    r = TimeSeries("r", np.arange(6.0), np.array([0, 2, 0, 2, 2, 2.0]))
    assert threshold_detect(r, 1.0) == 1.0
    assert threshold_detect(r, 1.0, hold=3) == 5.0
    assert threshold_detect(r, 5.0) is None


def test_time_series_validation():
    with pytest.raises(ValueError):
        TimeSeries("x", np.array([0.0, 0.0]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        TimeSeries("", np.array([0.0]), np.array([1.0]))


def rec(n, r, start, end):
    return SimpleNamespace(n=n, r=r, names=("c", "d"), statuses=(start, end))


def test_inspection_episodes_pairing():
    trace = [rec(0, 0.0, 0, 1), rec(1, 0.01, 1, 0), rec(120, 1.2, 0, 1), rec(130, 1.3, 1, 0)]
    assert inspection_episodes(trace, "c", "d") == [(1, 120, pytest.approx(1190.0))]
    assert measure_inspection_times(trace, "c", "d") == [pytest.approx(1190.0)]
    with pytest.raises(MalformedEpisode):
        inspection_episodes([rec(1, 0, 1, 0), rec(2, 0.01, 1, 0)], "c", "d")


def test_same_tick_end_and_start():
    trace = [rec(1, 0.0, 1, 0), rec(100, 1.0, 1, 1), rec(200, 2.0, 0, 1)]
    assert [e[:2] for e in inspection_episodes(trace, "c", "d")] == [(1, 100), (100, 200)]


@given(st.lists(st.floats(0, 3000, allow_nan=False)))
def test_anomalous_indices(xs):
    assert anomalous(xs) == [i for i, x in enumerate(xs) if x > 1530.0]


GRAPH = InterconnectGraph(
    {"seq": "controller", "robot": "robot-ode", "cb1": "conveyor", "cb2": "conveyor",
     "camera": "petri", "trigger": "controller"},
    (("seq", "robot"), ("robot", "seq"), ("robot", "cb2"), ("cb1", "robot"),
     ("cb2", "camera"), ("camera", "trigger"), ("trigger", "camera")))


def test_localize_orders_by_distance_and_skips_controllers():
    assert localize_causes(GRAPH, "camera") == ["cb2", "robot", "cb1"]
    assert "trigger" in localize_causes(GRAPH, "camera", include_controllers=True)
    with pytest.raises(UnknownNode):
        localize_causes(GRAPH, "nope")


def test_classify_confirms_first_firing_candidate():
    t = np.arange(4096) / 1000.0
    healthy = TimeSeries("p", t, conveyor_power(ConveyorParams(), t))
    tt = np.arange(0, 10, 0.01)
    twin = TimeSeries("tw", tt, np.zeros_like(tt))
    plant = TimeSeries("pl", tt, np.where(tt > 5, tt - 5, 0.0))
    d = Diagnostics(GRAPH, "camera", 7, {"cb2": healthy}, {"robot": [(twin, plant)]})
    notes = []
    rep = classify_fault(d, log=notes.append)
    assert rep.confirmed == "robot"
    assert [e["model"] for e in rep.evidence] == ["cb2", "robot"]
    assert rep.evidence[1]["detectionTime"] == pytest.approx(5.6, abs=0.02)
    assert notes and rep.to_dict()["detectionTick"] == 7
