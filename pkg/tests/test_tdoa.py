import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lostsim.channel import C, ClockModel
from lostsim.signal import (EmissionSchedule, Modulation, PulseTrainSpec, Waveform,
                            draw_emission_schedule, make_pulse_shape, synthesize)
from lostsim.simkit import (Simulation, TagSpec, default_config, pair_tdoa_errors, rmse,
                            snr_pair_config)
from lostsim.tdoa import (CorrelationFunction, DegeneratePeakError, DetectionError,
                          RecordingWindow, SyncGeometry, accumulated_snr_db, ambiguity_ratio,
                          cross_correlate, direct_correlate, double_correlation_tdoa,
                          find_peak, first_peak, peak_quality)

import oracles
from scenes import fast_config, quiet

FS = 4e9
SHAPE, PROTO = make_pulse_shape(4e9, 1.4e9, FS)


def random_waveform(rng, n, t0=0.0):
    return Waveform(FS, t0, rng.standard_normal(n) + 1j * rng.standard_normal(n))


@given(st.integers(1, 48), st.integers(1, 48), st.integers(0, 2 ** 31))
def test_fft_matches_loop_oracle(na, nb, seed):
    rng = np.random.default_rng(seed)
    a, b = random_waveform(rng, na), random_waveform(rng, nb, t0=3 / FS)
    c = cross_correlate(a, b)
    lags, ref = oracles.direct_xcorr(a.samples, b.samples)
    np.testing.assert_allclose(c.lags, 3 / FS + lags / FS, rtol=0, atol=1e-20)
    scale = np.abs(ref).max()
    assert np.max(np.abs(c.values - ref / FS)) <= 1e-9 * scale / FS


@pytest.mark.parametrize("n", [1, 17, 1000, 4096])
def test_fft_matches_direct_sum(n, rng):
    a, b = random_waveform(rng, n), random_waveform(rng, n)
    fast = cross_correlate(a, b).values
    slow = direct_correlate(a, b).values
    assert np.max(np.abs(fast - slow)) / np.max(np.abs(slow)) < 1e-9


def test_autocorrelation_peak_is_energy():
    c = cross_correlate(PROTO, PROTO)
    p = find_peak(c)
    assert p.delay == pytest.approx(0.0, abs=1e-15)
    assert c.magnitude.max() == pytest.approx(PROTO.energy(), rel=1e-12)


def test_delay_of_ten_samples_gives_positive_lag():
    # C(t) = sum a(tau) conj(b(t + tau)): b = a delayed by D peaks at t = +D
    pad = np.zeros(10)
    a = Waveform(FS, 0.0, np.concatenate([PROTO.samples, pad]))
    b = Waveform(FS, 0.0, np.concatenate([pad, PROTO.samples]))
    c = cross_correlate(a, b)
    assert find_peak(c).delay == pytest.approx(10 / FS, abs=1e-15)
    lags, ref = oracles.direct_xcorr(a.samples, b.samples)
    assert lags[np.argmax(np.abs(ref))] == 10


def test_zero_input_gives_zero_correlation():
    a = Waveform(FS, 0.0, np.zeros(32))
    c = cross_correlate(a, PROTO)
    assert not np.any(c.values)
    with pytest.raises(DegeneratePeakError):
        find_peak(c)


def test_mismatched_rates_rejected():
    with pytest.raises(ValueError):
        cross_correlate(PROTO, Waveform(2 * FS, 0.0, PROTO.samples))


def corr(values):
    values = np.asarray(values, complex)
    n = (values.size + 1) // 2
    return CorrelationFunction(np.arange(-(n - 1), n) / FS, values, FS)


def test_peak_on_grid_symmetric_neighbours():
    p = find_peak(corr([0, 1, 3, 1, 0]))
    assert p.delay == 0.0 and p.value == 3.0


def test_tie_breaks_to_smaller_abs_lag_then_earliest():
    p = find_peak(corr([0, 5, 1, 0, 1, 5, 0]))
    assert p.index == 1
    p = find_peak(corr([0, 5, 1, 5, 1, 0, 0]))
    assert p.index == 3


def test_flat_correlation_is_degenerate():
    with pytest.raises(DegeneratePeakError):
        find_peak(corr([2, 2, 2]))


@pytest.mark.parametrize("upsample", [1, 4])
@pytest.mark.parametrize("frac", [0.3, -0.3, 0.5, 0.1])
def test_fractional_delay_refinement(frac, upsample):
    delay = 40 / FS + frac / FS
    w = synthesize(EmissionSchedule(np.array([delay])), SHAPE, FS, (0.0, 80 / FS))
    a = Waveform(FS, 0.0, np.roll(synthesize(EmissionSchedule(np.array([40 / FS])), SHAPE, FS,
                                             (0.0, 80 / FS)).samples, 0))
    p = find_peak(cross_correlate(a, w), upsample=upsample)
    assert abs(p.delay - frac / FS) * FS <= 0.05


def test_upsampled_refinement_is_unbiased():
    errs = []
    for frac in np.linspace(-0.5, 0.5, 11):
        w = synthesize(EmissionSchedule(np.array([40 / FS + frac / FS])), SHAPE, FS, (0, 80 / FS))
        a = synthesize(EmissionSchedule(np.array([40 / FS])), SHAPE, FS, (0, 80 / FS))
        errs.append(find_peak(cross_correlate(a, w), upsample=4).delay - frac / FS)
    assert np.max(np.abs(errs)) < 0.1e-12


def test_first_peak_prefers_earlier_arrival():
    # a weaker copy 3 ns before the strongest one
    sched = EmissionSchedule(np.array([20e-9, 23e-9]))
    w = synthesize(sched, SHAPE, FS, (0, 60e-9))
    w = Waveform(FS, 0.0, w.samples * np.where(np.arange(len(w)) < 86, 0.7, 1.0))
    c = cross_correlate(PROTO, w)
    assert find_peak(c).delay == pytest.approx(23e-9, abs=0.05e-9)
    assert first_peak(c).delay == pytest.approx(20e-9, abs=0.05e-9)


def burst(modulation, n=5000, jitter=200e-12, seed=0):
    spec = PulseTrainSpec(SHAPE, n_pulses=n, modulation=modulation, jitter_sigma=jitter)
    return draw_emission_schedule(spec, seed).shifted(50e-9)


def test_ambiguity_periodic_train():
    s = burst(Modulation.PERIODIC, n=400)
    w = synthesize(s, SHAPE, FS, (0, 2.6e-6), )
    # carrier phase rotates by fc*prp = 25 cycles per pulse: identical phases
    assert ambiguity_ratio(cross_correlate(w, w), exclusion=2e-9) > 0.9


def test_ambiguity_single_pulse():
    assert ambiguity_ratio(cross_correlate(PROTO, PROTO), exclusion=2e-9) < 0.05


def test_ambiguity_jittered_train():
    s = burst(Modulation.JITTERED)
    w = synthesize(s, SHAPE, FS, (0, 31.5e-6))
    assert ambiguity_ratio(cross_correlate(w, w), exclusion=2e-9) < 0.5


def test_peak_quality_high_for_clean_burst_low_for_noise(rng):
    s = burst(Modulation.JITTERED, n=500)
    w = synthesize(s, SHAPE, FS, (0, 3.3e-6))
    c = cross_correlate(w, w)
    assert peak_quality(c, find_peak(c).index) > 25
    a, b = random_waveform(rng, 8000), random_waveform(rng, 8000)
    c = cross_correlate(a, b)
    assert peak_quality(c, find_peak(c).index) < 10


# -- double correlation on simulated receivers --------------------------------


def record_pair(cfg, tag_pos, offsets, rx=(0, 1), seed=0):
    cfg = replace(cfg, tags=(TagSpec(1, tuple(tag_pos)),),
                  clocks=ClockModel(tuple(offsets)))
    sim = Simulation(cfg)
    ref_s = draw_emission_schedule(cfg.train, seed).shifted(cfg.ref_start)
    tag_s = draw_emission_schedule(cfg.train, seed + 1).shifted(cfg.window.half + cfg.tag_start)
    halves = {}
    for k in rx:
        halves[k] = (sim.record(ref_s, cfg.geometry.ref_tx, k, 0, offsets[k], 0.0, None),
                     sim.record(tag_s, np.asarray(tag_pos, float), k, 1, offsets[k], 0.0, None))
    a = cfg.geometry.anchors
    ref = cfg.geometry.ref_tx
    sync = SyncGeometry(np.linalg.norm(ref - a[rx[0]]) / C, np.linalg.norm(ref - a[rx[1]]) / C)
    return halves, sync, cfg


def pair_tdoa(cfg, tag_pos, offsets, rx=(0, 1), seed=0, delta=0.0):
    h, sync, cfg = record_pair(cfg, tag_pos, offsets, rx, seed)
    sync = SyncGeometry(sync.tp11 + delta, sync.tp12 + delta)
    m = double_correlation_tdoa(h[rx[0]][0], h[rx[0]][1], h[rx[1]][0], h[rx[1]][1], sync,
                                cfg.window, rx_pair=rx, prefilter_sigma=cfg.prefilter_sigma)
    return m


def geometric_tdoa(cfg, tag_pos, rx=(0, 1)):
    a = cfg.geometry.anchors
    p = np.asarray(tag_pos, float)
    return (np.linalg.norm(p - a[rx[1]]) - np.linalg.norm(p - a[rx[0]])) / C


@pytest.fixture(scope="module")
def los():
    return quiet(snr_pair_config(fast_config()))


def test_equidistant_tag_gives_zero(los):
    m = pair_tdoa(los, (5.0, 3.0, 2.03), (0, 0, 0, 0))
    assert abs(m.tdoa) < 5e-12


def test_offsets_do_not_change_tdoa(los):
    tag = (3.1, 4.4, 2.03)
    vals = [pair_tdoa(los, tag, (0, tr, 0, 0)).tdoa for tr in (-1.2e-6, 0.0, 1.5e-6)]
    assert max(vals) - min(vals) < 5e-12


def test_known_delay_cancellation(los):
    tag = (6.3, 1.2, 2.03)
    a = pair_tdoa(los, tag, (0, 1e-6, 0, 0)).tdoa
    b = pair_tdoa(los, tag, (0, 1e-6, 0, 0), delta=7.5e-9).tdoa
    assert abs(a - b) < 1e-15


@settings(max_examples=12)
@given(st.floats(0.3, 9.7), st.floats(0.3, 6.7), st.sampled_from([(0, 1), (0, 2), (0, 3)]),
       st.integers(0, 1000))
def test_tdoa_matches_geometry(los, x, y, rx, seed):
    m = pair_tdoa(los, (x, y, 2.03), (0, 0, 0, 0), rx=rx, seed=seed)
    assert abs(m.tdoa - geometric_tdoa(los, (x, y, 2.03), rx)) < 5e-12


def test_detection_failure_on_noise(rng):
    w = RecordingWindow(t_r=20e-6, t_w=8e-6)
    halves = [random_waveform(rng, int(10e-6 * FS), t0=k * 10e-6) for k in range(4)]
    with pytest.raises(DetectionError) as info:
        double_correlation_tdoa(halves[0], halves[1], halves[2], halves[3],
                                SyncGeometry(1e-8, 2e-8), w)
    assert info.value.measurement is not None
    assert info.value.peak_quality < 10


def test_recording_window_rules():
    with pytest.raises(ValueError):
        RecordingWindow(t_r=100e-6, t_w=60e-6)
    with pytest.raises(ValueError):
        RecordingWindow(t_r=100e-6, t_w=40e-6, offset=20e-6)
    assert RecordingWindow().half == 50e-6
    with pytest.raises(ValueError):
        SyncGeometry(-1e-9, 0.0)


def test_accumulated_snr_definition():
    assert accumulated_snr_db(0.0, 5000) == pytest.approx(36.99, abs=0.01)


def test_rmse_monotone_in_snr():
    cfg = snr_pair_config(fast_config())
    snr = np.arange(22.0, 40.0, 3.0)
    r = rmse(pair_tdoa_errors(cfg, snr, 200))
    inversions = int(np.sum(np.diff(r) > 0))
    assert inversions <= 1
