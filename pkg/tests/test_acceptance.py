"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records a one-line verdict (``CRITERION n PASS|FAIL ...``) that
is repeated in the terminal summary. Criteria 1 and 2 are the slow ones:
300 Monte-Carlo trials per modulation on the full 5000-pulse scene.
"""

import json
from dataclasses import replace

import numpy as np
import pytest

from lostsim.channel import C, ClockModel
from lostsim.cli import main
from lostsim.config import bundled_config_path
from lostsim.energy import (RectennaModel, TagEnergyState, rectifier_output, time_to_ready)
from lostsim.locate import (AnchorSet, pf_init, pf_step, solve_position_lsq, tdoa_jacobian,
                            tdoa_residuals)
from lostsim.signal import Waveform
from lostsim.simkit import (ROOM_HEIGHT as H, NoiseMode, Simulation, TagSpec, default_config,
                            error_cdf, modulation_config, pair_tdoa_errors, rmse, run_scenario,
                            snr_crossing, snr_pair_config, sweep)
from lostsim.tdoa import RecordingWindow, TdoaMeasurement, cross_correlate, direct_correlate

import oracles
from scenes import quiet
from test_energy import random_sequence

TARGET_RMSE = 33e-12
SNR_GRID = np.arange(32.0, 41.0, 1.0)
TRIALS = 300
TW_VALUES = (0.32e-6, 1.28e-6, 5.12e-6, 20.5e-6, 82e-6)
CFG = str(bundled_config_path())


def room_positions(n, seed, margin=0.5):
    rng = np.random.default_rng(seed)
    xy = rng.uniform((margin, margin), (10 - margin, 7 - margin), size=(n, 2))
    return tuple(TagSpec(i + 1, (x, y, H)) for i, (x, y) in enumerate(xy))


@pytest.fixture(scope="module")
def jittered_crossing():
    r = rmse(pair_tdoa_errors(snr_pair_config(), SNR_GRID, TRIALS))
    return snr_crossing(SNR_GRID, r, TARGET_RMSE), r


def test_criterion_1_snr_for_33ps(jittered_crossing, report):
    snr, r = jittered_crossing
    ok = 35.0 <= snr <= 39.0
    report(1, ok, f"RMSE = 33 ps at {snr:.2f} dB accumulated SNR (tolerance [35, 39]); "
                  f"RMSE ps over {SNR_GRID[0]:.0f}..{SNR_GRID[-1]:.0f} dB: "
                  f"{' '.join(f'{v * 1e12:.1f}' for v in r)}")
    assert ok


@pytest.mark.parametrize("sigma", [50e-12, 400e-12])
def test_criterion_1_jitter_sensitivity(sigma, note):
    # the jitter magnitude is a free parameter; report how the threshold moves with it
    cfg = snr_pair_config()
    cfg = replace(cfg, train=replace(cfg.train, jitter_sigma=sigma))
    grid = np.arange(28.0, 46.0, 1.0)
    r = rmse(pair_tdoa_errors(cfg, grid, 100))
    snr = snr_crossing(grid, r, TARGET_RMSE)
    note(1, f"jitter sigma {sigma * 1e12:.0f} ps: RMSE = 33 ps at {snr:.2f} dB (100 trials)")
    assert np.isfinite(snr)


def test_criterion_2_jitter_pn_parity(jittered_crossing, report):
    snr_j, _ = jittered_crossing
    cfg = modulation_config(snr_pair_config(), "pn")
    r = rmse(pair_tdoa_errors(cfg, SNR_GRID, TRIALS))
    snr_pn = snr_crossing(SNR_GRID, r, TARGET_RMSE)
    diff = abs(snr_pn - snr_j)
    ok = diff <= 1.5
    report(2, ok, f"jittered {snr_j:.2f} dB vs PN polarity {snr_pn:.2f} dB, "
                  f"difference {diff:.2f} dB (tolerance 1.5)")
    assert ok


def test_criterion_3_integration_time_saturation(report):
    # noise fixed so the full 5000-pulse train would reach 34 dB at the room diagonal;
    # at that per-pulse SNR the shortest window drops below detection while long ones saturate
    tags = room_positions(20, seed=33)
    cfg = default_config(tags=tags, noise=NoiseMode.TARGET, target_snr_db=34.0)
    table = sweep(cfg, "tw", TW_VALUES, 1, cycles_per_trial=len(tags), workers=1)
    med, missed = {}, {}
    for v, rows in table.groups().items():
        e = np.array([r.error_m for r in rows])
        # a missed detection counts as an unbounded error, not a skipped sample
        med[v] = float(np.median(np.where(np.isfinite(e), e, np.inf)))
        missed[v] = int(np.sum(~np.isfinite(e)))
    long = [med[v] for v in TW_VALUES[2:]]
    ratio = med[TW_VALUES[0]] / med[TW_VALUES[-1]]
    spread = max(long) / min(long)
    ok = ratio >= 3.0 and spread <= 1.3
    report(3, ok, "median error per T_w: "
           + ", ".join(f"{v * 1e6:g} us {m * 100:.2f} cm ({missed[v]} missed)"
                       for v, m in med.items())
           + f"; 0.32/82 ratio {ratio:.3g} (need >= 3), spread above 5 us {spread:.3f} "
             f"(need <= 1.3)")
    assert ok


def test_criterion_4_end_to_end_accuracy(report):
    cfg = default_config(tags=room_positions(8, seed=44), noise=NoiseMode.TARGET,
                         target_snr_db=37.0,
                         clocks=ClockModel((0.0, 1.7e-6, -3.2e-6, 4.1e-6)))
    table = run_scenario(cfg, 200)
    errors = np.array([r.error_m for r in table])
    missing = int(np.sum(~np.isfinite(errors)))
    med = float(np.median(np.where(np.isfinite(errors), errors, np.inf)))
    cdf = error_cdf(table)
    ok = med <= 0.05 and len(table) == 200
    report(4, ok, f"200 cycles, 8 tags: median 2D error {med * 100:.2f} cm (need <= 5), "
                  f"p90 {cdf.p90 * 100:.2f} cm, {missing} cycles without estimate")
    assert ok


def test_criterion_5_wpt_ranges(capsys, report):
    assert main(["link-budget", "--erp", "2", "--freq", "868e6", "--gr", "1.8",
                 "--thresholds=-13,-16"]) == 0
    rows = [l.split(",") for l in capsys.readouterr().out.splitlines()[1:]]
    d13, d16 = (float(r[1]) for r in rows)
    assert main(["link-budget", "--preset", "asic"]) == 0
    asic = max(float(l.split(",")[1]) for l in capsys.readouterr().out.splitlines()[1:])
    ok = (abs(d13 / 8.66 - 1) <= 0.02 and abs(d16 / 12.24 - 1) <= 0.02 and asic > 22.0)
    report(5, ok, f"-13 dBm {d13:.3f} m (8.66 +-2%), -16 dBm {d16:.3f} m (12.24 +-2%), "
                  f"ASIC preset {asic:.2f} m (need > 22)")
    assert ok


def offset_scene(seed):
    """Line-of-sight room with a 800-pulse burst and room for +-5 us offsets."""
    base = quiet(default_config())
    base = replace(base, geometry=replace(base.geometry, reflectors=(), obstacles=()))
    train = replace(base.train, n_pulses=800)
    window = RecordingWindow(t_r=36e-6, t_w=6.5e-6, offset=5.5e-6)
    rng = np.random.default_rng(seed)
    tag = TagSpec(1, (rng.uniform(0.3, 9.7), rng.uniform(0.3, 6.7), H))
    return replace(base, train=train, window=window, ref_start=6e-6, tag_start=6e-6,
                   tags=(tag,), seed=int(rng.integers(2 ** 31)))


def test_criterion_6_clock_offset_invariance(report):
    rng = np.random.default_rng(6)
    worst, worst_geo = 0.0, 0.0
    for scene in range(100):
        cfg = offset_scene(scene)
        tdoas = []
        for _ in range(5):
            offsets = (0.0, *rng.uniform(-5e-6, 5e-6, 3))
            res = Simulation(replace(cfg, clocks=ClockModel(offsets))).run_cycle(1)
            tdoas.append([m.tdoa for m in res.tdoas])
            worst_geo = max(worst_geo, max(abs(e) for e in res.tdoa_errors))
        tdoas = np.array(tdoas)
        worst = max(worst, float(np.max(tdoas.max(axis=0) - tdoas.min(axis=0))))
    ok = worst < 5e-12 and worst_geo < 5e-12
    report(6, ok, f"100 scenes x 5 offset draws: max TDOA deviation across offsets "
                  f"{worst * 1e12:.4f} ps, max deviation from geometry "
                  f"{worst_geo * 1e12:.4f} ps (need < 5)")
    assert ok


def test_criterion_7_oracle_equivalences(report):
    rng = np.random.default_rng(7)
    fft_err = 0.0
    for n in (1, 2, 100, 1023, 4096):
        a = Waveform(4e9, 0.0, rng.standard_normal(n) + 1j * rng.standard_normal(n))
        b = Waveform(4e9, 0.0, rng.standard_normal(n) + 1j * rng.standard_normal(n))
        slow = direct_correlate(a, b).values
        fft_err = max(fft_err, np.max(np.abs(cross_correlate(a, b).values - slow))
                      / np.max(np.abs(slow)))
    anchors = AnchorSet([(0, 0, H), (10, 0, H), (10, 7, H), (0, 7, H)])

    def exact(p):
        rd = oracles.range_differences((p[0], p[1], H), anchors.positions)
        return [TdoaMeasurement((0, i + 1), d / C, 30.0, 0.0) for i, d in enumerate(rd)]

    meas = exact((6.1, 2.9))
    jac_err = 0.0
    for p in rng.uniform((0.3, 0.3), (9.7, 6.7), size=(100, 2)):
        J = tdoa_jacobian(p, anchors, meas)
        Jn = oracles.finite_difference(lambda x: tdoa_residuals(x, anchors, meas), p)
        jac_err = max(jac_err, np.max(np.abs(J - Jn)) / max(1.0, np.max(np.abs(J))))
    lsq_err = np.linalg.norm(solve_position_lsq(exact((5.0, 3.5)), anchors, (2, 2)).position
                             - (5.0, 3.5))
    ps = pf_init(anchors, 2000, ((0, 0), (10, 7)), seed=7)
    pf_ok = True
    for _ in range(30):
        ps, _ = pf_step(ps, exact((4.0, 5.0)), anchors, dt=0.2)
        pf_ok &= abs(ps.weights.sum() - 1) <= 1e-9 and ps.ess >= 1000 - 1e-9
    ok = fft_err < 1e-9 and jac_err < 1e-5 and lsq_err < 1e-4 and pf_ok
    report(7, ok, f"FFT vs direct {fft_err:.2e} (< 1e-9), Jacobian {jac_err:.2e} (< 1e-5), "
                  f"LSQ {lsq_err:.2e} m (< 1e-4), PF normalisation and ESS guard "
                  f"{'held' if pf_ok else 'violated'} on every step")
    assert ok


def test_criterion_8_energy_state_machine(report):
    t = time_to_ready(TagEnergyState(), rectifier_output(RectennaModel(), -13.0))
    rng = np.random.default_rng(8)
    violations = sum(random_sequence(rng) for _ in range(10_000))
    ok = t < 0.2 and violations == 0
    report(8, ok, f"recharge from empty at -13 dBm {t * 1e3:.1f} ms (need < 200); "
                  f"{violations} causality/clamp violations in 10^4 random sequences")
    assert ok


def run_all_commands(out, capsys):
    """Every CLI command once; returns a name -> bytes map of its outputs."""
    files = {}
    main(["simulate", CFG, "--out", str(out / "sim"), "--cycles", "2", "--dump-waveforms"])
    main(["sweep", CFG, "--var", "snr", "--values", "34,40", "--trials", "2",
          "--cycles-per-trial", "1", "--out", str(out / "sweep")])
    capsys.readouterr()
    main(["link-budget", "--thresholds=-13,-16,-21.5"])
    files["link-budget.stdout"] = capsys.readouterr().out.encode()
    entry = json.loads((out / "sim" / "waveforms" / "index.json").read_text())[0]
    args = ["tdoa"]
    for k in ("r11", "r12", "r21", "r22"):
        args += [f"--{k}", str(out / "sim" / "waveforms" / entry[k])]
    main(args + ["--tp11", repr(entry["tp11"]), "--tp12", repr(entry["tp12"])])
    files["tdoa.stdout"] = capsys.readouterr().out.encode()
    for p in sorted(out.rglob("*")):
        if p.is_file():
            files[str(p.relative_to(out))] = p.read_bytes()
    return files


def test_criterion_9_determinism(tmp_path, capsys, monkeypatch, report):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1714521600")
    a = run_all_commands(tmp_path / "a", capsys)
    b = run_all_commands(tmp_path / "b", capsys)
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = not differing and len(a) > 10
    report(9, ok, f"{len(a)} outputs from simulate, sweep, link-budget and tdoa compared "
                  f"byte for byte; differing: {differing or 'none'}")
    assert ok
