"""Command-line entry point: ``lostsim simulate|sweep|link-budget|tdoa``."""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .channel import C, uhf_link
from .config import ConfigError, load_config
from .energy import (ASIC_COLD_THRESHOLD_DBM, ASIC_SUSTAIN_THRESHOLD_DBM, COLD_THRESHOLD_DBM,
                     SUSTAIN_THRESHOLD_DBM, activation_distance)
from .signal import make_pulse_shape
from .simkit import MetricsTable, Simulation, SweepVariable, error_cdf, run_scenario, sweep
from .tdoa import DetectionError, RecordingWindow, SyncGeometry, double_correlation_tdoa
from .waveio import WaveformFormatError, read_waveform, write_waveform

log = logging.getLogger("lostsim")

METRICS_COLUMNS = ("cycle", "tag_id", "truth_x", "truth_y", "est_x", "est_y", "error_m",
                   "n_detections", "min_peak_quality_db")
SWEEP_COLUMNS = ("value", "trial") + METRICS_COLUMNS + ("tdoa_errors_s", "note")
SUMMARY_COLUMNS = ("value", "median_error_m", "p90_error_m", "n_detected")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DETECTION, EXIT_FORMAT = 0, 2, 3, 4, 5


def fmt(v) -> str:
    """Round-trip text for numbers: repr for floats, str for ints."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _metrics_fields(row) -> list:
    return [row.cycle, row.tag_id, row.truth[0], row.truth[1], row.estimate[0], row.estimate[1],
            row.error_m, row.n_detections, row.min_peak_quality_db]


def write_metrics_csv(path, table: MetricsTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for row in table:
            w.writerow([fmt(v) for v in _metrics_fields(row)])


def write_sweep_csv(path, table: MetricsTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in table:
            fields = [row.sweep_value, row.trial] + _metrics_fields(row)
            fields.append(";".join(fmt(e) for e in row.tdoa_errors))
            fields.append(row.note)
            w.writerow([fmt(v) for v in fields])


def summarize(table: MetricsTable) -> list:
    rows = []
    for value, group in table.groups().items():
        cdf = error_cdf(group)
        rows.append((value, cdf.median, cdf.p90, int(cdf.errors.size)))
    return rows


def write_summary_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def timestamp() -> str:
    """UTC start time; SOURCE_DATE_EPOCH pins it for reproducible output."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (dt.datetime.fromtimestamp(int(epoch), dt.timezone.utc) if epoch
            else dt.datetime.now(dt.timezone.utc).replace(microsecond=0))
    return when.isoformat()


def write_manifest(out_dir: Path, loaded, command: str, args: dict, outputs: list,
                   started: str) -> Path:
    manifest = {
        "tool": "lostsim",
        "version": __version__,
        "command": command,
        "arguments": args,
        "seed": loaded.scenario.seed,
        "config_path": loaded.path,
        "config_sha256": hashlib.sha256(loaded.text.encode()).hexdigest(),
        "config": loaded.text,
        "started": started,
        "outputs": sorted(outputs),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _dump_cycle(out_dir: Path, res, cfg, index: list) -> None:
    wf = res.waveforms
    anchors = cfg.geometry.anchors
    ref = cfg.geometry.ref_tx
    for i, (h1, h2) in enumerate(zip(wf["first"], wf["second"])):
        for half, w in ((1, h1), (2, h2)):
            name = f"cycle{res.cycle:04d}_rx{i}_h{half}.lstw"
            write_waveform(out_dir / name, w)
    for m in res.tdoas:
        a, b = m.rx_pair
        index.append({"cycle": res.cycle, "rx_pair": [a, b],
                      "r11": f"cycle{res.cycle:04d}_rx{a}_h1.lstw",
                      "r12": f"cycle{res.cycle:04d}_rx{a}_h2.lstw",
                      "r21": f"cycle{res.cycle:04d}_rx{b}_h1.lstw",
                      "r22": f"cycle{res.cycle:04d}_rx{b}_h2.lstw",
                      "tp11": float(np.linalg.norm(ref - anchors[a]) / C),
                      "tp12": float(np.linalg.norm(ref - anchors[b]) / C),
                      "tdoa": m.tdoa})


def cmd_simulate(args) -> int:
    started = timestamp()
    loaded = load_config(args.config)
    cfg = loaded.scenario
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
        loaded = replace(loaded, scenario=cfg)
    n_cycles = args.cycles or loaded.n_cycles
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = ["metrics.csv"]
    index: list = []
    on_cycle = None
    if args.dump_waveforms:
        wdir = out / "waveforms"
        wdir.mkdir(exist_ok=True)

        def on_cycle(res):
            if res.waveforms is not None:
                _dump_cycle(wdir, res, cfg, index)
    table = run_scenario(cfg, n_cycles, sim=Simulation(cfg), on_cycle=on_cycle)
    write_metrics_csv(out / "metrics.csv", table)
    if args.dump_waveforms:
        (out / "waveforms" / "index.json").write_text(json.dumps(index, indent=2) + "\n")
        outputs += sorted(f"waveforms/{p.name}" for p in (out / "waveforms").iterdir())
    write_manifest(out, loaded, "simulate",
                   {"cycles": n_cycles, "dump_waveforms": bool(args.dump_waveforms)},
                   outputs, started)
    cdf = error_cdf(table)
    log.info("%d cycles, %d estimates, median error %.4f m", len(table), cdf.errors.size,
             cdf.median)
    return EXIT_OK


def _parse_values(text: str) -> list:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad value list {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("value list is empty")
    return values


def cmd_sweep(args) -> int:
    started = timestamp()
    if args.trials < 1:
        log.error("--trials must be >= 1")
        return EXIT_USAGE
    loaded = load_config(args.config)
    var = SweepVariable.parse(args.var)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = sweep(loaded.scenario, var, args.values, args.trials,
                  cycles_per_trial=args.cycles_per_trial)
    write_sweep_csv(out / "sweep_metrics.csv", table)
    write_summary_csv(out / "summary.csv", summarize(table))
    write_manifest(out, loaded, "sweep",
                   {"var": var.value, "values": [fmt(v) for v in args.values],
                    "trials": args.trials, "cycles_per_trial": args.cycles_per_trial},
                   ["sweep_metrics.csv", "summary.csv"], started)
    return EXIT_OK


def link_budget_rows(erp: float, freq: float, gr: float, thresholds) -> list:
    link = uhf_link(erp=erp, carrier=freq, rx_antenna_gain=gr)
    rows = []
    for thr in thresholds:
        try:
            rows.append((thr, activation_distance(link, thr), "ok"))
        except ValueError:
            rows.append((thr, float("nan"), "unreachable"))
    return rows


def cmd_link_budget(args) -> int:
    thresholds = args.thresholds
    if thresholds is None:
        thresholds = ([ASIC_COLD_THRESHOLD_DBM, ASIC_SUSTAIN_THRESHOLD_DBM]
                      if args.preset == "asic" else [COLD_THRESHOLD_DBM, SUSTAIN_THRESHOLD_DBM])
    rows = link_budget_rows(args.erp, args.freq, args.gr, thresholds)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(("threshold_dbm", "distance_m", "status"))
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return EXIT_OK


def cmd_tdoa(args) -> int:
    try:
        r11, r12, r21, r22 = (read_waveform(p) for p in (args.r11, args.r12, args.r21, args.r22))
    except WaveformFormatError as exc:
        log.error("waveform format error: %s", exc)
        return EXIT_FORMAT
    if len({w.sample_rate for w in (r11, r12, r21, r22)}) != 1:
        log.error("waveform sample rates differ")
        return EXIT_FORMAT
    if not (r11.t0 < r12.t0 and r21.t0 < r22.t0):
        log.error("window discipline: the tag-burst half must follow the reference half "
                  "on each receiver")
        return EXIT_DETECTION
    window = RecordingWindow(t_r=2 * max(r11.duration, r12.duration, args.t_w + args.offset),
                             t_w=args.t_w, offset=args.offset)
    sigma = None
    if args.filter_bandwidth > 0:
        shape, _ = make_pulse_shape(args.filter_center, args.filter_bandwidth, r11.sample_rate)
        sigma = shape.sigma
    try:
        m = double_correlation_tdoa(r11, r12, r21, r22, SyncGeometry(args.tp11, args.tp12),
                                    window, prefilter_sigma=sigma,
                                    detection_threshold_db=args.threshold,
                                    upsample=args.upsample, peak_mode=args.peak_mode)
    except DetectionError as exc:
        log.error("detection failure: %s", exc)
        return EXIT_DETECTION
    span = max(r12.duration, r22.duration)
    if not abs(m.tdoa) < span:
        log.error("window discipline: TDOA %s s exceeds the half-window", fmt(m.tdoa))
        return EXIT_DETECTION
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(("tdoa_s", "peak_quality_db", "ambiguity_ratio"))
    w.writerow((fmt(m.tdoa), fmt(m.peak_quality), fmt(m.ambiguity_ratio)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lostsim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and write per-cycle metrics")
    s.add_argument("config")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--cycles", type=int, help="override [scenario] n_cycles")
    s.add_argument("--seed", type=int, help="override [scenario] seed")
    s.add_argument("--dump-waveforms", action="store_true",
                   help="write every recorded half-window as .lstw files")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="parameter sweep with independent trials")
    s.add_argument("config")
    s.add_argument("--var", required=True, help="tw | snr | distance | jitter")
    s.add_argument("--values", required=True, type=_parse_values,
                   help="comma-separated values in SI units (dB for snr)")
    s.add_argument("--trials", required=True, type=int)
    s.add_argument("--cycles-per-trial", type=int, default=None,
                   help="cycles per trial (default: one per tag)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("link-budget", help="activation distance per power threshold")
    s.add_argument("--erp", type=float, default=2.0, help="source ERP in W")
    s.add_argument("--freq", type=float, default=868e6, help="carrier in Hz")
    s.add_argument("--gr", type=float, default=1.8, help="tag antenna gain in dBi")
    s.add_argument("--thresholds", type=_parse_values, default=None,
                   help="comma-separated thresholds in dBm")
    s.add_argument("--preset", choices=("pmu", "asic"), default="pmu",
                   help="threshold preset used when --thresholds is omitted")
    s.set_defaults(func=cmd_link_budget)

    s = sub.add_parser("tdoa", help="double cross-correlation TDOA from four waveform files")
    for name in ("r11", "r12", "r21", "r22"):
        s.add_argument(f"--{name}", required=True)
    s.add_argument("--tp11", type=float, required=True, help="reference TX to RX1 delay (s)")
    s.add_argument("--tp12", type=float, required=True, help="reference TX to RX2 delay (s)")
    s.add_argument("--t-w", type=float, default=40e-6, help="integration window (s)")
    s.add_argument("--offset", type=float, default=0.0,
                   help="start of the integration window within each half (s)")
    s.add_argument("--threshold", type=float, default=10.0, help="detection threshold (dB)")
    s.add_argument("--upsample", type=int, default=4)
    s.add_argument("--peak-mode", choices=("strongest", "first"), default="strongest")
    s.add_argument("--filter-bandwidth", type=float, default=1.4e9,
                   help="matched receive filter bandwidth (Hz); 0 disables")
    s.add_argument("--filter-center", type=float, default=4e9)
    s.set_defaults(func=cmd_tdoa)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
