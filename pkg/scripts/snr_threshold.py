"""Accumulated SNR at which the pair TDOA RMSE reaches a target, per jitter sigma.

    python3 scripts/snr_threshold.py --trials 300 --jitter 50e-12,200e-12,400e-12

Prints the RMSE curve and the interpolated crossing for each jitter value,
and once more for the PN-polarity train.
"""

import argparse
from dataclasses import replace

import numpy as np

from lostsim.simkit import modulation_config, pair_tdoa_errors, rmse, snr_crossing, snr_pair_config


def floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--snr", type=floats, default=list(np.arange(32.0, 41.0, 1.0)),
                   help="comma-separated accumulated SNR grid in dB")
    p.add_argument("--jitter", type=floats, default=[200e-12])
    p.add_argument("--target", type=float, default=33e-12, help="RMSE target in s")
    p.add_argument("--no-pn", action="store_true", help="skip the PN-polarity run")
    args = p.parse_args()

    snr = np.asarray(args.snr)
    base = snr_pair_config()
    runs = [(f"jittered sigma={s * 1e12:g} ps",
             replace(base, train=replace(base.train, jitter_sigma=s))) for s in args.jitter]
    if not args.no_pn:
        runs.append(("pn polarity", modulation_config(base, "pn")))
    print("snr_db," + ",".join(f"{v:g}" for v in snr))
    for label, cfg in runs:
        r = rmse(pair_tdoa_errors(cfg, snr, args.trials))
        cross = snr_crossing(snr, r, args.target)
        print(f"{label}," + ",".join(f"{v * 1e12:.2f}" for v in r))
        print(f"# {label}: RMSE {args.target * 1e12:g} ps at {cross:.2f} dB")


if __name__ == "__main__":
    main()
