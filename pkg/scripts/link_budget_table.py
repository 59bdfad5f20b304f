"""Activation distance over a range of tag input-power thresholds.

    python3 scripts/link_budget_table.py --erp 2 --freq 868e6 --gr 1.8

Marks the cold-start and sustain thresholds of the off-the-shelf and ASIC
presets.
"""

import argparse

import numpy as np

from lostsim.channel import uhf_link
from lostsim.energy import (ASIC_COLD_THRESHOLD_DBM, ASIC_SUSTAIN_THRESHOLD_DBM,
                            COLD_THRESHOLD_DBM, SUSTAIN_THRESHOLD_DBM, activation_distance)

MARKS = {COLD_THRESHOLD_DBM: "pmu cold start", SUSTAIN_THRESHOLD_DBM: "pmu sustain",
         ASIC_COLD_THRESHOLD_DBM: "asic cold start", ASIC_SUSTAIN_THRESHOLD_DBM: "asic sustain"}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--erp", type=float, default=2.0, help="W")
    p.add_argument("--freq", type=float, default=868e6, help="Hz")
    p.add_argument("--gr", type=float, default=1.8, help="tag antenna gain, dBi")
    p.add_argument("--step", type=float, default=0.5, help="threshold step, dB")
    args = p.parse_args()

    link = uhf_link(erp=args.erp, carrier=args.freq, rx_antenna_gain=args.gr)
    thresholds = sorted(set(np.round(np.arange(-10.0, -25.0 - 1e-9, -args.step), 3))
                        | set(MARKS), reverse=True)
    print("threshold_dbm,distance_m,note")
    for thr in thresholds:
        print(f"{thr:g},{activation_distance(link, thr):.3f},{MARKS.get(thr, '')}")


if __name__ == "__main__":
    main()
