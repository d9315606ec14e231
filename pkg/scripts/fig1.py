"""Spin-1/2 branch collapse: final adiabatic populations over a set of seeds."""

import argparse

import numpy as np

from qtraj import experiments as ex
from qtraj.config import preset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--tau", type=float, default=None, help="run length (default: preset)")
    args = ap.parse_args()

    cfg = preset("fig1")
    if args.tau:
        cfg.numerics.tau_max = args.tau
    classical = ex.classical_runs(cfg)[0]
    print("seed  populations          branch  max|dz|/dz")
    for seed in range(args.seeds):
        (traj, _), = ex.sse_runs(cfg, seed)
        s = ex.collapse_summary(traj, classical, cfg, seed)
        print(f"{seed:4d}  {np.array2string(s.final_populations, precision=4):20s} {s.branch:5d}  {s.max_departure:.3f}")


if __name__ == "__main__":
    main()
