"""Regular and chaotic Gaussian trajectories at J = 200 (fig2/fig4 presets).

Prints the nz line count of each trajectory against the classical threshold,
plus the ratio of squared extent to the largest position variance.
"""

import argparse

import numpy as np

from qtraj import experiments as ex
from qtraj.config import preset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--tau", type=float, default=50.0)
    args = ap.parse_args()

    cfg = preset("fig2")
    cfg.numerics.tau_max = args.tau
    reg_c, cha_c, thr = ex.modes_threshold(cfg)
    print(f"classical line counts: regular {reg_c:.2f}  chaotic {cha_c:.2f}  threshold {thr:.2f}")
    counts = []
    for seed in range(args.seeds):
        (a, _), (b, _) = ex.gaussian_runs(cfg, seed)
        ma, mb = ex.summarize_motion(a, cfg), ex.summarize_motion(b, cfg)
        counts.append((ma.modes, mb.modes))
        print(f"seed {seed}: regular {ma.modes:6.2f} (ratio {ma.extent_ratio:6.0f})  "
              f"chaotic {mb.modes:6.2f} (ratio {mb.extent_ratio:6.0f})")
    med = np.median(counts, axis=0)
    print(f"median: regular {med[0]:.2f}  chaotic {med[1]:.2f}")


if __name__ == "__main__":
    main()
