"""Full SSE against the Gaussian closure at J = 20, both on one Wiener path."""

import argparse

from qtraj import experiments as ex
from qtraj.config import preset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args()

    cfg = preset("closure")
    for seed in args.seeds:
        rep = ex.closure_compare(cfg, seed)
        print(f"seed {seed}: means RMS {100 * rep.rms_means:.1f}% of scale, Czz RMS rel {100 * rep.czz_rms_rel:.1f}%, "
              f"max {100 * rep.czz_rel.max():.0f}%, breakdown {rep.breakdown}")


if __name__ == "__main__":
    main()
