"""Classical and Gaussian-quantum exponent distributions on the E = 0.58 shell."""

import argparse

import numpy as np

from qtraj import experiments as ex
from qtraj import lyapunov as ly
from qtraj.config import preset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--classical", type=int, default=200)
    ap.add_argument("--quantum", type=int, default=50)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = preset("fig5")
    cfg.lyapunov.count, cfg.lyapunov.quantum_count = args.classical, args.quantum
    cfg.run.workers, cfg.run.seed = args.workers, args.seed
    d = ex.lyapunov_study(cfg)
    for name, dist in d.items():
        lam = dist.samples
        print(f"{name:9s} n={len(lam):4d} mean {lam.mean():.4f} median {np.median(lam):.4f} "
              f"converged {dist.converged.mean():.2f}")
        for lo, hi, c in zip(dist.hist_edges[:-1], dist.hist_edges[1:], dist.hist_counts):
            print(f"  [{lo:+.3f}, {hi:+.3f})  {'#' * int(c)}")
    a, b = d["classical"].samples, d["gaussian"].samples
    print(f"histogram intersection {ly.histogram_intersection(a, b):.3f}")


if __name__ == "__main__":
    main()
