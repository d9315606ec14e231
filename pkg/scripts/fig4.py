"""Width of the Gaussian state against the size of the motion (fig4 preset).

Writes the usual trajectory CSVs through the CLI, then prints the running
maximum of Czz next to the squared extent of <z>, both in zg^2.
"""

import argparse
import sys

import numpy as np

from qtraj import cli, io
from qtraj.config import preset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="qtraj_out/fig4")
    args = ap.parse_args()

    if cli.main(["gaussian", "--preset", "fig4", "--seed", str(args.seed), "--out", args.out]):
        sys.exit("run failed")
    zg = 1 / np.sqrt(2)
    for i, label in enumerate(("regular", "chaotic")):
        header, rows = io.read_csv(f"{args.out}/trajectory_{i}.csv")
        col = {h: rows[:, k] for k, h in enumerate(header)}
        z = col["z_mean"] / zg
        print(f"{label}: extent^2 {np.ptp(z) ** 2:.0f} zg^2, max Czz {col['czz'].max() / zg**2:.2f} zg^2")
        for t in (10, 25, 50, 100):
            k = np.searchsorted(col["tau"], t)
            print(f"  tau <= {t:3d}: max Czz {col['czz'][:k].max() / zg**2:.3f}")


if __name__ == "__main__":
    main()
