"""Regular islands on the fig3 energy shell and the quantum section points launched in them."""

import argparse

import numpy as np

from qtraj import experiments as ex
from qtraj.config import preset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--classical-only", action="store_true")
    args = ap.parse_args()

    cfg = preset("fig3")
    st = ex.island_study(cfg, args.seed, quantum=not args.classical_only)
    print(f"shell energy {st.energy:.4f}")
    for orb in st.orbits:
        print(f"period {orb.period} orbit through ({orb.points[0, 0]:+.4f}, {orb.points[0, 1]:+.4f}), trace {orb.trace:+.3f}")
    print(f"{len(st.islands)} islands, hulls disjoint: {st.hulls_disjoint}, gap {st.gap:.4f}")
    if len(st.p90):
        print("quantum p90 distance per orbit:", np.array2string(st.p90, precision=4))


if __name__ == "__main__":
    main()
