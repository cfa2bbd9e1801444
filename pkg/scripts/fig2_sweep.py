"""SPADE vs direct-imaging Fisher information over separation, for several tau.

Writes whitespace columns (x, tau, w2F_spade, w2F_direct, ratio) to stdout.
"""
import argparse

import numpy as np

from spade_brownian.fisher import fi_direct_imaging, fi_spade


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tau", type=float, nargs="+", default=[0.001, 1.0])
    ap.add_argument("--xmin", type=float, default=0.01)
    ap.add_argument("--xmax", type=float, default=0.5)
    ap.add_argument("--points", type=int, default=40)
    ap.add_argument("--M", type=int, default=1)
    args = ap.parse_args()

    print("# x tau w2F_spade w2F_direct ratio")
    for tau in args.tau:
        for x in np.geomspace(args.xmin, args.xmax, args.points):
            s = fi_spade(x, tau, M=args.M).w2_fi
            d = fi_direct_imaging(x, tau).w2_fi
            print(f"{x:.17g} {tau:.17g} {s:.17g} {d:.17g} {s / d:.17g}")
        print()


if __name__ == "__main__":
    main()
