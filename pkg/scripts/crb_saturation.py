"""Repeat simulated experiments and compare Var(d_hat) with the Cramer-Rao bound."""
import argparse
import time

import numpy as np

from spade_brownian.fisher import fi_spade
from spade_brownian.montecarlo import mle_separation, simulate_cycles
from spade_brownian.optics import SystemConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--x", type=float, default=0.2)
    ap.add_argument("--tau", type=float, default=0.001)
    ap.add_argument("--photons", type=int, default=100_000)
    ap.add_argument("--seeds", type=int, default=200)
    ap.add_argument("--correlated", action="store_true")
    args = ap.parse_args()

    cfg = SystemConfig.from_dimensionless(args.x, args.tau)
    t0 = time.perf_counter()
    est = []
    for seed in range(args.seeds):
        rec = simulate_cycles(cfg, 1000, args.photons / 1000, rng_seed=seed, correlated=args.correlated)
        est.append(mle_separation(rec, args.tau).d_hat)
    est = np.array(est)
    f = fi_spade(args.x, args.tau).fi_per_photon
    crb = 1.0 / (args.photons * f)
    print(f"d_true          {cfg.separation_d:.6g}")
    print(f"mean d_hat      {est.mean():.6g} +- {est.std(ddof=1) / np.sqrt(est.size):.2g}")
    print(f"Var(d_hat)      {est.var(ddof=1):.6g}")
    print(f"CRB 1/(N F)     {crb:.6g}")
    print(f"ratio           {est.var(ddof=1) / crb:.4f}")
    print(f"elapsed         {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
