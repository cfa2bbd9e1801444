"""Command-line interface: probabilities, Fisher information, d_min, simulation, validation.

Tables go to stdout as CSV with the header ``x,tau,mode,value,method,err``
(floats at 17 significant digits). Exit status is 2 for usage errors and 1
for numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .ensemble import (
    CLOSED_FORM_MODES,
    aligned_with_derivative,
    averaged_probs_quadrature,
    closed_form_with_derivative,
    normalization_audit,
)
from .errors import DomainError, PrecisionError
from .fisher import (
    ScalingSpec,
    crossover_polynomial,
    fi_asymptotic_spade,
    fi_direct_imaging,
    fi_spade,
    solve_min_resolvable_distance,
    spade_di_crossover,
)
from .montecarlo import default_threads, mle_separation, simulate_cycles
from .optics import ModeIndex, SystemConfig, modes_up_to

HEADER = ["x", "tau", "mode", "value", "method", "err"]


def fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_rows(rows, header=HEADER, out=None):
    writer = csv.writer(out or sys.stdout, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])


def parallel_map(fun, items):
    """Map preserving grid order, threaded per the environment override."""
    items = list(items)
    threads = default_threads()
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fun, items))
    return [fun(i) for i in items]


def float_list(text):
    vals = [float(v) for v in text.split(",") if v.strip()]
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def scaling_arg(text):
    try:
        return ScalingSpec.parse(text)
    except (DomainError, ValueError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def mode_arg(text):
    try:
        return ModeIndex.parse(text)
    except (DomainError, ValueError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


# ---------------------------------------------------------------------------
# units


def add_unit_args(p, need_x=True):
    g = p.add_argument_group("dimensionless parameters (canonical)")
    g.add_argument("--x", type=float_list, help="half-separation d/2w (comma list allowed)")
    g.add_argument("--tau", type=float_list, help="DT/w^2 (comma list allowed)")
    ph = p.add_argument_group("physical parameters (do not mix with --x/--tau)")
    ph.add_argument("--d", type=float, help="source separation")
    ph.add_argument("--w", type=float, help="PSF width")
    ph.add_argument("--D", type=float, help="diffusion coefficient")
    ph.add_argument("--T", type=float, help="cycle time")
    p.set_defaults(_need_x=need_x)


def resolve_units(parser, args, need_tau=True):
    """Return lists (xs, taus) from either unit system, rejecting mixtures."""
    phys = [args.d, args.w, args.D, args.T]
    dimless = [args.x, args.tau]
    if any(v is not None for v in phys) and any(v is not None for v in dimless):
        parser.error("use either --x/--tau or --d/--w/--D/--T, not both")
    if any(v is not None for v in phys):
        if any(v is None for v in phys):
            parser.error("physical units need all of --d, --w, --D, --T")
        try:
            cfg = SystemConfig(args.d, args.w, args.D, args.T)
        except DomainError as exc:
            parser.error(str(exc))
        return [cfg.x], [cfg.tau]
    xs = args.x
    taus = args.tau
    if args._need_x and xs is None:
        parser.error("--x (or physical units) is required")
    if need_tau and taus is None:
        parser.error("--tau (or physical units) is required")
    for v in (xs or []):
        if not (math.isfinite(v) and v >= 0):
            parser.error("--x values must be finite and >= 0")
    for v in (taus or []):
        if not (math.isfinite(v) and v >= 0):
            parser.error("--tau values must be finite and >= 0")
    return xs, taus


# ---------------------------------------------------------------------------
# commands


def cmd_prob(parser, args):
    xs, taus = resolve_units(parser, args)
    if args.method == "closed_form":
        if args.M != 1:
            parser.error("closed forms cover M = 1 only; use --method quadrature")
        modes = args.mode or list(CLOSED_FORM_MODES)
        if any(m not in CLOSED_FORM_MODES for m in modes):
            parser.error("closed forms exist for modes 00, 10, 01, 11 only")
    else:
        modes = args.mode or modes_up_to(args.M)
    grid = [(x, t) for x in xs for t in taus]

    def point(xt):
        x, tau = xt
        if args.method == "closed_form":
            out = []
            for m in modes:
                if args.k_alignment is None:
                    p, _, e, branch = closed_form_with_derivative(m, x, tau)
                    out.append((x, tau, m.label(), p, f"closed_form:{branch}", e))
                else:
                    p, _, e = aligned_with_derivative(m, x, tau, args.k_alignment)
                    out.append((x, tau, m.label(), p, "closed_form:aligned", e))
            return out
        frac = 0.0 if args.k_alignment is None else 1.0 / args.k_alignment
        r = averaged_probs_quadrature(x, tau, modes=modes, ta_fraction=frac, nu=args.nu)
        return [(x, tau, m.label(), r.probs[m], "quadrature", r.errors[m]) for m in modes]

    rows = [row for block in parallel_map(point, grid) for row in block]
    write_rows(rows)
    return 0


FIG2A_X = tuple(np.geomspace(0.01, 0.5, 25))


def cmd_fi(parser, args):
    if args.crossover:
        r = spade_di_crossover()
        write_rows([(r, r * r, crossover_polynomial(r * r))],
                   header=["sqrt_tau", "tau", "residual"])
        return 0
    if args.sweep:
        xs = args.x or list(FIG2A_X)
        taus = args.tau or [0.001]
        methods = ["spade", "direct"]
    else:
        methods = [args.method]
        if args.scaling is not None:
            if args.tau is not None:
                parser.error("--scaling replaces --tau")
            xs, _ = resolve_units(parser, args, need_tau=False)
            taus = [None]
        else:
            xs, taus = resolve_units(parser, args)
    if any(x <= 0 for x in xs):
        parser.error("Fisher information needs x > 0")
    grid = [(x, t, m) for t in taus for x in xs for m in methods]

    def point(item):
        x, tau, method = item
        if tau is None:
            tau = args.scaling.tau_at(x)
        if method == "spade":
            r = fi_spade(x, tau, M=args.M, k_alignment=args.k_alignment)
            return (x, tau, f"M={args.M}", r.w2_fi, f"spade:{r.method}", r.error_estimate)
        if method == "direct":
            r = fi_direct_imaging(x, tau)
            return (x, tau, "image", r.w2_fi, "direct_imaging", r.error_estimate)
        regime = "short" if math.sqrt(tau) < x else "long"
        val = fi_asymptotic_spade(x, tau, regime, args.k_alignment)
        return (x, tau, "M=1", val, f"asymptotic:{regime}", float("nan"))

    rows = parallel_map(point, grid)
    if args.sweep and args.gnuplot:
        print("# x tau w2F_spade w2F_direct ratio")
        for i in range(0, len(rows), 2):
            s, d = rows[i], rows[i + 1]
            print(" ".join(fmt(v) for v in (s[0], s[1], s[3], d[3], s[3] / d[3])))
        return 0
    write_rows(rows)
    return 0


def cmd_dmin(parser, args):
    if args.N < 1:
        parser.error("--N must be >= 1")
    if (args.tau is None) == (args.scaling is None):
        parser.error("give exactly one of --tau and --scaling")
    tau = args.scaling if args.scaling is not None else args.tau
    if not isinstance(tau, ScalingSpec) and not tau >= 0:
        parser.error("--tau must be >= 0")
    r = solve_min_resolvable_distance(args.N, tau, M=args.M, w=args.w_unit)
    label = f"q={tau.q:g},kappa={tau.kappa:g}" if isinstance(tau, ScalingSpec) else "fixed"
    write_rows([(args.N, r.d_min, r.d_min / args.w_unit, r.x, r.tau, r.w2_fi, label)],
               header=["N", "d_min", "d_min_over_w", "x", "tau", "w2F", "tau_rule"])
    return 0


def cmd_simulate(parser, args):
    xs, taus = resolve_units(parser, args)
    if len(xs) != 1 or len(taus) != 1:
        parser.error("simulate takes a single (x, tau) point")
    if args.cycles < 1:
        parser.error("--cycles must be >= 1")
    if not args.photons_per_cycle >= 0:
        parser.error("--photons-per-cycle must be >= 0")
    try:
        cfg = SystemConfig.from_dimensionless(xs[0], taus[0], nu=args.nu, k=args.k_alignment)
    except DomainError as exc:
        parser.error(str(exc))
    rec = simulate_cycles(cfg, args.cycles, args.photons_per_cycle, M=args.M,
                          rng_seed=args.seed, correlated=args.correlated)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(rec.to_json() + "\n")
    frac = cfg.ta_fraction
    oracle = averaged_probs_quadrature(cfg.x, cfg.tau, M=args.M, ta_fraction=frac)
    n = rec.total_detected
    rows = []
    for m in modes_up_to(args.M):
        p = oracle.probs[m]
        emp = rec.counts[m] / n if n else float("nan")
        se = math.sqrt(p * (1 - p) / n) if n else float("nan")
        z = (emp - p) / se if n and se > 0 else float("nan")
        rows.append((m.label(), rec.counts[m], emp, p, se, z))
    write_rows(rows, header=["mode", "count", "empirical", "quadrature", "binomial_se", "z"])
    if args.mle:
        res = mle_separation(rec, cfg.tau, M=args.M)
        write_rows([(cfg.separation_d, res.d_hat, res.stderr_estimate, res.converged, res.loglik)],
                   header=["d_true", "d_hat", "stderr_crb", "converged", "loglik"])
    return 0


VALIDATE_X = (0.02, 0.05, 0.1, 0.2, 0.5)
VALIDATE_TAU = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


def cmd_validate(parser, args):
    ok = True
    print("# normalization audit of the printed closed forms")
    write_rows([(r.mode.label(), r.factor, r.spread, r.constant, r.corrected_max_rel_err, r.note)
                for r in normalization_audit()],
               header=["mode", "factor", "spread", "constant", "corrected_max_rel_err", "note"])
    print("# closed form vs quadrature oracle (relative tolerance %g)" % args.rtol)
    grid = [(x, t) for x in VALIDATE_X for t in VALIDATE_TAU]
    if args.quick:
        grid = grid[::6]

    def point(xt):
        x, tau = xt
        q = averaged_probs_quadrature(x, tau, M=1)
        out = []
        for m in CLOSED_FORM_MODES:
            p, _, _, branch = closed_form_with_derivative(m, x, tau)
            rel = abs(p / q.probs[m] - 1.0)
            out.append((x, tau, m.label(), rel, branch, rel <= args.rtol))
        return out

    rows = [r for block in parallel_map(point, grid) for r in block]
    write_rows(rows, header=["x", "tau", "mode", "rel_err", "branch", "pass"])
    ok &= all(r[-1] for r in rows)
    print("# quantum bound w2F <= 1 + err")
    fi_rows = []
    for x, tau in grid:
        r = fi_spade(x, tau)
        fi_rows.append((x, tau, r.w2_fi, r.error_estimate, r.within_quantum_bound()))
    write_rows(fi_rows, header=["x", "tau", "w2F", "err", "pass"])
    ok &= all(r[-1] for r in fi_rows)
    print("# result: " + ("PASS" if ok else "FAIL"))
    return 0 if ok else 1


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spade-brownian",
        description="Separation estimation of two sources under Brownian misalignment.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prob", help="averaged mode probabilities")
    add_unit_args(p)
    p.add_argument("--mode", type=mode_arg, action="append",
                   help="mode as 00, 10 or 1,0 (repeatable; default all)")
    p.add_argument("--method", choices=["closed_form", "quadrature"], default="closed_form")
    p.add_argument("--M", type=int, choices=[1, 2, 3], default=1)
    p.add_argument("--nu", type=float, default=0.5, help="brightness fraction of source 1")
    p.add_argument("--k-alignment", type=float, default=None, help="T / t_a")
    p.set_defaults(func=cmd_prob)

    p = sub.add_parser("fi", help="Fisher information per photon (as w^2 F)")
    add_unit_args(p, need_x=False)
    p.add_argument("--method", choices=["spade", "direct", "asymptotic"], default="spade")
    p.add_argument("--M", type=int, choices=[1, 2, 3], default=1)
    p.add_argument("--k-alignment", type=float, default=None)
    p.add_argument("--scaling", type=scaling_arg, help="tie tau to x, e.g. q=1,kappa=0.2")
    p.add_argument("--sweep", action="store_true",
                   help="SPADE and direct imaging over a log grid (default x in [0.01, 0.5], tau=0.001)")
    p.add_argument("--gnuplot", action="store_true", help="with --sweep: whitespace columns")
    p.add_argument("--crossover", action="store_true",
                   help="sqrt(tau) where SPADE and DI long-time x^2 coefficients meet")
    p.set_defaults(func=cmd_fi)

    p = sub.add_parser("dmin", help="minimal resolvable distance")
    p.add_argument("--N", type=int, required=True, help="number of detected photons")
    p.add_argument("--tau", type=float)
    p.add_argument("--scaling", type=scaling_arg)
    p.add_argument("--M", type=int, choices=[1, 2, 3], default=1)
    p.add_argument("--w", dest="w_unit", type=float, default=1.0, help="PSF width for output")
    p.set_defaults(func=cmd_dmin)

    p = sub.add_parser("simulate", help="Monte Carlo experiment")
    add_unit_args(p)
    p.add_argument("--cycles", type=int, default=1000)
    p.add_argument("--photons-per-cycle", type=float, default=100.0)
    p.add_argument("--M", type=int, choices=[1, 2, 3], default=1)
    p.add_argument("--nu", type=float, default=0.5)
    p.add_argument("--k-alignment", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--correlated", action="store_true",
                   help="one Brownian path and orientation per cycle")
    p.add_argument("--out", help="write the ExperimentRecord JSON here")
    p.add_argument("--mle", action="store_true", help="also report the ML separation")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="oracle agreement and audit report")
    p.add_argument("--rtol", type=float, default=1e-6)
    p.add_argument("--quick", action="store_true", help="subsample the grid")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(parser, args)
    except DomainError as exc:
        parser.error(str(exc))
    except PrecisionError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if exc.partial_value is not None:
            print(f"best estimate: {exc.partial_value}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
