"""Fisher information, Cramer-Rao limits and minimal resolvable distance.

Fisher information is per detected photon with respect to the separation
d. Internally everything is computed in the dimensionless form
``w^2 F = sum_nm (dp/dx)^2 / (4 p)`` since x = d / 2w.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import i0e, i1e

from .ensemble import (
    aligned_with_derivative,
    averaged_probs_quadrature,
    closed_form_with_derivative,
)
from .errors import DomainError, PrecisionError
from .optics import modes_up_to
from .quadrature import gauss_kronrod, gauss_legendre


# callables invoked with every FisherResult created (used to audit the
# quantum bound across a whole test session)
FI_OBSERVERS = []


@dataclass(frozen=True)
class FisherResult:
    """Fisher information per photon; ``w2_fi`` is the dimensionless w^2 F."""

    w2_fi: float
    method: str
    x: float
    tau: float
    modes_M: int
    error_estimate: float
    w: float = 1.0

    @property
    def fi_per_photon(self):
        return self.w2_fi / self.w**2

    def __post_init__(self):
        for hook in FI_OBSERVERS:
            hook(self)

    def within_quantum_bound(self):
        return self.w2_fi <= 1.0 + self.error_estimate


@dataclass(frozen=True)
class ScalingSpec:
    """Measurement time tied to separation through sqrt(tau) = kappa x^q."""

    q: float
    kappa: float

    def __post_init__(self):
        if not self.q > 0:
            raise DomainError("q must be > 0")
        if not 0 < self.kappa <= 1:
            raise DomainError("kappa must lie in (0, 1]")

    def tau_at(self, x):
        return self.kappa**2 * x ** (2.0 * self.q)

    @classmethod
    def parse(cls, text):
        """Parse ``"q=1,kappa=0.2"``."""
        fields = dict(item.split("=") for item in text.replace(" ", "").split(","))
        try:
            return cls(q=float(fields["q"]), kappa=float(fields["kappa"]))
        except KeyError as exc:
            raise DomainError(f"scaling needs q and kappa: {text!r}") from exc


def _fi_from_channels(p, dp, ep, edp):
    """w^2 F and its propagated error from per-channel p, dp/dx and their errors."""
    p, dp, ep, edp = map(np.asarray, (p, dp, ep, edp))
    live = p > 0
    if np.any(~live & (dp != 0)):
        raise PrecisionError("probability underflowed while its derivative did not")
    p, dp, ep, edp = p[live], dp[live], ep[live], edp[live]
    terms = dp * dp / (4.0 * p)
    err = np.sum(2.0 * np.abs(dp) * edp / (4.0 * p) + terms * ep / p)
    return float(np.sum(terms)), float(err)


def _richardson(fun, x, h):
    """Central difference with one Richardson step; fun returns arrays."""
    def central(step):
        return (fun(x + step) - fun(x - step)) / (2.0 * step)

    d1 = central(h)
    d2 = central(0.5 * h)
    est = (4.0 * d2 - d1) / 3.0
    return est, np.abs(est - d2)


def _fd_step(x):
    h = max(1e-6, 1e-3 * x)
    if h >= 0.5 * x:
        h = 0.25 * x
    if h <= 0:
        raise PrecisionError("finite-difference step underflow")
    return h


def fi_spade(x, tau, M=1, k_alignment=None, method="auto", include_bucket=False, w=1.0):
    """SPADE Fisher information per photon over modes n, m <= M.

    ``method`` is ``"closed_form"`` (analytic derivatives of the closed
    forms, M = 1 only), ``"finite_difference"`` (Richardson central
    differences on the closed forms) or ``"quadrature"`` (finite differences
    on quadrature probabilities, any M <= 3). ``"auto"`` picks closed_form
    for M = 1 and quadrature otherwise. With ``include_bucket`` the
    complement of the measured modes is treated as one more Poisson channel.
    """
    if not x > 0:
        raise DomainError("x must be > 0")
    if not tau >= 0:
        raise DomainError("tau must be >= 0")
    if M not in (1, 2, 3):
        raise DomainError("M must be 1, 2 or 3")
    if k_alignment is not None and not k_alignment > 1:
        raise DomainError("k_alignment must be > 1")
    if method == "auto":
        method = "closed_form" if M == 1 else "quadrature"
    if method in ("closed_form", "finite_difference") and M != 1:
        raise DomainError("closed forms cover M = 1 only")
    modes = modes_up_to(M)

    if method == "closed_form":
        rows = []
        for idx in modes:
            if k_alignment is None:
                p, dp, e, _ = closed_form_with_derivative(idx, x, tau)
            else:
                p, dp, e = aligned_with_derivative(idx, x, tau, k_alignment)
            rows.append((p, dp, e, e / max(x, 1e-300) + 1e-15 * abs(dp)))
        p, dp, ep, edp = map(np.array, zip(*rows))
        tag = "closed_form_derivative"
    elif method in ("finite_difference", "quadrature"):
        if method == "finite_difference":
            def probs(xx):
                if k_alignment is None:
                    return np.array([closed_form_with_derivative(i, xx, tau)[0] for i in modes])
                return np.array([aligned_with_derivative(i, xx, tau, k_alignment)[0] for i in modes])

            def errs(xx):
                return np.array([closed_form_with_derivative(i, xx, tau)[2] for i in modes])
        else:
            frac = 0.0 if k_alignment is None else 1.0 / k_alignment

            def probs(xx):
                return averaged_probs_quadrature(xx, tau, M=M, ta_fraction=frac).as_array(modes)

            def errs(xx):
                r = averaged_probs_quadrature(xx, tau, M=M, ta_fraction=frac)
                return np.array([r.errors[i] for i in modes])
        h = _fd_step(x)
        dp, trunc = _richardson(probs, x, h)
        p = probs(x)
        ep = errs(x)
        edp = trunc + 2.0 * ep / h
        tag = method
    else:
        raise DomainError(f"unknown method {method!r}")

    if include_bucket:
        pb = 1.0 - np.sum(p)
        if pb > 0:
            p = np.append(p, pb)
            dp = np.append(dp, -np.sum(dp))
            ep = np.append(ep, np.sum(ep))
            edp = np.append(edp, np.sum(edp))
    val, err = _fi_from_channels(p, dp, ep, edp)
    return FisherResult(val, tag, x, tau, M, err, w)


# ---------------------------------------------------------------------------
# direct imaging


def _di_density_and_derivative(r, x, tau, ns=32, nu_=32):
    """Orientation/time-averaged DI density p(r) and dp/dx (units of w).

    Each source image is a Gaussian with per-axis variance 1/4; convolving
    with the Brownian displacement adds 2 tau s. The azimuth average of the
    source axis is done with Bessel functions.
    """
    r = np.asarray(r, dtype=float)[:, None, None]
    if tau > 0:
        s, ws = gauss_legendre(ns)
    else:
        s, ws = np.zeros(1), np.ones(1)
    u, wu = gauss_legendre(nu_)
    v = (0.25 + 2.0 * tau * s)[None, :, None]
    b = np.sqrt(1.0 - u * u)[None, None, :]
    z = r * x * b / v
    env = np.exp(-(r - x * b) ** 2 / (2.0 * v)) / (2.0 * math.pi * v)
    g = env * i0e(z)
    dg = env * ((-x * b * b / v) * i0e(z) + (r * b / v) * i1e(z))
    wgt = ws[None, :, None] * wu[None, None, :]
    return np.sum(g * wgt, axis=(1, 2)), np.sum(dg * wgt, axis=(1, 2))


def fi_direct_imaging(x, tau, epsrel=1e-9, ns=32, nu_=32, w=1.0):
    """Direct-imaging Fisher information under the Brownian model.

    Uses rotational invariance: w^2 F = int 2 pi r (dp/dx)^2 / (4 p) dr,
    truncated at r = 8 sqrt(1 + 4 tau) + x; the tail bound is added to the
    error estimate.
    """
    if not x > 0:
        raise DomainError("x must be > 0")
    if not tau >= 0:
        raise DomainError("tau must be >= 0")
    rmax = 8.0 * math.sqrt(1.0 + 4.0 * tau) + x

    def integrand(r):
        p, dp = _di_density_and_derivative(r, x, tau, ns, nu_)
        safe = np.where(p > 0, p, 1.0)
        return np.where(p > 0, 2.0 * math.pi * r * dp * dp / (4.0 * safe), 0.0)

    val, err = gauss_kronrod(integrand, 0.0, rmax, epsabs=1e-300, epsrel=epsrel, initial=8)
    edge = float(integrand(np.array([rmax]))[0])
    tail = edge * (0.25 + 2.0 * tau) / rmax
    return FisherResult(float(val), "quadrature", x, tau, 0, float(err) + tail, w)


# ---------------------------------------------------------------------------
# asymptotic expansions


def fi_asymptotic_spade(x, tau, regime, k_alignment=None, printed=False):
    """Two-term expansions of w^2 F_HG in the short or long timescale regime.

    With an alignment time the long-regime 1/(k tau) term is negative: the
    exact leading factor is k/(k+1). ``printed=True`` returns the published
    variant with the opposite sign, kept for comparison.
    """
    if regime == "short":
        if k_alignment is None:
            return 2.0 / 3.0 - 2.0 * tau / (x * x)
        k = k_alignment
        return 2.0 / 3.0 - 2.0 * (k + 1.0) * tau / (k * x * x)
    if regime == "long":
        if k_alignment is None:
            return (2.0 / (9.0 * tau) - 43.0 / 27.0) * x * x
        k = k_alignment
        sign = 1.0 if printed else -1.0
        return (2.0 / (9.0 * tau) + sign * 2.0 / (9.0 * k * tau) - 43.0 / 27.0 - 23.0 / (27.0 * k)) * x * x
    raise DomainError("regime must be 'short' or 'long'")


def fi_asymptotic_direct(x, tau):
    """Three-term small-x, small-tau expansion of w^2 F_DI."""
    return 16.0 * x * x / 9.0 - 128.0 * tau * x * x / 9.0 + 1792.0 * tau * tau * x * x / 27.0


def fi_with_scaling(x, scaling, M=1):
    """SPADE FI with the cycle time tied to the separation."""
    if not x > 0:
        raise DomainError("x must be > 0")
    return fi_spade(x, scaling.tau_at(x), M=M)


def scaling_limit(scaling):
    """Leading small-x approximation of w^2 F for q in {1/2, 1, 2}."""
    q, k = scaling.q, scaling.kappa
    if q == 1.0:
        return lambda x: 2.0 / (3.0 * (1.0 + 3.0 * k * k))
    if q == 2.0:
        return lambda x: 2.0 / 3.0 - 8.0 * x * x / 9.0
    if q == 0.5:
        return lambda x: 2.0 * x / (9.0 * k * k) - 2.0 * x * x / (27.0 * k**4)
    raise DomainError("approximations exist for q = 1/2, 1, 2 only")


# ---------------------------------------------------------------------------
# minimal resolvable distance


@dataclass(frozen=True)
class DminResult:
    d_min: float
    x: float
    tau: float
    w2_fi: float
    n_photons: int
    iterations: int


def solve_min_resolvable_distance(n_photons, tau, M=1, w=1.0, lo=1e-6, hi=10.0,
                                  rtol=1e-6, scan_points=61):
    """Solve d = 1 / sqrt(N F(d)) for d (returned in the units of ``w``).

    ``tau`` is a number or a :class:`ScalingSpec`. The log-spaced bracket
    [lo, hi] (in units of w) is scanned for the first sign change of
    g(d) = d sqrt(N F(d)) - 1, which is then bisected.
    """
    if int(n_photons) != n_photons or n_photons < 1:
        raise DomainError("N must be an integer >= 1")

    def tau_of(x):
        return tau.tau_at(x) if isinstance(tau, ScalingSpec) else float(tau)

    def g(d):
        x = 0.5 * d
        f = fi_spade(x, tau_of(x), M=M).w2_fi
        return d * math.sqrt(n_photons * f) - 1.0, f

    grid = np.geomspace(lo, hi, scan_points)
    prev_d, (prev_g, _) = grid[0], g(grid[0])
    bracket = None
    for d in grid[1:]:
        gd, _ = g(d)
        if prev_g < 0 <= gd:
            bracket = (prev_d, d)
            break
        prev_d, prev_g = d, gd
    if bracket is None:
        g_lo, _ = g(grid[0])
        g_hi, _ = g(grid[-1])
        raise PrecisionError(
            f"no sign change of d*sqrt(N F(d)) - 1 on [{lo}, {hi}] w: "
            f"g(lo)={g_lo:.6g}, g(hi)={g_hi:.6g}; separation unresolvable",
            partial_value=None,
        )
    a, b = bracket
    it = 0
    while (b - a) > rtol * a * 0.5:
        mid = math.sqrt(a * b)
        if g(mid)[0] < 0:
            a = mid
        else:
            b = mid
        it += 1
    d = math.sqrt(a * b)
    x = 0.5 * d
    return DminResult(d * w, x, tau_of(x), g(d)[1], int(n_photons), it)


def min_resolvable_distance(n_photons, tau, M=1, w=1.0):
    """Minimal resolvable distance d_min (same length unit as ``w``)."""
    return solve_min_resolvable_distance(n_photons, tau, M=M, w=w).d_min


# ---------------------------------------------------------------------------
# SPADE vs direct imaging


def crossover_polynomial(tau):
    """Zero where the long-timescale SPADE and the DI x^2 coefficients meet."""
    return 1792.0 * tau**3 - 384.0 * tau**2 + 91.0 * tau - 6.0


def spade_x2_coefficient(tau):
    return 2.0 / (9.0 * tau) - 43.0 / 27.0


def di_x2_coefficient(tau):
    return 16.0 / 9.0 - 128.0 * tau / 9.0 + 1792.0 * tau * tau / 27.0


def spade_di_crossover():
    """sqrt(tau) at which the SPADE and DI x^2 coefficients coincide."""
    a, b = 1e-6, 0.2
    if crossover_polynomial(a) * crossover_polynomial(b) >= 0:
        raise PrecisionError("crossover polynomial has no sign change on (0, 0.2)")
    tau = brentq(crossover_polynomial, a, b, xtol=1e-16, rtol=4 * np.finfo(float).eps)
    return math.sqrt(tau)
