"""Dawson integral and the hypergeometric function 2F2(1,1;2,5/2;z).

Both are written from scratch; scipy.special is used only in the tests as
an outside reference. Scalar entry points return :class:`EvalResult` with a
rigorous-in-practice absolute error bound; the ``*_array`` helpers are the
vectorised kernels the probability code calls in its inner loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError, PrecisionError

EPS = np.finfo(float).eps

# Below this |x| the exp-weighted positive series is used, above it the
# asymptotic expansion. At 6.5 the smallest asymptotic term is ~1e-19
# relative, so both branches are at rounding level on the seam.
DAWSON_SEAM = 6.5

# 2F2 series is summed directly for z >= HYP_SPLIT; more negative arguments
# go through the integral identity (see _hyp2f2_split).
HYP_SPLIT = -4.0
HYP_MAX_TERMS = 500


@dataclass(frozen=True)
class EvalResult:
    value: float
    abs_error_bound: float


def _check_finite(x, name="x"):
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} must be finite, got {x!r}")


def dawson_array(x):
    """Vectorised Dawson integral F(x) = exp(-x^2) * int_0^x exp(t^2) dt.

    Returns ``(values, abs_error_bounds)`` with the shape of ``x``.
    """
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    ax = np.abs(x)
    val = np.zeros_like(ax)
    err = np.zeros_like(ax)

    small = ax < DAWSON_SEAM
    if np.any(small):
        v, e = _dawson_series(ax[small])
        val[small], err[small] = v, e
    if np.any(~small):
        v, e = _dawson_asymptotic(ax[~small])
        val[~small], err[~small] = v, e
    # odd symmetry by construction
    return np.copysign(val, x), err


def _dawson_series(y):
    # exp(-y^2) * sum_k y^(2k+1) / (k! (2k+1)); all terms positive
    y2 = y * y
    term = y.copy()
    total = y.copy()
    k = 0
    kmin = int(np.max(y2)) + 2
    while True:
        term = term * y2 / (k + 1) * (2 * k + 1) / (2 * k + 3)
        total += term
        k += 1
        if k > kmin and np.all(term <= 1e-17 * total):
            break
        if k > 4 * HYP_MAX_TERMS:  # unreachable for |y| < seam
            raise PrecisionError("Dawson series did not converge", total * np.exp(-y2))
    ratio = y2 / (k + 2)
    tail = term * ratio / (1.0 - ratio)
    scale = np.exp(-y2)
    val = scale * total
    err = scale * (tail + (k + 4) * EPS * total)
    return val, err


def _dawson_asymptotic(y):
    # 1/(2y) * sum_k (2k-1)!! / (2y^2)^k, truncated at the smallest term
    inv = 1.0 / (2.0 * y * y)
    term = np.ones_like(y)
    total = np.ones_like(y)
    active = np.ones(y.shape, dtype=bool)
    omitted = np.zeros_like(y)
    for k in range(200):
        nxt = term * (2 * k + 1) * inv
        stop = active & ((nxt >= term) | (nxt < 1e-17 * total))
        omitted[stop] = nxt[stop]
        active &= ~stop
        if not np.any(active):
            break
        total = np.where(active, total + nxt, total)
        term = np.where(active, nxt, term)
    val = total / (2.0 * y)
    err = (omitted + 40 * EPS * total) / (2.0 * y)
    return val, err


def dawson(x) -> EvalResult:
    """Dawson integral at a finite real ``x``."""
    _check_finite(x)
    v, e = dawson_array(np.array([float(x)]))
    return EvalResult(float(v[0]), float(e[0]))


def hyp2f2_series(z):
    """Direct Pochhammer-recurrence summation of 2F2(1,1;2,5/2;z).

    Uses Neumaier compensated summation and returns ``(value, error_bound)``.
    Raises :class:`PrecisionError` (carrying the partial sum) when the term
    cap is hit.
    """
    z = float(z)
    _check_finite(z, "z")
    term = 1.0
    total = 1.0
    comp = 0.0
    abs_sum = 1.0
    for k in range(HYP_MAX_TERMS):
        term *= z * (k + 1) / ((k + 2) * (k + 2.5))
        t = total + term
        if abs(total) >= abs(term):
            comp += (total - t) + term
        else:
            comp += (term - t) + total
        total = t
        abs_sum += abs(term)
        if not math.isfinite(total):
            raise PrecisionError("2F2 series overflowed", total)
        if abs(term) <= 1e-18 * abs(total) and k > abs(z):
            nxt = abs(term * z * (k + 2) / ((k + 3) * (k + 3.5)))
            value = total + comp
            return value, nxt + 4 * EPS * abs_sum
    raise PrecisionError(
        f"2F2 series did not converge in {HYP_MAX_TERMS} terms at z={z}",
        partial_value=total + comp,
        achieved_error=abs(term),
    )


def _gl(n):
    return np.polynomial.legendre.leggauss(n)


def _integrate_dawson_over_t2(a, b, panels=8, order=24):
    # int_a^b F(t)/t^2 dt by composite Gauss-Legendre on geometric panels
    edges = np.geomspace(a, b, panels + 1)
    nodes, weights = _gl(order)
    lo, hi = edges[:-1, None], edges[1:, None]
    t = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
    f, _ = dawson_array(t)
    return float(np.sum(0.5 * (hi - lo) * weights * f / t**2))


# K(y) = y^2 * 2F2(1,1;2,5/2;-y^2) is anchored by the series at y = 1,
# well inside the cancellation-free range, so the split path at z = -4 is a
# genuinely independent evaluation.
K_ANCHOR_Y = 1.0


@lru_cache(maxsize=1)
def _k_anchor():
    y0 = K_ANCHOR_Y
    k0, e0 = hyp2f2_series(-y0 * y0)
    k0 *= y0 * y0
    e0 *= y0 * y0
    coarse = _integrate_dawson_over_t2(y0, DAWSON_SEAM, panels=8, order=24)
    fine = _integrate_dawson_over_t2(y0, DAWSON_SEAM, panels=16, order=32)
    kseam = k0 + 3.0 * (math.log(DAWSON_SEAM / y0) - fine)
    eseam = e0 + 3.0 * (abs(fine - coarse) + 1e-15)
    return k0, e0, kseam, eseam


def _k_tail(y):
    # 3 * int_seam^y (1/t - F(t)/t^2) dt with F(t)/t^2 = sum_k c_k t^-(2k+3),
    # c_k = (2k-1)!! / 2^(k+1), integrated term by term
    s = DAWSON_SEAM
    log_part = math.log(y / s)
    c = 0.5
    acc = 0.0
    err = 0.0
    for k in range(100):
        p = 2 * k + 2
        bound = c * s ** (-p) / p
        if bound < 1e-18:
            err = bound
            break
        acc += c * (s ** (-p) - y ** (-p)) / p
        c_next = c * (2 * k + 1) / 2.0
        if c_next * s ** (-p - 2) / (p + 2) >= bound:
            err = bound
            break
        c = c_next
    return 3.0 * (log_part - acc), 3.0 * err + 10 * EPS * abs(log_part)


def _hyp2f2_split(z):
    """2F2(1,1;2,5/2;z) for z < HYP_SPLIT via the integral identity.

    With K(y) = y^2 2F2(1,1;2,5/2;-y^2) one has K'(y) = 3 (1/y - F(y)/y^2),
    F the Dawson integral. K is anchored at y=1 by the series and carried
    to larger y by quadrature (y < seam) or the term-wise integrated
    asymptotic expansion of F (y >= seam).
    """
    y = math.sqrt(-z)
    k0, e0, kseam, eseam = _k_anchor()
    if y <= DAWSON_SEAM:
        coarse = _integrate_dawson_over_t2(K_ANCHOR_Y, y, panels=6, order=24)
        fine = _integrate_dawson_over_t2(K_ANCHOR_Y, y, panels=12, order=32)
        k = k0 + 3.0 * (math.log(y / K_ANCHOR_Y) - fine)
        e = e0 + 3.0 * (abs(fine - coarse) + 1e-15)
    else:
        tail, etail = _k_tail(y)
        k = kseam + tail
        e = eseam + etail
    return k / (y * y), e / (y * y)


def hyp2f2_1_1_2_5h(z) -> EvalResult:
    """2F2(1,1;2,5/2;z) for finite real ``z``.

    Direct summation for ``z >= -4``; the integral identity path below that,
    where the alternating series would lose digits to cancellation.
    """
    _check_finite(z, "z")
    z = float(z)
    if z == 0.0:
        return EvalResult(1.0, 0.0)
    if z >= HYP_SPLIT:
        v, e = hyp2f2_series(z)
    else:
        v, e = _hyp2f2_split(z)
    return EvalResult(v, e)


def hyp2f2_split_path(z):
    """Evaluate through the integral identity regardless of ``z``.

    Exposed for cross-checking the direct series; requires ``z < -1``.
    """
    _check_finite(z, "z")
    if z >= -K_ANCHOR_Y**2:
        raise DomainError("split path needs z < -1")
    v, e = _hyp2f2_split(float(z))
    return EvalResult(v, e)
