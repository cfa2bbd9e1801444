import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spade_brownian.errors import DomainError, PrecisionError
from spade_brownian.fisher import (
    ScalingSpec,
    crossover_polynomial,
    di_x2_coefficient,
    fi_asymptotic_direct,
    fi_asymptotic_spade,
    fi_direct_imaging,
    fi_spade,
    fi_with_scaling,
    min_resolvable_distance,
    solve_min_resolvable_distance,
    spade_di_crossover,
    spade_x2_coefficient,
)

LONG_COEF = 2 / (9 * 0.01) - 43 / 27


def static_fi_oracle(x):
    """w^2 F at tau = 0 from 1D mpmath integrals over cos(theta)."""
    mpmath.mp.dps = 30

    def probs(xx):
        def avg(g):
            return mpmath.quad(lambda u: g(xx**2 * (1 - u**2)), [0, 1])
        return [avg(lambda a: mpmath.exp(-a)),
                avg(lambda a: a / 2 * mpmath.exp(-a)),
                avg(lambda a: a / 2 * mpmath.exp(-a)),
                avg(lambda a: a**2 / 8 * mpmath.exp(-a))]

    x = mpmath.mpf(x)
    p = probs(x)
    dp = [mpmath.diff(lambda t, i=i: probs(t)[i], x) for i in range(4)]
    return float(sum(d * d / (4 * q) for d, q in zip(dp, p)))


def test_short_timescale_matches_static_oracle():
    r = fi_spade(0.1, 1e-8)
    assert r.method == "closed_form_derivative"
    # tau = 1e-8 shifts w^2 F by about 2 tau / x^2 = 2e-6
    assert r.w2_fi == pytest.approx(static_fi_oracle(0.1) - 2e-6, abs=1e-7)


def test_short_timescale_x2_correction():
    # at tau -> 0 the full expansion is 2/3 - 8 x^2 / 9 + O(x^4), not 2/3
    for x in (0.02, 0.05, 0.1):
        assert fi_spade(x, 0.0).w2_fi == pytest.approx(2 / 3 - 8 * x * x / 9, abs=2 * x**4)


def test_long_timescale_coefficient():
    r = fi_spade(0.01, 0.01)
    assert r.w2_fi / 0.01**2 == pytest.approx(LONG_COEF, rel=0.02)


def test_two_derivative_paths_agree():
    a = fi_spade(0.1, 1e-8, method="closed_form")
    b = fi_spade(0.1, 1e-8, method="finite_difference")
    assert abs(a.w2_fi - b.w2_fi) <= a.error_estimate + b.error_estimate


@settings(max_examples=100, deadline=None)
@given(x=st.floats(0.01, 2.0), log_tau=st.floats(-7, 0.3))
def test_derivative_cross_check_random(x, log_tau):
    tau = 10.0**log_tau
    a = fi_spade(x, tau, method="closed_form")
    b = fi_spade(x, tau, method="finite_difference")
    assert abs(a.w2_fi - b.w2_fi) <= a.error_estimate + b.error_estimate + 1e-12


def test_quadrature_path_matches_closed_form():
    a = fi_spade(0.2, 0.01)
    b = fi_spade(0.2, 0.01, method="quadrature")
    assert abs(a.w2_fi - b.w2_fi) <= a.error_estimate + b.error_estimate


@settings(max_examples=60, deadline=None)
@given(x=st.floats(0.005, 3.0), log_tau=st.floats(-8, 0.5))
def test_quantum_bound(x, log_tau):
    r = fi_spade(x, 10.0**log_tau)
    assert 0.0 <= r.w2_fi <= 1.0 + r.error_estimate


@pytest.mark.parametrize("x,tau", [(0.05, 0.001), (0.2, 0.01), (0.5, 0.1)])
def test_more_modes_cannot_lose_information(x, tau):
    one = fi_spade(x, tau, M=1)
    two = fi_spade(x, tau, M=2)
    assert two.w2_fi >= one.w2_fi - one.error_estimate - two.error_estimate
    assert two.w2_fi <= 1.0 + two.error_estimate


def test_bucket_channel_adds_information():
    assert fi_spade(0.2, 0.01, include_bucket=True).w2_fi >= fi_spade(0.2, 0.01).w2_fi


@pytest.mark.parametrize("x", [0.05, 0.1, 0.2])
def test_degradation_in_tau(x):
    taus = [0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0]
    vals = [fi_spade(x, t) for t in taus]
    for a, b in zip(vals, vals[1:]):
        assert a.w2_fi >= b.w2_fi - a.error_estimate - b.error_estimate


def test_fi_domain_errors():
    with pytest.raises(DomainError):
        fi_spade(0.0, 0.1)
    with pytest.raises(DomainError):
        fi_spade(0.1, 0.1, M=4)
    with pytest.raises(DomainError):
        fi_spade(0.1, 0.1, M=2, method="closed_form")
    with pytest.raises(DomainError):
        fi_spade(0.1, 0.1, k_alignment=1.0)


def test_direct_imaging_small_tau():
    x = 0.05
    r = fi_direct_imaging(x, 0.001)
    assert r.w2_fi == pytest.approx(16 * x * x / 9 - 128 * 0.001 * x * x / 9, rel=0.05)


def test_direct_imaging_static_limit():
    x = 0.05
    assert fi_direct_imaging(x, 0.0).w2_fi == pytest.approx(16 * x * x / 9, rel=0.02)


def test_direct_imaging_node_convergence():
    a = fi_direct_imaging(0.1, 0.05)
    b = fi_direct_imaging(0.1, 0.05, ns=64, nu_=64)
    assert a.w2_fi == pytest.approx(b.w2_fi, rel=1e-6)


def test_asymptotic_spade_values():
    assert fi_asymptotic_spade(0.3, 0.0, "short") == pytest.approx(2 / 3)
    x, tau, k = 0.01, 0.01, 10
    expected = (2 / (9 * tau) + 2 / (90 * tau) - 43 / 27 - 23 / 270) * x * x
    assert fi_asymptotic_spade(x, tau, "long", k_alignment=k, printed=True) == pytest.approx(expected, rel=1e-14)
    corrected = (2 / (9 * tau) - 2 / (90 * tau) - 43 / 27 - 23 / 270) * x * x
    assert fi_asymptotic_spade(x, tau, "long", k_alignment=k) == pytest.approx(corrected, rel=1e-14)
    with pytest.raises(DomainError):
        fi_asymptotic_spade(x, tau, "medium")


def test_asymptotics_match_full_fi_in_their_regimes():
    # short regime needs sqrt(tau) << x << 1
    x, tau = 0.1, 1e-5
    assert fi_asymptotic_spade(x, tau, "short") == pytest.approx(fi_spade(x, tau).w2_fi, rel=0.05)
    x, tau = 0.005, 0.01
    assert fi_asymptotic_spade(x, tau, "long") == pytest.approx(fi_spade(x, tau).w2_fi, rel=0.05)


def test_alignment_time_long_regime_leading_factor():
    # x -> 0 coefficient: 2 k / (9 (k+1) tau) + O(1); the printed +1/k term has the wrong sign
    x, tau = 1e-5, 1e-4
    for k in (5.0, 10.0):
        c = fi_spade(x, tau, k_alignment=k).w2_fi / (x * x)
        assert c == pytest.approx(2 * k / (9 * (k + 1) * tau), abs=3)
        assert c < 2 / (9 * tau)


def test_asymptotic_direct():
    assert fi_asymptotic_direct(0.1, 0.0) == pytest.approx(16 * 0.01 / 9)
    x, tau = 0.05, 0.01
    expected = 16 * 0.0025 / 9 - 128 * 0.01 * 0.0025 / 9 + 1792 * 0.0001 * 0.0025 / 27
    assert fi_asymptotic_direct(x, tau) == pytest.approx(expected, rel=1e-14)
    assert fi_asymptotic_direct(0.02, 0.005) == pytest.approx(fi_direct_imaging(0.02, 0.005).w2_fi, rel=0.05)


def test_scaling_q1_kappa1():
    assert fi_with_scaling(0.01, ScalingSpec(1, 1)).w2_fi == pytest.approx(1 / 6, rel=0.02)


def test_scaling_q1_ninety_percent_point():
    k = 1 / (3 * math.sqrt(3))
    assert 2 / (3 * (1 + 3 * k * k)) == pytest.approx(0.6)
    assert fi_with_scaling(0.01, ScalingSpec(1, k)).w2_fi == pytest.approx(0.6, rel=0.02)


def test_scaling_q2():
    x = 0.05
    assert fi_with_scaling(x, ScalingSpec(2, 1)).w2_fi == pytest.approx(2 / 3 - 8 * x * x / 9, rel=0.01)


def test_scaling_spec_validation():
    with pytest.raises(DomainError):
        ScalingSpec(1, 0.0)
    with pytest.raises(DomainError):
        ScalingSpec(0, 0.5)
    assert ScalingSpec.parse("q=1,kappa=0.2") == ScalingSpec(1.0, 0.2)


def test_dmin_constant_fi_regime():
    d = min_resolvable_distance(10_000, 1e-9)
    assert d == pytest.approx(math.sqrt(3 / (2 * 10_000)), rel=1e-3)


def test_dmin_long_regime_fixed_point():
    # w^2 F = c x^2 with x = d/2 gives d^4 = 4 / (c N)
    n = 10**7
    d = min_resolvable_distance(n, 0.01)
    assert d == pytest.approx((4 / (LONG_COEF * n)) ** 0.25, rel=0.01)


def test_dmin_tolerance_and_self_consistency():
    r = solve_min_resolvable_distance(5000, ScalingSpec(1, 0.2))
    x = r.d_min / 2
    assert r.tau == pytest.approx(0.04 * x * x)
    f = fi_spade(x, r.tau).w2_fi
    assert r.d_min * math.sqrt(5000 * f) == pytest.approx(1.0, rel=2e-6)


def test_dmin_single_photon_floor():
    assert min_resolvable_distance(1, 1e-9) >= 1.0


def test_dmin_unresolvable_reports_both_ends():
    with pytest.raises(PrecisionError) as info:
        solve_min_resolvable_distance(1, 1e-9, lo=1e-3, hi=0.5)
    assert "g(lo)" in str(info.value) and "g(hi)" in str(info.value)


def test_dmin_rejects_zero_photons():
    with pytest.raises(DomainError):
        min_resolvable_distance(0, 0.01)


def test_crossover():
    r = spade_di_crossover()
    assert r == pytest.approx(0.29, abs=0.005)
    assert abs(crossover_polynomial(r * r)) <= 1e-12


def test_crossover_sign_flip():
    lo = spade_x2_coefficient(0.25**2) - di_x2_coefficient(0.25**2)
    hi = spade_x2_coefficient(0.33**2) - di_x2_coefficient(0.33**2)
    assert lo > 0 > hi


def test_fig2a_advantage():
    xs = np.geomspace(0.01, 0.5, 25)
    ratios = [fi_spade(x, 0.001).w2_fi / fi_direct_imaging(x, 0.001).w2_fi for x in xs]
    assert max(ratios) >= 50


def test_very_long_time_direct_imaging_record():
    # recorded outcome at tau = 1 (not a hard invariant)
    x = 0.05
    s = fi_spade(x, 1.0).w2_fi
    d = fi_direct_imaging(x, 1.0).w2_fi
    assert d > s
