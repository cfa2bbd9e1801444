import math

import numpy as np
import pytest
from scipy import stats

from spade_brownian.ensemble import averaged_probs_quadrature, misalignment_moments
from spade_brownian.errors import DomainError
from spade_brownian.fisher import fi_spade
from spade_brownian.montecarlo import (
    ExperimentRecord,
    PhotonBatch,
    assign_modes,
    empirical_fisher,
    make_rng,
    mle_separation,
    sample_correlated_cycles,
    sample_photons,
    sample_trajectory,
    simulate_cycles,
)
from spade_brownian.optics import ModeIndex, Pose, SystemConfig, modes_up_to, static_mode_prob


def rng(seed):
    return make_rng(np.random.SeedSequence(seed))


def z_scores(record, oracle):
    n = record.total_detected
    out = {}
    for m, c in record.counts.items():
        p = oracle[m]
        out[m] = (c / n - p) / math.sqrt(p * (1 - p) / n)
    return out


def test_no_diffusion_means_no_misalignment():
    cfg = SystemConfig.from_dimensionless(0.2, 0.0)
    for seed in range(20):
        assert sample_trajectory(cfg, seed).mu_vec == (0.0, 0.0)


def test_trajectory_fields_and_ranges():
    cfg = SystemConfig(separation_d=1.0, psf_width_w=2.0, diffusion_D=0.3,
                       cycle_time_T=5.0, alignment_time_ta=1.0)
    for seed in range(50):
        t = sample_trajectory(cfg, seed)
        assert 1.0 <= t.emission_time <= 5.0
        assert 0.0 <= t.phi < 2 * math.pi
        assert 0.0 <= t.theta <= math.pi
        assert t.source_index in (1, 2)


@pytest.mark.parametrize("tau", [0.5])
def test_misalignment_variance(tau):
    cfg = SystemConfig.from_dimensionless(0.2, tau)
    b = sample_photons(cfg, 10**6, rng(7))
    r = np.hypot(b.mu_x, b.mu_y)
    var = r.var()
    m4 = np.mean((r - r.mean()) ** 4)
    se = math.sqrt((m4 - var * var) / r.size)
    assert abs(var - misalignment_moments(tau)[1]) <= 3 * se


def test_orientation_and_time_marginals():
    cfg = SystemConfig(separation_d=0.4, diffusion_D=0.1, cycle_time_T=2.0, alignment_time_ta=0.5)
    b = sample_photons(cfg, 200_000, rng(3))
    assert stats.kstest(b.cos_theta, "uniform", args=(-1, 2)).pvalue > 0.01
    assert stats.kstest(b.phi, "uniform", args=(0, 2 * math.pi)).pvalue > 0.01
    assert stats.kstest(b.s, "uniform", args=(0.25, 0.75)).pvalue > 0.01


def test_misalignment_gaussian_in_time_strata():
    cfg = SystemConfig.from_dimensionless(0.2, 0.3)
    b = sample_photons(cfg, 200_000, rng(5))
    edges = np.linspace(0, 1, 6)
    tests = 0
    pvals = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (b.s >= lo) & (b.s < hi)
        scale = np.sqrt(2 * cfg.tau * b.s[sel])
        for comp in (b.mu_x, b.mu_y):
            pvals.append(stats.kstest(comp[sel] / scale, "norm").pvalue)
            tests += 1
    assert min(pvals) > 0.01 / tests


def test_source_fraction():
    cfg = SystemConfig.from_dimensionless(0.2, 0.01, nu=0.3)
    b = sample_photons(cfg, 10**6, rng(9))
    frac = np.mean(b.source == 1)
    assert abs(frac - 0.3) <= 4 * math.sqrt(0.3 * 0.7 / 1e6)


def test_mode_assignment_matches_static_probabilities():
    cfg = SystemConfig.from_dimensionless(0.4, 0.1, nu=0.5)
    pose = Pose(mu=0.3, psi=0.8, phi=1.9, theta=1.1)
    n = 100_000
    ones = np.ones(n)
    g = rng(12)
    src = np.where(g.random(n) < 0.5, 1, 2)
    batch = PhotonBatch(
        s=ones, mu_x=0.3 * math.cos(0.8) * ones, mu_y=0.3 * math.sin(0.8) * ones,
        phi=1.9 * ones, cos_theta=math.cos(1.1) * ones, source=src, mode_u=g.random(n),
    )
    modes = assign_modes(batch, cfg.x, 1)
    counts = np.bincount(modes, minlength=5)
    for i, m in enumerate(modes_up_to(1)):
        p = static_mode_prob(m, pose, cfg)
        assert abs(counts[i] / n - p) <= 4 * math.sqrt(p * (1 - p) / n)


def test_zero_photons_gives_empty_record():
    cfg = SystemConfig.from_dimensionless(0.2, 0.01)
    r = simulate_cycles(cfg, 100, 0.0, rng_seed=1)
    assert r.total_detected == 0
    assert all(c == 0 for c in r.counts.values())


def test_empirical_probabilities_match_quadrature():
    cfg = SystemConfig.from_dimensionless(0.2, 0.01)
    r = simulate_cycles(cfg, 10_000, 1000.0, rng_seed=21)
    assert r.total_detected > 9.9e6
    oracle = averaged_probs_quadrature(0.2, 0.01, M=1).probs
    assert max(abs(z) for z in z_scores(r, oracle).values()) <= 4


def test_nu_independence_monte_carlo():
    n_cycles, mean = 10_000, 1000.0
    a = simulate_cycles(SystemConfig.from_dimensionless(0.2, 0.01, nu=0.1), n_cycles, mean, rng_seed=31)
    b = simulate_cycles(SystemConfig.from_dimensionless(0.2, 0.01, nu=0.9), n_cycles, mean, rng_seed=32)
    na, nb = a.total_detected, b.total_detected
    for m in modes_up_to(1):
        pa, pb = a.counts[m] / na, b.counts[m] / nb
        se = math.sqrt(pa * (1 - pa) / na + pb * (1 - pb) / nb)
        assert abs(pa - pb) <= 4 * se


def test_seed_determinism_and_thread_independence():
    cfg = SystemConfig.from_dimensionless(0.2, 0.01)
    a = simulate_cycles(cfg, 5000, 500.0, rng_seed=99, threads=1)
    b = simulate_cycles(cfg, 5000, 500.0, rng_seed=99, threads=4)
    c = simulate_cycles(cfg, 5000, 500.0, rng_seed=100)
    assert a.to_json() == b.to_json()
    assert a.counts != c.counts


def test_total_counts_poisson():
    cfg = SystemConfig.from_dimensionless(0.2, 0.01)
    totals = [simulate_cycles(cfg, 10, 50.0, rng_seed=s).total_detected for s in range(400)]
    assert np.mean(totals) == pytest.approx(500, abs=4 * math.sqrt(500 / 400))
    assert np.var(totals, ddof=1) == pytest.approx(500, rel=0.25)


def test_record_json_roundtrip():
    cfg = SystemConfig.from_dimensionless(0.2, 0.01, k=10)
    r = simulate_cycles(cfg, 50, 20.0, M=2, rng_seed=4)
    back = ExperimentRecord.from_json(r.to_json())
    assert back == r
    assert set(r.to_dict()["counts"]) == {m.label() for m in modes_up_to(2)}


def test_simulate_rejects_bad_arguments():
    cfg = SystemConfig.from_dimensionless(0.2, 0.01)
    with pytest.raises(DomainError):
        simulate_cycles(cfg, 0, 10.0)
    with pytest.raises(DomainError):
        simulate_cycles(cfg, 10, -1.0)


def test_correlated_cycles_structure():
    cfg = SystemConfig.from_dimensionless(0.2, 0.5)
    counts = np.array([5, 0, 3, 7] * 20000)
    b = sample_correlated_cycles(cfg, counts, rng(8))
    cycle = np.repeat(np.arange(counts.size), counts)
    # orientation fixed within each cycle, times sorted within each cycle
    for c in range(4):
        sel = cycle == c
        assert np.ptp(b.phi[sel]) == 0.0 if sel.any() else True
        assert np.all(np.diff(b.s[sel]) >= 0)
    # marginal of a single path point is still N(0, 2 tau s)
    z = b.mu_x / np.sqrt(2 * cfg.tau * b.s)
    assert stats.kstest(z, "norm").pvalue > 0.01


def test_correlated_mode_runs_and_is_close():
    cfg = SystemConfig.from_dimensionless(0.2, 0.01)
    r = simulate_cycles(cfg, 2000, 500.0, rng_seed=3, correlated=True)
    oracle = averaged_probs_quadrature(0.2, 0.01, M=1).probs
    emp = r.empirical_probs()
    assert emp[ModeIndex(0, 0)] == pytest.approx(oracle[ModeIndex(0, 0)], abs=0.01)


def test_mle_recovers_truth():
    cfg = SystemConfig.from_dimensionless(0.2, 0.001)
    r = simulate_cycles(cfg, 1000, 1000.0, rng_seed=17)
    res = mle_separation(r, 0.001)
    assert res.converged
    assert abs(res.d_hat - cfg.separation_d) <= 5 * res.stderr_estimate
    f = fi_spade(0.2, 0.001).w2_fi
    assert res.stderr_estimate == pytest.approx(1 / math.sqrt(1e6 * f), rel=0.05)


def test_mle_degenerate_counts_flagged():
    cfg = SystemConfig.from_dimensionless(0.2, 0.001)
    r = ExperimentRecord(counts={m: 0 for m in modes_up_to(1)}, bucket_count=0, n_cycles=100,
                         truth=cfg, seed=0, mean_photons_per_cycle=10.0)
    r.counts[ModeIndex(0, 0)] = 1000
    res = mle_separation(r, 0.001)
    assert not res.converged
    assert res.d_hat < 1e-3


@pytest.mark.slow
def test_estimator_bias_small():
    cfg = SystemConfig.from_dimensionless(0.2, 0.001)
    d = np.array([mle_separation(simulate_cycles(cfg, 1000, 1000.0, rng_seed=s), 0.001).d_hat
                  for s in range(200)])
    sem = d.std(ddof=1) / math.sqrt(d.size)
    assert abs(d.mean() - cfg.separation_d) < 2 * sem


def test_empirical_fisher_short_timescale():
    cfg = SystemConfig.from_dimensionless(0.2, 1e-6)
    r = empirical_fisher(cfg, 10**7, rng_seed=2)
    assert r.w2_fi == pytest.approx(2 / 3, rel=0.10)
    assert abs(r.w2_fi - fi_spade(0.2, 1e-6).w2_fi) <= 4 * r.error_estimate + 0.01


def test_empirical_fisher_long_timescale():
    cfg = SystemConfig.from_dimensionless(0.02, 0.01)
    # p is close to quadratic in x here, so a wide central step is exact
    r = empirical_fisher(cfg, 4 * 10**7, rng_seed=2, delta=0.01)
    expected = (2 / (9 * 0.01) - 43 / 27) * 0.02**2
    assert r.w2_fi == pytest.approx(expected, rel=0.15)


def test_empirical_fisher_zero_step():
    cfg = SystemConfig.from_dimensionless(0.2, 1e-6)
    with pytest.raises(DomainError):
        empirical_fisher(cfg, 1000, delta=0.0)
