"""Photon-level simulation of the measurement cycle and separation estimation.

Each detected photon carries its own emission time, misalignment, source
orientation and source label; its mode is drawn from the static overlap
probabilities of that configuration. Randomness comes from Philox streams
spawned from one SeedSequence, one stream per fixed-size block, so results
do not depend on how many threads run the blocks.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from .ensemble import averaged_probs_quadrature, closed_form_with_derivative
from .errors import DomainError, PrecisionError
from .fisher import FisherResult, fi_spade
from .optics import ModeIndex, SystemConfig, modes_up_to, prob_from_displacement

THREADS_ENV = "SPADE_BROWNIAN_THREADS"
BLOCK_PHOTONS = 1 << 20
CHUNK = 1 << 18


def default_threads():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise DomainError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, n)


def make_rng(seed_seq):
    return np.random.Generator(np.random.Philox(seed_seq))


@dataclass(frozen=True)
class TrajectorySample:
    emission_time: float
    mu_vec: tuple
    phi: float
    theta: float
    source_index: int


@dataclass
class PhotonBatch:
    """Vectorised photon draws, lengths in units of w and s = t/T."""

    s: np.ndarray
    mu_x: np.ndarray
    mu_y: np.ndarray
    phi: np.ndarray
    cos_theta: np.ndarray
    source: np.ndarray
    mode_u: np.ndarray

    def __len__(self):
        return self.s.size


def sample_photons(config, n, rng):
    """Draw ``n`` independent photons from the time-averaged ensemble."""
    ta = config.ta_fraction
    s = ta + (1.0 - ta) * rng.random(n)
    sd = np.sqrt(2.0 * config.tau * s)
    mu = rng.standard_normal((2, n)) * sd
    phi = 2.0 * math.pi * rng.random(n)
    cos_theta = 2.0 * rng.random(n) - 1.0
    source = np.where(rng.random(n) < config.brightness_nu, 1, 2)
    mode_u = rng.random(n)
    return PhotonBatch(s, mu[0], mu[1], phi, cos_theta, source, mode_u)


def sample_correlated_cycles(config, counts, rng):
    """Photons for cycles that each follow a single Brownian path.

    ``counts[i]`` photons arrive at uniform times in cycle i; orientation is
    fixed per cycle and the misalignment is one continuous random walk
    started at zero at t = 0.
    """
    counts = np.asarray(counts)
    n = int(counts.sum())
    ta = config.ta_fraction
    cycle = np.repeat(np.arange(counts.size), counts)
    s = ta + (1.0 - ta) * rng.random(n)
    order = np.lexsort((s, cycle))
    s = s[order]
    starts = np.cumsum(counts) - counts
    start_of = np.repeat(starts, counts)
    first = start_of == np.arange(n)
    prev = np.where(first, 0.0, np.concatenate([[0.0], s[:-1]]))
    steps = rng.standard_normal((2, n)) * np.sqrt(2.0 * config.tau * (s - prev))
    walk = np.cumsum(steps, axis=1)
    # restart the cumulative sum at each cycle boundary
    walk -= walk[:, start_of] - steps[:, start_of]
    phi_c = 2.0 * math.pi * rng.random(counts.size)
    cos_c = 2.0 * rng.random(counts.size) - 1.0
    source = np.where(rng.random(n) < config.brightness_nu, 1, 2)
    mode_u = rng.random(n)
    return PhotonBatch(s, walk[0], walk[1], phi_c[cycle], cos_c[cycle], source, mode_u)


def sample_trajectory(config, rng_seed):
    """One emission event from the time-averaged Brownian ensemble."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else make_rng(
        np.random.SeedSequence(rng_seed))
    b = sample_photons(config, 1, rng)
    w, T = config.psf_width_w, config.cycle_time_T
    return TrajectorySample(
        emission_time=float(b.s[0] * T),
        mu_vec=(float(b.mu_x[0] * w), float(b.mu_y[0] * w)),
        phi=float(b.phi[0]),
        theta=float(math.acos(b.cos_theta[0])),
        source_index=int(b.source[0]),
    )


def photon_mode_probs(batch, x, M):
    """Static probabilities (n_photons, n_modes) for each photon's own source."""
    sin_t = np.sqrt(1.0 - batch.cos_theta**2)
    sign = np.where(batch.source == 1, -1.0, 1.0)
    ax = batch.mu_x + sign * x * sin_t * np.cos(batch.phi)
    ay = batch.mu_y + sign * x * sin_t * np.sin(batch.phi)
    return np.stack([prob_from_displacement(n, m, ax, ay) for n, m in modes_up_to(M)], axis=1)


def assign_modes(batch, x, M):
    """Categorical draw by inverse CDF; index len(modes) is the bucket."""
    out = np.empty(len(batch), dtype=np.int64)
    for lo in range(0, len(batch), CHUNK):
        sl = slice(lo, lo + CHUNK)
        sub = PhotonBatch(*(getattr(batch, f)[sl] for f in PhotonBatch.__dataclass_fields__))
        cdf = np.cumsum(photon_mode_probs(sub, x, M), axis=1)
        out[sl] = np.sum(sub.mode_u[:, None] >= cdf, axis=1)
    return out


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentRecord:
    counts: dict
    bucket_count: int
    n_cycles: int
    truth: SystemConfig
    seed: int
    mean_photons_per_cycle: float
    M: int = 1
    correlated: bool = False

    @property
    def total_detected(self):
        return sum(self.counts.values()) + self.bucket_count

    @property
    def expected_photons(self):
        return self.n_cycles * self.mean_photons_per_cycle

    def empirical_probs(self):
        total = self.total_detected
        return {m: c / total for m, c in self.counts.items()} if total else {}

    def to_dict(self):
        return {
            "counts": {m.label(): int(c) for m, c in self.counts.items()},
            "bucket": int(self.bucket_count),
            "n_cycles": int(self.n_cycles),
            "truth": self.truth.to_dict(),
            "seed": int(self.seed),
            "mean_photons_per_cycle": self.mean_photons_per_cycle,
            "M": self.M,
            "correlated": self.correlated,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(
            counts={ModeIndex.parse(k): int(v) for k, v in d["counts"].items()},
            bucket_count=int(d["bucket"]),
            n_cycles=int(d["n_cycles"]),
            truth=SystemConfig(**d["truth"]),
            seed=int(d["seed"]),
            mean_photons_per_cycle=float(d["mean_photons_per_cycle"]),
            M=int(d.get("M", 1)),
            correlated=bool(d.get("correlated", False)),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _run_block(config, n_block_cycles, mean, M, seed_seq, correlated):
    rng = make_rng(seed_seq)
    per_cycle = rng.poisson(mean, size=n_block_cycles)
    n = int(per_cycle.sum())
    hist = np.zeros((M + 1) ** 2 + 1, dtype=np.int64)
    if n == 0:
        return hist
    if correlated:
        batch = sample_correlated_cycles(config, per_cycle, rng)
    else:
        batch = sample_photons(config, n, rng)
    modes = assign_modes(batch, config.x, M)
    return np.bincount(modes, minlength=hist.size)


def simulate_cycles(config, n_cycles, mean_photons_per_cycle, M=1, rng_seed=0,
                    correlated=False, threads=None):
    """Run ``n_cycles`` measurement cycles and aggregate mode counts."""
    if int(n_cycles) != n_cycles or n_cycles < 1:
        raise DomainError("n_cycles must be an integer >= 1")
    if not mean_photons_per_cycle >= 0:
        raise DomainError("mean_photons_per_cycle must be >= 0")
    if M not in (1, 2, 3):
        raise DomainError("M must be 1, 2 or 3")
    n_cycles = int(n_cycles)
    per_block = max(1, int(BLOCK_PHOTONS // max(mean_photons_per_cycle, 1.0)))
    sizes = [min(per_block, n_cycles - i) for i in range(0, n_cycles, per_block)]
    streams = np.random.SeedSequence(rng_seed).spawn(len(sizes))
    threads = default_threads() if threads is None else threads

    def job(args):
        size, ss = args
        return _run_block(config, size, mean_photons_per_cycle, M, ss, correlated)

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(threads) as pool:
            hists = list(pool.map(job, zip(sizes, streams)))
    else:
        hists = [job(a) for a in zip(sizes, streams)]
    total = np.sum(hists, axis=0)
    modes = modes_up_to(M)
    return ExperimentRecord(
        counts={m: int(c) for m, c in zip(modes, total[:-1])},
        bucket_count=int(total[-1]),
        n_cycles=n_cycles,
        truth=config,
        seed=int(rng_seed),
        mean_photons_per_cycle=float(mean_photons_per_cycle),
        M=M,
        correlated=correlated,
    )


# ---------------------------------------------------------------------------
# estimation


@dataclass(frozen=True)
class MleResult:
    d_hat: float
    loglik: float
    converged: bool
    stderr_estimate: float
    x_hat: float = math.nan
    note: str = ""


@lru_cache(maxsize=1 << 16)
def model_probs(x, tau, M):
    """Averaged probabilities over n, m <= M (closed forms when M = 1)."""
    if M == 1:
        return tuple(closed_form_with_derivative(i, x, tau)[0] for i in modes_up_to(1))
    return tuple(averaged_probs_quadrature(x, tau, M=M).as_array(modes_up_to(M)))


MLE_X_MIN = 1e-4
MLE_X_MAX = 5.0


def poisson_loglik(x, record, tau, M, include_bucket=False):
    """Poisson log-likelihood with known expected photon number.

    Modes n, m <= M are independent Poisson counts with means Lambda p_nm;
    the bucket is ignored unless ``include_bucket`` is set, matching the
    Fisher information that sums over the measured modes only.
    """
    lam = record.expected_photons
    p = np.array(model_probs(float(x), float(tau), M))
    c = np.array([record.counts.get(m, 0) for m in modes_up_to(M)], dtype=float)
    if include_bucket:
        p = np.append(p, max(1.0 - p.sum(), 1e-300))
        c = np.append(c, record.bucket_count)
    p = np.maximum(p, 1e-300)
    return float(np.sum(c * np.log(lam * p)) - lam * np.sum(p))


def mle_separation(record, model_tau, M=None, include_bucket=False, grid_points=80,
                   xtol=1e-9, maxiter=200):
    """Maximum-likelihood separation from an :class:`ExperimentRecord`.

    A log-spaced scan over x in [1e-4, 5] locates the best grid cell; the
    bracket around it is refined by golden-section search. A maximum on the
    lower edge is reported as non-converged.
    """
    M = record.M if M is None else M
    if M > record.M:
        raise DomainError("record does not contain modes up to M")
    if record.expected_photons <= 0:
        raise DomainError("record has zero expected photons")
    w = record.truth.psf_width_w

    def nll(x):
        return -poisson_loglik(x, record, model_tau, M, include_bucket)

    grid = np.geomspace(MLE_X_MIN, MLE_X_MAX, grid_points)
    vals = np.array([nll(x) for x in grid])
    i = int(np.argmin(vals))
    if i == 0 or i == grid.size - 1:
        x = float(grid[i])
        return MleResult(2.0 * x * w, -float(vals[i]), False, math.inf, x,
                         "likelihood maximised on the search boundary")
    res = minimize_scalar(nll, bracket=(grid[i - 1], grid[i], grid[i + 1]),
                          method="golden", tol=xtol, options={"maxiter": maxiter})
    x = float(res.x)
    converged = bool(res.success) and MLE_X_MIN < x < MLE_X_MAX
    try:
        f = fi_spade(x, model_tau, M=M, include_bucket=include_bucket).w2_fi
        stderr = w / math.sqrt(record.expected_photons * f) if f > 0 else math.inf
    except PrecisionError:
        stderr = math.inf
    return MleResult(2.0 * x * w, -float(res.fun), converged, stderr, x)


# ---------------------------------------------------------------------------
# empirical Fisher information


def empirical_fisher(config, n_photons, rng_seed=0, M=1, delta=None, threads=None):
    """Fisher information from simulated mode frequencies.

    The same photons (common random numbers) are assigned modes at x - delta,
    x and x + delta, so the central difference of the frequencies is a
    paired estimate. The squared-derivative bias from sampling noise is
    subtracted, and the result carries a propagated standard error.
    """
    x = config.x
    delta = 0.25 * x if delta is None else float(delta)
    if not delta > 0:
        raise DomainError("finite-difference step delta must be > 0")
    if delta >= x:
        raise DomainError("delta must be smaller than x")
    n_photons = int(n_photons)
    if n_photons < 1:
        raise DomainError("n_photons must be >= 1")
    sizes = [min(BLOCK_PHOTONS, n_photons - i) for i in range(0, n_photons, BLOCK_PHOTONS)]
    streams = np.random.SeedSequence(rng_seed).spawn(len(sizes))
    k = (M + 1) ** 2 + 1

    def job(args):
        size, ss = args
        batch = sample_photons(config, size, make_rng(ss))
        lo = assign_modes(batch, x - delta, M)
        mid = assign_modes(batch, x, M)
        hi = assign_modes(batch, x + delta, M)
        # per-mode sums of the paired indicator difference and its square
        diff = np.zeros(k)
        diff2 = np.zeros(k)
        np.add.at(diff, hi, 1.0)
        np.add.at(diff, lo, -1.0)
        changed = hi != lo
        np.add.at(diff2, hi[changed], 1.0)
        np.add.at(diff2, lo[changed], 1.0)
        return np.bincount(mid, minlength=k), diff, diff2

    threads = default_threads() if threads is None else threads
    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(job, zip(sizes, streams)))
    else:
        parts = [job(a) for a in zip(sizes, streams)]
    counts = sum(p[0] for p in parts)[:-1].astype(float)
    dsum = sum(p[1] for p in parts)[:-1]
    d2sum = sum(p[2] for p in parts)[:-1]

    n = float(n_photons)
    p = counts / n
    if np.any(p <= 0):
        raise PrecisionError("a mode received no photons; increase n_photons")
    mean_d = dsum / n
    var_d = d2sum / n - mean_d**2
    h = 2.0 * delta
    dp = mean_d / h
    var_dp = var_d / (n * h * h)
    var_p = p * (1.0 - p) / n
    terms = (dp * dp - var_dp) / (4.0 * p)
    value = float(np.sum(terms))
    err = float(np.sqrt(np.sum((np.abs(dp) / (2.0 * p)) ** 2 * var_dp
                               + (dp * dp / (4.0 * p * p)) ** 2 * var_p)))
    if value <= err:
        raise PrecisionError(
            "sampling noise exceeds the finite-difference signal; "
            "use a larger delta or more photons",
            partial_value=value,
            achieved_error=err,
        )
    return FisherResult(value, "monte_carlo", x, config.tau, M, err, config.psf_width_w)
