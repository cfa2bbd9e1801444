"""Hermite-Gauss modes, overlap integrals and static detection probabilities.

Everything inside is carried in units of the PSF width ``w``; the public
functions take physical lengths and convert at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError

HERMITE_MAX_ORDER = 10


@dataclass(frozen=True)
class SystemConfig:
    """Physical parameters of one measurement scenario.

    Lengths share one unit (any), times share one unit; ``diffusion_D`` is
    in length^2/time.
    """

    separation_d: float
    psf_width_w: float = 1.0
    diffusion_D: float = 0.0
    cycle_time_T: float = 1.0
    brightness_nu: float = 0.5
    alignment_time_ta: float = 0.0

    def __post_init__(self):
        if not self.separation_d > 0:
            raise DomainError("separation_d must be > 0")
        if not self.psf_width_w > 0:
            raise DomainError("psf_width_w must be > 0")
        if not self.diffusion_D >= 0:
            raise DomainError("diffusion_D must be >= 0")
        if not self.cycle_time_T > 0:
            raise DomainError("cycle_time_T must be > 0")
        if not 0 < self.brightness_nu < 1:
            raise DomainError("brightness_nu must lie in (0, 1)")
        if not 0 <= self.alignment_time_ta < self.cycle_time_T:
            raise DomainError("alignment_time_ta must lie in [0, T)")

    @classmethod
    def from_dimensionless(cls, x, tau, nu=0.5, k=None, w=1.0):
        """Build a config with T = 1 from x = d/2w, tau = DT/w^2, t_a = T/k."""
        ta = 0.0 if k is None or math.isinf(k) else 1.0 / k
        if k is not None and not k > 1:
            raise DomainError("k must be > 1")
        return cls(
            separation_d=2.0 * x * w,
            psf_width_w=w,
            diffusion_D=tau * w * w,
            cycle_time_T=1.0,
            brightness_nu=nu,
            alignment_time_ta=ta,
        )

    @property
    def x(self):
        return self.separation_d / (2.0 * self.psf_width_w)

    @property
    def tau(self):
        return self.diffusion_D * self.cycle_time_T / self.psf_width_w**2

    @property
    def k(self):
        if self.alignment_time_ta == 0:
            return math.inf
        return self.cycle_time_T / self.alignment_time_ta

    @property
    def ta_fraction(self):
        return self.alignment_time_ta / self.cycle_time_T

    def to_dict(self):
        return {
            "separation_d": self.separation_d,
            "psf_width_w": self.psf_width_w,
            "diffusion_D": self.diffusion_D,
            "cycle_time_T": self.cycle_time_T,
            "brightness_nu": self.brightness_nu,
            "alignment_time_ta": self.alignment_time_ta,
        }


@dataclass(frozen=True)
class Pose:
    """Misalignment (magnitude ``mu``, direction ``psi``) and orientation."""

    mu: float = 0.0
    psi: float = 0.0
    phi: float = 0.0
    theta: float = 0.0

    def source_positions(self, config):
        """Physical positions r_1, r_2 of the two sources."""
        centre = self.mu * np.array([math.cos(self.psi), math.sin(self.psi)])
        half = 0.5 * config.separation_d * math.sin(self.theta)
        axis = np.array([math.cos(self.phi), math.sin(self.phi)])
        return centre - half * axis, centre + half * axis


class ModeIndex(NamedTuple):
    n: int
    m: int

    @classmethod
    def parse(cls, text):
        """Accept ``"10"``, ``"1,0"`` or ``"(1,0)"``."""
        t = text.strip().strip("()").replace(" ", "")
        parts = t.split(",") if "," in t else list(t)
        if len(parts) != 2:
            raise DomainError(f"cannot parse mode {text!r}")
        n, m = int(parts[0]), int(parts[1])
        if n < 0 or m < 0:
            raise DomainError("mode indices must be >= 0")
        return cls(n, m)

    def label(self):
        return f"{self.n},{self.m}"


def modes_up_to(M):
    return [ModeIndex(n, m) for n in range(M + 1) for m in range(M + 1)]


def hermite(n, t):
    """Physicists' Hermite polynomial H_n by the three-term recurrence."""
    if n < 0 or n > HERMITE_MAX_ORDER:
        raise DomainError(f"Hermite order {n} outside [0, {HERMITE_MAX_ORDER}]")
    t = np.asarray(t, dtype=float)
    h_prev = np.ones_like(t)
    if n == 0:
        return h_prev
    h = 2.0 * t
    for k in range(1, n):
        h_prev, h = h, 2.0 * t * h - 2.0 * k * h_prev
    return h


def hg_mode(idx, point, w=1.0):
    """Hermite-Gauss mode u_nm at ``point`` (array with last axis of size 2)."""
    n, m = idx
    p = np.asarray(point, dtype=float)
    rx, ry = p[..., 0] / w, p[..., 1] / w
    norm = math.sqrt(0.5 * math.pi * w * w * 2.0 ** (n + m)
                     * math.factorial(n) * math.factorial(m))
    return (np.exp(-(rx * rx + ry * ry)) / norm
            * hermite(n, math.sqrt(2.0) * rx) * hermite(m, math.sqrt(2.0) * ry))


def overlap_from_displacement(n, m, ax, ay):
    """f_nm for a Gaussian PSF displaced by (ax, ay) in units of w."""
    return (np.exp(-0.5 * (ax * ax + ay * ay)) * ax**n * ay**m
            / math.sqrt(math.factorial(n) * math.factorial(m)))


def prob_from_displacement(n, m, ax, ay):
    """|f_nm|^2, vectorised; the Poisson-like weights of a coherent state."""
    return (np.exp(-(ax * ax + ay * ay)) * ax ** (2 * n) * ay ** (2 * m)
            / (math.factorial(n) * math.factorial(m)))


def _displacement(pose, config, source):
    if source not in (1, 2):
        raise DomainError("source must be 1 or 2")
    mu_w = pose.mu / config.psf_width_w
    x_theta = config.x * math.sin(pose.theta)
    sign = -1.0 if source == 1 else 1.0
    ax = mu_w * math.cos(pose.psi) + sign * x_theta * math.cos(pose.phi)
    ay = mu_w * math.sin(pose.psi) + sign * x_theta * math.sin(pose.phi)
    return ax, ay


def overlap_f(idx, pose, config, source):
    """Closed-form overlap of mode ``idx`` with the PSF of source 1 or 2."""
    ax, ay = _displacement(pose, config, source)
    return float(overlap_from_displacement(idx[0], idx[1], ax, ay))


def static_mode_prob(idx, pose, config):
    """Detection probability in mode ``idx`` for a fixed pose."""
    nu = config.brightness_nu
    f1 = overlap_f(idx, pose, config, 1)
    f2 = overlap_f(idx, pose, config, 2)
    return nu * f1 * f1 + (1.0 - nu) * f2 * f2


def static_residual(pose, config, M):
    """Probability of landing outside modes n, m <= M (the complement)."""
    return 1.0 - sum(static_mode_prob(i, pose, config) for i in modes_up_to(M))


def di_intensity_static(point, pose, config):
    """Direct-imaging photon density (1/area) for a fixed pose."""
    r1, r2 = pose.source_positions(config)
    p = np.asarray(point, dtype=float)
    w = config.psf_width_w
    u1 = hg_mode((0, 0), p - r1, w)
    u2 = hg_mode((0, 0), p - r2, w)
    nu = config.brightness_nu
    return nu * u1 * u1 + (1.0 - nu) * u2 * u2
