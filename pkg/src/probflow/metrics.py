"""Total variation estimation, rate fitting and the convergence bound."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats

from .sampler import TrajectoryBatch

__all__ = [
    "AllPointsFlagged",
    "NonConvergentGrid",
    "DegenerateInput",
    "TvEstimate",
    "RateFit",
    "BoundEvaluation",
    "tv_monte_carlo",
    "tv_from_log_ratio",
    "tv_quadrature_1d",
    "rate_fit",
    "theorem_bound",
    "normal_cdf",
    "gaussian_tv_1d",
]


class AllPointsFlagged(RuntimeError):
    pass


class NonConvergentGrid(RuntimeError):
    pass


class DegenerateInput(ValueError):
    pass


@dataclass(frozen=True)
class TvEstimate:
    value: float
    stderr: float
    n_used: int
    n_flagged: int

    @property
    def resolved(self) -> bool:
        """False when the estimate is within two standard errors of zero."""
        return self.value >= 2 * self.stderr and self.value > 0


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    points: tuple


class BoundEvaluation(NamedTuple):
    value: float
    vacuous: bool
    discretization: float
    estimation: float


def normal_cdf(x: float) -> float:
    """Standard normal CDF through ``erf``."""
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def gaussian_tv_1d(mu1: float, s1: float, mu2: float, s2: float) -> float:
    """Closed-form TV between two univariate normals (CDF at the crossing points)."""
    if s1 == s2:
        return 2.0 * normal_cdf(abs(mu1 - mu2) / (2.0 * s1)) - 1.0
    # roots of log N(x; mu1, s1) = log N(x; mu2, s2)
    a = 1 / (2 * s2**2) - 1 / (2 * s1**2)
    b = mu1 / s1**2 - mu2 / s2**2
    c = mu2**2 / (2 * s2**2) - mu1**2 / (2 * s1**2) + math.log(s2 / s1)
    disc = math.sqrt(b * b - 4 * a * c)
    lo, hi = sorted(((-b - disc) / (2 * a), (-b + disc) / (2 * a)))

    def mass(mu, s):
        return normal_cdf((hi - mu) / s) - normal_cdf((lo - mu) / s)

    return abs(mass(mu1, s1) - mass(mu2, s2))


def tv_from_log_ratio(log_ratio, n_flagged: int = 0) -> TvEstimate:
    """TV from samples of the generated law, given ``log p_target - log p_generated``.

    Uses ``TV = E_gen[max(0, 1 - p_target / p_gen)]``. The mean is an exactly
    rounded sum, so the value does not depend on point order.
    """
    lr = np.asarray(log_ratio, dtype=float)
    n = lr.size
    if n == 0:
        raise AllPointsFlagged("no usable points")
    integrand = np.maximum(0.0, -np.expm1(np.minimum(lr, 0.0)))
    mean = math.fsum(integrand) / n
    if n > 1:
        var = math.fsum((integrand - mean) ** 2) / (n - 1)
        se = math.sqrt(var / n)
    else:
        se = 0.0
    return TvEstimate(min(max(mean, 0.0), 1.0), se, n, n_flagged)


def tv_monte_carlo(batch: TrajectoryBatch, target, schedule) -> TvEstimate:
    """TV between the batch law at ``t = 1`` and the true ``X_1`` marginal.

    Flagged (near-singular) points are dropped and counted.
    """
    keep = ~batch.flagged
    n_flagged = int(batch.flagged.sum())
    if not keep.any():
        raise AllPointsFlagged(f"all {batch.n} points are flagged")
    pts = batch.points[keep]
    mo, _ = target.moments(schedule.ab(batch.t), schedule.omab(batch.t), pts)
    return tv_from_log_ratio(mo.log_density - batch.log_density[keep], n_flagged)


def tv_quadrature_1d(density_a, density_b, grid_spec=(-20.0, 20.0), tol: float = 1e-6,
                     max_level: int = 22) -> float:
    """``0.5 * int |a - b|`` by trapezoid rule on successively doubled grids.

    ``grid_spec`` is ``(lo, hi)`` or ``(lo, hi, n0)``. Refinement stops once
    two consecutive levels differ by less than ``tol / 4``.
    """
    lo, hi, *rest = grid_spec
    n = int(rest[0]) if rest else 256
    prev = None
    while n <= 2**max_level:
        x = np.linspace(lo, hi, n + 1)
        f = np.abs(np.asarray(density_a(x), dtype=float) - np.asarray(density_b(x), dtype=float))
        val = 0.5 * np.trapezoid(f, x)
        if prev is not None and abs(val - prev) < tol / 4:
            return float(val)
        prev = val
        n *= 2
    raise NonConvergentGrid(f"trapezoid TV did not settle to {tol:g}")


def rate_fit(points) -> RateFit:
    """Least-squares line through ``(log T, log tv)``."""
    pts = tuple((float(T), float(v)) for T, v in points)
    Ts = np.array([p[0] for p in pts])
    tv = np.array([p[1] for p in pts])
    if len(set(Ts)) < 3:
        raise DegenerateInput("need at least 3 distinct T")
    if np.any(tv <= 0):
        raise DegenerateInput("tv must be positive; floor unresolved values first")
    res = stats.linregress(np.log(Ts), np.log(tv))
    r2 = res.rvalue**2 if np.ptp(np.log(tv)) > 0 else 1.0
    return RateFit(float(res.slope), float(res.intercept), float(r2), pts)


def theorem_bound(k, d, T, eps_score=0.0, eps_jacobi=0.0, c=1.0) -> BoundEvaluation:
    """``c (k + log d) log^3 T / T + c (eps_score + eps_jacobi) log T``."""
    if min(k, d, eps_score, eps_jacobi, c) < 0 or T < 2:
        raise ValueError("inputs must be nonnegative and T >= 2")
    lt = math.log(T)
    disc = c * (k + math.log(d)) * lt**3 / T
    est = c * (eps_score + eps_jacobi) * lt
    val = disc + est
    return BoundEvaluation(val, val > 1.0, disc, est)
