"""Covering numbers of point clouds and a metric-entropy dimension estimate.

Nets come from farthest-point traversal: the visiting order does not depend
on the radius, so the net at radius ``eps`` is the shortest prefix whose
covering radius is at most ``eps``. Consecutive centers are therefore more
than ``eps`` apart, and the net at ``2 eps`` is a packing that lower-bounds
the ``eps``-covering number.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "farthest_point_order",
    "greedy_net",
    "CoveringCurve",
    "covering_curve",
    "DimensionEstimate",
    "dimension_estimate",
]


def farthest_point_order(points, stop_radius: float, start: int = 0):
    """Farthest-point traversal until the covering radius drops to ``stop_radius``.

    Returns ``(order, radii)`` where ``radii[j]`` is the covering radius of the
    first ``j + 1`` centers.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) == 0:
        raise ValueError("points must be a non-empty (n, d) array")
    buf = np.empty_like(pts)
    dist = np.empty(len(pts))

    def sqdist(i):
        np.subtract(pts, pts[i], out=buf)
        return np.einsum("nd,nd->n", buf, buf, out=dist)

    order = [start]
    mind = sqdist(start).copy()  # squared distance to the nearest center
    radii = [mind.max()]
    stop = stop_radius * stop_radius
    while radii[-1] > stop:
        nxt = int(np.argmax(mind))
        order.append(nxt)
        np.minimum(mind, sqdist(nxt), out=mind)
        radii.append(mind.max())
    return np.array(order), np.sqrt(np.array(radii))


def _prefix_size(radii, eps):
    # first prefix whose covering radius is <= eps
    return int(np.argmax(radii <= eps)) + 1


def greedy_net(points, epsilon: float) -> np.ndarray:
    """Indices of an ``epsilon``-net of ``points`` with pairwise separation > ``epsilon``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    order, radii = farthest_point_order(points, epsilon)
    return order[:_prefix_size(radii, epsilon)]


@dataclass(frozen=True)
class CoveringCurve:
    epsilons: np.ndarray
    log_counts: np.ndarray
    lower_bounds: np.ndarray

    @property
    def counts(self) -> np.ndarray:
        return np.rint(np.exp(self.log_counts)).astype(int)

    def rows(self):
        """``(epsilon, net_size, lower_bound)`` with counts, not logs."""
        lb = np.rint(np.exp(self.lower_bounds)).astype(int)
        return [(float(e), int(c), int(b)) for e, c, b in zip(self.epsilons, self.counts, lb)]


def covering_curve(points, epsilons) -> CoveringCurve:
    eps = np.asarray(epsilons, dtype=float)
    if eps.ndim != 1 or eps.size == 0 or np.any(eps <= 0):
        raise ValueError("epsilons must be positive")
    if np.any(np.diff(eps) >= 0):
        raise ValueError("epsilons must be strictly decreasing")
    _, radii = farthest_point_order(points, float(eps[-1]))
    upper = np.array([_prefix_size(radii, e) for e in eps])
    lower = np.array([_prefix_size(radii, 2 * e) for e in eps])
    return CoveringCurve(eps, np.log(upper), np.log(lower))


class DimensionEstimate(NamedTuple):
    k_hat: float
    flat: bool


def dimension_estimate(curve: CoveringCurve) -> DimensionEstimate:
    """Least-squares slope of ``log N_eps`` against ``log(1 / eps)``."""
    if curve.epsilons.size < 2:
        raise ValueError("need at least two radii")
    y = curve.log_counts
    if np.all(y == y[0]):
        return DimensionEstimate(0.0, True)
    slope = np.polyfit(np.log(1.0 / curve.epsilons), y, 1)[0]
    return DimensionEstimate(float(slope), False)
