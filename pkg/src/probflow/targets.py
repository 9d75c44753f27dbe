"""Gaussian and point-mass mixture targets with closed-form noised marginals.

A target is a finite mixture ``sum_i w_i N(mu_i, L_i L_i^T)`` where each
covariance factor ``L_i`` may be rank deficient (rank 0 is a point mass).
Under the forward process ``X_t = sqrt(ab) X_0 + sqrt(1 - ab) W`` each
component becomes ``N(sqrt(ab) mu_i, ab Sigma_i + (1 - ab) I)``, which is
always full rank, so the log-density, score, Jacobian and the posterior
moments of ``X_0 | X_t`` are all available in closed form.

Covariances are handled through their eigendecompositions
``Sigma_i = U_i diag(lam_i) U_i^T`` so that precisions are written as
``I / (1 - ab) + U_i diag(1 / (ab lam + 1 - ab) - 1 / (1 - ab)) U_i^T``.
This keeps the small-``t`` regime (``1 - ab`` of order ``T**-c0``) accurate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "Component",
    "MixtureTarget",
    "NoisedMoments",
    "embedding_frame",
    "point_mass",
    "isotropic_gaussian",
    "low_rank_gaussian",
    "gaussian_mixture",
    "point_cloud",
    "cube_points",
    "torus_points",
    "sample_data",
    "log_marginal",
    "score",
    "jacobian",
    "posterior_moments",
    "score_from_posterior_mean",
]

LOG_2PI = math.log(2.0 * math.pi)
# cap on n * m * d floats held at once while evaluating a batch
_CHUNK_FLOATS = 4_000_000


@dataclass(frozen=True)
class Component:
    weight: float
    mean: np.ndarray
    factor: np.ndarray  # d x r, Sigma = factor @ factor.T

    @property
    def rank(self) -> int:
        return self.factor.shape[1]


@dataclass(frozen=True)
class NoisedMoments:
    """Everything the time-``t`` marginal gives at a batch of points."""

    log_density: np.ndarray  # (n,)
    score: np.ndarray  # (n, d)
    responsibilities: np.ndarray  # (n, m)


class MixtureTarget:
    """Finite mixture of (possibly degenerate) Gaussians in ``R^d``.

    Parameters
    ----------
    components : sequence of Component
        Weights must sum to one.
    support_radius : float, optional
        Radius bound recorded for the boundedness assumption. Defaults to a
        nominal ``max ||mu_i|| + 6 * max sqrt(lam)``; Gaussian components are
        unbounded, so this is a bookkeeping value only.
    info : dict, optional
        Free-form provenance (family name, nominal k, embedding frame, seed).
    """

    def __init__(self, components, support_radius=None, info=None):
        comps = list(components)
        if not comps:
            raise ValueError("a mixture needs at least one component")
        d = comps[0].mean.shape[0]
        w = np.array([c.weight for c in comps], dtype=float)
        if np.any(w <= 0) or np.any(w > 1):
            raise ValueError("component weights must lie in (0, 1]")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        for c in comps:
            if c.mean.shape != (d,) or c.factor.ndim != 2 or c.factor.shape[0] != d:
                raise ValueError("inconsistent component shapes")
            if c.rank > d:
                raise ValueError("covariance factor rank exceeds dimension")

        self.components = tuple(comps)
        self.d = d
        self.weights = w
        self.log_weights = np.log(w)
        self.means = np.stack([c.mean for c in comps])  # (m, d)

        # eigenbasis of each covariance, zero-padded to a common rank R
        R = max(c.rank for c in comps)
        m = len(comps)
        self._U = np.zeros((m, d, R))
        self._lam = np.zeros((m, R))
        for i, c in enumerate(comps):
            if c.rank == 0:
                continue
            u, sv, _ = np.linalg.svd(c.factor, full_matrices=False)
            keep = sv > 1e-14 * max(sv.max(), 1.0)
            r = int(keep.sum())
            self._U[i, :, :r] = u[:, keep]
            self._lam[i, :r] = sv[keep] ** 2
        self.max_rank = R

        norms = np.linalg.norm(self.means, axis=1)
        if support_radius is None:
            support_radius = float(norms.max() + 6.0 * np.sqrt(self._lam.max(initial=0.0)))
        if np.any(norms > support_radius * (1 + 1e-12)):
            raise ValueError("a component mean lies outside support_radius")
        self.support_radius = float(support_radius)
        self.info = dict(info or {})

    @property
    def n_components(self) -> int:
        return len(self.components)

    def covariance(self, i: int) -> np.ndarray:
        L = self.components[i].factor
        return L @ L.T

    def sample(self, n: int, seed) -> np.ndarray:
        return sample_data(self, n, seed)

    def component_table(self):
        """Rows ``(index, weight, rank, mean_norm, trace_cov)`` for dumping."""
        for i, c in enumerate(self.components):
            yield (i, c.weight, c.rank, float(np.linalg.norm(c.mean)),
                   float(self._lam[i].sum()))

    # -- time-t machinery ---------------------------------------------------

    def _noised(self, ab: float, omab: float):
        """Per-component shifted means, precision corrections and log-dets."""
        lam = self._lam
        var = ab * lam + omab  # eigenvalues of C_i inside span(U_i)
        corr = 1.0 / var - 1.0 / omab  # zero on padded columns
        logdet = self.d * math.log(omab) + np.sum(np.log1p(ab * lam / omab), axis=1)
        return math.sqrt(ab) * self.means, corr, logdet, var

    def _chunks(self, n: int):
        step = max(1, _CHUNK_FLOATS // max(1, self.n_components * self.d))
        for lo in range(0, n, step):
            yield slice(lo, min(n, lo + step))

    def _residuals(self, x, shifted, corr, omab):
        """``r_i = C_i^{-1}(x - sqrt(ab) mu_i)`` and the quadratic forms."""
        z = x[:, None, :] - shifted[None, :, :]  # (n, m, d)
        r = z / omab
        if self.max_rank:
            proj = np.einsum("nmd,mdr->nmr", z, self._U)
            r = r + np.einsum("mdr,nmr->nmd", self._U, proj * corr[None])
        quad = np.einsum("nmd,nmd->nm", z, r)
        return z, r, quad

    def moments(self, ab: float, omab: float, x, with_jacobian=False):
        """Log-density, score and responsibilities (and optionally Jacobians)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        shifted, corr, logdet, _ = self._noised(ab, omab)
        if self.n_components == 1:
            return self._single(x, shifted[0], corr[0], logdet[0], omab, with_jacobian)
        logp = np.empty(n)
        sc = np.empty((n, self.d))
        resp = np.empty((n, self.n_components))
        jac = np.empty((n, self.d, self.d)) if with_jacobian else None
        if with_jacobian and self.max_rank:
            # sum_i w_i P_i, minus the shared I / (1 - ab), is built from these
            low = np.einsum("mdr,mr,mer->mde", self._U, corr, self._U)
        for sl in self._chunks(n):
            _, r, quad = self._residuals(x[sl], shifted, corr, omab)
            logc = self.log_weights[None] - 0.5 * (self.d * LOG_2PI + logdet[None] + quad)
            lp = logsumexp(logc, axis=1)
            w = np.exp(logc - lp[:, None])
            mean_r = np.einsum("nm,nmd->nd", w, r)
            logp[sl] = lp
            sc[sl] = -mean_r
            resp[sl] = w
            if with_jacobian:
                dev = r - mean_r[:, None, :]
                J = np.einsum("nm,nmd,nme->nde", w, dev, dev)
                J -= np.eye(self.d)[None] / omab
                if self.max_rank:
                    J -= np.einsum("nm,mde->nde", w, low)
                # a Hessian; remove summation-order asymmetry
                jac[sl] = 0.5 * (J + J.transpose(0, 2, 1))
        return NoisedMoments(logp, sc, resp), jac

    def _single(self, x, shifted, corr, logdet, omab, with_jacobian):
        # one Gaussian: the Jacobian is the same matrix at every point
        U = self._U[0]
        z = x - shifted
        r = z / omab
        if self.max_rank:
            r = r + ((z @ U) * corr) @ U.T
        logp = -0.5 * (self.d * LOG_2PI + logdet + np.einsum("nd,nd->n", z, r))
        mo = NoisedMoments(logp, -r, np.ones((x.shape[0], 1)))
        if not with_jacobian:
            return mo, None
        J = -np.eye(self.d) / omab - (U * corr) @ U.T
        J = 0.5 * (J + J.T)
        return mo, np.broadcast_to(J, (x.shape[0], self.d, self.d))

    def posterior(self, ab: float, omab: float, x):
        """Mean and covariance of ``X_0`` given ``X_t = x``; batched."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        shifted, corr, logdet, var = self._noised(ab, omab)
        sab = math.sqrt(ab)
        # Sigma_i C_i^{-1} restricted to span(U_i) has eigenvalues lam / var
        gain = self._lam / var
        post_lam = self._lam * omab / var
        mean = np.empty((n, self.d))
        cov = np.empty((n, self.d, self.d))
        within = np.einsum("mdr,mr,mer->mde", self._U, post_lam, self._U)
        for sl in self._chunks(n):
            z, _, quad = self._residuals(x[sl], shifted, corr, omab)
            logc = self.log_weights[None] - 0.5 * (logdet[None] + quad)
            w = np.exp(logc - logsumexp(logc, axis=1)[:, None])
            cm = self.means[None] + sab * np.einsum(
                "mdr,mr,nmr->nmd", self._U, gain, np.einsum("nmd,mdr->nmr", z, self._U))
            xm = np.einsum("nm,nmd->nd", w, cm)
            dev = cm - xm[:, None, :]
            mean[sl] = xm
            cov[sl] = np.einsum("nm,nmd,nme->nde", w, dev, dev) + np.einsum("nm,mde->nde", w, within)
        return mean, cov


def embedding_frame(d: int, k: int, seed) -> np.ndarray:
    """Random ``d x k`` matrix with orthonormal columns, fixed by ``seed``."""
    if not 0 <= k <= d:
        raise ValueError("need 0 <= k <= d")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((d, max(k, 1))))
    q = q * np.sign(np.diag(r))[None, :]
    return q[:, :k]


def point_mass(d: int, at=None) -> MixtureTarget:
    mu = np.zeros(d) if at is None else np.asarray(at, dtype=float)
    return MixtureTarget([Component(1.0, mu, np.zeros((d, 0)))],
                         support_radius=float(np.linalg.norm(mu)),
                         info={"family": "point_mass", "k": 0})


def isotropic_gaussian(d: int, mean=None, sigma: float = 1.0) -> MixtureTarget:
    mu = np.zeros(d) if mean is None else np.asarray(mean, dtype=float)
    return MixtureTarget([Component(1.0, mu, sigma * np.eye(d))],
                         info={"family": "gaussian", "k": d, "sigma": sigma})


def low_rank_gaussian(d: int, k: int, sigma: float = 1.0, seed=0, mean=None) -> MixtureTarget:
    """``N(mean, sigma^2 F F^T)`` for a seeded orthonormal frame ``F`` of width ``k``."""
    frame = embedding_frame(d, k, seed)
    mu = np.zeros(d) if mean is None else np.asarray(mean, dtype=float)
    return MixtureTarget([Component(1.0, mu, sigma * frame)],
                         info={"family": "low_rank_gaussian", "k": k, "sigma": sigma,
                               "seed": seed, "frame": frame})


def gaussian_mixture(d: int, n_components: int, rank: int | None = None, seed=0,
                     spread: float = 2.0, scale: float = 0.5) -> MixtureTarget:
    """Random mixture for stress tests: means ~ spread * N(0, I/d), random factors."""
    rng = np.random.default_rng(seed)
    rank = d if rank is None else rank
    w = rng.dirichlet(np.full(n_components, 2.0))
    comps = []
    for i in range(n_components):
        mu = spread * rng.standard_normal(d) / math.sqrt(d)
        L = scale * rng.standard_normal((d, rank)) / math.sqrt(max(rank, 1))
        comps.append(Component(float(w[i]), mu, L))
    # renormalise after float conversion so the sum is 1 to rounding
    total = sum(c.weight for c in comps)
    comps = [Component(c.weight / total, c.mean, c.factor) for c in comps]
    return MixtureTarget(comps, info={"family": "gmm", "k": min(rank * n_components, d),
                                      "seed": seed})


def point_cloud(points, info=None) -> MixtureTarget:
    """Uniform mixture of point masses at the rows of ``points``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = pts.shape
    comps = [Component(1.0 / n, p, np.zeros((d, 0))) for p in pts]
    meta = {"family": "point_cloud"}
    meta.update(info or {})
    return MixtureTarget(comps, support_radius=float(np.linalg.norm(pts, axis=1).max()),
                         info=meta)


def cube_points(n: int, k: int, d: int | None = None, seed=0, frame_seed=None):
    """``n`` uniform points on ``[0, 1]^k``, optionally embedded in ``R^d``.

    Returns the cloud and the frame used (``None`` when not embedded).
    """
    rng = np.random.default_rng(seed)
    pts = rng.random((n, k))
    if d is None or d == k:
        return pts, None
    frame = embedding_frame(d, k, seed if frame_seed is None else frame_seed)
    return pts @ frame.T, frame


def torus_points(n: int, k: int, d: int | None = None, seed=0, radius: float = 1.0):
    """``n`` uniform points on the flat torus ``(S^1)^k`` of circle radius ``radius``.

    The torus lives in ``R^{2k}``; with ``d`` given it is placed in ``R^d`` by a
    seeded orthonormal frame. Unlike a cube it has no boundary, so covering
    numbers follow ``eps**-k`` already at moderate ``eps``.
    """
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2.0 * math.pi, (n, k))
    pts = radius * np.concatenate([np.cos(theta), np.sin(theta)], axis=1)
    if d is None or d == 2 * k:
        return pts, None
    frame = embedding_frame(d, 2 * k, [seed, 1])
    return pts @ frame.T, frame


def sample_data(target: MixtureTarget, n: int, seed) -> np.ndarray:
    """Draw ``n`` points from the target; deterministic in ``seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    idx = rng.choice(target.n_components, size=n, p=target.weights)
    out = target.means[idx].copy()
    R = target.max_rank
    if R:
        z = rng.standard_normal((n, R))
        out += np.einsum("ndr,nr->nd", target._U[idx], z * np.sqrt(target._lam[idx]))
    return out


# Module-level query API: ``t`` is a 1-based step index into ``schedule``.

def log_marginal(target: MixtureTarget, schedule, t: int, x):
    """``log p_{X_t}(x)``; scalar for a single point, else one value per row."""
    x = np.asarray(x, dtype=float)
    mo, _ = target.moments(schedule.ab(t), schedule.omab(t), x)
    return mo.log_density[0] if x.ndim == 1 else mo.log_density


def score(target: MixtureTarget, schedule, t: int, x):
    x = np.asarray(x, dtype=float)
    mo, _ = target.moments(schedule.ab(t), schedule.omab(t), x)
    return mo.score[0] if x.ndim == 1 else mo.score


def jacobian(target: MixtureTarget, schedule, t: int, x):
    x = np.asarray(x, dtype=float)
    _, J = target.moments(schedule.ab(t), schedule.omab(t), x, with_jacobian=True)
    return J[0] if x.ndim == 1 else J


def posterior_moments(target: MixtureTarget, schedule, t: int, x):
    """Posterior mean and covariance of ``X_0`` given ``X_t = x``."""
    x = np.asarray(x, dtype=float)
    mean, cov = target.posterior(schedule.ab(t), schedule.omab(t), x)
    if x.ndim == 1:
        return mean[0], cov[0]
    return mean, cov


def score_from_posterior_mean(schedule, t: int, x, x0_hat):
    """Tweedie form ``-(x - sqrt(ab) x0_hat) / (1 - ab)``."""
    return -(np.asarray(x) - math.sqrt(schedule.ab(t)) * np.asarray(x0_hat)) / schedule.omab(t)
