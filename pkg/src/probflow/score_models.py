"""Score fields: the exact oracle, analytic perturbations of it, and error functionals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sampler import forward_sample

__all__ = [
    "ScoreField",
    "ExactScore",
    "FunctionField",
    "PerturbationSpec",
    "PerturbedScore",
    "AverageErrors",
    "perturb",
    "pointwise_score_error",
    "pointwise_jacobi_error",
    "average_errors",
]

PERTURBATION_KINDS = ("none", "constant_bias", "tangential", "gain", "smooth_field")


class ScoreField:
    """Deterministic map ``(t, x) -> s_t(x)`` together with its Jacobian.

    Subclasses implement :meth:`evaluate`, which returns both at once on a
    batch ``x`` of shape ``(n, d)``. ``eval`` and ``jacobian`` accept a single
    point as well and drop the batch axis in that case.
    """

    d: int
    descriptor: dict

    def evaluate(self, t: int, x: np.ndarray, with_jacobian: bool = True):
        raise NotImplementedError

    def eval(self, t: int, x):
        x = np.asarray(x, dtype=float)
        s, _ = self.evaluate(t, np.atleast_2d(x), with_jacobian=False)
        return s[0] if x.ndim == 1 else s

    def jacobian(self, t: int, x):
        x = np.asarray(x, dtype=float)
        _, J = self.evaluate(t, np.atleast_2d(x), with_jacobian=True)
        return J[0] if x.ndim == 1 else J


class ExactScore(ScoreField):
    """``grad log p_{X_t}`` of a mixture target under a schedule."""

    def __init__(self, target, schedule):
        self.target = target
        self.schedule = schedule
        self.d = target.d
        self.descriptor = {"kind": "exact"}

    def evaluate(self, t, x, with_jacobian=True):
        sch = self.schedule
        mo, J = self.target.moments(sch.ab(t), sch.omab(t), x, with_jacobian=with_jacobian)
        return mo.score, J


class FunctionField(ScoreField):
    """Wrap plain callables ``f(t, x) -> (n, d)`` and ``jac(t, x) -> (n, d, d)``."""

    def __init__(self, d, fn, jac, descriptor=None):
        self.d = d
        self._fn = fn
        self._jac = jac
        self.descriptor = descriptor or {"kind": "function"}

    def evaluate(self, t, x, with_jacobian=True):
        s = self._fn(t, x)
        return s, (self._jac(t, x) if with_jacobian else None)

    @classmethod
    def zero(cls, d):
        return cls(d, lambda t, x: np.zeros_like(x),
                   lambda t, x: np.zeros((x.shape[0], d, d)), {"kind": "zero"})

    @classmethod
    def linear(cls, A):
        """``s(x) = A x`` for every t."""
        A = np.asarray(A, dtype=float)
        d = A.shape[0]
        return cls(d, lambda t, x: x @ A.T,
                   lambda t, x: np.broadcast_to(A, (x.shape[0], d, d)).copy(),
                   {"kind": "linear"})


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str = "none"
    delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if not self.delta >= 0:
            raise ValueError("delta must be nonnegative")


def _unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


class PerturbedScore(ScoreField):
    """``s_t(x) = s*_t(x) + delta * u_t(x)`` with an analytic Jacobian.

    kinds
      constant_bias  u = fixed unit vector v
      tangential     u = unit part of v orthogonal to s*_t(x)
      gain           u = s*_t(x), i.e. s = (1 + delta) s*
      smooth_field   u = A sin(W x + phase), a fixed low-frequency field with
                     ``||u|| <= 1`` everywhere
    """

    n_features = 8
    frequency = 0.5

    def __init__(self, base: ScoreField, spec: PerturbationSpec):
        self.base = base
        self.spec = spec
        self.d = base.d
        self.descriptor = {"kind": "perturbed", "perturbation": spec.kind,
                           "delta": spec.delta, "seed": spec.seed,
                           "base": base.descriptor}
        rng = np.random.default_rng(spec.seed)
        self._v = _unit(rng, self.d)
        if spec.kind == "smooth_field":
            M = self.n_features
            self._W = self.frequency * rng.standard_normal((M, self.d))
            self._phase = rng.uniform(0, 2 * math.pi, M)
            A = rng.standard_normal((self.d, M))
            self._A = A / (np.linalg.norm(A, 2) * math.sqrt(M))

    def direction(self, t, x, s=None, J=None, with_jacobian=True):
        """The unperturbed-direction field ``u`` and its Jacobian at a batch."""
        kind = self.spec.kind
        n, d = x.shape
        if kind == "constant_bias":
            return np.broadcast_to(self._v, (n, d)), (np.zeros((n, d, d)) if with_jacobian else None)
        if kind == "gain":
            return s, J
        if kind == "smooth_field":
            arg = x @ self._W.T + self._phase
            u = np.sin(arg) @ self._A.T
            Du = None
            if with_jacobian:
                Du = np.einsum("dm,nm,me->nde", self._A, np.cos(arg), self._W)
            return u, Du
        if kind == "tangential":
            return _tangential(self._v, s, J, with_jacobian)
        return np.zeros((n, d)), (np.zeros((n, d, d)) if with_jacobian else None)

    def evaluate(self, t, x, with_jacobian=True):
        s, J = self.base.evaluate(t, x, with_jacobian=with_jacobian)
        delta = self.spec.delta
        if delta == 0.0 or self.spec.kind == "none":
            return s, J
        u, Du = self.direction(t, x, s, J, with_jacobian)
        s_new = s + delta * u
        J_new = J + delta * Du if with_jacobian else None
        return s_new, J_new


def _tangential(v, s, J, with_jacobian):
    """Unit vector along ``v - (v.s) s / |s|^2`` and its derivative in x."""
    b = np.einsum("nd,nd->n", s, s)
    a = s @ v
    safe = b > 0
    binv = np.where(safe, 1.0 / np.where(safe, b, 1.0), 0.0)
    w = v[None, :] - (a * binv)[:, None] * s
    wn = np.linalg.norm(w, axis=1)
    u = w / wn[:, None]
    if not with_jacobian:
        return u, None
    Jtv = np.matmul(v, J)  # v^T J, shape (n, d)
    Jts = np.matmul(s[:, None, :], J)[:, 0]  # s^T J
    r = a * binv
    Jtu = np.matmul(u[:, None, :], J)[:, 0]
    # Dw = -r J - s (binv Jtv - 2 r binv Jts)^T; projecting out u adds r u Jtu^T
    # because u is orthogonal to s
    left = np.stack([s, u], axis=2)
    right = np.stack([-(binv[:, None] * Jtv - 2.0 * (r * binv)[:, None] * Jts),
                      r[:, None] * Jtu], axis=1)
    Du = np.matmul(left, right)
    Du -= r[:, None, None] * J
    Du /= wn[:, None, None]
    return u, Du


def perturb(exact: ScoreField, spec: PerturbationSpec) -> ScoreField:
    if spec.kind == "none":
        return exact
    return PerturbedScore(exact, spec)


def _score_err_sq(s_exact, s_approx):
    diff = s_approx - s_exact
    return np.einsum("nd,nd->n", diff, diff) + np.einsum("nd,nd->n", diff, s_exact) ** 2


def _jacobi_err_sq(J_exact, J_approx):
    diff = J_approx - J_exact
    return np.trace(diff, axis1=1, axis2=2) ** 2 + np.einsum("nij,nij->n", diff, diff)


def pointwise_score_error(exact: ScoreField, approx: ScoreField, t: int, x):
    """``sqrt(||s - s*||^2 + ((s - s*)^T s*)^2)`` at ``x`` (single point or batch)."""
    x = np.asarray(x, dtype=float)
    xs = np.atleast_2d(x)
    e = np.sqrt(_score_err_sq(exact.eval(t, xs), approx.eval(t, xs)))
    return e[0] if x.ndim == 1 else e


def pointwise_jacobi_error(exact: ScoreField, approx: ScoreField, t: int, x):
    """``sqrt(Tr(J - J*)^2 + ||J - J*||_F^2)``; the first term is the squared trace."""
    x = np.asarray(x, dtype=float)
    xs = np.atleast_2d(x)
    e = np.sqrt(_jacobi_err_sq(exact.jacobian(t, xs), approx.jacobian(t, xs)))
    return e[0] if x.ndim == 1 else e


@dataclass(frozen=True)
class AverageErrors:
    eps_score: float
    eps_jacobi: float
    stderr_score: float
    stderr_jacobi: float
    n_per_step: int

    def __iter__(self):
        # unpack as (eps_score, eps_jacobi)
        yield self.eps_score
        yield self.eps_jacobi


def _root_with_stderr(mean_sq, var_of_mean):
    eps = math.sqrt(max(mean_sq, 0.0))
    se_sq = math.sqrt(max(var_of_mean, 0.0))
    # delta method for the square root; exact zero stays zero
    se = se_sq / (2 * eps) if eps > 0 else se_sq ** 0.5
    return eps, se


def average_errors(exact: ScoreField, approx: ScoreField, target, schedule,
                   n: int, seed: int) -> AverageErrors:
    """Monte-Carlo estimate of the time-averaged score and Jacobian errors.

    ``n`` forward samples are drawn at every step ``t = 1..T`` from the true
    forward marginal, with a per-step substream derived from ``seed``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    T = schedule.T
    ms = np.empty(T)
    mj = np.empty(T)
    vs = np.empty(T)
    vj = np.empty(T)
    for t in range(1, T + 1):
        x = forward_sample(target, schedule, t, n, seed=[seed, t])
        s0, J0 = exact.evaluate(t, x)
        s1, J1 = approx.evaluate(t, x)
        es = _score_err_sq(s0, s1)
        ej = _jacobi_err_sq(J0, J1)
        ms[t - 1], mj[t - 1] = es.mean(), ej.mean()
        vs[t - 1] = es.var(ddof=1) / n if n > 1 else 0.0
        vj[t - 1] = ej.var(ddof=1) / n if n > 1 else 0.0
    eps_s, se_s = _root_with_stderr(ms.mean(), vs.sum() / T**2)
    eps_j, se_j = _root_with_stderr(mj.mean(), vj.sum() / T**2)
    return AverageErrors(eps_s, eps_j, se_s, se_j, n)
