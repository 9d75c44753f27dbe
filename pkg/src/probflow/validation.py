"""Executable checks of the log-det inequality, the Jacobian identity and the
posterior-covariance diagnostic, plus the finite-difference oracle they share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import targets as tg
from .sampler import forward_sample
from .schedule import CheckResult, ScheduleParams, build_schedule, validate_schedule

__all__ = [
    "PreconditionViolation",
    "CheckResult",
    "finite_diff_jacobian",
    "check_logdet",
    "identity_factor",
    "check_jacobian_identity",
    "posterior_trace_diagnostic",
    "SuiteRow",
    "run_suite",
]


class PreconditionViolation(ValueError):
    pass


def finite_diff_jacobian(field_eval, t, x, h=None) -> np.ndarray:
    """Central-difference Jacobian of ``x -> field_eval(t, x)`` at one point.

    ``field_eval`` must accept a batch of shape ``(m, d)``. The default step
    is ``1e-5 * (1 + ||x||_inf)``.
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    if h is None:
        h = 1e-5 * (1.0 + np.abs(x).max())
    if not h > 0:
        raise ValueError("h must be positive")
    E = h * np.eye(d)
    vals = np.asarray(field_eval(t, np.concatenate([x + E, x - E])))
    # column j is the derivative along coordinate j
    return ((vals[:d] - vals[d:]) / (2 * h)).T


def check_logdet(A, tol: float = 1e-12) -> CheckResult:
    """``log det(I + A) >= Tr(A) - 2 ||A||_F^2`` for ``||A|| <= 1/4``."""
    A = np.asarray(A, dtype=float)
    norm = np.linalg.norm(A, 2) if A.size else 0.0
    if norm > 0.25 * (1 + 1e-12):
        raise PreconditionViolation(f"spectral norm {norm:.6g} exceeds 1/4")
    sign, lhs = np.linalg.slogdet(np.eye(A.shape[0]) + A)
    rhs = np.trace(A) - 2.0 * np.sum(A * A)
    slack = float(lhs - rhs)
    return CheckResult("logdet_lower_bound", bool(sign > 0 and slack >= -tol), slack,
                       {"norm": float(norm), "lhs": float(lhs), "rhs": float(rhs)})


def identity_factor(schedule, t: int):
    """``(sqrt(rho), sqrt(rho) - 1)`` for ``rho = (1 - ab_t) / (a_t - ab_t)``.

    ``sqrt(rho) - 1`` is evaluated as ``(rho - 1) / (sqrt(rho) + 1)`` with
    ``rho - 1 = beta_t / (a_t - ab_t)``, which has no cancellation.
    """
    omab = schedule.omab(t)
    beta = float(schedule.beta[t - 1])
    gap = omab - beta
    root = math.sqrt(omab / gap)
    return root, (beta / gap) / (root + 1.0)


def check_jacobian_identity(target, schedule, t: int, x, rtol: float = 1e-8,
                            jacobian: str = "analytic", field=None) -> CheckResult:
    """Compare ``sqrt(rho) d(phi*)/dx - I`` with ``(sqrt(rho) - 1) ab/(1 - ab) Cov0(x)``.

    ``phi*(x) = x + eta*_t s*_t(x)``. With ``jacobian="fd"`` the map's
    Jacobian comes from finite differences of ``phi*`` instead of the closed
    form. Residuals are measured entrywise against the larger side's max
    entry, with a rounding floor of ``1e-14`` times the size of ``sqrt(rho)
    d(phi*)/dx`` (``1e-9`` in the finite-difference mode); the trace is
    compared the same way and must be >= 0.
    """
    if t < 2:
        raise ValueError("identity is stated for t >= 2")
    x = np.asarray(x, dtype=float)
    d = x.size
    ab, omab = schedule.ab(t), schedule.omab(t)
    eta = schedule.eta(t, "star")
    root, fac = identity_factor(schedule, t)
    if jacobian == "analytic":
        _, J = target.moments(ab, omab, x, with_jacobian=True)
        lhs = fac * np.eye(d) + root * eta * J[0]
    elif jacobian == "fd":
        if field is None:
            def phi(tt, xs):
                mo, _ = target.moments(ab, omab, xs)
                return xs + eta * mo.score
        else:
            def phi(tt, xs):
                return xs + eta * field.eval(tt, xs)
        Dphi = finite_diff_jacobian(phi, t, x)
        lhs = root * Dphi - np.eye(d)
    else:
        raise ValueError(f"unknown jacobian mode {jacobian!r}")
    _, cov = target.posterior(ab, omab, x)
    rhs = fac * ab / omab * cov[0]

    floor = 1e-14 * root * (1.0 + abs(eta) * (1.0 / omab + np.abs(rhs).max()))
    if jacobian == "fd":
        # central differences of an O(1) map carry ~1e-9 absolute error, which
        # survives the cancellation in sqrt(rho) D(phi) - I
        floor += 1e-9 * root * np.abs(Dphi).max()
    scale = max(np.abs(lhs).max(), np.abs(rhs).max())
    resid = float(np.abs(lhs - rhs).max())
    tr_l, tr_r = float(np.trace(lhs)), float(np.trace(rhs))
    tr_resid = abs(tr_l - tr_r)
    rel = resid / scale if scale > 0 else 0.0
    tr_rel = tr_resid / max(abs(tr_l), abs(tr_r)) if max(abs(tr_l), abs(tr_r)) > 0 else 0.0
    allow = rtol * scale + floor
    tr_allow = rtol * max(abs(tr_l), abs(tr_r)) + d * floor
    ok_entry = resid <= allow
    ok_trace = tr_resid <= tr_allow
    ok_sign = tr_r >= 0.0
    # fraction of the allowed residual left unused; negative means failure
    slack = float(min(1 - resid / allow, 1 - tr_resid / tr_allow))
    return CheckResult("jacobian_identity", bool(ok_entry and ok_trace and ok_sign), slack,
                       {"t": t, "x": x.tolist(), "rel_residual": rel, "trace_rel_residual": tr_rel,
                        "trace": tr_r, "mode": jacobian})


@dataclass(frozen=True)
class TraceDiagnostic:
    value: float
    stderr: float
    reference: float  # k log^2 T / T

    @property
    def ratio(self) -> float:
        return self.value / self.reference if self.reference > 0 else math.nan


def posterior_trace_diagnostic(target, schedule, n: int, seed, k=None) -> TraceDiagnostic:
    """Monte-Carlo estimate of ``sum_{t>=2} E || sqrt(rho) d(phi*)/dx - I ||_F^2``.

    Uses the closed form ``(sqrt(rho) - 1) ab / (1 - ab) Cov0(X_t)`` for the
    matrix inside the norm, with ``n`` forward samples per step.
    """
    T = schedule.T
    total = 0.0
    var = 0.0
    for t in range(2, T + 1):
        x = forward_sample(target, schedule, t, n, seed=[seed, t])
        _, fac = identity_factor(schedule, t)
        _, cov = target.posterior(schedule.ab(t), schedule.omab(t), x)
        vals = (fac * schedule.ab(t) / schedule.omab(t)) ** 2 * np.einsum("nij,nij->n", cov, cov)
        total += vals.mean()
        if n > 1:
            var += vals.var(ddof=1) / n
    if k is None:
        k = target.info.get("k", target.d)
    lt = math.log(T)
    return TraceDiagnostic(float(total), math.sqrt(var), k * lt * lt / T)


@dataclass(frozen=True)
class SuiteRow:
    check: str
    trials: int
    failures: int
    max_slack: float  # tightest slack seen over the trials
    first_failure: dict | None = None


def _random_small_matrix(rng, d):
    A = rng.standard_normal((d, d))
    if rng.random() < 0.3:
        A = A + A.T
    # norms spread over (0, 1/4], including the boundary
    target = 0.25 * rng.random() ** 0.25
    return A * (target / np.linalg.norm(A, 2))


def _identity_targets(seed):
    rng = np.random.default_rng(seed)
    return [
        tg.point_mass(3, at=rng.standard_normal(3)),
        tg.isotropic_gaussian(4, mean=rng.standard_normal(4), sigma=0.7),
        tg.low_rank_gaussian(6, 2, sigma=1.3, seed=seed),
        tg.gaussian_mixture(4, 3, rank=2, seed=seed),
        tg.gaussian_mixture(5, 4, seed=seed + 1),
        tg.point_cloud(rng.random((6, 3))),
    ]


def run_suite(logdet_trials: int = 10_000, identity_trials: int = 1_000, seed: int = 0,
              schedule_T=(50, 100, 200, 400, 800), identity_rtol: float = 1e-6):
    """Run every randomized check; returns one :class:`SuiteRow` per check."""
    rng = np.random.default_rng(seed)
    rows = []

    fails, worst, first = 0, math.inf, None
    for _ in range(logdet_trials):
        d = int(rng.integers(1, 9))
        res = check_logdet(_random_small_matrix(rng, d))
        worst = min(worst, res.measured_slack)
        if not res.passed:
            fails += 1
            first = first or res.context
    rows.append(SuiteRow("logdet", logdet_trials, fails, worst, first))

    fails, worst, first = 0, math.inf, None
    for T in schedule_T:
        for res in validate_schedule(build_schedule(ScheduleParams(T))):
            worst = min(worst, res.measured_slack) if res.name != "terminal_alpha_bar" else worst
            if not res.passed:
                fails += 1
                first = first or {"T": T, "check": res.name, **res.context}
    rows.append(SuiteRow("schedule", len(schedule_T), fails, worst, first))

    pool = _identity_targets(seed)
    schedules = [build_schedule(ScheduleParams(T)) for T in (50, 200)]
    fails, worst, first = 0, math.inf, None
    for i in range(identity_trials):
        target = pool[i % len(pool)]
        sch = schedules[int(rng.integers(len(schedules)))]
        t = int(rng.integers(2, sch.T + 1))
        x = forward_sample(target, sch, t, 1, seed=[seed, i])[0]
        res = check_jacobian_identity(target, sch, t, x, rtol=identity_rtol)
        worst = min(worst, res.measured_slack)
        if not res.passed:
            fails += 1
            first = first or {"target": target.info.get("family"), **res.context}
    rows.append(SuiteRow("jacobian_identity", identity_trials, fails, worst, first))
    return rows
