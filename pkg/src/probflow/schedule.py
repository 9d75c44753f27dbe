"""Discrete noise schedule and DDIM reverse coefficients.

The forward chain uses step sizes

    beta_1 = T**(-c0),
    beta_{t+1} = (c1 log T / T) * min(beta_1 * (1 + c1 log T / T)**t, 1),

with alpha_t = 1 - beta_t and alpha_bar_t the running product. All
coefficients are precomputed once; a :class:`Schedule` is immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InvalidScheduleParams",
    "ScheduleParams",
    "Schedule",
    "CheckResult",
    "build_schedule",
    "coefficient",
    "eta_star_from",
    "validate_schedule",
]

# relative tolerance used for algebraic identity checks
IDENTITY_RTOL = 1e-12


class InvalidScheduleParams(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleParams:
    T: int
    c0: float = 2.0
    c1: float = 4.0

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 2:
            raise InvalidScheduleParams(f"T must be an integer >= 2, got {self.T!r}")
        if not (self.c0 > 0 and self.c1 > 0):
            raise InvalidScheduleParams("c0 and c1 must be positive")
        if self.rate >= 1.0:
            raise InvalidScheduleParams(
                f"c1*log(T)/T = {self.rate:.4g} >= 1; beta_t would leave (0, 1)"
            )

    @property
    def rate(self) -> float:
        """The saturated step size ``c1 log T / T``."""
        return self.c1 * math.log(self.T) / self.T


@dataclass(frozen=True)
class CheckResult:
    """Outcome of a single named check; ``measured_slack`` is kept on pass too."""

    name: str
    passed: bool
    measured_slack: float
    context: dict = field(default_factory=dict)


def eta_star_from(alpha, alpha_bar, one_minus_alpha_bar=None, beta=None):
    """DDIM coefficient ``1 - ab - sqrt((1 - ab)(a - ab))`` (vectorised).

    Evaluated as ``beta / (1 + sqrt((a - ab) / (1 - ab)))``, which is the same
    quantity without the cancellation between ``1 - ab`` and the square root.
    Pass ``beta`` and ``one_minus_alpha_bar`` when known: recomputing them
    from ``alpha`` loses digits when the step is tiny.
    """
    alpha = np.asarray(alpha, dtype=float)
    alpha_bar = np.asarray(alpha_bar, dtype=float)
    if one_minus_alpha_bar is None:
        one_minus_alpha_bar = 1.0 - alpha_bar
    if beta is None:
        beta = 1.0 - alpha
    q = (one_minus_alpha_bar - beta) / one_minus_alpha_bar
    return beta / (1.0 + np.sqrt(np.clip(q, 0.0, None)))


@dataclass(frozen=True, eq=False)
class Schedule:
    """Per-step coefficients, stored 0-based: ``beta[t - 1]`` is beta_t.

    ``eta_star`` and ``eta_simple`` have length ``T - 1`` and start at t = 2;
    use :meth:`eta` or :func:`coefficient` for 1-based access.
    """

    params: ScheduleParams
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    eta_star: np.ndarray
    eta_simple: np.ndarray
    one_minus_alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return self.params.T

    def a(self, t: int) -> float:
        return float(self.alpha[t - 1])

    def ab(self, t: int) -> float:
        return float(self.alpha_bar[t - 1])

    def omab(self, t: int) -> float:
        """``1 - alpha_bar_t`` to full relative precision."""
        return float(self.one_minus_alpha_bar[t - 1])

    def eta(self, t: int, choice: str = "star") -> float:
        return coefficient(self, t, choice)

    def rows(self):
        """Yield ``(t, beta, alpha, alpha_bar, eta_star, eta_simple)``; eta is NaN at t=1."""
        for i in range(self.T):
            es = self.eta_star[i - 1] if i else float("nan")
            en = self.eta_simple[i - 1] if i else float("nan")
            yield (i + 1, self.beta[i], self.alpha[i], self.alpha_bar[i], es, en)


def build_schedule(params: ScheduleParams | int, c0: float = 2.0, c1: float = 4.0) -> Schedule:
    """Build the schedule for ``params`` (or for ``T`` with the given constants)."""
    if not isinstance(params, ScheduleParams):
        params = ScheduleParams(int(params), c0, c1)
    T, rate = params.T, params.rate
    beta = np.empty(T)
    beta[0] = float(T) ** (-params.c0)
    # beta_1 * (1 + rate)**t, computed in log space to avoid overflow at large T
    t = np.arange(1, T)
    growth = np.exp(np.log(beta[0]) + t * math.log1p(rate))
    beta[1:] = rate * np.minimum(growth, 1.0)
    alpha = 1.0 - beta
    log_alpha_bar = np.cumsum(np.log1p(-beta))
    alpha_bar = np.exp(log_alpha_bar)
    omab = -np.expm1(log_alpha_bar)
    eta_star = eta_star_from(alpha[1:], alpha_bar[1:], omab[1:], beta[1:])
    eta_simple = beta[1:] / 2.0
    for arr in (beta, alpha, alpha_bar, eta_star, eta_simple, omab):
        arr.setflags(write=False)
    return Schedule(params, beta, alpha, alpha_bar, eta_star, eta_simple, omab)


def coefficient(schedule: Schedule, t: int, choice: str = "star") -> float:
    if not 2 <= t <= schedule.T:
        raise IndexError(f"coefficient defined for 2 <= t <= {schedule.T}, got t={t}")
    if choice == "star":
        return float(schedule.eta_star[t - 2])
    if choice == "simple":
        return float(schedule.eta_simple[t - 2])
    raise ValueError(f"unknown coefficient choice {choice!r}")


def validate_schedule(schedule: Schedule) -> list[CheckResult]:
    """Run the admissibility checks on every step; failures are reported, not raised.

    Slack is the minimum over t of (right side - left side), so a negative
    slack means the check failed somewhere.
    """
    p = schedule.params
    T = p.T
    a, ab, rate = schedule.alpha, schedule.alpha_bar, p.rate
    omab, beta = schedule.one_minus_alpha_bar, schedule.beta
    report = []

    lower = 1.0 - rate
    # saturated steps sit exactly on the bound; allow one ulp of rounding
    slack_a = min(float(np.min(a - lower)) + 1e-15, lower - 0.5)
    report.append(CheckResult("alpha_lower_bound", slack_a >= 0, slack_a,
                              {"T": T, "bound": lower}))

    a2, b2, om2 = a[1:], beta[1:], omab[1:]
    # alpha_t - alpha_bar_t written as (1 - alpha_bar_t) - beta_t
    gap_a = om2 - b2
    r1 = b2 / om2
    r2 = b2 / gap_a
    cap = 8 * rate
    slack_b = float(min(np.min(r2 - r1), np.min(cap - r2)))
    report.append(CheckResult("step_ratio_bound", slack_b >= 0, slack_b,
                              {"T": T, "max_ratio": float(np.max(r2)), "cap": cap}))

    gap = schedule.eta_star - schedule.eta_simple
    hi = b2 ** 2 / om2
    # rounding on tiny differences of O(1) numbers
    tol = 1e-15
    slack_c = float(min(np.min(gap) + tol, np.min(hi - gap) + tol))
    report.append(CheckResult("eta_sandwich", slack_c >= 0, slack_c,
                              {"T": T, "max_gap": float(np.max(gap))}))

    ident = np.abs(gap_a - a2 * omab[:-1]) / np.abs(gap_a)
    worst = float(np.max(ident))
    report.append(CheckResult("alpha_identity", worst <= IDENTITY_RTOL,
                              IDENTITY_RTOL - worst, {"max_rel_err": worst}))

    abT = float(ab[-1])
    report.append(CheckResult("terminal_alpha_bar", True, abT,
                              {"alpha_bar_T": abT, "exponent": math.log(1 / abT) / math.log(T)}))
    return report
