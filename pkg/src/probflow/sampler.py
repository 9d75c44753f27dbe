"""Forward-process simulation and the deterministic probability flow sampler.

The reverse update is ``y <- (y + eta_t s_t(y)) / sqrt(alpha_t)`` for
``t = T, ..., 2``. Every point carries the log-density of its own law,
updated through the exact log-determinant of the step Jacobian, so the
final batch knows ``log p_{Y_1}`` at each of its points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .targets import LOG_2PI, sample_data

__all__ = [
    "TrajectoryBatch",
    "ReverseDiagnostics",
    "forward_sample",
    "init_reverse",
    "reverse_step",
    "run_reverse",
]

# |det| below this counts as singular
SINGULAR_LOGDET = math.log(1e-300)


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    t: int
    points: np.ndarray  # (n, d)
    log_density: np.ndarray  # (n,)
    logdet_sum: np.ndarray  # running sum of log|det d phi_s / dx| over s > t
    flagged: np.ndarray  # (n,) bool, near-singular step seen

    def __post_init__(self):
        if not (len(self.points) == len(self.log_density) == len(self.flagged)):
            raise ValueError("batch arrays must share their leading length")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass
class ReverseDiagnostics:
    t: list = field(default_factory=list)
    mean_abs_logdet: list = field(default_factory=list)
    n_flagged: list = field(default_factory=list)
    trajectory: list | None = None

    @property
    def total_flagged(self) -> int:
        return int(self.n_flagged[-1]) if self.n_flagged else 0


def forward_sample(target, schedule, t: int, n: int, seed) -> np.ndarray:
    """Draw ``n`` samples of ``X_t = sqrt(ab_t) X_0 + sqrt(1 - ab_t) W``."""
    if not 1 <= t <= schedule.T:
        raise IndexError(f"t must lie in [1, {schedule.T}]")
    rng = np.random.default_rng(seed)
    data_seed, noise_seed = rng.integers(0, 2**63 - 1, size=2)
    x0 = sample_data(target, n, int(data_seed))
    w = np.random.default_rng(int(noise_seed)).standard_normal(x0.shape)
    return math.sqrt(schedule.ab(t)) * x0 + math.sqrt(schedule.omab(t)) * w


def standard_normal_logpdf(y: np.ndarray) -> np.ndarray:
    d = y.shape[-1]
    return -0.5 * d * LOG_2PI - 0.5 * np.einsum("...d,...d->...", y, y)


def init_reverse(schedule, d: int, n: int, seed) -> TrajectoryBatch:
    """Batch of ``n`` standard normal points at ``t = T``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    y = np.random.default_rng(seed).standard_normal((n, d))
    return TrajectoryBatch(schedule.T, y, standard_normal_logpdf(y), np.zeros(n),
                           np.zeros(n, dtype=bool))


def reverse_step(batch: TrajectoryBatch, field, schedule, choice: str = "star") -> TrajectoryBatch:
    """Map a batch at step ``t`` to ``t - 1`` and update its log-densities."""
    t = batch.t
    if t < 2:
        raise ValueError("reverse_step needs batch.t >= 2")
    eta = schedule.eta(t, choice)
    alpha = schedule.a(t)
    y = batch.points
    d = y.shape[1]
    s, J = field.evaluate(t, y, with_jacobian=True)
    if J.strides[0] == 0:
        # broadcast Jacobian shared by all points: one factorisation
        sign, logabs = np.linalg.slogdet(np.eye(d) + eta * J[0])
        sign = np.full(len(y), sign)
        logabs = np.full(len(y), logabs)
    else:
        step_jac = eta * J
        step_jac[:, np.arange(d), np.arange(d)] += 1.0
        sign, logabs = np.linalg.slogdet(step_jac)
    singular = (sign == 0) | (logabs < SINGULAR_LOGDET)
    # keep flagged points finite so later steps stay well defined
    logabs = np.where(singular, 0.0, logabs)
    y_new = (y + eta * s) / math.sqrt(alpha)
    log_density = batch.log_density - logabs + 0.5 * d * math.log(alpha)
    return TrajectoryBatch(t - 1, y_new, log_density, batch.logdet_sum + logabs,
                           batch.flagged | singular)


def run_reverse(schedule, d: int, field, n: int, seed, choice: str = "star",
                dump_trajectory: bool = False, init: TrajectoryBatch | None = None):
    """Run the sampler from ``t = T`` down to ``t = 1``.

    Returns the final batch and per-step diagnostics. ``init`` replaces the
    standard normal start (the batch must be at ``t = T``).
    """
    if field.d != d:
        raise ValueError(f"field dimension {field.d} != d = {d}")
    batch = init_reverse(schedule, d, n, seed) if init is None else init
    if batch.t != schedule.T:
        raise ValueError("initial batch must sit at t = T")
    diag = ReverseDiagnostics(trajectory=[batch.points] if dump_trajectory else None)
    while batch.t > 1:
        prev = batch.logdet_sum
        batch = reverse_step(batch, field, schedule, choice)
        diag.t.append(batch.t + 1)
        diag.mean_abs_logdet.append(float(np.mean(np.abs(batch.logdet_sum - prev))))
        diag.n_flagged.append(int(batch.flagged.sum()))
        if dump_trajectory:
            diag.trajectory.append(batch.points)
    return batch, diag


def with_log_density(batch: TrajectoryBatch, log_density) -> TrajectoryBatch:
    """Copy of ``batch`` carrying different log-densities (synthetic batches)."""
    return replace(batch, log_density=np.asarray(log_density, dtype=float))
