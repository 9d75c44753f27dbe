"""Deterministic probability flow sampling with exact density tracking.

Submodules: :mod:`schedule` (step sizes and DDIM coefficients), :mod:`targets`
(Gaussian-mixture targets with closed-form scores), :mod:`score_models`
(exact and perturbed score fields), :mod:`sampler`, :mod:`metrics` (TV and
rate fits), :mod:`geometry` (covering numbers), :mod:`validation` and
:mod:`harness` (sweeps, CSV reports, plots).
"""

from .geometry import covering_curve, dimension_estimate, greedy_net
from .metrics import rate_fit, theorem_bound, tv_monte_carlo, tv_quadrature_1d
from .sampler import forward_sample, run_reverse
from .schedule import Schedule, ScheduleParams, build_schedule, coefficient
from .score_models import ExactScore, PerturbationSpec, average_errors, perturb
from .targets import MixtureTarget

__version__ = "0.1.0"
