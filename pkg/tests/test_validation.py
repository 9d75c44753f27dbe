import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from probflow import targets as tg
from probflow.sampler import forward_sample
from probflow.schedule import build_schedule
from probflow.score_models import ExactScore
from probflow.validation import (
    PreconditionViolation,
    check_jacobian_identity,
    check_logdet,
    finite_diff_jacobian,
    identity_factor,
    posterior_trace_diagnostic,
    run_suite,
)

SCH = build_schedule(200)


def test_logdet_zero_matrix():
    res = check_logdet(np.zeros((3, 3)))
    assert res.passed and res.measured_slack == 0.0


def test_logdet_scaled_identity():
    res = check_logdet(0.1 * np.eye(2))
    assert res.context["lhs"] == pytest.approx(2 * math.log(1.1), abs=1e-15)
    assert res.context["lhs"] == pytest.approx(0.190620, abs=1e-6)
    assert res.context["rhs"] == pytest.approx(0.16, abs=1e-15)
    assert res.passed


def test_logdet_precondition():
    with pytest.raises(PreconditionViolation):
        check_logdet(0.3 * np.eye(2))


@settings(max_examples=200, deadline=None)
@given(d=st.integers(1, 8), seed=st.integers(0, 10**6), r=st.floats(0.0, 0.25))
def test_logdet_holds_on_random_matrices(d, seed, r):
    A = np.random.default_rng(seed).standard_normal((d, d))
    n = np.linalg.norm(A, 2)
    A = A * (r / n) if n > 0 else A
    assert check_logdet(A).passed


def test_identity_factor_matches_direct_formula():
    for t in (2, 50, 200):
        rho = SCH.omab(t) / (SCH.a(t) - SCH.ab(t))
        root, fac = identity_factor(SCH, t)
        assert root == pytest.approx(math.sqrt(rho), rel=1e-13)
        assert fac == pytest.approx(math.sqrt(rho) - 1, rel=1e-9)
        assert fac > 0


def test_identity_point_mass_is_exact_zero():
    tgt = tg.point_mass(3)
    for t in (2, 100, 200):
        res = check_jacobian_identity(tgt, SCH, t, np.array([0.4, -1.0, 2.0]))
        assert res.passed
        assert res.context["trace"] == 0.0


def test_identity_gaussian_tight():
    tgt = tg.isotropic_gaussian(4, mean=np.ones(4), sigma=0.6)
    rng = np.random.default_rng(0)
    for t in (2, 20, 120, 200):
        x = forward_sample(tgt, SCH, t, 1, seed=int(rng.integers(1000)))[0]
        res = check_jacobian_identity(tgt, SCH, t, x, rtol=1e-10)
        assert res.passed, res.context
        assert res.context["trace"] >= 0


def test_identity_gmm_finite_difference_variant():
    tgt = tg.gaussian_mixture(4, 3, seed=5)
    for t in (5, 60, 200):
        x = forward_sample(tgt, SCH, t, 1, seed=t)[0]
        res = check_jacobian_identity(tgt, SCH, t, x, rtol=1e-6, jacobian="fd")
        assert res.passed, res.context
        via_field = check_jacobian_identity(tgt, SCH, t, x, rtol=1e-6, jacobian="fd",
                                            field=ExactScore(tgt, SCH))
        assert via_field.passed


def test_identity_detects_wrong_jacobian():
    tgt = tg.gaussian_mixture(3, 2, seed=1)

    class Wrong:
        def eval(self, t, xs):
            mo, _ = tgt.moments(SCH.ab(t), SCH.omab(t), xs)
            return 1.05 * mo.score

    x = forward_sample(tgt, SCH, 50, 1, seed=0)[0]
    assert not check_jacobian_identity(tgt, SCH, 50, x, rtol=1e-6, jacobian="fd",
                                       field=Wrong()).passed


def test_identity_bad_arguments():
    with pytest.raises(ValueError):
        check_jacobian_identity(tg.point_mass(2), SCH, 1, np.zeros(2))
    with pytest.raises(ValueError):
        check_jacobian_identity(tg.point_mass(2), SCH, 5, np.zeros(2), jacobian="magic")


def test_finite_diff_linear_is_exact():
    A = np.random.default_rng(3).standard_normal((4, 4))
    fd = finite_diff_jacobian(lambda t, xs: xs @ A.T, 0, np.ones(4))
    np.testing.assert_allclose(fd, A, atol=1e-9)


def test_finite_diff_quadratic_error_order():
    # f(x) = x^3 has central-difference error h^2 exactly: f'(x) + h^2
    f = lambda t, xs: xs**3  # noqa: E731
    x = np.array([0.7])
    e1 = finite_diff_jacobian(f, 0, x, h=1e-2)[0, 0] - 3 * 0.49
    e2 = finite_diff_jacobian(f, 0, x, h=5e-3)[0, 0] - 3 * 0.49
    assert e1 == pytest.approx(1e-4, rel=1e-6)
    assert e1 / e2 == pytest.approx(4.0, rel=1e-4)
    with pytest.raises(ValueError):
        finite_diff_jacobian(f, 0, x, h=0.0)


def test_trace_diagnostic_point_mass_zero():
    diag = posterior_trace_diagnostic(tg.point_mass(3), build_schedule(50), 16, 0, k=0)
    assert diag.value == 0.0 and diag.stderr == 0.0


def test_trace_diagnostic_decreases_with_T():
    tgt = tg.low_rank_gaussian(8, 2, seed=0)
    vals = [posterior_trace_diagnostic(tgt, build_schedule(T), 8, 1).value
            for T in (100, 200, 400, 800)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_trace_diagnostic_grows_with_k():
    sch = build_schedule(200)
    vals = [posterior_trace_diagnostic(tg.low_rank_gaussian(8, k, seed=0), sch, 8, 1).value
            for k in (1, 2, 4)]
    assert vals[0] < vals[1] < vals[2]


def test_trace_diagnostic_gaussian_is_deterministic_in_x():
    # posterior covariance of a Gaussian does not depend on x: the stderr is zero
    diag = posterior_trace_diagnostic(tg.low_rank_gaussian(5, 2, seed=2), build_schedule(60), 4, 0)
    assert diag.stderr <= 1e-12 * max(diag.value, 1.0)
    assert diag.reference == pytest.approx(2 * math.log(60) ** 2 / 60)


def test_run_suite_small():
    rows = run_suite(logdet_trials=300, identity_trials=60, seed=4)
    assert [r.check for r in rows] == ["logdet", "schedule", "jacobian_identity"]
    for r in rows:
        assert r.failures == 0, r.first_failure
        assert r.max_slack >= 0
