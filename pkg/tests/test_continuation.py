import io
import warnings

import numpy as np
import pytest

from implicit_motion import (ForceField, PeriodicProblem, builtin, newton_correct,
                             shoot_residual, trace_branch)
from implicit_motion.continuation import SHOOT_TOL
from implicit_motion.errors import DegreeIsZero, InputError, SingularShootJacobian

SQ2 = np.sqrt(2.0)
EQ = np.array([SQ2, -1.0])


def spring_problem(T=2 * np.pi, h=None, n_steps=128):
    prob = builtin("parabolamolla")
    M = prob.manifold
    if h is None:
        w = float(2 * np.pi / T)
        h = ForceField.from_text([f"cos({w!r}*t)/(x1^2 + 1)", f"x1*cos({w!r}*t)/(x1^2 + 1)"],
                                 1, 1, kind="periodic_h", period=T)
    return PeriodicProblem(M, prob.force, h, T, EQ, n_steps=n_steps)


def test_residual_vanishes_at_equilibrium():
    P = spring_problem()
    assert np.abs(shoot_residual(P, 0.0, [SQ2, 0.0])).max() <= 1e-10


def test_residual_off_equilibrium_is_nonzero_and_reproducible():
    P = spring_problem()
    a = shoot_residual(P, 0.0, [SQ2 + 0.1, 0.0])
    b = shoot_residual(P, 0.0, [SQ2 + 0.1, 0.0])
    assert np.linalg.norm(a) > 1e-3
    np.testing.assert_array_equal(a, b)


def test_newton_at_equilibrium_takes_no_steps():
    pt = newton_correct(spring_problem(), 0.0, [SQ2, 0.0])
    assert pt.iterations == 0 and pt.residual <= 1e-10
    assert pt.amplitude <= 1e-12


def test_small_forcing_linear_response():
    P = spring_problem()
    ratios = []
    guess = np.array([SQ2, 0.0])
    for lam in (1e-3, 5e-4, 2.5e-4):
        pt = newton_correct(P, lam, guess)
        assert pt.residual <= SHOOT_TOL
        assert pt.ambient_gap <= 1e-7
        ratios.append(pt.amplitude / lam)
    assert ratios[0] > 0
    assert abs(ratios[1] - ratios[0]) <= 0.01 * ratios[0]
    assert abs(ratios[2] - ratios[1]) <= 0.01 * ratios[1]


def test_resonant_period_is_reported():
    # the linearization at (sqrt 2, -1) oscillates with angular frequency sqrt(2/3)
    T = 2 * np.pi / np.sqrt(2.0 / 3.0)
    P = spring_problem(T=T, n_steps=256)
    with pytest.raises(SingularShootJacobian):
        newton_correct(P, 0.0, [SQ2, 0.0])


def test_period_mismatch_is_input_error():
    prob = builtin("parabolamolla")
    with pytest.raises(InputError):
        PeriodicProblem(prob.manifold, prob.force, prob.perturbation, 3.0, EQ)


def test_zero_forcing_is_degenerate():
    zero = ForceField.from_text(["0", "0"], 1, 1, kind="periodic_h", period=2 * np.pi)
    P = spring_problem(h=zero, n_steps=64)
    curve = trace_branch(P, EQ, max_points=3)
    assert curve.degenerate
    np.testing.assert_allclose([p.chart_ic for p in curve.points],
                               np.tile([SQ2, 0.0], (len(curve), 1)), atol=1e-8)


def test_zero_degree_refuses_unless_forced():
    P = spring_problem(n_steps=64)
    with pytest.raises(DegreeIsZero):
        trace_branch(P, EQ, max_points=2, degree=0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        curve = trace_branch(P, EQ, max_points=2, degree=0, force=True)
    assert any("degree is zero" in str(w.message) for w in caught)
    assert len(curve) == 2


def test_short_branch_invariants():
    P = spring_problem()
    curve = trace_branch(P, EQ, max_points=8)
    assert curve.termination == "budget" and len(curve) == 8
    first = curve.points[0]
    assert first.lam == 0.0
    np.testing.assert_allclose(first.chart_ic, [SQ2, 0.0], atol=1e-8)
    assert first.amplitude <= 1e-8
    assert np.all(curve.residuals <= SHOOT_TOL)
    assert np.all(curve.lambdas >= 0.0)
    assert all(p.ambient_gap <= 1e-7 for p in curve.points)
    for p in curve.points:
        assert p.orbit.stats["max_g"] <= 10 * P.M.on_tol
    steps = np.diff(np.column_stack([curve.lambdas, [p.chart_ic for p in curve.points]]),
                    axis=0)
    assert np.all(np.linalg.norm(steps, axis=1) <= 0.5 + 1e-12)
    buf = io.StringIO()
    curve.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "lambda,x0_1,u0_1,residual,amplitude"
    assert float(lines[1].split(",")[0]) == 0.0 and len(lines) == 9


def test_perturbation_only_branch():
    prob = builtin("sindae")
    P = PeriodicProblem(prob.manifold, None, prob.perturbation, prob.period, np.zeros(2),
                        n_steps=prob.continuation["n_steps"])
    assert P.scaled
    curve = trace_branch(P, np.zeros(2), max_points=10, ds=0.02, degree=-1)
    assert len(curve) == 10
    assert curve.lambdas[-1] > 0 and np.all(np.diff(curve.lambdas) > 0)
    assert np.all(curve.residuals <= SHOOT_TOL)
    # x = 0 (hence y = 0) solves the forced problem for every lam: the branch
    # leaving the origin is the family of constant solutions, along which the
    # residual does not depend on lam
    assert curve.degenerate
    for p in curve.points:
        np.testing.assert_allclose(p.chart_ic, 0.0, atol=1e-8)
