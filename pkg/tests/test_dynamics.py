import io
from pathlib import Path

import numpy as np
import pytest

from implicit_motion import (ForceField, ImplicitManifold, Motion, PhaseState, builtin,
                             compare_dae_ode, dae_lift, integrate, reactive_force,
                             reactive_force_lstsq, second_order_field)
from implicit_motion.errors import InputError, StepUnderflow, TangencyViolation

DATA = Path(__file__).parent / "data"


@pytest.fixture
def parabola():
    return ImplicitManifold.from_text(["x1^2/2 - y1 - 2"], 1, 1, box=[[-3, 3], [-10, 10]])


def parabola_state(x, u):
    return PhaseState(np.array([x, x * x / 2 - 2]), np.array([u, x * u]))


@pytest.mark.parametrize("x, u", [(1.0, 1.0), (-2.0, 0.5), (0.0, 3.0), (2.5, -1.2)])
def test_parabola_reaction(parabola, x, u):
    r = reactive_force(parabola, parabola_state(x, u))
    np.testing.assert_allclose(r, [-x * u * u / (1 + x * x), u * u / (1 + x * x)],
                               rtol=1e-14, atol=1e-15)


def test_paraboloid_reaction(rng):
    M = builtin("paraboloid").manifold
    for _ in range(20):
        x, y = rng.uniform(-1.5, 1.5, 2)
        u, v = rng.standard_normal(2)
        st = PhaseState(np.array([x, y, x * x + y * y]), np.array([u, v, 2 * x * u + 2 * y * v]))
        c = (2 * u * u + 2 * v * v) / (1 + 4 * x * x + 4 * y * y)
        r = reactive_force(M, st)
        np.testing.assert_allclose(r, c * np.array([-2 * x, -2 * y, 1.0]), rtol=1e-13, atol=1e-15)
        # first two components in the printed form
        np.testing.assert_allclose(r[:2], [-4 * x * (u * u + v * v) / (1 + 4 * x * x + 4 * y * y),
                                           -4 * y * (u * u + v * v) / (1 + 4 * x * x + 4 * y * y)],
                                   rtol=1e-13, atol=1e-15)


def test_mostro_sigma_uses_hessian(rng):
    M = builtin("mostro").manifold
    for st in M.random_states(20, rng, x_box=[[-2, 2]]):
        r = reactive_force(M, st)
        G = M.value_and_jacobian(st.xi)[1]
        z, u, w = st.xi[2], st.eta[0], st.eta[2]
        np.testing.assert_allclose(G @ r, [-6 * z * w * w, -2 * u * u], rtol=1e-10, atol=1e-12)


def test_mostro_golden():
    M = builtin("mostro").manifold
    rows = np.loadtxt(DATA / "mostro_golden.csv", delimiter=",", skiprows=1)
    assert rows.shape == (50, 9)
    for row in rows:
        st = PhaseState(row[:3], row[3:6])
        np.testing.assert_allclose(reactive_force(M, st), row[6:], rtol=1e-12, atol=1e-13)


def test_reaction_properties(rng):
    M = builtin("mostro").manifold
    for st in M.random_states(100, rng, x_box=[[-2, 2]]):
        r = reactive_force(M, st)
        oracle = reactive_force_lstsq(M, st)
        assert np.abs(r - oracle).max() <= 1e-9 * max(1e-300, np.abs(oracle).max())
        assert np.abs(M.tangent_project(st.xi, r)).max() <= 1e-9 * (1 + np.abs(r).max())
        a = rng.uniform(-3, 3)
        r2 = reactive_force(M, PhaseState(st.xi, a * st.eta))
        np.testing.assert_allclose(r2, a * a * r, rtol=1e-10, atol=1e-14)
    st = M.random_states(1, rng, x_box=[[-2, 2]])[0]
    np.testing.assert_array_equal(reactive_force(M, PhaseState(st.xi, np.zeros(3))), 0.0)


def test_second_order_field(rng):
    prob = builtin("parabolamolla")
    M, f = prob.manifold, prob.force
    eta, acc = second_order_field(M, f, 0.0, PhaseState(np.array([0.0, -2.0]), np.zeros(2)))
    np.testing.assert_array_equal(eta, 0.0)
    np.testing.assert_allclose(acc, 0.0, atol=1e-15)
    eta, acc = second_order_field(M, ForceField.zero(1, 1), 0.0,
                                  PhaseState(np.array([1.0, -1.5]), np.zeros(2)))
    np.testing.assert_array_equal(acc, 0.0)
    for st in M.random_states(100, rng):
        _, acc = second_order_field(M, f, 0.3, st)
        _, G, H = M.derivatives(st.xi)
        assert np.abs(G @ acc + (H @ st.eta) @ st.eta).max() <= 1e-8


def test_tangency_violation(parabola):
    bad = ForceField.from_text(["1", "0"], 1, 1)
    with pytest.raises(TangencyViolation):
        second_order_field(parabola, bad, 0.0, parabola_state(1.0, 0.0))


def test_dae_lift(parabola, rng):
    zero = ForceField.zero(1, 1, tangency="x_only")
    np.testing.assert_array_equal(dae_lift(parabola, zero)(0.0, np.array([1.0, -1.5]),
                                                           np.zeros(2)), 0.0)
    E = builtin("parabola2").force
    lifted = dae_lift(parabola, E)
    for st in parabola.random_states(20, rng):
        x, y = st.xi
        u = st.eta[0]
        e = -x * (y + 1) / (x * x + 1)
        np.testing.assert_allclose(lifted(0.0, st.xi, st.eta), [e, x * e + u * u], rtol=1e-13)
    with pytest.raises(InputError):
        dae_lift(parabola, builtin("parabolamolla").force)


def test_lifted_field_drift_without_projection():
    prob = builtin("parabola2")
    M = prob.manifold
    xi = M.chart_point(np.array([1.0]), np.array([-1.5]))
    st = PhaseState(xi, M.tangent_velocity(xi, np.array([0.5])))
    tr = integrate(M, Motion(M, [prob.force], mode="lifted"), st, 0.0, 10.0, h=1e-3,
                   project=False, record=False)
    assert tr.stats["max_g"] <= 1e-6


def test_energy_conservation_spring():
    prob = builtin("parabolamolla")
    M = prob.manifold
    xi = M.chart_point(np.array([1.0]), np.array([-1.5]))
    st = PhaseState(xi, M.tangent_velocity(xi, np.array([0.5])))
    tr = integrate(M, prob.force, st, 0.0, 2 * np.pi, h=1e-3, potential=prob.potential)
    assert tr.stats["energy_drift"] <= 1e-6
    assert tr.stats["max_g"] <= M.on_tol


def test_rest_is_constant(parabola):
    st = parabola_state(0.7, 0.0)
    tr = integrate(parabola, ForceField.zero(1, 1), st, 0.0, 1.0, h=0.1)
    np.testing.assert_allclose(tr.xi, np.tile(st.xi, (len(tr.t), 1)), atol=1e-15)
    assert np.all(np.diff(tr.t) > 0)


def test_rk45_agrees_with_rk4():
    prob = builtin("parabolamolla")
    M = prob.manifold
    xi = M.chart_point(np.array([1.0]), np.array([-1.5]))
    st = PhaseState(xi, M.tangent_velocity(xi, np.array([0.5])))
    a = integrate(M, prob.force, st, 0.0, 3.0, h=1e-3, record=False)
    b = integrate(M, prob.force, st, 0.0, 3.0, h=1e-2, method="rk45_proj", rtol=1e-11,
                  atol=1e-13, record=False)
    np.testing.assert_allclose(b.final.xi, a.final.xi, atol=1e-8)
    assert b.t[-1] == 3.0


def test_rk45_underflow():
    M = ImplicitManifold.from_text(["x1 - y1"], 1, 1)
    blow = ForceField(lambda t, xi, eta: np.array([1.0, 1.0]) / (1.0 - t) ** 2, 2, 1, 1)
    with pytest.raises(StepUnderflow):
        integrate(M, blow, PhaseState(np.zeros(2), np.zeros(2)), 0.0, 2.0, h=0.1,
                  method="rk45_proj")


def test_dae_ode_twin_run():
    prob = builtin("parabola2")
    M = prob.manifold
    xi = M.chart_point(np.array([1.0]), np.array([-1.5]))
    st = PhaseState(xi, M.tangent_velocity(xi, np.array([0.5])))
    gap, lifted, projected = compare_dae_ode(M, [prob.force], st, 0.0, 5.0, h=1e-2)
    assert gap <= 1e-6
    assert lifted.stats["max_g"] <= 1e-8 and projected.stats["max_g"] <= 1e-8


def test_trajectory_csv():
    prob = builtin("mostro")
    M = prob.manifold
    st = M.random_states(1, np.random.default_rng(0), x_box=[[-1, 1]])[0]
    tr = integrate(M, [], st, 0.0, 0.05, h=0.01)
    buf = io.StringIO()
    tr.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,x1,y1,y2,u1,v1,v2,g_res_max"
    assert len(lines) == len(tr.t) + 1 == 7
    data = np.loadtxt(io.StringIO(buf.getvalue()), delimiter=",", skiprows=1)
    np.testing.assert_allclose(data[:, 0], tr.t)


def test_invalid_initial_state(parabola):
    with pytest.raises(InputError):
        integrate(parabola, [], PhaseState(np.array([1.0, 0.0]), np.zeros(2)), 0, 1)


def test_periodicity_check(parabola, rng):
    h = ForceField.from_text(["cos(t)/(x1^2 + 1)", "x1*cos(t)/(x1^2 + 1)"], 1, 1,
                             kind="periodic_h", period=2 * np.pi)
    h.check_periodic(parabola, rng)
    bad = ForceField.from_text(["cos(t)/(x1^2 + 1)", "x1*cos(t)/(x1^2 + 1)"], 1, 1,
                               kind="periodic_h", period=3.0)
    with pytest.raises(InputError):
        bad.check_periodic(parabola, rng)


def test_several_dae_fields_are_lifted_together(rng):
    prob = builtin("dae3d")
    M = prob.manifold
    fields = [prob.force, prob.perturbation]
    lifted = Motion(M, fields, [1.0, 0.7], mode="lifted")
    on_M = Motion(M, fields, [1.0, 0.7], mode="manifold")
    for st in M.random_states(20, rng, x_box=[[-1, 1]]):
        np.testing.assert_allclose(on_M.accel(0.4, st.xi, st.eta),
                                   lifted.accel(0.4, st.xi, st.eta), rtol=1e-10, atol=1e-12)
