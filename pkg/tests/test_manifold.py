import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from implicit_motion import ImplicitManifold, PhaseState, builtin
from implicit_motion.errors import InputError, NoConvergence, SignFlip, SingularB


@pytest.fixture
def parabola():
    return ImplicitManifold.from_text(["x1^2/2 - y1 - 2"], 1, 1, box=[[-3, 3], [-10, 10]])


@pytest.fixture
def paraboloid():
    return ImplicitManifold.from_text(["y1 - x1^2 - x2^2"], 2, 1,
                                      box=[[-2, 2], [-2, 2], [-1, 10]])


@pytest.fixture
def mostro():
    return builtin("mostro").manifold


def test_parabola_split(parabola):
    for x in (-2.0, 0.0, 0.5, 1.7):
        J = parabola.jacobians(np.array([x, x * x / 2 - 2]))
        np.testing.assert_allclose(J.A, [[x]])
        np.testing.assert_allclose(J.B, [[-1.0]])
        np.testing.assert_allclose(J.C, [[-1.0 - x * x]])


def test_paraboloid_split(paraboloid):
    x, y = 0.3, -1.1
    J = paraboloid.jacobians(np.array([x, y, x * x + y * y]))
    np.testing.assert_allclose(J.A, [[-2 * x, -2 * y]])
    np.testing.assert_allclose(J.B, [[1.0]])
    np.testing.assert_allclose(J.C, [[4 * x * x + 4 * y * y + 1]])


def test_mostro_split(mostro):
    x, z = 0.4, 0.7
    J = mostro.jacobians(np.array([x, z + x * x, z]))
    np.testing.assert_allclose(J.A, [[-1.0], [2 * x]])
    np.testing.assert_allclose(J.B, [[0.0, 3 * z * z + 1], [-1.0, 1.0]])


def test_lemma_holds_on_random_states(mostro, rng):
    for st in mostro.random_states(200, rng, x_box=[[-2, 2]]):
        asym, eig = mostro.jacobians(st.xi).lemma_residuals()
        assert asym <= 1e-12
        assert eig >= 1.0 - 1e-12


def test_singular_B_is_an_error():
    M = ImplicitManifold.from_text(["y1^3 - x1"], 1, 1)
    with pytest.raises(SingularB):
        M.jacobians(np.array([0.0, 0.0]))


def test_sign_is_pinned_and_flips_are_errors():
    M = ImplicitManifold.from_text(["y1^3/3 - y1 - x1"], 1, 1)
    M.jacobians(np.array([0.0, 0.0]))
    assert M.s_sign == -1
    with pytest.raises(SignFlip):
        M.jacobians(np.array([18.0, 3.0]))


def test_projections_decompose(paraboloid, rng):
    for st in paraboloid.random_states(100, rng):
        w = rng.standard_normal(3)
        t = paraboloid.tangent_project(st.xi, w)
        n = paraboloid.normal_project(st.xi, w)
        np.testing.assert_allclose(t + n, w, atol=1e-14)
        G = paraboloid.value_and_jacobian(st.xi)[1]
        assert np.abs(G @ t).max() <= 1e-10
        np.testing.assert_allclose(paraboloid.tangent_project(st.xi, t), t, atol=1e-14)
        w2 = rng.standard_normal(3)
        assert abs(t @ w2 - w @ paraboloid.tangent_project(st.xi, w2)) <= 1e-10


def test_projection_special_vectors(parabola):
    xi = np.array([1.0, -1.5])
    tangent = np.array([1.0, 1.0])
    np.testing.assert_allclose(parabola.tangent_project(xi, tangent), tangent, atol=1e-15)
    np.testing.assert_allclose(parabola.normal_project(xi, tangent), 0.0, atol=1e-15)
    grad = parabola.value_and_jacobian(xi)[1][0]
    np.testing.assert_allclose(parabola.tangent_project(xi, grad), 0.0, atol=1e-15)
    np.testing.assert_allclose(parabola.normal_project(np.array([0.0, -2.0]), np.array([0.0, 1.0])),
                               [0.0, 1.0], atol=1e-15)


def test_project_to_manifold_parabola(parabola):
    p = np.array([1.0, -1.4])
    q = parabola.project_to_manifold(p, seed=np.array([1.0, -1.5]))
    oracle = minimize_scalar(lambda s: (s - 1.0) ** 2 + (s * s / 2 - 2 + 1.4) ** 2,
                             bracket=(0.5, 1.5), tol=1e-12).x
    assert abs(q[0] - oracle) <= 1e-7
    assert abs(parabola.value(q)[0]) <= 1e-10
    # q - p is normal: orthogonal to the tangent (1, q1)
    assert abs((q - p) @ np.array([1.0, q[0]])) <= 1e-8


def test_project_to_manifold_fixed_points(parabola, paraboloid):
    p = np.array([2.0, 0.0])
    np.testing.assert_array_equal(parabola.project_to_manifold(p, seed=p), p)
    q = paraboloid.project_to_manifold(np.array([0.0, 0.0, 0.1]), seed=np.zeros(3))
    np.testing.assert_allclose(q, 0.0, atol=1e-12)


def test_chart_solve_examples(parabola):
    np.testing.assert_allclose(parabola.chart_solve_y(np.array([2.0]), np.array([5.0])), [0.0],
                               atol=1e-12)
    M7 = ImplicitManifold.from_text(["y1^7 + y1 - x1^2 + x1^5"], 1, 1)
    np.testing.assert_allclose(M7.chart_solve_y(np.array([1.0]), np.array([0.0])), [0.0],
                               atol=1e-14)


def test_chart_solve_stays_on_sheet():
    M = ImplicitManifold.from_text(["exp(y1)*cos(y2) - x1", "exp(y1)*sin(y2) - x1"], 1, 2)
    for l in (0, 1, 3):
        seed = np.array([0.2, np.pi / 4 + 2 * l * np.pi + 0.3])
        y = M.chart_solve_y(np.array([1.0]), seed)
        np.testing.assert_allclose(y, [np.log(np.sqrt(2)), np.pi / 4 + 2 * l * np.pi],
                                   atol=1e-10)


def test_chart_solve_failure():
    M = ImplicitManifold.from_text(["y1^2 + 1 + x1^2"], 1, 1)
    with pytest.raises((NoConvergence, SingularB)):
        M.chart_solve_y(np.array([0.0]), np.array([1.0]))


def test_phase_state_validation(parabola):
    xi = np.array([1.0, -1.5])
    PhaseState(xi, np.array([1.0, 1.0])).validate(parabola)
    with pytest.raises(InputError):
        PhaseState(xi, np.array([1.0, 0.0])).validate(parabola)
    with pytest.raises(InputError):
        PhaseState(np.array([1.0, 0.0]), np.zeros(2)).validate(parabola)


def test_random_states_are_on_TM(mostro, rng):
    for st in mostro.random_states(50, rng, x_box=[[-2, 2]]):
        on, tan = st.residuals(mostro)
        assert on <= mostro.on_tol and tan <= 1e-12


def test_dimension_checks():
    with pytest.raises(InputError):
        ImplicitManifold.from_text(["x1 - y1", "y2"], 1, 1)
    with pytest.raises(InputError):
        ImplicitManifold.from_text(["x1 - y1"], 1, 1, box=[[1, 0], [0, 1]])
