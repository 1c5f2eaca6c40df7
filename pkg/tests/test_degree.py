import json

import numpy as np
import pytest

from implicit_motion import (AugmentedMap, MeanField, VectorExpr, builtin, degree_sign_sum,
                             degree_winding2d, find_zeros, index_at, mean_field,
                             tangent_field_degree)
from implicit_motion.cli import first_block
from implicit_motion.errors import (DegenerateZero, NotAdmissible,
                                    QuadratureNotConverged)

XY = ["x", "y"]
SQ2 = np.sqrt(2.0)


def vec(sources, names=XY):
    return VectorExpr.parse(sources, names)


def augmented(name, kind=None):
    prob = builtin(name)
    kind = kind or prob.degree.get("map", "F")
    block, mkind = first_block(prob, kind)
    return AugmentedMap(block, prob.manifold, mkind), prob


class Scaled:
    """The augmented map with its first block multiplied by ``c``."""

    def __init__(self, F, c):
        self.F, self.c = F, c
        self.n_in = self.n_out = F.n_in
        self.m = F.M.m

    def __call__(self, p):
        v = self.F(p)
        v[:self.m] *= self.c
        return v

    def value_and_jacobian(self, p):
        v, J = self.F.value_and_jacobian(p)
        v[:self.m] *= self.c
        J[:self.m] *= self.c
        return v, J


def test_parabolamolla_zeros_and_indices():
    F, prob = augmented("parabolamolla")
    rep = degree_sign_sum(F, prob.degree["box"])
    pts = np.array([z.point for z in rep.zeros])
    np.testing.assert_allclose(pts, [[-SQ2, -1], [0, -2], [SQ2, -1]], atol=1e-10)
    assert [z.index for z in rep.zeros] == [1, -1, 1]
    assert rep.degree == 1 and rep.admissible
    assert all(abs(z.residual) <= 1e-10 for z in rep.zeros)


def test_gravita_single_zero():
    F, prob = augmented("gravita")
    search = find_zeros(F, prob.degree["box"])
    assert len(search.interior) == 1 and not search.near_boundary
    x = search.interior[0].point[0]
    assert abs(x + 0.5 * np.sqrt(2 + 2 * SQ2)) <= 1e-10


def test_identity():
    F = vec(["x", "y"])
    zs = find_zeros(F, [[-1, 1], [-1, 1]]).interior
    assert len(zs) == 1 and np.abs(zs[0].point).max() <= 1e-14
    assert index_at(F, zs[0]) == 1
    assert degree_winding2d(F, [[-1, 1], [-1, 1]]) == 1


def test_paper_indices():
    sin_map = vec(["x", "x^2/2 - y^3 - y"])
    assert index_at(sin_map, np.zeros(2)) == -1
    dae = vec(["x - 2*y", "z^3 + z - x", "z - y + x^2"], ["x", "y", "z"])
    assert index_at(dae, np.zeros(3)) == -1


def test_no_zeros_gives_zero():
    rep = degree_sign_sum(vec(["x^2 + y^2 + 1", "x"]), [[-1, 1], [-1, 1]])
    assert rep.degree == 0 and rep.admissible and rep.zeros == []


def test_boundary_zero_not_admissible():
    with pytest.raises(NotAdmissible):
        degree_sign_sum(vec(["x", "y"]), [[0, 1], [-1, 1]])
    with pytest.raises(NotAdmissible):
        degree_winding2d(vec(["x", "y"]), [[0, 1], [-1, 1]])


def test_complex_square():
    F = vec(["x^2 - y^2", "2*x*y"])
    box = [[-1, 1], [-1, 1]]
    assert degree_winding2d(F, box) == 2
    rep = degree_sign_sum(F, box)
    assert rep.degree == 2 and rep.method == "winding2d"
    assert len(rep.zeros) == 1 and rep.zeros[0].degenerate and rep.zeros[0].index is None


def test_degenerate_zero_in_3d_is_reported():
    F = vec(["x^3", "y", "z"], ["x", "y", "z"])
    with pytest.raises(DegenerateZero):
        degree_sign_sum(F, [[-1, 1]] * 3)


def test_conjugate_square_has_degree_minus_two():
    assert degree_winding2d(vec(["x^2 - y^2", "-2*x*y"]), [[-1, 1], [-1, 1]]) == -2


@pytest.mark.parametrize("name", ["parabolamolla", "gravita", "sindae", "parabola2"])
def test_sign_sum_matches_winding(name):
    F, prob = augmented(name)
    rep = degree_sign_sum(F, prob.degree["box"], winding_check=True)
    assert rep.method == "both"
    assert rep.winding == rep.degree


def _random_split(box, zeros, rng):
    box = np.asarray(box, dtype=float)
    while True:
        axis = rng.integers(len(box))
        cut = rng.uniform(*box[axis])
        if all(abs(p[axis] - cut) > 1e-2 * (box[axis, 1] - box[axis, 0]) for p in zeros):
            a, b = box.copy(), box.copy()
            a[axis, 1] = cut
            b[axis, 0] = cut
            return a, b


@pytest.mark.parametrize("name", ["parabolamolla", "gravita", "sindae", "dae3d"])
def test_additivity_under_random_partitions(name, rng):
    F, prob = augmented(name)
    box = prob.degree["box"]
    whole = degree_sign_sum(F, box, grid=8)
    pts = [z.point for z in whole.zeros]
    for _ in range(3):
        a, b = _random_split(box, pts, rng)
        assert degree_sign_sum(F, a, grid=8).degree + degree_sign_sum(F, b, grid=8).degree \
            == whole.degree


@pytest.mark.parametrize("c", [1e-3, 1e3])
@pytest.mark.parametrize("name", ["parabolamolla", "gravita", "dae3d"])
def test_scaling_first_block_keeps_indices(name, c):
    F, prob = augmented(name)
    box = prob.degree["box"]
    base = degree_sign_sum(F, box, grid=8)
    scaled = degree_sign_sum(Scaled(F, c), box, grid=8)
    assert scaled.degree == base.degree
    assert [z.index for z in scaled.zeros] == [z.index for z in base.zeros]


def test_tangent_field_degree_applies_sign():
    prob = builtin("parabolamolla")
    rep = tangent_field_degree(prob.manifold, prob.force.rest_block(), prob.degree["box"])
    assert rep.degree == 1 and rep.s_sign == -1 and rep.tangent_degree == -1
    assert abs(rep.tangent_degree) == abs(rep.degree)


def test_tangent_degree_matches_chart_reduction():
    # the parabola is the graph y = x^2/2 - 2; reduce the field to that chart
    prob = builtin("parabolamolla")
    rep = tangent_field_degree(prob.manifold, prob.force.rest_block(), prob.degree["box"])
    reduced = VectorExpr.parse(["-x*(x^2/2 - 1)/(x^2 + 1)"], ["x"])
    lo, hi = -3.0, 3.0
    chart = int((np.sign(reduced([hi])[0]) - np.sign(reduced([lo])[0])) / 2)
    assert abs(chart) == abs(rep.tangent_degree)
    one_d = degree_sign_sum(reduced, [[lo, hi]])
    assert one_d.degree == chart


def test_zero_free_field_has_degree_zero():
    prob = builtin("parabolamolla")
    block = VectorExpr.parse(["1 + x1^2"], ["x1", "y1"])
    rep = tangent_field_degree(prob.manifold, block, prob.degree["box"])
    assert rep.degree == 0 and rep.tangent_degree == 0


def test_mean_field_exact_and_trivial_cases(rng):
    block = VectorExpr.parse(["x1 + sin(t)*y1"], ["t", "x1", "y1"])
    w = MeanField(block, 2 * np.pi)
    for p in rng.uniform(-5, 5, (20, 2)):
        assert abs(w(p)[0] - p[0]) <= 1e-12
    const = VectorExpr.parse(["x1*y1 + 3"], ["t", "x1", "y1"])
    p = np.array([0.3, -2.0])
    assert abs(MeanField(const, 1.7)(p)[0] - (0.3 * -2.0 + 3)) <= 1e-13
    zero_mean = VectorExpr.parse(["cos(t)*(x1^3 + exp(y1))"], ["t", "x1", "y1"])
    for p in rng.uniform(-2, 2, (20, 2)):
        assert abs(MeanField(zero_mean, 2 * np.pi)(p)[0]) <= 1e-12


def test_mean_field_jacobian(rng):
    prob = builtin("sindae")
    w = mean_field(prob.manifold, prob.perturbation)
    for p in rng.uniform(-2, 2, (5, 2)):
        v, J = w.value_and_jacobian(p)
        np.testing.assert_allclose(v, [p[0]], atol=1e-12)
        np.testing.assert_allclose(J, [[1.0, 0.0]], atol=1e-12)


def test_mean_field_quadrature_failure():
    block = VectorExpr.parse(["exp(sin(200*t))*x1"], ["t", "x1", "y1"])
    with pytest.raises(QuadratureNotConverged):
        MeanField(block, 2 * np.pi, nodes=4, max_nodes=16)([1.0, 0.0])


def test_report_serializations():
    prob = builtin("parabolamolla")
    rep = tangent_field_degree(prob.manifold, prob.force.rest_block(), prob.degree["box"],
                               winding_check=True)
    doc = json.loads(rep.to_json())
    assert doc["degree"] == 1 and doc["tangent_degree"] == -1 and doc["method"] == "both"
    assert len(doc["zeros"]) == 3
    text = rep.to_text()
    assert "degree: 1" in text and "admissible: " in text
    csv = rep.to_csv(["x1", "y1"]).splitlines()
    assert csv[0] == "x1,y1,index,detDF,cond"
    assert [row.split(",")[2] for row in csv[1:]] == ["1", "-1", "1"]
