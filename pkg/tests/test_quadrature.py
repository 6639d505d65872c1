import numpy as np
import pytest

from charmode.quadrature import gauss_points, potential_integrals, subdivided_rule, triangle_rule


def _monomial_exact(p, q):
    # integral of x^p y^q over the unit right triangle
    from math import factorial
    return factorial(p) * factorial(q) / factorial(p + q + 2)


@pytest.mark.parametrize("order,degree", [(1, 1), (3, 2), (7, 5)])
def test_rules_integrate_polynomials(order, degree):
    bary, w = triangle_rule(order)
    assert np.isclose(w.sum(), 1.0)
    x, y = bary[:, 1], bary[:, 2]
    for p in range(degree + 1):
        for q in range(degree + 1 - p):
            approx = 0.5 * np.sum(w * x**p * y**q)
            assert np.isclose(approx, _monomial_exact(p, q), rtol=1e-12, atol=1e-14)


def test_subdivided_rule_weights():
    bary, w = subdivided_rule(4)
    assert len(w) == 16 * 7
    assert np.isclose(w.sum(), 1.0)
    assert np.allclose(bary.sum(1), 1.0)


def test_gauss_points_map_centroid():
    v = np.array([[[0, 0, 0], [2, 0, 0], [0, 3, 0.0]]])
    pts = gauss_points(v, triangle_rule(1)[0])
    assert np.allclose(pts[0, 0], [2 / 3, 1.0, 0])


@pytest.mark.parametrize("obs", [[0.2, 0.1, 0.3], [1.5, -0.4, 0.05], [1.2, 0.8, 0.0]])
def test_potential_integrals_match_refined_quadrature(obs):
    tri = np.array([[0, 0, 0], [1.0, 0.1, 0], [0.2, 0.9, 0]])
    r = np.array([obs], float)
    I1, Iv, proj = potential_integrals(r, tri[None])
    # fine composite quadrature; all points are off the source triangle
    bary, w = subdivided_rule(60)
    pts = bary @ tri
    area = 0.5 * np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
    R = np.linalg.norm(pts - r[0], axis=1)
    ref1 = area * np.sum(w / R)
    refv = area * np.sum(w[:, None] * (pts - proj[0]) / R[:, None], axis=0)
    assert np.isclose(I1[0], ref1, rtol=1e-5)
    assert np.allclose(Iv[0], refv, rtol=1e-5, atol=1e-7)


def test_potential_integral_at_vertex_is_finite():
    tri = np.array([[0, 0, 0], [1.0, 0, 0], [0, 1.0, 0]])
    I1, Iv, _ = potential_integrals(tri[:1], tri[None])
    # unit right isoceles triangle seen from its right-angle vertex
    assert np.isclose(I1[0], np.sqrt(2) * np.log(1 + np.sqrt(2)), rtol=1e-12)
    assert np.all(np.isfinite(Iv))
