import numpy as np
import pytest
from fractions import Fraction

from hphdg import basis
from hphdg.errors import ContractViolationError, UnsupportedOrderError


def test_triangle_rule_area():
    q = basis.triangle_rule(1)
    assert abs(q.weights.sum() - 0.5) < 1e-15


def test_triangle_rule_monomial_x2y2():
    # closed form: int over unit reference triangle of x^2 y^2 = 1/180
    q = basis.triangle_rule(4)
    val = (q.weights * q.points[:, 0] ** 2 * q.points[:, 1] ** 2).sum()
    assert abs(val - 1.0 / 180.0) < 1e-15


@pytest.mark.parametrize("p", [0, 1, 2, 3, 5, 8])
def test_mass_matrix_identity(p):
    B = basis.triangle_basis(p)
    q = basis.triangle_rule(max(2 * p, 1))
    V = B.eval(q.points)
    M = (V * q.weights[:, None]).T @ V
    assert np.abs(M - np.eye(B.dim)).max() < 1e-12


def test_triangle_rule_exactness_sweep():
    # random polynomials of exactly the stated strength integrate exactly
    rng = np.random.default_rng(7)
    for strength in [2, 5, 9, 14, 20]:
        q = basis.triangle_rule(strength)
        assert np.all(q.weights > 0)
        for _ in range(3):
            i = rng.integers(0, strength + 1)
            j = strength - i
            # exact integral of x^i y^j over the unit triangle
            from math import factorial
            exact = factorial(i) * factorial(j) / factorial(i + j + 2)
            val = (q.weights * q.points[:, 0] ** i * q.points[:, 1] ** j).sum()
            assert abs(val - exact) < 1e-14 * max(1.0, abs(exact))


def test_strength_out_of_range():
    with pytest.raises(UnsupportedOrderError):
        basis.triangle_rule(basis.MAX_STRENGTH + 1)
    with pytest.raises(UnsupportedOrderError):
        basis.segment_gauss(0)


def test_segment_gauss_one_point_exact_for_linears():
    q = basis.segment_gauss(1)
    assert len(q.weights) == 1
    assert abs((q.weights * (3.0 * q.points + 1.0)).sum() - 2.5) < 1e-15


def test_segment_gauss_x5():
    q = basis.segment_gauss(5)
    assert abs((q.weights * q.points ** 5).sum() - 1.0 / 6.0) < 1e-15


def test_segment_gauss_product_exactness():
    # a rule of strength 2p+2 integrates products of two degree-(p+1) traces
    p = 3
    q = basis.segment_gauss(2 * p + 2)
    c = np.polynomial.polynomial
    rng = np.random.default_rng(0)
    f = rng.standard_normal(p + 2)
    g = rng.standard_normal(p + 2)
    val = (q.weights * c.polyval(q.points, f) * c.polyval(q.points, g)).sum()
    exact = c.polyval(1.0, c.polyint(c.polymul(f, g))) - c.polyval(0.0, c.polyint(c.polymul(f, g)))
    assert abs(val - exact) < 1e-13


def test_gradients_match_finite_differences():
    B = basis.triangle_basis(6)
    rng = np.random.default_rng(3)
    pts = rng.random((40, 2)) * 0.9
    pts = pts[pts.sum(axis=1) < 0.92]
    h = 1e-6
    G = B.grad(pts)
    gx = (B.eval(pts + [h, 0.0]) - B.eval(pts - [h, 0.0])) / (2 * h)
    gy = (B.eval(pts + [0.0, h]) - B.eval(pts - [0.0, h])) / (2 * h)
    assert np.abs(G[:, :, 0] - gx).max() < 1e-6
    assert np.abs(G[:, :, 1] - gy).max() < 1e-6


def test_restrict_constant():
    B = basis.triangle_basis(2)
    # coefficients of the constant function 1
    c = np.zeros(B.dim)
    c[0] = 1.0 / B.eval(np.array([[0.25, 0.25]]))[0, 0]
    tc = basis.restrict_to_mortar(c, 0, (Fraction(0), Fraction(1)), 2)
    S = basis.segment_basis(2)
    vals = S.eval(np.linspace(0.1, 0.9, 5)) @ tc
    assert np.abs(vals - 1.0).max() < 1e-14


def test_restrict_linear_on_half_edge():
    # u = x restricted to the second half of face 0 ((0,0)->(1,0))
    p = 1
    B = basis.triangle_basis(p)
    q = basis.triangle_rule(4)
    V = B.eval(q.points)
    c = (V * q.weights[:, None]).T @ q.points[:, 0]  # L2 coefficients of x
    tc = basis.restrict_to_mortar(c, 0, (Fraction(1, 2), Fraction(1)), 3)
    t = np.array([0.0, 0.5, 1.0])
    vals = basis.segment_basis(3).eval(t) @ tc
    assert np.abs(vals - (0.5 + 0.5 * t)).max() < 1e-13


def test_restriction_equals_l2_projection():
    # random degree-3 polynomial; compare against a mass-matrix projection
    rng = np.random.default_rng(11)
    p, p_e = 3, 3
    B = basis.triangle_basis(p)
    c = rng.standard_normal(B.dim)
    sub = (Fraction(1, 2), Fraction(1))
    tc = basis.restrict_to_mortar(c, 1, sub, p_e)

    # projection oracle: dense mass solve on a fine quadrature
    q = basis.segment_gauss(20)
    s = 0.5 + 0.5 * q.points
    vals = B.eval(basis.face_ref_points(1, s)) @ c
    S = basis.segment_basis(p_e).eval(q.points)
    M = (S * q.weights[:, None]).T @ S
    rhs = (S * q.weights[:, None]).T @ vals
    proj = np.linalg.solve(M, rhs)
    assert np.abs(proj - tc).max() < 1e-13


def test_restrict_requires_pe_at_least_pk():
    with pytest.raises(ContractViolationError):
        basis.restrict_to_mortar(np.zeros(basis.tri_dim(3)), 0,
                                 (Fraction(0), Fraction(1)), 2)


def test_enrich_pointwise_identity():
    rng = np.random.default_rng(5)
    c = rng.standard_normal(basis.tri_dim(2))
    c3 = basis.enrich(c, 2, 3)
    pts = rng.random((10, 2)) * 0.45
    va = basis.triangle_basis(2).eval(pts) @ c
    vb = basis.triangle_basis(3).eval(pts) @ c3
    assert np.abs(va - vb).max() < 1e-13


def test_enrich_project_round_trip():
    rng = np.random.default_rng(6)
    c = rng.standard_normal(basis.tri_dim(4))
    back = basis.truncate(basis.enrich(c, 4, 5), 5, 4)
    assert np.abs(back - c).max() < 1e-13


def test_mode_ordering_hierarchical():
    assert basis.tri_modes(2) == [(0, 0), (0, 1), (1, 0), (0, 2), (1, 1), (2, 0)]
    assert basis.tri_modes(3)[: basis.tri_dim(2)] == basis.tri_modes(2)
