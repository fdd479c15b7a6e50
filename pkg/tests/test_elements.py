from math import factorial

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from hybridbem.elements import integrals
from hybridbem.elements.basis import (
    PyramidBasis,
    SupportError,
    SwgBasis,
    WireHatBasis,
    pyramid_eval,
    swg_div,
    swg_eval,
    wire_hat_eval,
)
from hybridbem.elements.integrals import TET_FACES, analytic_inv_r_triangle
from hybridbem.elements.kernels import green, grad_green
from hybridbem.elements.quadrature import SUPPORTED_ORDERS, segment_quadrature, tet_quadrature, tri_quadrature
from hybridbem.geometry import TetRegion, WireBundle, generate_ball_tets

UNIT_TRI = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
UNIT_TET = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)


# --- Green function --------------------------------------------------------


def test_green_unit_distance():
    assert green([0, 0, 1], [0, 0, 0]) == pytest.approx(0.0795774715459477, rel=1e-15)


def test_green_inverse_scaling():
    assert green([2, 0, 0], [0, 0, 0]) == pytest.approx(1 / (8 * np.pi), rel=1e-15)


def test_green_singular():
    with pytest.raises(ValueError):
        green([1, 2, 3], [1, 2, 3])
    with pytest.raises(ValueError):
        grad_green([1, 2, 3], [1, 2, 3])


def test_grad_green_axis():
    np.testing.assert_allclose(grad_green([0, 0, 1], [0, 0, 0]), [0, 0, -1 / (4 * np.pi)], rtol=1e-15)


@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6))
def test_grad_green_antisymmetric(c):
    r, rp = np.array(c[:3]), np.array(c[3:])
    if np.linalg.norm(r - rp) < 1e-3:
        return
    np.testing.assert_allclose(grad_green(r, rp), -grad_green(rp, r), rtol=1e-15)


@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6))
def test_grad_green_matches_finite_difference(c):
    r, rp = np.array(c[:3]), np.array(c[3:])
    if np.linalg.norm(r - rp) < 0.1:
        return
    h = 1e-5
    fd = np.array([(green(r + h * e, rp) - green(r - h * e, rp)) / (2 * h) for e in np.eye(3)])
    g = grad_green(r, rp)
    assert np.linalg.norm(fd - g) <= 1e-6 * np.linalg.norm(g)


# --- quadrature ------------------------------------------------------------


def tri_monomial(a, b):
    return factorial(a) * factorial(b) / factorial(a + b + 2)


def tet_monomial(a, b, c):
    return factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)


@pytest.mark.parametrize("order", SUPPORTED_ORDERS)
def test_tri_rule_exactness(order):
    q = tri_quadrature(order)
    assert np.all(q.weights > 0)
    assert q.weights.sum() == pytest.approx(0.5, rel=1e-14)
    for a in range(order + 1):
        for b in range(order + 1 - a):
            val = np.sum(q.weights * q.points[:, 0] ** a * q.points[:, 1] ** b)
            assert val == pytest.approx(tri_monomial(a, b), rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("order", SUPPORTED_ORDERS)
def test_tet_rule_exactness(order):
    q = tet_quadrature(order)
    assert np.all(q.weights > 0)
    assert q.weights.sum() == pytest.approx(1 / 6, rel=1e-14)
    x, y, z = q.points.T
    for a in range(order + 1):
        for b in range(order + 1 - a):
            for c in range(order + 1 - a - b):
                val = np.sum(q.weights * x**a * y**b * z**c)
                assert val == pytest.approx(tet_monomial(a, b, c), rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("order", SUPPORTED_ORDERS)
def test_segment_rule_exactness(order):
    q = segment_quadrature(order)
    for a in range(order + 1):
        assert np.sum(q.weights * q.points[:, 0] ** a) == pytest.approx(1 / (a + 1), rel=1e-14)


def test_tri_order1_is_centroid_rule():
    q = tri_quadrature(1)
    np.testing.assert_allclose(q.points, [[1 / 3, 1 / 3]])
    np.testing.assert_allclose(q.weights, [0.5])


def test_tri_order2_integrates_xy():
    q = tri_quadrature(2)
    assert np.sum(q.weights * q.points[:, 0] * q.points[:, 1]) == pytest.approx(1 / 24, rel=1e-14)


@pytest.mark.parametrize("order", [0, 5, 7])
def test_unsupported_order(order):
    with pytest.raises(ValueError, match="unsupported"):
        tri_quadrature(order)


# --- singular triangle integrals ------------------------------------------


def polar_inv_r(tri, p):
    """int_T 1/|r - p| for p in the plane of T, via a 1-D integral per sub-triangle.

    Around an in-plane apex the integrand in polar coordinates reduces to the
    distance from p to the opposite edge along each ray.
    """
    total = 0.0
    for k in range(3):
        a, b = tri[k], tri[(k + 1) % 3]
        ea, eb = a - p, b - p
        theta = np.arccos(np.clip(ea @ eb / np.linalg.norm(ea) / np.linalg.norm(eb), -1, 1))
        h = np.linalg.norm(np.cross(b - a, p - a)) / np.linalg.norm(b - a)
        alpha = np.arccos(np.clip((b - a) @ (p - a) / np.linalg.norm(b - a) / np.linalg.norm(p - a), -1, 1))
        # distance along a ray at angle phi from edge a is h / sin(alpha + phi)
        total += quad(lambda phi: h / np.sin(alpha + phi), 0.0, theta, epsabs=0, epsrel=1e-13)[0]
    return total


def test_triangle_far_field():
    p = np.array([0.3, 0.2, 100.0])
    assert analytic_inv_r_triangle(UNIT_TRI, p) == pytest.approx(0.5 / np.linalg.norm(p - [1 / 3, 1 / 3, 0]), rel=1e-4)


def test_triangle_at_centroid_matches_polar_oracle():
    tri = np.array([[0, 0, 0], [1.3, 0.1, 0], [0.2, 0.9, 0]], float)
    c = tri.mean(axis=0)
    assert analytic_inv_r_triangle(tri, c) == pytest.approx(polar_inv_r(tri, c), rel=1e-6)


@given(st.floats(0.05, 0.9), st.floats(0.05, 0.9))
def test_triangle_in_plane_points_match_polar_oracle(u, v):
    if u + v > 0.95:
        return
    p = np.array([u, v, 0.0])
    assert analytic_inv_r_triangle(UNIT_TRI, p) == pytest.approx(polar_inv_r(UNIT_TRI, p), rel=1e-8)


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_triangle_translation_invariance(shift, obs):
    shift, obs = np.array(shift), np.array(obs)
    a = analytic_inv_r_triangle(UNIT_TRI, obs)
    b = analytic_inv_r_triangle(UNIT_TRI + shift, obs + shift)
    assert b == pytest.approx(a, rel=1e-12, abs=1e-13)


@given(st.floats(5.0, 50.0), st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_triangle_far_agrees_with_order6(dist, direction):
    d = np.array(direction)
    if np.linalg.norm(d) < 0.1:
        return
    tri = np.array([[0, 0, 0], [1, 0.2, 0.1], [0.3, 0.8, -0.2]])
    diam = max(np.linalg.norm(tri[i] - tri[j]) for i in range(3) for j in range(3))
    p = tri.mean(axis=0) + (dist + 0.5) * diam * d / np.linalg.norm(d)
    q = tri_quadrature(6)
    pts = q.barycentric @ tri
    area2 = np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
    ref = area2 * np.sum(q.weights / np.linalg.norm(pts - p, axis=1))
    assert analytic_inv_r_triangle(tri, p) == pytest.approx(ref, rel=1e-8)


def test_degenerate_triangle_rejected():
    with pytest.raises(ValueError):
        analytic_inv_r_triangle(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float), [0, 1, 0])


def test_linear_and_gradient_closed_forms_against_quadrature():
    rng = np.random.default_rng(2)
    tri = UNIT_TRI + rng.normal(scale=0.1, size=(3, 3))
    q = tri_quadrature(6)
    area2 = np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
    for p in rng.normal(size=(5, 3)) * 3 + [0, 0, 8]:
        pts = q.barycentric @ tri
        R = np.linalg.norm(pts - p, axis=1)
        lin = area2 * (q.weights[:, None] * q.barycentric / R[:, None]).sum(0)
        np.testing.assert_allclose(integrals.triangle_linear_inv_r(p[None], tri[None])[0], lin, rtol=1e-8)
        grad = area2 * (q.weights[:, None] * -(p - pts) / R[:, None] ** 3).sum(0)
        np.testing.assert_allclose(integrals.triangle_grad_inv_r(p[None], tri[None])[0], grad, rtol=1e-7)
        lg = area2 * np.einsum("q,qj,qk->jk", q.weights, q.barycentric, -(p - pts) / R[:, None] ** 3)
        np.testing.assert_allclose(integrals.triangle_linear_grad_inv_r(p[None], tri[None])[0], lg, rtol=1e-7, atol=1e-12)


def test_near_gradient_matches_finite_difference():
    p = np.array([0.3, 0.25, 0.02])
    h = 1e-6
    fd = np.array([
        (integrals.triangle_linear_inv_r((p + h * e)[None], UNIT_TRI[None]) - integrals.triangle_linear_inv_r((p - h * e)[None], UNIT_TRI[None]))[0] / (2 * h)
        for e in np.eye(3)
    ]).T
    np.testing.assert_allclose(integrals.triangle_linear_grad_inv_r(p[None], UNIT_TRI[None])[0], fd, rtol=1e-6, atol=1e-8)


def test_tet_inv_r_interior_point():
    """Split the tet at p: each cone p-face gives 6V_sub * int_0^1 s ds * int_ref 1/|q - p|."""
    p = np.array([0.2, 0.25, 0.15])
    exact = integrals.tet_inv_r(p[None], UNIT_TET[None])[0]
    ref = 0.0
    for face in TET_FACES:
        tri = UNIT_TET[face]
        J6 = abs(np.dot(tri[0] - p, np.cross(tri[1] - p, tri[2] - p)))
        ref += J6 * 0.5 * _refined_face_mean(tri, p)
    assert exact == pytest.approx(ref, rel=1e-8)


def _refined_face_mean(tri, p, level=4):
    """int over the reference triangle of 1/|q(u,v) - p| by composite order-6 quadrature."""
    q = tri_quadrature(6)
    total = 0.0
    subs = [np.array([[0, 0], [1, 0], [0, 1]], float)]
    for _ in range(level):
        nxt = []
        for s in subs:
            m01, m12, m20 = (s[0] + s[1]) / 2, (s[1] + s[2]) / 2, (s[2] + s[0]) / 2
            nxt += [np.array([s[0], m01, m20]), np.array([m01, s[1], m12]), np.array([m20, m12, s[2]]), np.array([m12, m20, m01])]
        subs = nxt
    for s in subs:
        uv = q.barycentric @ s
        jac = abs(np.linalg.det(np.array([s[1] - s[0], s[2] - s[0]])))
        pts = tri[0] + uv[:, :1] * (tri[1] - tri[0]) + uv[:, 1:] * (tri[2] - tri[0])
        total += jac * np.sum(q.weights / np.linalg.norm(pts - p, axis=1))
    return total


def test_tet_gradient_matches_finite_difference():
    p = np.array([0.2, 0.25, 0.15])
    h = 1e-6
    fd = [(integrals.tet_inv_r((p + h * e)[None], UNIT_TET[None]) - integrals.tet_inv_r((p - h * e)[None], UNIT_TET[None]))[0] / (2 * h) for e in np.eye(3)]
    np.testing.assert_allclose(integrals.tet_grad_inv_r(p[None], UNIT_TET[None])[0], fd, rtol=1e-6)


def test_segment_integrals_against_quad():
    a, b = np.array([0, 0, 0.0]), np.array([0.3, 0.1, 0.2])
    for p, reg in (([0.1, 0.2, -0.1], 0.0), ([0.15, 0.05, 0.1], 0.01), ([0.6, 0.2, 0.4], 0.0)):
        p = np.array(p)
        f = lambda s: 1.0 / np.sqrt(np.sum((a + s * (b - a) - p) ** 2) + reg**2)
        ref = quad(f, 0, 1, epsabs=0, epsrel=1e-13, limit=200)[0] * np.linalg.norm(b - a)
        assert integrals.segment_inv_r(p[None], a[None], b[None], reg)[0] == pytest.approx(ref, rel=1e-10)
        h = 1e-6
        fd = [(integrals.segment_inv_r((p + h * e)[None], a[None], b[None], reg) - integrals.segment_inv_r((p - h * e)[None], a[None], b[None], reg))[0] / (2 * h) for e in np.eye(3)]
        np.testing.assert_allclose(integrals.segment_grad_inv_r(p[None], a[None], b[None], reg)[0], fd, rtol=1e-6, atol=1e-8)


# --- pyramid basis ---------------------------------------------------------


def test_pyramid_value_at_own_vertex(sphere1):
    for m in (0, 7, 30):
        assert pyramid_eval(sphere1, m, sphere1.vertices[m]) == pytest.approx(1.0)


@given(st.integers(0, 79), st.floats(0, 1), st.floats(0, 1))
def test_pyramid_partition_of_unity(sphere1, t, u, v):
    if u + v > 1:
        u, v = 1 - u, 1 - v
    c = sphere1.corners[t]
    r = c[0] + u * (c[1] - c[0]) + v * (c[2] - c[0])
    total = sum(pyramid_eval(sphere1, m, r) for m in sphere1.triangles[t])
    assert total == pytest.approx(1.0, abs=1e-9)
    vals = [pyramid_eval(sphere1, m, r) for m in sphere1.triangles[t]]
    assert all(0.0 <= x <= 1.0 for x in vals)


def test_pyramid_outside_support(sphere1):
    far_vertex = int(np.argmin(sphere1.vertices @ sphere1.vertices[0]))
    with pytest.raises(SupportError):
        pyramid_eval(sphere1, 0, sphere1.vertices[far_vertex])


def test_pyramid_integrals_and_gram(sphere1):
    b = PyramidBasis(sphere1)
    assert b.integrals.sum() == pytest.approx(sphere1.area, rel=1e-14)
    assert b.gram.sum() == pytest.approx(sphere1.area, rel=1e-14)
    np.testing.assert_allclose(b.gram, b.gram.T)


# --- SWG basis -------------------------------------------------------------


@pytest.fixture(scope="module")
def ball_basis():
    return SwgBasis(generate_ball_tets(1.0, 0.5))


def test_swg_unit_flux(ball_basis):
    b = ball_basis
    faces = b.region.face_table[0]
    q = tri_quadrature(2)
    for f in range(0, b.size, 7):
        t = b.plus_tet[f]
        corners = b.region.vertices[faces[f]]
        n = np.cross(corners[1] - corners[0], corners[2] - corners[0])
        area = 0.5 * np.linalg.norm(n)
        n /= np.linalg.norm(n)
        # orient along the flux direction: away from the plus tet
        k = int(np.nonzero(b.tet_dofs[t] == f)[0][0])
        if np.dot(n, corners[0] - b.region.corners[t][k]) < 0:
            n = -n
        pts = q.barycentric @ corners
        vals = b.local_values(t, pts)[:, k]
        assert 2 * area * np.sum(q.weights * (vals @ n)) == pytest.approx(1.0, rel=1e-12)


def test_swg_divergence_theorem_per_tet(ball_basis):
    b = ball_basis
    q = tri_quadrature(2)
    for t in range(0, b.region.n_tets, 13):
        c = b.region.corners[t]
        for k in range(4):
            f = b.tet_dofs[t, k]
            flux = 0.0
            for face in TET_FACES:
                tri = c[face]
                n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
                pts = q.barycentric @ tri
                flux += np.sum(q.weights * (b.local_values(t, pts)[:, k] @ n))
            assert swg_div(b, f, t) * b.region.volumes[t] == pytest.approx(flux, rel=1e-12)


def test_swg_reference_tet_centroid():
    region = TetRegion(UNIT_TET, [[0, 1, 2, 3]], np.eye(3))
    b = SwgBasis(region)
    f = b.tet_dofs[0, 0]  # face opposite the origin
    centroid = UNIT_TET.mean(axis=0)
    # unit-flux normalisation: (r - v_opp) / (3 V) with V = 1/6
    np.testing.assert_allclose(swg_eval(b, f, centroid), (centroid - UNIT_TET[0]) / (3 * (1 / 6)), rtol=1e-14)
    assert swg_div(b, f, 0) == pytest.approx(6.0)


def test_swg_normal_continuity(ball_basis):
    b = ball_basis
    rng = np.random.default_rng(0)
    faces = b.region.face_table[0]
    interior = np.nonzero(b.minus_tet >= 0)[0]
    for f in interior[::11]:
        corners = b.region.vertices[faces[f]]
        n = np.cross(corners[1] - corners[0], corners[2] - corners[0])
        n /= np.linalg.norm(n)
        w = rng.dirichlet(np.ones(3))
        r = w @ corners
        vals = []
        for t in (b.plus_tet[f], b.minus_tet[f]):
            k = int(np.nonzero(b.tet_dofs[t] == f)[0][0])
            vals.append(b.local_values(t, r[None])[0, k] @ n)
        assert abs(vals[0] - vals[1]) < 1e-13 * max(1.0, abs(vals[0]))


def test_swg_outside_support(ball_basis):
    with pytest.raises(SupportError):
        swg_eval(ball_basis, 0, [5.0, 5.0, 5.0])


def test_swg_gram_symmetric_positive(ball_basis):
    G = ball_basis.gram
    np.testing.assert_allclose(G, G.T, atol=1e-14 * np.abs(G).max())
    assert np.linalg.eigvalsh(G).min() > 0


# --- wire hats -------------------------------------------------------------


@pytest.fixture(scope="module")
def two_segment_bundle():
    return WireBundle((np.array([[0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]]),), 0.01, 1.0)


def test_wire_hat_values(two_segment_bundle):
    assert wire_hat_eval(two_segment_bundle, 0, 1.0) == pytest.approx(1.0)
    assert wire_hat_eval(two_segment_bundle, 0, 0.5) == pytest.approx(0.5)
    assert wire_hat_eval(two_segment_bundle, 0, 2.0) == pytest.approx(0.5)


def test_wire_hats_vanish_at_tips(two_segment_bundle):
    assert wire_hat_eval(two_segment_bundle, 0, 0.0) == 0.0
    assert wire_hat_eval(two_segment_bundle, 0, 3.0) == 0.0
    b = WireHatBasis(two_segment_bundle)
    assert b.size == 1
    np.testing.assert_array_equal(b.seg_dofs, [[-1, 0], [0, -1]])


def test_wire_hat_outside_support(two_segment_bundle):
    with pytest.raises(SupportError):
        wire_hat_eval(two_segment_bundle, 0, 3.5)
    with pytest.raises(SupportError):
        wire_hat_eval(two_segment_bundle, 4, 1.0)


def test_wire_gram(two_segment_bundle):
    # int h^2 = L1/3 + L2/3
    assert WireHatBasis(two_segment_bundle).gram[0, 0] == pytest.approx(1.0)
