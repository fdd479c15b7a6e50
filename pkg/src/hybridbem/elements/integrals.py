"""Closed-form potential integrals of the Laplace kernel.

All routines are vectorised over *matched* arrays of observation points and
elements (one element per observation point) and return integrals of the
bare kernel ``1/R``; the ``1/(4 pi)`` factor of the Green function is applied
by the callers.

Flat triangles use the edge decomposition of Wilton et al. / Graglia:
with ``d`` the signed height of the observation point above the plane,
``t_i`` the in-plane distance to edge ``i`` and ``f_i`` the edge logarithm,

    int 1/R dA    = sum_i t_i f_i - d * Omega
    int rho'/R dA = 1/2 sum_i u_i (R0_i^2 f_i + l+ R+ - l- R-)

where ``Omega = int d/R^3 dA`` is the signed solid angle (zero in-plane, the
principal value).
"""
from __future__ import annotations

import numpy as np

FOUR_PI = 4.0 * np.pi

# Tet faces with outward orientation for a positively oriented tet.
TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])

_INPLANE_TOL = 1e-10


def _dot(a, b):
    return np.einsum("...k,...k->...", a, b)


def _norm(a):
    return np.sqrt(_dot(a, a))


def _edge_log(lm, lp, Rm, Rp, R0sq):
    """Stable ``ln((R+ + l+)/(R- + l-))``; zero on the edge line itself."""
    with np.errstate(divide="ignore", invalid="ignore"):
        neg = (lp + lm) < 0
        # mirrored form avoids cancellation when the segment lies behind
        num = np.where(neg, Rm - lm, Rp + lp)
        den = np.where(neg, Rp - lp, Rm + lm)
        f = np.log(num / den)
    bad = ~np.isfinite(f)
    if np.any(bad):
        f = np.where(bad, 0.0, f)
    return f


def signed_solid_angle(obs: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """``int_T d/R^3 dA`` with ``d = n.(r - r')``; 0 for in-plane points.

    ``obs`` is ``(P, 3)``, ``tri`` is ``(P, 3, 3)``. The sign is positive on the
    side the triangle normal (right-hand rule) points to.
    """
    a = tri[:, 0] - obs
    b = tri[:, 1] - obs
    c = tri[:, 2] - obs
    la, lb, lc = _norm(a), _norm(b), _norm(c)
    num = _dot(a, np.cross(b, c))
    den = la * lb * lc + _dot(a, b) * lc + _dot(a, c) * lb + _dot(b, c) * la
    omega = -2.0 * np.arctan2(num, den)
    inplane = np.abs(num) <= _INPLANE_TOL * np.maximum(la * lb * lc, 1e-300)
    return np.where(inplane, 0.0, omega)


class _TriangleFrame:
    """Per-pair geometric quantities shared by potential and gradient."""

    def __init__(self, obs: np.ndarray, tri: np.ndarray):
        v = tri
        e = np.roll(v, -1, axis=1) - v  # edge i: v_i -> v_{i+1}
        cross = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        twice_area = _norm(cross)
        if np.any(twice_area <= 0):
            raise ValueError("degenerate triangle")
        n = cross / twice_area[:, None]
        L = _norm(e)
        lhat = e / L[..., None]
        uhat = np.cross(lhat, n[:, None, :])
        rel = v - obs[:, None, :]  # v_i - r
        relp = np.roll(rel, -1, axis=1)  # v_{i+1} - r
        self.d = _dot(obs - v[:, 0], n)
        self.n = n
        self.uhat = uhat
        self.lm = _dot(rel, lhat)
        self.lp = _dot(relp, lhat)
        self.t = _dot(rel, uhat)
        self.Rm = _norm(rel)
        self.Rp = np.roll(self.Rm, -1, axis=1)
        self.R0sq = self.t**2 + self.d[:, None] ** 2
        self.L = L
        self.f = _edge_log(self.lm, self.lp, self.Rm, self.Rp, self.R0sq)
        on_line = self.R0sq <= (1e-14 * L) ** 2
        self.tf = np.where(on_line, 0.0, self.t * self.f)
        self.omega = signed_solid_angle(obs, tri)
        self.twice_area = twice_area
        # barycentric gradients (in-plane) and values at the projection
        opp = np.roll(v, -2, axis=1) - np.roll(v, -1, axis=1)  # v_{j+2} - v_{j+1}
        self.g = np.cross(n[:, None, :], opp) / twice_area[:, None, None]
        proj = obs - self.d[:, None] * n
        self.lam = 1.0 + _dot(self.g, proj[:, None, :] - v)

    def inv_r(self):
        return self.tf.sum(axis=1) - self.d * self.omega

    def rho_over_r(self):
        edge = np.where(self.R0sq > 0, self.R0sq * self.f, 0.0) + self.lp * self.Rp - self.lm * self.Rm
        return 0.5 * np.einsum("pi,pik->pk", edge, self.uhat)


def triangle_inv_r(obs: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Exact ``int_T 1/|r - r'| dA'`` for matched ``(P,3)`` points, ``(P,3,3)`` triangles."""
    return _TriangleFrame(np.asarray(obs, float), np.asarray(tri, float)).inv_r()


def triangle_linear_inv_r(obs: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """``int_T lambda_j(r')/|r - r'| dA'`` for the three vertex hats, shape ``(P, 3)``."""
    fr = _TriangleFrame(np.asarray(obs, float), np.asarray(tri, float))
    i1 = fr.inv_r()
    irho = fr.rho_over_r()
    return fr.lam * i1[:, None] + np.einsum("pjk,pk->pj", fr.g, irho)


def triangle_grad_inv_r(obs: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the observation point of ``int_T 1/R dA'``, ``(P, 3)``.

    In-plane observation points receive the principal value (no normal jump).
    """
    fr = _TriangleFrame(np.asarray(obs, float), np.asarray(tri, float))
    return -np.einsum("pi,pik->pk", fr.f, fr.uhat) - fr.omega[:, None] * fr.n


def triangle_linear_grad_inv_r(obs: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Gradient of ``int_T lambda_j/R dA'`` for the three hats, shape ``(P, 3, 3)``.

    Axis 1 is the hat index, axis 2 the gradient component.
    """
    fr = _TriangleFrame(np.asarray(obs, float), np.asarray(tri, float))
    i1 = fr.inv_r()
    # hat j on edge i: value delta_ij at v_i, delta_{j,i+1} at v_{i+1}
    eye = np.eye(3)
    lam_m = eye[None, :, :]  # [., i, j] = delta_ij
    lam_p = np.roll(eye, -1, axis=0)[None, :, :]  # delta_{j, i+1}
    slope = (lam_p - lam_m) / fr.L[:, :, None]
    edge_int = (
        lam_m * fr.f[:, :, None]
        + slope * ((fr.Rp - fr.Rm) - fr.lm * fr.f)[:, :, None]
    )  # (P, i, j)
    grad = fr.g * i1[:, None, None] - np.einsum("pij,pik->pjk", edge_int, fr.uhat)
    uf = np.einsum("pi,pik->pk", fr.f, fr.uhat)
    normal = -fr.lam * fr.omega[:, None] + fr.d[:, None] * np.einsum("pjk,pk->pj", fr.g, uf)
    return grad + normal[:, :, None] * fr.n[:, None, :]


def segment_inv_r(obs: np.ndarray, a: np.ndarray, b: np.ndarray, reg: np.ndarray | float = 0.0) -> np.ndarray:
    """``int_a^b dl / sqrt(|r - r(l)|^2 + reg^2)`` for matched points and segments."""
    obs, a, b = (np.asarray(x, float) for x in (obs, a, b))
    ax = b - a
    L = _norm(ax)
    lhat = ax / L[:, None]
    lm = _dot(a - obs, lhat)
    lp = _dot(b - obs, lhat)
    reg2 = np.broadcast_to(np.asarray(reg, float) ** 2, lm.shape)
    Rm = np.sqrt(_dot(a - obs, a - obs) + reg2)
    Rp = np.sqrt(_dot(b - obs, b - obs) + reg2)
    perp = (obs - a) - _dot(obs - a, lhat)[:, None] * lhat
    R0sq = _dot(perp, perp) + reg2
    return _edge_log(lm, lp, Rm, Rp, R0sq)


def segment_grad_inv_r(obs: np.ndarray, a: np.ndarray, b: np.ndarray, reg: np.ndarray | float = 0.0) -> np.ndarray:
    """Gradient w.r.t. ``obs`` of :func:`segment_inv_r`, shape ``(P, 3)``."""
    obs, a, b = (np.asarray(x, float) for x in (obs, a, b))
    ax = b - a
    L = _norm(ax)
    lhat = ax / L[:, None]
    lm = _dot(a - obs, lhat)
    lp = _dot(b - obs, lhat)
    reg2 = np.broadcast_to(np.asarray(reg, float) ** 2, lm.shape)
    Rm = np.sqrt(_dot(a - obs, a - obs) + reg2)
    Rp = np.sqrt(_dot(b - obs, b - obs) + reg2)
    perp = (obs - a) - _dot(obs - a, lhat)[:, None] * lhat
    R0sq = _dot(perp, perp) + reg2
    with np.errstate(divide="ignore", invalid="ignore"):
        radial = (lp / Rp - lm / Rm) / R0sq
    radial = np.where(np.isfinite(radial), radial, 0.0)
    return -perp * radial[:, None] + lhat * (1.0 / Rm - 1.0 / Rp)[:, None]


def _tet_faces(tet: np.ndarray) -> np.ndarray:
    return tet[:, TET_FACES]  # (P, 4, 3, 3)


def tet_inv_r(obs: np.ndarray, tet: np.ndarray) -> np.ndarray:
    """``int_T 1/R dV'`` for positively oriented tets ``(P, 4, 3)``."""
    obs = np.asarray(obs, float)
    faces = _tet_faces(np.asarray(tet, float))
    P = len(obs)
    flat = faces.reshape(P * 4, 3, 3)
    rep = np.repeat(obs, 4, axis=0)
    fr = _TriangleFrame(rep, flat)
    i1 = fr.inv_r().reshape(P, 4)
    h = -fr.d.reshape(P, 4)  # n.(x_f - r)
    return 0.5 * (h * i1).sum(axis=1)


def tet_grad_inv_r(obs: np.ndarray, tet: np.ndarray) -> np.ndarray:
    """Gradient of :func:`tet_inv_r`: ``-sum_f n_f int_f 1/R dA``."""
    obs = np.asarray(obs, float)
    faces = _tet_faces(np.asarray(tet, float))
    P = len(obs)
    flat = faces.reshape(P * 4, 3, 3)
    rep = np.repeat(obs, 4, axis=0)
    fr = _TriangleFrame(rep, flat)
    i1 = fr.inv_r().reshape(P, 4)
    n = fr.n.reshape(P, 4, 3)
    return -np.einsum("pf,pfk->pk", i1, n)


def analytic_inv_r_triangle(triangle: np.ndarray, point: np.ndarray) -> float:
    """Exact ``int_T 1/|r - r'| dT'`` for a single triangle ``(3, 3)`` and point."""
    tri = np.asarray(triangle, float)[None]
    return float(triangle_inv_r(np.asarray(point, float)[None], tri)[0])
