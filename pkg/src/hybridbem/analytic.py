"""Closed-form dipole fields, the concentric-sphere series and error metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FOUR_PI = 4.0 * np.pi


@dataclass(frozen=True)
class Dipole:
    """Current dipole ``p`` (A m) at ``position`` (m)."""

    position: np.ndarray
    moment: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, float).reshape(3))
        object.__setattr__(self, "moment", np.asarray(self.moment, float).reshape(3))

    def with_moment(self, moment) -> "Dipole":
        return Dipole(self.position, moment)


def dipole_infinite_potential(dipole: Dipole, sigma: float, points) -> np.ndarray:
    """``p . (r - r0) / (4 pi sigma |r - r0|^3)`` at each point."""
    pts = np.atleast_2d(np.asarray(points, float))
    d = pts - dipole.position
    R = np.linalg.norm(d, axis=1)
    if np.any(R == 0):
        raise ValueError("potential requested at the dipole location")
    return (d @ dipole.moment) / (FOUR_PI * sigma * R**3)


def dipole_infinite_gradient(dipole: Dipole, sigma: float, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, float))
    d = pts - dipole.position
    R = np.linalg.norm(d, axis=1)
    if np.any(R == 0):
        raise ValueError("gradient requested at the dipole location")
    pd = d @ dipole.moment
    return (dipole.moment[None, :] / R[:, None] ** 3 - 3.0 * (pd / R**5)[:, None] * d) / (FOUR_PI * sigma)


@dataclass(frozen=True)
class LayeredSphereModel:
    radii: tuple[float, ...]
    sigma: tuple[float, ...]
    n_max: int = 100
    tol: float = 1e-8

    def __post_init__(self):
        r = np.asarray(self.radii, float)
        s = np.asarray(self.sigma, float)
        if r.ndim != 1 or len(r) == 0 or len(r) != len(s):
            raise ValueError("radii and sigma must be non-empty and of equal length")
        if np.any(np.diff(r) <= 0) or r[0] <= 0:
            raise ValueError("radii must be positive and strictly increasing")
        if np.any(s <= 0):
            raise ValueError("conductivities must be positive")

    @property
    def n_layers(self) -> int:
        return len(self.radii)

    def layer_of(self, radius: np.ndarray) -> np.ndarray:
        """1-based layer index (points on an interface go to the inner layer)."""
        return np.searchsorted(np.asarray(self.radii), radius, side="left") + 1


def _mode_matrix(model: LayeredSphereModel, n: int) -> np.ndarray:
    """Interface conditions for the scaled radial functions of degree ``n``.

    Layer ``j`` carries ``a_j (r/r_j)^n + b_j (r_{j-1}/r)^(n+1)``; ``b_1`` is
    absent. Unknown order: ``a_1, a_2, b_2, ..., a_N, b_N``.
    """
    r = np.asarray(model.radii, float)
    s = np.asarray(model.sigma, float)
    N = len(r)
    size = 2 * N - 1

    def col(j, which):  # 1-based layer
        return 0 if (j == 1) else 2 * (j - 1) - 1 + which

    def basis(j, which, x):
        """Value and r-derivative of the scaled basis at radius x."""
        if which == 0:
            v = (x / r[j - 1]) ** n
            return v, n * v / x
        v = (r[j - 2] / x) ** (n + 1)
        return v, -(n + 1) * v / x

    M = np.zeros((size, size))
    row = 0
    for k in range(1, N):  # interface between layers k and k+1 at r_k
        x = r[k - 1]
        for j, sign in ((k, 1.0), (k + 1, -1.0)):
            for which in ((0,) if j == 1 else (0, 1)):
                v, dv = basis(j, which, x)
                M[row, col(j, which)] += sign * v
                M[row + 1, col(j, which)] += sign * s[j - 1] * dv
        row += 2
    for which in ((0,) if N == 1 else (0, 1)):
        _, dv = basis(N, which, r[-1])
        M[row, col(N, which)] = dv
    return M


def _source_terms(model: LayeredSphereModel, s_layer: int, n: int, r0: float, sigma_s: float):
    """Forcing of the primary field at every interface for the radial and tangential parts.

    Returns ``(rhs_radial, rhs_tangential)`` with the primary field moved to
    the right-hand side; the radial part excludes the factor ``p . r0_hat``.
    """
    r = np.asarray(model.radii, float)
    s = np.asarray(model.sigma, float)
    N = len(r)
    size = 2 * N - 1
    rhs = np.zeros((2, size))
    c = 1.0 / (FOUR_PI * sigma_s)
    q_out = np.array([n, 1.0])
    q_in = np.array([-(n + 1.0), 1.0])

    def primary(x):
        if x > r0:
            v = c * q_out * (r0 / x) ** (n - 1) / (x * x)
            return v, -(n + 1) * v / x
        v = c * q_in * (x / r0) ** n / (r0 * r0)
        return v, n * v / x

    row = 0
    for k in range(1, N):
        x = r[k - 1]
        v, dv = primary(x)
        if s_layer == k:
            rhs[:, row] -= v
            rhs[:, row + 1] -= s[k - 1] * dv
        elif s_layer == k + 1:
            rhs[:, row] += v
            rhs[:, row + 1] += s[k] * dv
        row += 2
    if s_layer == N:
        _, dv = primary(r[-1])
        rhs[:, row] -= dv
    return rhs[0], rhs[1]


def _legendre_with_derivative(x: np.ndarray, nmax: int) -> tuple[np.ndarray, np.ndarray]:
    P = np.zeros((nmax + 1,) + x.shape)
    dP = np.zeros_like(P)
    P[0] = 1.0
    if nmax >= 1:
        P[1] = x
        dP[1] = 1.0
    for n in range(1, nmax):
        P[n + 1] = ((2 * n + 1) * x * P[n] - n * P[n - 1]) / (n + 1)
        dP[n + 1] = dP[n - 1] + (2 * n + 1) * P[n]
    return P, dP


_HARD_CAP = 4000


def analytic_layered_sphere(model: LayeredSphereModel, dipole: Dipole, points) -> np.ndarray:
    """Potential of a dipole in concentric spheres (air outside) by Legendre series.

    The dipole may sit in any layer; points may lie in any layer. The series
    is extended beyond ``model.n_max`` until the geometric tail estimate
    falls below ``model.tol`` relative to the largest potential.
    """
    pts = np.atleast_2d(np.asarray(points, float))
    r = np.asarray(model.radii, float)
    N = len(r)
    r0v = dipole.position
    r0 = float(np.linalg.norm(r0v))
    if r0 >= r[-1]:
        raise ValueError("eccentricity >= 1: dipole must lie strictly inside the outer sphere")
    if np.any(np.isclose(r0, r[:-1], rtol=1e-12, atol=0)):
        raise ValueError("dipole lies on an interface")
    s_layer = int(model.layer_of(np.array([r0]))[0])
    sigma_s = model.sigma[s_layer - 1]
    p = dipole.moment
    if r0 > 0:
        u0 = r0v / r0
    else:
        pn = np.linalg.norm(p)
        u0 = p / pn if pn > 0 else np.array([0.0, 0.0, 1.0])
    p_r = float(p @ u0)

    rr = np.linalg.norm(pts, axis=1)
    if np.any(rr > r[-1] * (1 + 1e-9)):
        raise ValueError("evaluation points must lie inside the outer sphere")
    if np.any(rr == 0):
        raise ValueError("evaluation at the sphere center is not supported")
    uhat = pts / rr[:, None]
    cosg = np.clip(uhat @ u0, -1.0, 1.0)
    tang = uhat @ p - cosg * p_r
    layer = np.minimum(model.layer_of(rr), N)

    # geometric decay of the secondary field is set by the interface nearest the dipole
    ratio = 0.0 if r0 == 0 else max(min(r0, x) / max(r0, x) for x in r)

    out = np.zeros(len(pts))
    if np.any(r[:-1] < r0):
        # interfaces inside the dipole radius see a monopole-like n = 0 term;
        # its constant is a gauge choice fixed by a_1 = 0
        M = _mode_matrix(model, 0)
        rad, _ = _source_terms(model, s_layer, 0, r0, sigma_s)
        coef = np.zeros(2 * N - 1)
        coef[1:] = np.linalg.lstsq(M[:, 1:], rad, rcond=None)[0]
        for j in range(2, N + 1):
            sel = layer == j
            a_idx = 2 * (j - 1) - 1
            out[sel] += p_r * (coef[a_idx] + coef[a_idx + 1] * r[j - 2] / rr[sel])
    n = 0
    chunk = 64
    P = dP = None
    while True:
        n_hi = n + chunk
        P, dP = _legendre_with_derivative(cosg, n_hi)
        recent = []
        for m in range(n + 1, n_hi + 1):
            M = _mode_matrix(model, m)
            rad, tan = _source_terms(model, s_layer, m, r0, sigma_s)
            coef = np.linalg.solve(M, np.column_stack([rad, tan]))  # (2N-1, 2)
            term = np.zeros(len(pts))
            for j in range(1, N + 1):
                sel = layer == j
                if not np.any(sel):
                    continue
                x = rr[sel]
                a_idx = 0 if j == 1 else 2 * (j - 1) - 1
                vals = coef[a_idx] * ((x / r[j - 1]) ** m)[:, None]
                if j > 1:
                    vals = vals + coef[a_idx + 1] * ((r[j - 2] / x) ** (m + 1))[:, None]
                term[sel] = vals[:, 0] * p_r * P[m, sel] + vals[:, 1] * dP[m, sel] * tang[sel]
            out += term
            recent.append(float(np.abs(term).max()))
        n = n_hi
        last = max(recent[-8:])
        if r0 == 0:
            break
        scale = max(float(np.abs(out).max()), 1e-300)
        tail = last * ratio / max(1.0 - ratio, 1e-12)
        if n >= model.n_max and tail < model.tol * scale:
            break
        if n >= _HARD_CAP:
            raise RuntimeError(f"series did not converge within {_HARD_CAP} terms")
    in_s = layer == s_layer
    if np.any(in_s):
        out[in_s] += dipole_infinite_potential(dipole, sigma_s, pts[in_s])
    return out


def _referenced(u) -> np.ndarray:
    u = np.asarray(u, float).ravel()
    return u - u.mean()


def relative_error(u, v) -> float:
    """``||u - v|| / ||v||`` after removing the mean of both vectors."""
    u, v = _referenced(u), _referenced(v)
    if u.shape != v.shape:
        raise ValueError("vectors must have equal length")
    nv = np.linalg.norm(v)
    if nv == 0:
        raise ValueError("zero reference vector")
    return float(np.linalg.norm(u - v) / nv)


def rdm(u, v) -> float:
    u, v = _referenced(u), _referenced(v)
    if u.shape != v.shape:
        raise ValueError("vectors must have equal length")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nv == 0 or nu == 0:
        raise ValueError("zero reference vector")
    return float(np.linalg.norm(u / nu - v / nv))


def mag(u, v) -> float:
    u, v = _referenced(u), _referenced(v)
    if u.shape != v.shape:
        raise ValueError("vectors must have equal length")
    nv = np.linalg.norm(v)
    if nv == 0:
        raise ValueError("zero reference vector")
    return float(np.linalg.norm(u) / nv)
