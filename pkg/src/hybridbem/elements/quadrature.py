"""Quadrature rules on the reference triangle, tetrahedron and segment.

Reference elements:

* triangle ``{(x, y): x, y >= 0, x + y <= 1}`` (measure 1/2)
* tetrahedron ``{(x, y, z) >= 0, x + y + z <= 1}`` (measure 1/6)
* segment ``[0, 1]`` (measure 1)

Points are returned in the reference coordinates above; callers map them
with barycentric coordinates ``(1 - sum(x), *x)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations

import numpy as np
from scipy.special import roots_jacobi

SUPPORTED_ORDERS = (1, 2, 3, 4, 6)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, dim) reference coordinates
    weights: np.ndarray  # (nq,), sum equals reference measure
    order: int

    @property
    def barycentric(self) -> np.ndarray:
        """Barycentric coordinates ``(nq, dim + 1)``, vertex 0 first."""
        return np.column_stack([1.0 - self.points.sum(axis=1), self.points])

    def __len__(self) -> int:
        return len(self.weights)


def _check_order(order: int) -> None:
    if order not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported quadrature order {order}; choose from {SUPPORTED_ORDERS}")


def _orbit3(a: float, b: float, c: float) -> list[tuple[float, float, float]]:
    return sorted(set(permutations((a, b, c))))


# Dunavant rules, barycentric orbits with weights normalised to 1.
_DUNAVANT = {
    2: [((2 / 3, 1 / 6, 1 / 6), 1 / 3)],
    4: [
        ((0.108103018168070, 0.445948490915965, 0.445948490915965), 0.223381589678011),
        ((0.816847572980459, 0.091576213509771, 0.091576213509771), 0.109951743655322),
    ],
    6: [
        ((0.501426509658179, 0.249286745170910, 0.249286745170910), 0.116786275726379),
        ((0.873821971016996, 0.063089014491502, 0.063089014491502), 0.050844906370207),
        ((0.053145049844817, 0.310352451033784, 0.636502499121399), 0.082851075618374),
    ],
}


@lru_cache(maxsize=None)
def tri_quadrature(order: int) -> QuadratureRule:
    """Symmetric positive rule exact for total degree ``order``."""
    _check_order(order)
    if order == 1:
        return QuadratureRule(np.array([[1 / 3, 1 / 3]]), np.array([0.5]), 1)
    key = 4 if order == 3 else order
    pts, wts = [], []
    for bary, w in _DUNAVANT[key]:
        for perm in _orbit3(*bary):
            pts.append(perm[1:])
            wts.append(w)
    weights = np.array(wts)
    weights *= 0.5 / weights.sum()
    return QuadratureRule(np.array(pts), weights, order)


def _conical_tet(n: int) -> tuple[np.ndarray, np.ndarray]:
    # Stroud conical product: Gauss-Jacobi in the collapsed coordinates.
    t1, w1 = roots_jacobi(n, 2.0, 0.0)
    t2, w2 = roots_jacobi(n, 1.0, 0.0)
    t3, w3 = np.polynomial.legendre.leggauss(n)
    a, b, c = (t1 + 1) / 2, (t2 + 1) / 2, (t3 + 1) / 2
    wa, wb, wc = w1 / 8, w2 / 4, w3 / 2
    A, B, C = np.meshgrid(a, b, c, indexing="ij")
    WA, WB, WC = np.meshgrid(wa, wb, wc, indexing="ij")
    x = A
    y = (1 - A) * B
    z = (1 - A) * (1 - B) * C
    pts = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
    return pts, (WA * WB * WC).ravel()


@lru_cache(maxsize=None)
def tet_quadrature(order: int) -> QuadratureRule:
    """Positive-weight rule on the reference tetrahedron."""
    _check_order(order)
    if order == 1:
        return QuadratureRule(np.array([[0.25, 0.25, 0.25]]), np.array([1 / 6]), 1)
    if order == 2:
        a, b = 0.585410196624969, 0.138196601125011
        bary = [(a, b, b, b), (b, a, b, b), (b, b, a, b), (b, b, b, a)]
        pts = np.array([p[1:] for p in bary])
        return QuadratureRule(pts, np.full(4, 1 / 24), 2)
    pts, wts = _conical_tet((order + 2) // 2)
    return QuadratureRule(pts, wts, order)


@lru_cache(maxsize=None)
def segment_quadrature(order: int) -> QuadratureRule:
    """Gauss-Legendre rule on ``[0, 1]``."""
    _check_order(order)
    n = (order + 2) // 2
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(((x + 1) / 2)[:, None], w / 2, order)
