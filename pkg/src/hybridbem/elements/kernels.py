"""Free-space Laplace Green function ``G = 1/(4 pi |r - r'|)``."""
from __future__ import annotations

import numpy as np

FOUR_PI = 4.0 * np.pi


def green(r, rp) -> float:
    d = np.linalg.norm(np.asarray(r, float) - np.asarray(rp, float))
    if d == 0:
        raise ValueError("coincident points")
    return 1.0 / (FOUR_PI * d)


def grad_green(r, rp) -> np.ndarray:
    """Gradient with respect to the observation point ``r``."""
    diff = np.asarray(r, float) - np.asarray(rp, float)
    d = np.linalg.norm(diff)
    if d == 0:
        raise ValueError("coincident points")
    return -diff / (FOUR_PI * d**3)


def inv_r_matrix(X: np.ndarray, Y: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Dense ``1/|x - y|``; pairs closer than ``floor`` give 0."""
    d2 = (
        np.einsum("ik,ik->i", X, X)[:, None]
        + np.einsum("jk,jk->j", Y, Y)[None, :]
        - 2.0 * X @ Y.T
    )
    # the expanded form loses accuracy at tiny separations; recompute those exactly
    small = d2 < 1e-6 * (np.einsum("ik,ik->i", X, X)[:, None] + 1e-300)
    if np.any(small):
        i, j = np.nonzero(small)
        d2[i, j] = np.sum((X[i] - Y[j]) ** 2, axis=1)
    with np.errstate(divide="ignore"):
        out = 1.0 / np.sqrt(np.maximum(d2, 0.0))
    out[d2 <= floor * floor] = 0.0
    return out


def grad_inv_r_matrices(X: np.ndarray, Y: np.ndarray, floor: float = 0.0):
    """Yield the three components of ``grad_x 1/|x - y|`` as dense matrices."""
    inv = inv_r_matrix(X, Y, floor)
    inv3 = inv * inv * inv
    for c in range(3):
        yield -(X[:, c : c + 1] - Y[None, :, c]) * inv3


def directional_inv_r_matrix(X: np.ndarray, D: np.ndarray, Y: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """``d . grad_x 1/|x - y|`` with one direction ``d`` per observation point."""
    inv = inv_r_matrix(X, Y, floor)
    proj = np.einsum("ik,ik->i", X, D)[:, None] - D @ Y.T
    return -proj * inv * inv * inv
