"""Canonical meshes: icospheres, tetrahedralised balls and cylinders, fibers."""
from __future__ import annotations

from itertools import permutations

import numpy as np

from .meshes import ElectrodeSet, MeshError, TetRegion, TriangleSurface, WireBundle

_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def generate_sphere_surface(radius: float, subdivision_level: int, layer_index: int = 1, center=(0.0, 0.0, 0.0)) -> TriangleSurface:
    """Icosphere with ``20 * 4**level`` triangles, vertices exactly on the sphere."""
    if radius <= 0 or subdivision_level < 0:
        raise ValueError("radius must be positive and level non-negative")
    verts, faces = _icosahedron()
    verts = list(verts)
    for _ in range(subdivision_level):
        cache: dict[tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = np.array(new)
    v = np.array(verts)
    v = v / np.linalg.norm(v, axis=1, keepdims=True) * radius + np.asarray(center, float)
    return TriangleSurface.closed(v, faces, layer_index)


def fibonacci_directions(count: int) -> np.ndarray:
    """Quasi-uniform unit vectors on the sphere (``+z`` when count is 1)."""
    if count == 1:
        return np.array([[0.0, 0.0, 1.0]])
    k = np.arange(count)
    z = 1.0 - (2.0 * k + 1.0) / count
    r = np.sqrt(1.0 - z * z)
    phi = k * _GOLDEN_ANGLE
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def sphere_electrodes(count: int, radius: float, upper_only: bool = False) -> ElectrodeSet:
    d = fibonacci_directions(2 * count if upper_only else count)
    if upper_only:
        d = d[d[:, 2] > 0][:count]
    return ElectrodeSet(radius * d, tuple(f"E{i + 1:03d}" for i in range(len(d))))


def _kuhn_grid(shape: tuple[int, int, int]) -> np.ndarray:
    """Conforming 6-tet (Kuhn) split of a structured hexahedral grid."""
    nx, ny, nz = shape
    idx = np.arange((nx + 1) * (ny + 1) * (nz + 1)).reshape(nx + 1, ny + 1, nz + 1)
    i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    unit = np.eye(3, dtype=int)
    tets = []
    for perm in permutations(range(3)):
        corner = np.zeros(3, dtype=int)
        path = [corner.copy()]
        for ax in perm:
            corner = corner + unit[ax]
            path.append(corner.copy())
        tets.append(np.stack([idx[i + p[0], j + p[1], k + p[2]] for p in path], axis=1))
    return np.concatenate(tets)


def _as_tensor(sigma_tensor, n: int) -> np.ndarray:
    s = np.asarray(sigma_tensor, float)
    if s.ndim == 0:
        s = s * np.eye(3)
    return np.broadcast_to(s, (n, 3, 3)).copy()


def generate_ball_tets(radius: float, target_edge: float, sigma_tensor=1.0, host_layer: int = 1, center=(0.0, 0.0, 0.0)) -> TetRegion:
    """Tetrahedralised ball from a cube grid mapped onto the ball.

    The boundary vertices lie exactly on the sphere.
    """
    if radius <= 0 or target_edge <= 0:
        raise ValueError("radius and target_edge must be positive")
    n = max(2, int(np.ceil(2.0 * radius / target_edge)))
    g = np.linspace(-1.0, 1.0, n + 1)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    x, y, z = X.ravel(), Y.ravel(), Z.ravel()
    x2, y2, z2 = x * x, y * y, z * z
    pts = np.column_stack(
        [
            x * np.sqrt(1 - y2 / 2 - z2 / 2 + y2 * z2 / 3),
            y * np.sqrt(1 - z2 / 2 - x2 / 2 + z2 * x2 / 3),
            z * np.sqrt(1 - x2 / 2 - y2 / 2 + x2 * y2 / 3),
        ]
    )
    tets = _kuhn_grid((n, n, n))
    verts = radius * pts + np.asarray(center, float)
    return TetRegion(verts, tets, _as_tensor(sigma_tensor, len(tets)), host_layer)


def generate_cylinder_tets(
    start, end, radius: float, n_cross: int, n_axial: int, sigma_tensor=1.0, host_layer: int = 1
) -> TetRegion:
    """Tetrahedralised circular cylinder (square grid mapped onto the disk)."""
    start, end = np.asarray(start, float), np.asarray(end, float)
    axis = end - start
    length = np.linalg.norm(axis)
    if radius <= 0 or length <= 0:
        raise ValueError("cylinder needs positive radius and length")
    lhat = axis / length
    helper = np.array([1.0, 0.0, 0.0]) if abs(lhat[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(lhat, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(lhat, e1)
    g = np.linspace(-1.0, 1.0, n_cross + 1)
    s = np.linspace(0.0, 1.0, n_axial + 1)
    U, V, S = np.meshgrid(g, g, s, indexing="ij")
    u, v, t = U.ravel(), V.ravel(), S.ravel()
    du = u * np.sqrt(1 - v * v / 2)
    dv = v * np.sqrt(1 - u * u / 2)
    verts = start + radius * (du[:, None] * e1 + dv[:, None] * e2) + (t * length)[:, None] * lhat
    tets = _kuhn_grid((n_cross, n_cross, n_axial))
    return TetRegion(verts, tets, _as_tensor(sigma_tensor, len(tets)), host_layer)


def longitudinal_tensor(direction, sigma_l: float, sigma_t: float) -> np.ndarray:
    """``sigma_l * l l^T + sigma_t * (I - l l^T)``."""
    l = np.asarray(direction, float)
    l = l / np.linalg.norm(l)
    P = np.outer(l, l)
    return sigma_l * P + sigma_t * (np.eye(3) - P)


def generate_radial_fibers(
    count: int, r_inner: float, r_outer: float, a: float, sigma_l: float, host_layer: int = 1, center=(0.0, 0.0, 0.0)
) -> WireBundle:
    """Straight fibers along quasi-uniform radial directions."""
    if not 0 < r_inner < r_outer:
        raise ValueError("need 0 < r_inner < r_outer")
    if a <= 0:
        raise MeshError("fiber radius must be positive")
    c = np.asarray(center, float)
    dirs = fibonacci_directions(count)
    fibers = tuple(np.stack([c + r_inner * d, c + r_outer * d]) for d in dirs)
    return WireBundle(fibers, np.full(count, a), np.full(count, sigma_l), host_layer)
