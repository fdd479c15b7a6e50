"""Mesh containers for nested surfaces, tetrahedral regions, fibers and electrodes.

Every container is immutable after construction: arrays are stored
read-only so instances can be shared freely between threads.
Layer indices are 1-based, matching compartment numbering: surface ``i``
bounds compartment ``i`` from outside, compartment ``N + 1`` is air.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ..elements.integrals import TET_FACES, signed_solid_angle


class MeshError(ValueError):
    """Raised for structurally invalid meshes."""


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------
# surfaces
# --------------------------------------------------------------------------


def _edge_counts(triangles: np.ndarray) -> tuple[Counter, Counter]:
    directed = Counter()
    for t in triangles:
        for k in range(3):
            directed[(int(t[k]), int(t[(k + 1) % 3]))] += 1
    undirected = Counter()
    for (a, b), c in directed.items():
        undirected[(min(a, b), max(a, b))] += c
    return directed, undirected


def orient_closed_surface(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Check closedness/orientation and return outward-oriented triangles.

    Only a global flip is attempted; mixed orientation is reported, not repaired.
    """
    triangles = np.asarray(triangles, dtype=np.int64)
    directed, undirected = _edge_counts(triangles)
    boundary = sum(1 for c in undirected.values() if c == 1)
    if boundary:
        raise MeshError(f"open mesh: {boundary} boundary edges")
    nonmanifold = sum(1 for c in undirected.values() if c > 2)
    if nonmanifold:
        raise MeshError(f"non-manifold mesh: {nonmanifold} edges shared by more than 2 triangles")
    mixed = sum(1 for c in directed.values() if c != 1)
    if mixed:
        raise MeshError(f"inconsistent orientation: {mixed // 2} edges traversed twice in the same direction")
    if _signed_volume(vertices, triangles) < 0:
        triangles = triangles[:, ::-1]
    return triangles


def _signed_volume(vertices, triangles) -> float:
    v = np.asarray(vertices, float)[triangles]
    return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)


@dataclass(frozen=True, eq=False)
class TriangleSurface:
    vertices: np.ndarray
    triangles: np.ndarray
    layer_index: int = 1

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices, float))
        object.__setattr__(self, "triangles", _frozen(self.triangles, np.int64))
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshError("vertices must be an (n, 3) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be an (m, 3) array")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise MeshError("triangle index out of range")

    @classmethod
    def closed(cls, vertices, triangles, layer_index: int = 1) -> "TriangleSurface":
        """Validated constructor: closed, manifold, outward oriented."""
        tris = orient_closed_surface(np.asarray(vertices, float), triangles)
        surf = cls(vertices, tris, layer_index)
        if np.any(surf.areas <= 0):
            raise MeshError("degenerate triangle (zero area)")
        return surf

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def corners(self) -> np.ndarray:
        return self.vertices[self.triangles]

    @cached_property
    def _cross(self) -> np.ndarray:
        c = self.corners
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    @cached_property
    def normals(self) -> np.ndarray:
        return self._cross / (2.0 * self.areas[:, None])

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.corners.mean(axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        c = self.corners
        return np.max(np.linalg.norm(c - np.roll(c, 1, axis=1), axis=2), axis=1)

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    @property
    def signed_volume(self) -> float:
        return _signed_volume(self.vertices, self.triangles)

    @cached_property
    def edges(self) -> np.ndarray:
        e = np.sort(np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]]), axis=1)
        return np.unique(e, axis=0)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_triangles

    def mean_edge_length(self) -> float:
        e = self.edges
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())

    def winding_number(self, points: np.ndarray) -> np.ndarray:
        """Generalised winding number (1 inside, 0 outside) via solid angles."""
        points = np.atleast_2d(np.asarray(points, float))
        out = np.empty(len(points))
        T = self.n_triangles
        chunk = max(1, 400_000 // T)
        for s in range(0, len(points), chunk):
            p = points[s : s + chunk]
            obs = np.repeat(p, T, axis=0)
            tri = np.tile(self.corners, (len(p), 1, 1))
            # signed_solid_angle is positive on the normal side; inside is the opposite side
            om = -signed_solid_angle(obs, tri).reshape(len(p), T).sum(axis=1)
            out[s : s + chunk] = om / (4.0 * np.pi)
        return out

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.winding_number(points) > 0.5

    def closest_points(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Nearest surface point per query; returns ``(points, distances, triangle ids)``."""
        points = np.atleast_2d(np.asarray(points, float))
        best_p = np.empty_like(points)
        best_d = np.full(len(points), np.inf)
        best_t = np.zeros(len(points), dtype=np.int64)
        for i, p in enumerate(points):
            q = _closest_on_triangles(p, self.corners)
            dist = np.linalg.norm(q - p, axis=1)
            k = int(np.argmin(dist))
            best_p[i], best_d[i], best_t[i] = q[k], dist[k], k
        return best_p, best_d, best_t

    def flipped(self) -> "TriangleSurface":
        return TriangleSurface(self.vertices, self.triangles[:, ::-1], self.layer_index)

    def with_layer(self, layer_index: int) -> "TriangleSurface":
        return TriangleSurface(self.vertices, self.triangles, layer_index)


def _closest_on_triangles(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Closest point on each triangle to ``p`` (Ericson's region test)."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        out = a + ab * v[:, None] + ac * w[:, None]
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    # edge and vertex regions, applied in increasing priority order
    m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    out[m] = b[m] + (c[m] - b[m]) * t_bc[m, None]
    m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    out[m] = a[m] + ac[m] * t_ac[m, None]
    m = (d6 >= 0) & (d5 <= d6)
    out[m] = c[m]
    m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    out[m] = a[m] + ab[m] * t_ab[m, None]
    m = (d3 >= 0) & (d4 <= d3)
    out[m] = b[m]
    m = (d1 <= 0) & (d2 <= 0)
    out[m] = a[m]
    return out


# --------------------------------------------------------------------------
# nested head model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NestingCheck:
    inner: int
    outer: int
    passed: bool
    n_outside: int


@dataclass(frozen=True)
class NestingReport:
    checks: tuple[NestingCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[str]:
        return [
            f"surface {c.inner} not inside surface {c.outer} ({c.n_outside} vertices outside)"
            for c in self.checks
            if not c.passed
        ]


@dataclass(frozen=True, eq=False)
class NestedHeadModel:
    """Surfaces ordered innermost to outermost with background conductivities."""

    surfaces: tuple[TriangleSurface, ...]
    sigma: tuple[float, ...]

    def __post_init__(self):
        surfaces = tuple(s.with_layer(i + 1) if s.layer_index != i + 1 else s for i, s in enumerate(self.surfaces))
        object.__setattr__(self, "surfaces", surfaces)
        object.__setattr__(self, "sigma", tuple(float(s) for s in self.sigma))
        if not surfaces:
            raise MeshError("a head model needs at least one surface")
        if len(self.sigma) != len(surfaces):
            raise MeshError(f"{len(surfaces)} surfaces but {len(self.sigma)} conductivities")
        if any(s <= 0 for s in self.sigma):
            raise MeshError("background conductivities must be positive")

    @property
    def n_layers(self) -> int:
        return len(self.surfaces)

    def sigma_of(self, layer: int) -> float:
        """Background conductivity of compartment ``layer`` (air is 0)."""
        return 0.0 if layer == self.n_layers + 1 else self.sigma[layer - 1]

    def compartment_of(self, points: np.ndarray) -> np.ndarray:
        """1-based compartment index per point (``N + 1`` outside the head)."""
        points = np.atleast_2d(np.asarray(points, float))
        comp = np.full(len(points), self.n_layers + 1, dtype=np.int64)
        for i in reversed(range(self.n_layers)):
            comp[self.surfaces[i].contains(points)] = i + 1
        return comp

    def scaled(self, gamma: float) -> "NestedHeadModel":
        return NestedHeadModel(self.surfaces, tuple(gamma * s for s in self.sigma))


def validate_nesting(model: NestedHeadModel) -> NestingReport:
    checks = []
    for i in range(model.n_layers - 1):
        inner, outer = model.surfaces[i], model.surfaces[i + 1]
        w = outer.winding_number(inner.vertices)
        n_out = int(np.sum(w < 0.5))
        checks.append(NestingCheck(i + 1, i + 2, n_out == 0, n_out))
    return NestingReport(tuple(checks))


# --------------------------------------------------------------------------
# tetrahedral regions
# --------------------------------------------------------------------------


def tet_signed_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    v = np.asarray(vertices, float)[tets]
    return np.einsum("ij,ij->i", v[:, 1] - v[:, 0], np.cross(v[:, 2] - v[:, 0], v[:, 3] - v[:, 0])) / 6.0


def check_spd(tensors: np.ndarray) -> None:
    tensors = np.asarray(tensors, float)
    if not np.allclose(tensors, np.swapaxes(tensors, 1, 2), rtol=0, atol=1e-12 * max(1.0, np.abs(tensors).max())):
        raise MeshError("tensor not symmetric")
    eig = np.linalg.eigvalsh(tensors)
    bad = np.nonzero(eig[:, 0] <= 0)[0]
    if len(bad):
        raise MeshError(f"tensor not positive definite (element {int(bad[0])}, eigenvalue {eig[bad[0], 0]:.3g})")


@dataclass(frozen=True, eq=False)
class TetRegion:
    vertices: np.ndarray
    tets: np.ndarray
    sigma: np.ndarray  # (nk, 3, 3)
    host_layer: int = 1

    def __post_init__(self):
        verts = np.asarray(self.vertices, float)
        tets = np.array(self.tets, dtype=np.int64)
        sigma = np.asarray(self.sigma, float)
        if sigma.shape == (3, 3):
            sigma = np.broadcast_to(sigma, (len(tets), 3, 3))
        if sigma.shape != (len(tets), 3, 3):
            raise MeshError("one 3x3 conductivity tensor per tet required")
        vol = tet_signed_volumes(verts, tets)
        scale = np.abs(vol).max() if len(vol) else 1.0
        if np.any(np.abs(vol) <= 1e-12 * scale) or np.any(vol == 0):
            raise MeshError("zero-volume tet")
        neg = vol < 0
        tets[neg] = tets[neg][:, [0, 2, 1, 3]]
        check_spd(sigma)
        object.__setattr__(self, "vertices", _frozen(verts, float))
        object.__setattr__(self, "tets", _frozen(tets, np.int64))
        object.__setattr__(self, "sigma", _frozen(sigma, float))

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @cached_property
    def corners(self) -> np.ndarray:
        return self.vertices[self.tets]

    @cached_property
    def volumes(self) -> np.ndarray:
        return tet_signed_volumes(self.vertices, self.tets)

    @property
    def volume(self) -> float:
        return float(self.volumes.sum())

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.corners.mean(axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        c = self.corners
        i, j = np.triu_indices(4, 1)
        return np.linalg.norm(c[:, i] - c[:, j], axis=2).max(axis=1)

    @cached_property
    def face_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique faces and, per tet, its 4 face ids (face ``k`` opposite vertex ``k``)."""
        local = self.tets[:, TET_FACES]  # (nk, 4, 3) outward oriented
        keys = np.sort(local.reshape(-1, 3), axis=1)
        faces, inverse = np.unique(keys, axis=0, return_inverse=True)
        return faces, inverse.reshape(-1, 4)

    def adjacency(self) -> dict[int, tuple[int, int]]:
        """Interior faces mapped to their two tets (lower index first)."""
        faces, tet_faces = self.face_table
        owners: dict[int, list[int]] = {}
        for t, row in enumerate(tet_faces):
            for f in row:
                owners.setdefault(int(f), []).append(t)
        out = {}
        for f, ts in owners.items():
            if len(ts) > 2:
                raise MeshError(f"face {f} shared by {len(ts)} tets")
            if len(ts) == 2:
                out[f] = (ts[0], ts[1])
        return out

    def boundary_surface(self, layer_index: int = 1) -> TriangleSurface:
        """Outward boundary triangulation of the region."""
        faces, tet_faces = self.face_table
        counts = np.bincount(tet_faces.ravel(), minlength=len(faces))
        local = self.tets[:, TET_FACES].reshape(-1, 3)
        mask = counts[tet_faces.ravel()] == 1
        tris = local[mask]
        used, remap = np.unique(tris, return_inverse=True)
        return TriangleSurface.closed(self.vertices[used], remap.reshape(-1, 3), layer_index)

    def with_sigma(self, sigma) -> "TetRegion":
        return TetRegion(self.vertices, self.tets, sigma, self.host_layer)


# --------------------------------------------------------------------------
# wire bundles
# --------------------------------------------------------------------------


def resample_polyline(nodes: np.ndarray, max_seg_len: float | None) -> np.ndarray:
    """Split segments longer than ``max_seg_len`` into equal pieces."""
    nodes = np.asarray(nodes, float)
    seg = np.linalg.norm(np.diff(nodes, axis=0), axis=1)
    if max_seg_len is None or max_seg_len <= 0:
        return nodes
    out = [nodes[:1]]
    for k, length in enumerate(seg):
        m = max(1, int(np.ceil(length / max_seg_len - 1e-9)))
        t = np.arange(1, m + 1)[:, None] / m
        out.append(nodes[k] + t * (nodes[k + 1] - nodes[k]))
    return np.vstack(out)


@dataclass(frozen=True, eq=False)
class WireBundle:
    fibers: tuple[np.ndarray, ...]
    radius: np.ndarray
    sigma_l: np.ndarray
    host_layer: int = 1

    def __post_init__(self):
        fibers = tuple(_frozen(f, float) for f in self.fibers)
        n = len(fibers)
        radius = np.broadcast_to(np.asarray(self.radius, float), (n,))
        sigma_l = np.broadcast_to(np.asarray(self.sigma_l, float), (n,))
        for i, f in enumerate(fibers):
            if f.ndim != 2 or f.shape[1] != 3 or len(f) < 2:
                raise MeshError(f"fiber {i} needs at least 2 nodes")
            if np.any(np.linalg.norm(np.diff(f, axis=0), axis=1) <= 0):
                raise MeshError(f"zero-length segment in fiber {i}")
        if np.any(radius <= 0):
            raise MeshError("fiber radius must be positive")
        if np.any(sigma_l <= 0):
            raise MeshError("longitudinal conductivity must be positive")
        object.__setattr__(self, "fibers", fibers)
        object.__setattr__(self, "radius", _frozen(radius, float))
        object.__setattr__(self, "sigma_l", _frozen(sigma_l, float))

    @property
    def n_fibers(self) -> int:
        return len(self.fibers)

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([np.linalg.norm(np.diff(f, axis=0), axis=1).sum() for f in self.fibers])

    def resampled(self, max_seg_len: float | None) -> "WireBundle":
        fibers = [resample_polyline(f, max_seg_len) for f in self.fibers]
        return WireBundle(tuple(fibers), self.radius, self.sigma_l, self.host_layer)

    def subset(self, keep) -> "WireBundle":
        keep = np.asarray(keep, dtype=bool)
        return WireBundle(
            tuple(f for f, k in zip(self.fibers, keep) if k), self.radius[keep], self.sigma_l[keep], self.host_layer
        )

    @property
    def all_nodes(self) -> np.ndarray:
        return np.vstack(self.fibers) if self.fibers else np.zeros((0, 3))


# --------------------------------------------------------------------------
# electrodes
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ElectrodeSet:
    positions: np.ndarray
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, float))
        labels = tuple(self.labels) or tuple(f"E{i + 1}" for i in range(len(pos)))
        if len(labels) != len(pos):
            raise MeshError("one label per electrode required")
        object.__setattr__(self, "positions", _frozen(pos, float))
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.positions)

    def snapped(self, surface: TriangleSurface, tolerance: float = 5e-3) -> "ElectrodeSet":
        """Project onto ``surface``; fail if any electrode is farther than ``tolerance``."""
        q, dist, _ = surface.closest_points(self.positions)
        far = np.nonzero(dist > tolerance)[0]
        if len(far):
            i = int(far[0])
            raise MeshError(
                f"electrode {self.labels[i]} is {dist[i] * 1e3:.2f} mm from the scalp (tolerance {tolerance * 1e3:.2f} mm)"
            )
        return ElectrodeSet(q, self.labels)
