"""Basis families: surface pyramids, tetrahedral SWG functions, wire hats."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..geometry.meshes import TetRegion, TriangleSurface, WireBundle


class SupportError(ValueError):
    """Evaluation point outside the support of a basis function."""


def _barycentric(tri: np.ndarray, r: np.ndarray) -> np.ndarray:
    a, b, c = tri
    T = np.column_stack([b - a, c - a])
    st, *_ = np.linalg.lstsq(T, r - a, rcond=None)
    return np.array([1 - st.sum(), st[0], st[1]])


@dataclass(frozen=True, eq=False)
class PyramidBasis:
    """Continuous piecewise-linear hats, one per surface vertex."""

    surface: TriangleSurface

    @property
    def size(self) -> int:
        return self.surface.n_vertices

    @cached_property
    def integrals(self) -> np.ndarray:
        """``int p_m dA`` per vertex."""
        return np.bincount(self.surface.triangles.ravel(), np.repeat(self.surface.areas / 3.0, 3), self.size)

    @cached_property
    def gram(self) -> np.ndarray:
        """Exact mass matrix ``int p_m p_n dA``."""
        tri, A = self.surface.triangles, self.surface.areas
        local = (np.ones((3, 3)) + np.eye(3)) / 12.0
        G = np.zeros((self.size, self.size))
        for i in range(3):
            for j in range(3):
                np.add.at(G, (tri[:, i], tri[:, j]), A * local[i, j])
        return G

    def locate(self, r: np.ndarray, tol: float = 1e-9) -> tuple[int, np.ndarray]:
        """Triangle id and barycentric coordinates of a surface point."""
        r = np.asarray(r, float)
        _, dist, tid = self.surface.closest_points(r[None])
        scale = float(self.surface.diameters.max())
        if dist[0] > tol * scale:
            raise SupportError("point is not on the surface")
        return int(tid[0]), _barycentric(self.surface.corners[tid[0]], r)


def pyramid_eval(surface: TriangleSurface, vertex_dof: int, r) -> float:
    """Value of the hat of ``vertex_dof`` at the surface point ``r``."""
    basis = PyramidBasis(surface)
    t, lam = basis.locate(r)
    tri = surface.triangles[t]
    hit = np.nonzero(tri == vertex_dof)[0]
    if len(hit) == 0:
        # the point may sit on an edge shared with a triangle of the support
        r = np.asarray(r, float)
        for k in np.nonzero((surface.triangles == vertex_dof).any(axis=1))[0]:
            lam_k = _barycentric(surface.corners[k], r)
            if lam_k.min() >= -1e-9:
                return float(np.clip(lam_k[list(surface.triangles[k]).index(vertex_dof)], 0.0, 1.0))
        raise SupportError(f"point outside the support of vertex {vertex_dof}")
    return float(np.clip(lam[hit[0]], 0.0, 1.0))


def tet_subset(region: TetRegion, mask) -> TetRegion:
    mask = np.asarray(mask, dtype=bool)
    return TetRegion(region.vertices, region.tets[mask], region.sigma[mask], region.host_layer)


@dataclass(frozen=True, eq=False)
class SwgBasis:
    """Face-based divergence-conforming functions on a tetrahedral region.

    Normalised to unit flux through the defining face: inside the plus tet
    ``f = (r - v+)/(3 V+)``, inside the minus tet ``f = (v- - r)/(3 V-)``.
    Boundary faces carry half functions with flux leaving the region.
    """

    region: TetRegion

    @cached_property
    def _faces(self):
        faces, tet_faces = self.region.face_table
        nk = self.region.n_tets
        plus = np.full(len(faces), -1)
        minus = np.full(len(faces), -1)
        plus_k = np.full(len(faces), -1)
        minus_k = np.full(len(faces), -1)
        for t in range(nk):
            for k in range(4):
                f = tet_faces[t, k]
                if plus[f] < 0:
                    plus[f], plus_k[f] = t, k
                else:
                    minus[f], minus_k[f] = t, k
        return faces, tet_faces, plus, minus, plus_k, minus_k

    @property
    def size(self) -> int:
        return len(self._faces[0])

    @property
    def plus_tet(self) -> np.ndarray:
        return self._faces[2]

    @property
    def minus_tet(self) -> np.ndarray:
        return self._faces[3]

    @cached_property
    def tet_dofs(self) -> np.ndarray:
        """DoF id of local face ``k`` (opposite vertex ``k``) of each tet."""
        return self._faces[1]

    @cached_property
    def tet_signs(self) -> np.ndarray:
        faces, tet_faces, plus, minus, pk, mk = self._faces
        sign = np.where(plus[tet_faces] == np.arange(self.region.n_tets)[:, None], 1.0, -1.0)
        return sign

    @cached_property
    def face_areas(self) -> np.ndarray:
        v = self.region.vertices[self._faces[0]]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    @cached_property
    def boundary_dofs(self) -> np.ndarray:
        return np.nonzero(self._faces[3] < 0)[0]

    @cached_property
    def boundary_triangles(self) -> np.ndarray:
        """Outward-oriented corner coordinates of boundary faces ``(nb, 3, 3)``."""
        from .integrals import TET_FACES

        dofs = self.boundary_dofs
        t = self._faces[2][dofs]
        k = self._faces[4][dofs]
        idx = np.take_along_axis(self.region.tets[t], TET_FACES[k], axis=1)
        return self.region.vertices[idx]

    @cached_property
    def opposite_vertices(self) -> tuple[np.ndarray, np.ndarray]:
        faces, tet_faces, plus, minus, pk, mk = self._faces
        tets = self.region.tets
        vp = self.region.vertices[tets[plus, pk]]
        vm = np.full_like(vp, np.nan)
        ok = minus >= 0
        vm[ok] = self.region.vertices[tets[minus[ok], mk[ok]]]
        return vp, vm

    def local_values(self, tet: int | np.ndarray, points: np.ndarray) -> np.ndarray:
        """Values of the 4 local functions of ``tet`` at ``points``: ``(..., 4, 3)``."""
        tet = np.asarray(tet)
        corners = self.region.corners[tet]
        V = self.region.volumes[tet]
        sign = self.tet_signs[tet]
        pts = np.asarray(points, float)
        diff = pts[..., None, :] - corners
        return (sign / (3.0 * V[..., None]))[..., None] * diff

    @cached_property
    def gram(self) -> np.ndarray:
        return self.weighted_gram(np.broadcast_to(np.eye(3), (self.region.n_tets, 3, 3)))

    def weighted_gram(self, tensors: np.ndarray) -> np.ndarray:
        """``int f_m . K f_n dV`` with one constant tensor ``K`` per tet (exact)."""
        from .quadrature import tet_quadrature

        rule = tet_quadrature(2)
        c = self.region.corners
        bary = rule.barycentric
        pts = np.einsum("qa,tak->tqk", bary, c)
        w = rule.weights[None, :] * 6.0 * self.region.volumes[:, None]
        vals = self.local_values(np.arange(self.region.n_tets)[:, None], pts)  # (nk, nq, 4, 3)
        Kv = np.einsum("tij,tqaj->tqai", tensors, vals)
        local = np.einsum("tq,tqai,tqbi->tab", w, vals, Kv)
        G = np.zeros((self.size, self.size))
        d = self.tet_dofs
        for a in range(4):
            for b in range(4):
                np.add.at(G, (d[:, a], d[:, b]), local[:, a, b])
        return G


def swg_eval(basis: SwgBasis, face_dof: int, r) -> np.ndarray:
    r = np.asarray(r, float)
    for t in (basis.plus_tet[face_dof], basis.minus_tet[face_dof]):
        if t < 0:
            continue
        c = basis.region.corners[t]
        lam = np.linalg.solve(np.vstack([np.ones(4), c.T]), np.concatenate([[1.0], r]))
        if lam.min() >= -1e-10:
            k = int(np.nonzero(basis.tet_dofs[t] == face_dof)[0][0])
            return basis.local_values(t, r)[k]
    raise SupportError(f"point outside the support of face {face_dof}")


def swg_div(basis: SwgBasis, face_dof: int, tet: int) -> float:
    hit = np.nonzero(basis.tet_dofs[tet] == face_dof)[0]
    if len(hit) == 0:
        raise SupportError(f"tet {tet} outside the support of face {face_dof}")
    return float(basis.tet_signs[tet, hit[0]] / basis.region.volumes[tet])


@dataclass(frozen=True, eq=False)
class WireHatBasis:
    """Piecewise-linear hats on interior fiber nodes; zero at fiber tips."""

    bundle: WireBundle

    @cached_property
    def _layout(self):
        seg_a, seg_b, seg_fiber, dof_start, dof_end, node_dofs = [], [], [], [], [], []
        fiber_ranges = []
        nd = 0
        for i, f in enumerate(self.bundle.fibers):
            n = len(f)
            ids = np.full(n, -1)
            ids[1:-1] = np.arange(nd, nd + n - 2)
            fiber_ranges.append((nd, nd + max(n - 2, 0)))
            nd += max(n - 2, 0)
            seg_a.append(f[:-1])
            seg_b.append(f[1:])
            seg_fiber.append(np.full(n - 1, i))
            dof_start.append(ids[:-1])
            dof_end.append(ids[1:])
            node_dofs.append(ids)
        cat = lambda x, w: np.concatenate(x) if x else np.zeros((0,) + w)  # noqa: E731
        return (
            cat(seg_a, (3,)), cat(seg_b, (3,)), cat(seg_fiber, ()).astype(int),
            cat(dof_start, ()).astype(int), cat(dof_end, ()).astype(int), node_dofs, fiber_ranges, nd,
        )

    @property
    def size(self) -> int:
        return self._layout[7]

    @property
    def seg_a(self) -> np.ndarray:
        return self._layout[0]

    @property
    def seg_b(self) -> np.ndarray:
        return self._layout[1]

    @property
    def seg_fiber(self) -> np.ndarray:
        return self._layout[2]

    @property
    def seg_dofs(self) -> np.ndarray:
        """``(nseg, 2)``: DoF of the hat peaking at the segment start / end (-1 at tips)."""
        return np.column_stack([self._layout[3], self._layout[4]])

    @property
    def fiber_ranges(self) -> list[tuple[int, int]]:
        return self._layout[6]

    @property
    def node_dofs(self) -> list[np.ndarray]:
        return self._layout[5]

    @cached_property
    def seg_len(self) -> np.ndarray:
        return np.linalg.norm(self.seg_b - self.seg_a, axis=1)

    @cached_property
    def seg_dir(self) -> np.ndarray:
        return (self.seg_b - self.seg_a) / self.seg_len[:, None]

    @cached_property
    def seg_radius(self) -> np.ndarray:
        return self.bundle.radius[self.seg_fiber]

    @cached_property
    def gram(self) -> np.ndarray:
        """``int h_m h_n dl`` (arclength measure)."""
        G = np.zeros((self.size, self.size))
        L = self.seg_len
        d = self.seg_dofs
        local = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
        for i in range(2):
            for j in range(2):
                ok = (d[:, i] >= 0) & (d[:, j] >= 0)
                np.add.at(G, (d[ok, i], d[ok, j]), L[ok] * local[i, j])
        return G

    @cached_property
    def slopes(self) -> np.ndarray:
        """``dh/dl`` of the start/end hats on each segment ``(nseg, 2)``."""
        return np.column_stack([-1.0 / self.seg_len, 1.0 / self.seg_len])


def wire_hat_eval(bundle: WireBundle, node_dof: int, arclength: float) -> float:
    basis = WireHatBasis(bundle)
    for i, ids in enumerate(basis.node_dofs):
        hit = np.nonzero(ids == node_dof)[0]
        if len(hit) == 0:
            continue
        j = int(hit[0])
        f = bundle.fibers[i]
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(f, axis=0), axis=1))])
        if not s[j - 1] <= arclength <= s[j + 1]:
            raise SupportError(f"arclength {arclength} outside the support of node {node_dof}")
        if arclength <= s[j]:
            return float((arclength - s[j - 1]) / (s[j] - s[j - 1]))
        return float((s[j + 1] - arclength) / (s[j + 1] - s[j]))
    raise SupportError(f"unknown wire DoF {node_dof}")
