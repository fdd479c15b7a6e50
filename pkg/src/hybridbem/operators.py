"""Galerkin assembly of the integral operators and pointwise field evaluation.

Every operator block is obtained the same way: the sources of one basis
family (pyramids, SWG functions or wire hats) are evaluated at the
quadrature points of the testing family, and the samples are contracted
with sparse test-weight matrices.

Source fields are evaluated with a product quadrature (a dense kernel
matrix times a sparse weight matrix) and corrected element by element with
closed-form integrals wherever an observation point is within the near
threshold of a source element.

Operator conventions (``G = 1/(4 pi R)``):

* ``S xi``      = int G xi dA'
* ``D* xi``     = n . grad S xi (principal value on the surface)
* ``S*_v J``    = int grad_r G . J dV' = int G div J dV' - int_boundary G J.n dA'
* ``D*_v J``    = n . grad S*_v J

Volume and wire families carry the factor ``-1/sigma_k`` of the potential
representation in :attr:`SourceFamily.scale`.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .elements import integrals
from .elements.basis import PyramidBasis, SwgBasis, WireHatBasis
from .elements.kernels import FOUR_PI, directional_inv_r_matrix, grad_inv_r_matrices, inv_r_matrix
from .elements.quadrature import segment_quadrature, tet_quadrature, tri_quadrature

_MEMORY_BUDGET = 160 * 2**20  # bytes per dense kernel chunk


@dataclass
class AssemblyOptions:
    quadrature_order: int = 4  # far-field and test rule on triangles
    tet_order: int = 3
    wire_order: int = 4
    near_threshold: float = 1.0  # in element diameters beyond the circumsphere
    threads: int = 1
    test_refinement: int = 3  # maximum subdivision depth of surface test triangles near sources
    singular_points: int = 16  # graded rule size per direction for test triangles touching a source


# --------------------------------------------------------------------------
# source families
# --------------------------------------------------------------------------


@dataclass
class ElementGroup:
    """Elements sharing one closed-form integral routine.

    ``dofs``/``coef`` map the ``k`` local densities of each element to the
    family's columns: ``column[dofs[e, m]] += coef[e, m, j] * local_j``.
    """

    centroids: np.ndarray  # (ne, 3)
    reach: np.ndarray  # (ne,) near radius around the centroid
    dofs: np.ndarray  # (ne, m), -1 = unused
    coef: np.ndarray  # (ne, m, k)
    potential: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]  # (obs, elem, reg) -> (P, k)
    gradient: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]  # -> (P, k, 3)
    qpoints: np.ndarray | None = None  # (ne, nq, 3) far-field rule
    qweights: np.ndarray | None = None  # (ne, nq, k) weight * local density
    fibers: np.ndarray | None = None  # (ne,) global fiber id, wires only
    radius: np.ndarray | None = None  # (ne,) thin-wire radius, wires only
    vertices: np.ndarray | None = None  # (ne, nv, 3) element corners, used to detect touching pairs

    @property
    def analytic_only(self) -> bool:
        return self.qpoints is None


@dataclass
class SourceFamily:
    kind: str  # "pyramid" | "swg" | "wire"
    size: int
    groups: list[ElementGroup]
    scale: float = 1.0
    tag: str = ""
    _far: list[tuple[np.ndarray, sp.csr_matrix]] = field(default_factory=list, repr=False)

    def far_operators(self) -> list[tuple[np.ndarray, sp.csr_matrix]]:
        """Per group: flattened quadrature points and the sparse point->column map."""
        if not self._far:
            for g in self.groups:
                if g.analytic_only:
                    self._far.append((np.zeros((0, 3)), sp.csr_matrix((0, self.size))))
                    continue
                ne, nq, _ = g.qpoints.shape
                rows, cols, vals = [], [], []
                for m in range(g.dofs.shape[1]):
                    ok = g.dofs[:, m] >= 0
                    w = np.einsum("eqk,ek->eq", g.qweights, g.coef[:, m, :])
                    r = (np.arange(ne)[:, None] * nq + np.arange(nq)[None, :])[ok]
                    rows.append(r.ravel())
                    cols.append(np.repeat(g.dofs[ok, m], nq))
                    vals.append(w[ok].ravel())
                W = sp.csr_matrix(
                    (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(ne * nq, self.size)
                )
                self._far.append((g.qpoints.reshape(-1, 3), W))
        return self._far


def _tri_reach(corners: np.ndarray, near: float) -> tuple[np.ndarray, np.ndarray]:
    c = corners.mean(axis=1)
    circ = np.linalg.norm(corners - c[:, None, :], axis=2).max(axis=1)
    diam = np.max(np.linalg.norm(corners[:, :, None, :] - corners[:, None, :, :], axis=3), axis=(1, 2))
    return c, circ + near * diam


def _tri_rule_points(corners: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rule = tri_quadrature(order)
    bary = rule.barycentric
    pts = np.einsum("qa,eak->eqk", bary, corners)
    area2 = np.linalg.norm(np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]), axis=1)
    w = rule.weights[None, :] * area2[:, None]
    return pts, w, bary


def pyramid_family(surface, opts: AssemblyOptions) -> SourceFamily:
    basis = PyramidBasis(surface)
    corners = surface.corners
    pts, w, bary = _tri_rule_points(corners, opts.quadrature_order)
    centroids, reach = _tri_reach(corners, opts.near_threshold)
    ne = surface.n_triangles

    def pot(obs, elem, reg):
        return integrals.triangle_linear_inv_r(obs, corners[elem])

    def grad(obs, elem, reg):
        return integrals.triangle_linear_grad_inv_r(obs, corners[elem])

    group = ElementGroup(
        centroids, reach, surface.triangles.copy(), np.broadcast_to(np.eye(3), (ne, 3, 3)).copy(),
        pot, grad, pts, w[:, :, None] * bary[None, :, :], vertices=corners,
    )
    return SourceFamily("pyramid", basis.size, [group], 1.0, f"surface{surface.layer_index}")


def _tet_group(region, tet_dofs, tet_signs, opts: AssemblyOptions) -> ElementGroup:
    corners = region.corners
    V = region.volumes
    rule = tet_quadrature(opts.tet_order)
    pts = np.einsum("qa,eak->eqk", rule.barycentric, corners)
    w = rule.weights[None, :] * 6.0 * V[:, None]
    c = corners.mean(axis=1)
    circ = np.linalg.norm(corners - c[:, None, :], axis=2).max(axis=1)
    reach = circ + opts.near_threshold * region.diameters

    def pot(obs, elem, reg):
        return integrals.tet_inv_r(obs, corners[elem])[:, None]

    def grad(obs, elem, reg):
        return integrals.tet_grad_inv_r(obs, corners[elem])[:, None, :]

    coef = (tet_signs / V[:, None])[:, :, None]
    return ElementGroup(c, reach, tet_dofs, coef, pot, grad, pts, w[:, :, None], vertices=corners)


def _face_group(tris, dofs, areas, opts: AssemblyOptions) -> ElementGroup:
    pts, w, _ = _tri_rule_points(tris, opts.quadrature_order)
    centroids, reach = _tri_reach(tris, opts.near_threshold)

    def pot(obs, elem, reg):
        return integrals.triangle_inv_r(obs, tris[elem])[:, None]

    def grad(obs, elem, reg):
        return integrals.triangle_grad_inv_r(obs, tris[elem])[:, None, :]

    coef = (-1.0 / areas)[:, None, None]
    return ElementGroup(centroids, reach, dofs[:, None], coef, pot, grad, pts, w[:, :, None], vertices=tris)


def swg_family(basis: SwgBasis, sigma_host: float, opts: AssemblyOptions, tag: str = "") -> SourceFamily:
    groups = [_tet_group(basis.region, basis.tet_dofs, basis.tet_signs, opts)]
    bd = basis.boundary_dofs
    if len(bd):
        groups.append(_face_group(basis.boundary_triangles, bd, basis.face_areas[bd], opts))
    return SourceFamily("swg", basis.size, groups, -1.0 / sigma_host, tag)


def wire_family(basis: WireHatBasis, sigma_host: float, fiber_offset: int = 0, tag: str = "") -> SourceFamily:
    a, b = basis.seg_a, basis.seg_b

    def pot(obs, elem, reg):
        return integrals.segment_inv_r(obs, a[elem], b[elem], reg)[:, None]

    def grad(obs, elem, reg):
        return integrals.segment_grad_inv_r(obs, a[elem], b[elem], reg)[:, None, :]

    # line charge of a hat: d(pi a^2 h)/dl
    area = np.pi * basis.seg_radius**2
    coef = (area[:, None] * basis.slopes)[:, :, None]
    c = 0.5 * (a + b)
    group = ElementGroup(
        c, np.full(len(c), np.inf), basis.seg_dofs, coef, pot, grad,
        fibers=basis.seg_fiber + fiber_offset, radius=basis.seg_radius,
    )
    return SourceFamily("wire", basis.size, [group], -1.0 / sigma_host, tag)


# --------------------------------------------------------------------------
# pointwise field evaluation
# --------------------------------------------------------------------------


def _near_pairs(group: ElementGroup, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if group.analytic_only:
        P, ne = len(X), len(group.centroids)
        return np.repeat(np.arange(P), ne), np.tile(np.arange(ne), P)
    tree = cKDTree(group.centroids)
    rmax = float(group.reach.max())
    lists = tree.query_ball_point(X, rmax)
    counts = np.fromiter((len(l) for l in lists), dtype=np.int64, count=len(lists))
    if counts.sum() == 0:
        return np.zeros(0, int), np.zeros(0, int)
    p = np.repeat(np.arange(len(X)), counts)
    e = np.fromiter((i for l in lists for i in l), dtype=np.int64, count=int(counts.sum()))
    keep = np.linalg.norm(X[p] - group.centroids[e], axis=1) < group.reach[e]
    return p[keep], e[keep]


def _pair_reg(group: ElementGroup, obs_fiber: np.ndarray | None, p: np.ndarray, e: np.ndarray) -> np.ndarray:
    if group.fibers is None or obs_fiber is None:
        return np.zeros(len(p))
    same = obs_fiber[p] == group.fibers[e]
    return np.where(same, group.radius[e], 0.0)


def _scatter(out: np.ndarray, group: ElementGroup, p: np.ndarray, e: np.ndarray, local: np.ndarray) -> None:
    """``out[p, dofs[e, m]] += coef[e, m, :] . local`` (local has trailing component axes)."""
    for m in range(group.dofs.shape[1]):
        d = group.dofs[e, m]
        ok = d >= 0
        if not np.any(ok):
            continue
        val = np.einsum("pk,pk...->p...", group.coef[e[ok], m, :], local[ok])
        np.add.at(out, (p[ok], d[ok]), val)


def _floor(X: np.ndarray) -> float:
    return 1e-12 * max(1.0, float(np.abs(X).max(initial=0.0)))


def _family_field(fam: SourceFamily, X, mode: str, D=None, obs_fiber=None) -> np.ndarray:
    """Raw field of one family (no 1/4pi, no scale). mode in pot | dir | grad."""
    P = len(X)
    shape = (P, fam.size) if mode != "grad" else (P, fam.size, 3)
    out = np.zeros(shape)
    floor = _floor(X)
    for g, (Y, W) in zip(fam.groups, fam.far_operators()):
        if not g.analytic_only and len(Y):
            if mode == "pot":
                out += (W.T @ inv_r_matrix(X, Y, floor).T).T
            elif mode == "dir":
                out += (W.T @ directional_inv_r_matrix(X, D, Y, floor).T).T
            else:
                for c, K in enumerate(grad_inv_r_matrices(X, Y, floor)):
                    out[:, :, c] += (W.T @ K.T).T
        p, e = _near_pairs(g, X)
        if len(p) == 0:
            continue
        reg = _pair_reg(g, obs_fiber, p, e)
        if mode == "pot":
            local = g.potential(X[p], e, reg)
        else:
            local = g.gradient(X[p], e, reg)
            if mode == "dir":
                local = np.einsum("pkc,pc->pk", local, D[p])
        if not g.analytic_only:
            # remove the product-rule contribution already included above
            Yq = g.qpoints[e]  # (np, nq, 3)
            diff = X[p][:, None, :] - Yq
            dist = np.linalg.norm(diff, axis=2)
            with np.errstate(divide="ignore"):
                inv = np.where(dist <= floor, 0.0, 1.0 / dist)
            wq = g.qweights[e]  # (np, nq, k)
            if mode == "pot":
                local = local - np.einsum("pq,pqk->pk", inv, wq)
            else:
                gk = -diff * (inv**3)[:, :, None]
                if mode == "dir":
                    gk = np.einsum("pqc,pc->pq", gk, D[p])
                    local = local - np.einsum("pq,pqk->pk", gk, wq)
                else:
                    local = local - np.einsum("pqc,pqk->pkc", gk, wq)
        _scatter(out, g, p, e, local)
    return out


def _chunk_size(families: Sequence[SourceFamily], mode: str) -> int:
    ny = sum(len(Y) for f in families for Y, _ in f.far_operators())
    ncols = sum(f.size for f in families)
    per_point = 8 * (4 * max(ny, 1) + (3 if mode == "grad" else 1) * ncols * 2)
    nseg = sum(len(g.centroids) for f in families for g in f.groups if g.analytic_only)
    per_point += 8 * 40 * nseg
    return int(max(8, min(4096, _MEMORY_BUDGET // per_point)))


def field_at(
    families: Sequence[SourceFamily],
    X: np.ndarray,
    mode: str = "pot",
    directions: np.ndarray | None = None,
    obs_fiber: np.ndarray | None = None,
    threads: int = 1,
) -> np.ndarray:
    """Field of every column of ``families`` at points ``X``.

    ``mode`` is ``pot`` (potential, ``(P, ncols)``), ``dir`` (derivative along
    ``directions``, ``(P, ncols)``) or ``grad`` (``(P, ncols, 3)``). Columns
    are concatenated in family order and include each family's scale.
    """
    X = np.atleast_2d(np.asarray(X, float))
    blocks = []
    for fam in families:
        blocks.append(_family_field(fam, X, mode, directions, obs_fiber) * (fam.scale / FOUR_PI))
    if not blocks:
        return np.zeros((len(X), 0) if mode != "grad" else (len(X), 0, 3))
    return np.concatenate(blocks, axis=1)


def _chunks(n: int, size: int) -> list[slice]:
    return [slice(s, min(n, s + size)) for s in range(0, n, size)]


# --------------------------------------------------------------------------
# testing
# --------------------------------------------------------------------------


@dataclass
class TestSampling:
    """Observation points plus sparse weights mapping samples to test rows.

    ``weights`` holds one ``(P, nrows)`` matrix for ``pot``/``dir`` sampling
    and three (one per component) for ``grad`` sampling.
    """

    points: np.ndarray
    mode: str
    weights: list[sp.csr_matrix]
    directions: np.ndarray | None = None
    obs_fiber: np.ndarray | None = None
    refinement: "SurfaceRefinement | None" = None

    __test__ = False  # not a pytest class

    @property
    def nrows(self) -> int:
        return self.weights[0].shape[1]


@dataclass
class SurfaceRefinement:
    """Finer observation rules for test triangles close to a source element.

    A test triangle ``t`` and a source element ``e`` form a near pair when
    ``|c_t - c_e| < circ_t + reach_e``. Each pair is re-integrated on
    ``4**level`` subtriangles, ``level = ceil(log2(diam_t / d_te))`` capped at
    ``max_level``, where ``d_te`` estimates the element distance. Pairs that
    share a vertex use a graded rule with ``graded_points**2`` points instead.
    """

    surface: object
    order: int
    max_level: int = 2
    graded_points: int = 16


def graded_tri_rule(n: int, p: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points and area-fraction weights clustered at all three vertices.

    Collapsed (Duffy) coordinates put the first vertex at ``u = 0``; a
    sigmoidal map of degree ``p`` on both Gauss-Legendre axes clusters the
    remaining points toward the other two vertices and the edges. The rule is
    not polynomially exact; its error on smooth integrands falls off
    geometrically in ``n``.
    """
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    a, b = x**p, (1.0 - x) ** p
    s = a / (a + b)
    ds = p * (x * (1.0 - x)) ** (p - 1) / (a + b) ** 2
    U, V = (g.ravel() for g in np.meshgrid(s, s, indexing="ij"))
    W = np.outer(w * ds, w * ds).ravel() * 2.0 * U
    return np.column_stack([1.0 - U, U * (1.0 - V), U * V]), W


def composite_tri_rule(order: int, level: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points and weights (summing to 1) of ``order`` on ``4**level`` subtriangles."""
    rule = tri_quadrature(order)
    tris = [np.eye(3)]
    for _ in range(level):
        nxt = []
        for t in tris:
            m01, m12, m20 = (t[0] + t[1]) / 2, (t[1] + t[2]) / 2, (t[2] + t[0]) / 2
            nxt += [np.array(x) for x in ([t[0], m01, m20], [m01, t[1], m12], [m20, m12, t[2]], [m01, m12, m20])]
        tris = nxt
    bary = np.concatenate([rule.barycentric @ t for t in tris])
    w = np.tile(2.0 * rule.weights, len(tris)) / len(tris)
    return bary, w


def surface_test_points(surface, order: int, levels=None):
    """Quadrature points on each triangle, with per-point triangle ids and barycentrics.

    ``levels`` optionally gives a uniform subdivision depth per triangle.
    """
    T = surface.n_triangles
    levels = np.zeros(T, dtype=int) if levels is None else np.asarray(levels, dtype=int)
    X, W, ids, B = [], [], [], []
    for lev in np.unique(levels):
        sel = np.nonzero(levels == lev)[0]
        bary, w = composite_tri_rule(order, int(lev))
        X.append(np.einsum("qa,eak->eqk", bary, surface.corners[sel]).reshape(-1, 3))
        W.append((w[None, :] * surface.areas[sel][:, None]).ravel())
        ids.append(np.repeat(sel, len(w)))
        B.append(np.tile(bary, (len(sel), 1)))
    ids = np.concatenate(ids)
    order_ = np.argsort(ids, kind="stable")
    return np.concatenate(X)[order_], np.concatenate(W)[order_], ids[order_], np.concatenate(B)[order_]


def pyramid_weights(surface, w, tri_id, bary) -> sp.csr_matrix:
    rows = np.repeat(np.arange(len(w)), 3)
    cols = surface.triangles[tri_id].ravel()
    vals = (w[:, None] * bary).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(w), surface.n_vertices))


def surface_normal_test(surface, opts: AssemblyOptions) -> TestSampling:
    """Pyramid-tested normal derivative ``int p_m n . grad u``."""
    X, w, tri_id, bary = surface_test_points(surface, opts.quadrature_order)
    ref = SurfaceRefinement(surface, opts.quadrature_order, opts.test_refinement, opts.singular_points)
    return TestSampling(X, "dir", [pyramid_weights(surface, w, tri_id, bary)], surface.normals[tri_id], refinement=ref)


def surface_potential_test(surface, opts: AssemblyOptions) -> TestSampling:
    """Pyramid-tested potential ``int p_m u``."""
    X, w, tri_id, bary = surface_test_points(surface, opts.quadrature_order)
    ref = SurfaceRefinement(surface, opts.quadrature_order, opts.test_refinement, opts.singular_points)
    return TestSampling(X, "pot", [pyramid_weights(surface, w, tri_id, bary)], refinement=ref)


def swg_sample_points(basis: SwgBasis, opts: AssemblyOptions):
    """Tet and boundary-face quadrature points with their weights."""
    region = basis.region
    rule = tet_quadrature(opts.tet_order)
    tpts = np.einsum("qa,eak->eqk", rule.barycentric, region.corners)
    tw = rule.weights[None, :] * 6.0 * region.volumes[:, None]
    bd = basis.boundary_dofs
    fpts, fw, _ = _tri_rule_points(basis.boundary_triangles, opts.quadrature_order) if len(bd) else (
        np.zeros((0, 1, 3)), np.zeros((0, 1)), None)
    return tpts, tw, fpts, fw


def swg_divergence_test(basis: SwgBasis, opts: AssemblyOptions) -> TestSampling:
    """``int f_m . grad u`` as ``-int u div f_m + int_boundary u f_m . n``."""
    tpts, tw, fpts, fw = swg_sample_points(basis, opts)
    nk, nq, _ = tpts.shape
    V = basis.region.volumes
    rows, cols, vals = [], [], []
    pid = np.arange(nk * nq).reshape(nk, nq)
    for k in range(4):
        rows.append(pid.ravel())
        cols.append(np.repeat(basis.tet_dofs[:, k], nq))
        vals.append((-(basis.tet_signs[:, k] / V)[:, None] * tw).ravel())
    bd = basis.boundary_dofs
    nb, nqf = fw.shape
    off = nk * nq
    if nb:
        rows.append(off + np.arange(nb * nqf))
        cols.append(np.repeat(bd, nqf))
        vals.append((fw / basis.face_areas[bd][:, None]).ravel())
    X = np.concatenate([tpts.reshape(-1, 3), fpts.reshape(-1, 3)])
    Wt = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(len(X), basis.size))
    return TestSampling(X, "pot", [Wt])


def swg_vector_test(basis: SwgBasis, tensors: np.ndarray | None, opts: AssemblyOptions) -> TestSampling:
    """Pointwise ``int (K f_m) . grad u dV`` with a constant tensor ``K`` per tet."""
    region = basis.region
    rule = tet_quadrature(opts.tet_order)
    tpts = np.einsum("qa,eak->eqk", rule.barycentric, region.corners)
    tw = rule.weights[None, :] * 6.0 * region.volumes[:, None]
    nk, nq, _ = tpts.shape
    vals = basis.local_values(np.arange(nk)[:, None], tpts)  # (nk, nq, 4, 3)
    if tensors is not None:
        vals = np.einsum("tij,tqaj->tqai", tensors, vals)
    pid = np.arange(nk * nq).reshape(nk, nq)
    mats = []
    for c in range(3):
        rows = np.repeat(pid[:, :, None], 4, axis=2).ravel()
        cols = np.repeat(basis.tet_dofs[:, None, :], nq, axis=1).ravel()
        v = (vals[:, :, :, c] * tw[:, :, None]).ravel()
        mats.append(sp.csr_matrix((v, (rows, cols)), shape=(nk * nq, basis.size)))
    return TestSampling(tpts.reshape(-1, 3), "grad", mats)


def wire_sample_points(basis: WireHatBasis, opts: AssemblyOptions):
    rule = segment_quadrature(opts.wire_order)
    t = rule.points[:, 0]
    pts = basis.seg_a[:, None, :] + t[None, :, None] * (basis.seg_b - basis.seg_a)[:, None, :]
    w = rule.weights[None, :] * basis.seg_len[:, None]
    return pts, w, t


def wire_derivative_test(basis: WireHatBasis, opts: AssemblyOptions, fiber_offset: int = 0) -> TestSampling:
    """``int h_m d u/dl dl`` as ``-int u h_m' dl`` (hats vanish at fiber tips)."""
    pts, w, _ = wire_sample_points(basis, opts)
    ns, nq, _ = pts.shape
    pid = np.arange(ns * nq).reshape(ns, nq)
    rows, cols, vals = [], [], []
    for m in range(2):
        ok = basis.seg_dofs[:, m] >= 0
        rows.append(pid[ok].ravel())
        cols.append(np.repeat(basis.seg_dofs[ok, m], nq))
        vals.append((-basis.slopes[ok, m][:, None] * w[ok]).ravel())
    Wt = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(ns * nq, basis.size))
    fib = np.repeat(basis.seg_fiber + fiber_offset, nq)
    return TestSampling(pts.reshape(-1, 3), "pot", [Wt], obs_fiber=fib)


def tested_block(test: TestSampling, families: Sequence[SourceFamily], threads: int = 1) -> np.ndarray:
    """Dense ``(nrows, ncols)`` block: test weights contracted with sampled fields."""
    ncols = sum(f.size for f in families)
    P = len(test.points)
    if ncols == 0 or P == 0:
        return np.zeros((test.nrows, ncols))
    size = _chunk_size(families, test.mode)

    def work(sl: slice) -> np.ndarray:
        X = test.points[sl]
        D = test.directions[sl] if test.directions is not None else None
        fib = test.obs_fiber[sl] if test.obs_fiber is not None else None
        F = field_at(families, X, test.mode, D, fib)
        if test.mode == "grad":
            return sum(test.weights[c][sl].T @ F[:, :, c] for c in range(3))
        return test.weights[0][sl].T @ F

    chunks = _chunks(P, size)
    threads = max(1, int(threads or 1))
    if threads == 1:
        parts = map(work, chunks)
    else:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, chunks))
    out = np.zeros((test.nrows, ncols))
    for part in parts:  # fixed order keeps the reduction deterministic
        out += np.asarray(part)
    if test.refinement is not None and test.refinement.max_level > 0:
        c0 = 0
        for fam in families:
            out[:, c0 : c0 + fam.size] += _refinement_correction(test, fam)
            c0 += fam.size
    return out


def _element_field(g: ElementGroup, X: np.ndarray, e: np.ndarray, mode: str, D, floor: float) -> np.ndarray:
    """Field of element ``e[i]`` at ``X[i]`` exactly as the pointwise evaluation computes it."""
    out = np.zeros((len(X), g.coef.shape[2]))
    if g.analytic_only:
        near = np.ones(len(X), dtype=bool)
    else:
        near = np.linalg.norm(X - g.centroids[e], axis=1) < g.reach[e]
    if np.any(near):
        reg = np.zeros(int(near.sum()))
        if mode == "pot":
            out[near] = g.potential(X[near], e[near], reg)
        else:
            out[near] = np.einsum("pkc,pc->pk", g.gradient(X[near], e[near], reg), D[near])
    far = ~near
    if np.any(far):
        diff = X[far][:, None, :] - g.qpoints[e[far]]
        dist = np.linalg.norm(diff, axis=2)
        with np.errstate(divide="ignore"):
            inv = np.where(dist <= floor, 0.0, 1.0 / dist)
        if mode == "pot":
            k = inv
        else:
            k = -np.einsum("pqc,pc->pq", diff, D[far]) * inv**3
        out[far] = np.einsum("pq,pqk->pk", k, g.qweights[e[far]])
    return out


def _refinement_correction(test: TestSampling, fam: SourceFamily) -> np.ndarray:
    ref = test.refinement
    surf = ref.surface
    corners = surf.corners
    ct = corners.mean(axis=1)
    circ_t = np.linalg.norm(corners - ct[:, None, :], axis=2).max(axis=1)
    diam_t = surf.diameters
    res = np.zeros((test.nrows, fam.size))
    floor = _floor(surf.vertices)
    bary_c, w_c = composite_tri_rule(ref.order, 0)
    for g in fam.groups:
        # analytic-only groups (wires) are exact at any point; refine by proximity alone
        reach = np.zeros(len(g.centroids)) if g.analytic_only else g.reach
        tree = cKDTree(g.centroids)
        lists = tree.query_ball_point(ct, circ_t.max() + float(np.max(reach, initial=0.0)) + float(diam_t.max()))
        counts = np.fromiter((len(l) for l in lists), dtype=np.int64, count=len(lists))
        if counts.sum() == 0:
            continue
        t = np.repeat(np.arange(len(ct)), counts)
        e = np.fromiter((i for l in lists for i in l), dtype=np.int64, count=int(counts.sum()))
        dce = np.linalg.norm(ct[t] - g.centroids[e], axis=1)
        near = dce < circ_t[t] + (diam_t[t] if g.analytic_only else reach[e])
        t, e, dce = t[near], e[near], dce[near]
        # distance estimate between the test triangle and the source element
        src_size = _group_sizes(g)[e]
        d_te = np.maximum(dce - 0.5 * src_size, 1e-3 * diam_t[t])
        level = np.clip(np.ceil(np.log2(diam_t[t] / d_te)), 0, ref.max_level).astype(int)
        if g.vertices is not None:
            gap = np.linalg.norm(corners[t][:, :, None, :] - g.vertices[e][:, None, :, :], axis=3)
            touch = gap.min(axis=(1, 2)) <= 1e-9 * diam_t[t]
            level[touch] = -1
            if np.any(touch):
                bary_r, w_r = graded_tri_rule(ref.graded_points)
                _accumulate_pairs(res, test, g, t[touch], e[touch], bary_r, w_r, bary_c, w_c, floor)
        for L in range(1, ref.max_level + 1):
            sel = level == L
            if not np.any(sel):
                continue
            bary_r, w_r = composite_tri_rule(ref.order, L)
            _accumulate_pairs(res, test, g, t[sel], e[sel], bary_r, w_r, bary_c, w_c, floor)
    return res * (fam.scale / FOUR_PI)


def _group_sizes(g: ElementGroup) -> np.ndarray:
    if g.qpoints is not None:
        return 2.0 * np.linalg.norm(g.qpoints - g.centroids[:, None, :], axis=2).max(axis=1)
    return np.zeros(len(g.centroids))


def _accumulate_pairs(res, test, g, t, e, bary_r, w_r, bary_c, w_c, floor, chunk_points: int = 2_000_000):
    surf = test.refinement.surface
    corners, areas, normals, tris = surf.corners, surf.areas, surf.normals, surf.triangles
    mode = test.mode
    q_r, q_c = len(w_r), len(w_c)
    step = max(1, chunk_points // (q_r + q_c))
    for s0 in range(0, len(t), step):
        tt, ee = t[s0 : s0 + step], e[s0 : s0 + step]
        n = len(tt)
        vals = np.zeros((n, 3, g.coef.shape[2]))
        for bary, w, sign in ((bary_r, w_r, 1.0), (bary_c, w_c, -1.0)):
            q = len(w)
            X = np.einsum("qa,pak->pqk", bary, corners[tt]).reshape(-1, 3)
            D = np.repeat(normals[tt], q, axis=0) if mode == "dir" else None
            F = _element_field(g, X, np.repeat(ee, q), mode, D, floor).reshape(n, q, -1)
            vals += sign * np.einsum("q,qa,pqk->pak", w, bary, F) * areas[tt][:, None, None]
        for a in range(3):
            rows = tris[tt, a]
            for m in range(g.dofs.shape[1]):
                d = g.dofs[ee, m]
                ok = d >= 0
                v = np.einsum("pk,pk->p", g.coef[ee[ok], m, :], vals[ok, a, :])
                np.add.at(res, (rows[ok], d[ok]), v)


# --------------------------------------------------------------------------
# named operator blocks
# --------------------------------------------------------------------------


@dataclass
class OperatorBlock:
    matrix: np.ndarray
    row_family: str
    col_family: str
    row_offset: int = 0
    col_offset: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


def _opts(opts):
    return opts or AssemblyOptions()


def assemble_S(row_surface, col_surface, opts: AssemblyOptions | None = None) -> OperatorBlock:
    """``S_mn = int p_m S p_n``."""
    opts = _opts(opts)
    M = tested_block(surface_potential_test(row_surface, opts), [pyramid_family(col_surface, opts)], opts.threads)
    if row_surface is col_surface:
        # the exact Galerkin form is symmetric; remove the test-rule asymmetry
        M = 0.5 * (M + M.T)
    return OperatorBlock(M, "surface-pyramid", "surface-pyramid")


def assemble_Dstar(row_surface, col_surface, opts: AssemblyOptions | None = None) -> OperatorBlock:
    """``int p_m n . grad S p_n`` with principal value on coincident surfaces."""
    opts = _opts(opts)
    M = tested_block(surface_normal_test(row_surface, opts), [pyramid_family(col_surface, opts)], opts.threads)
    return OperatorBlock(M, "surface-pyramid", "surface-pyramid")


def _unscaled(fam: SourceFamily) -> SourceFamily:
    fam.scale = 1.0
    return fam


def volume_source_family(basis, opts: AssemblyOptions) -> SourceFamily:
    if isinstance(basis, SwgBasis):
        return _unscaled(swg_family(basis, 1.0, opts))
    return _unscaled(wire_family(basis, 1.0))


def assemble_Sv_star(row, source_basis, opts: AssemblyOptions | None = None) -> OperatorBlock:
    """Pyramid-tested potential ``int p_m S*_v f_n`` of volume or wire currents.

    ``row`` is a surface (pyramid testing). Wire columns are line currents
    ``pi a^2 h_n`` along the fiber.
    """
    opts = _opts(opts)
    fam = volume_source_family(source_basis, opts)
    M = tested_block(surface_potential_test(row, opts), [fam], opts.threads)
    return OperatorBlock(M, "surface-pyramid", fam.kind)


def assemble_Dstar_v(row_surface, source_basis, opts: AssemblyOptions | None = None) -> OperatorBlock:
    opts = _opts(opts)
    fam = volume_source_family(source_basis, opts)
    M = tested_block(surface_normal_test(row_surface, opts), [fam], opts.threads)
    return OperatorBlock(M, "surface-pyramid", fam.kind)


def _vector_test(row_basis, opts: AssemblyOptions, fiber_offset: int = 0) -> TestSampling:
    if isinstance(row_basis, SwgBasis):
        return swg_divergence_test(row_basis, opts)
    return wire_derivative_test(row_basis, opts, fiber_offset)


def assemble_gradS(row_basis, col_surface, opts: AssemblyOptions | None = None) -> OperatorBlock:
    """``int f_m . grad S p_n`` (SWG rows) or ``int h_m d/dl S p_n`` (wire rows)."""
    opts = _opts(opts)
    M = tested_block(_vector_test(row_basis, opts), [pyramid_family(col_surface, opts)], opts.threads)
    kind = "swg" if isinstance(row_basis, SwgBasis) else "wire"
    return OperatorBlock(M, kind, "surface-pyramid")


def assemble_gradSv(row_basis, col_basis, opts: AssemblyOptions | None = None) -> OperatorBlock:
    """``int f_m . grad S*_v f_n`` between vector-valued families."""
    opts = _opts(opts)
    fam = volume_source_family(col_basis, opts)
    M = tested_block(_vector_test(row_basis, opts), [fam], opts.threads)
    kind = "swg" if isinstance(row_basis, SwgBasis) else "wire"
    return OperatorBlock(M, kind, fam.kind)
