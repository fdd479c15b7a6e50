"""Coupled surface / volume / wire integral equations and their solution.

Unknowns are single-layer densities ``xi_k`` on every interface, SWG
expansions of the equivalent current ``J = (sigma_i I - sigma) grad phi`` in
tetrahedral contrast regions, and hat expansions of the scalar equivalent
current density along fibers. The potential is

    phi = sum_k S xi_k - sum_k (1/sigma_k) S*_v J_k + phi_inf

where ``phi_inf`` is the dipole potential in an unbounded medium of the
source compartment's background conductivity.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from . import operators as ops
from .analytic import Dipole, dipole_infinite_gradient, dipole_infinite_potential
from .elements import integrals
from .elements.basis import PyramidBasis, SwgBasis, WireHatBasis, tet_subset
from .elements.kernels import FOUR_PI
from .elements.quadrature import tri_quadrature
from .geometry.meshes import NestedHeadModel, TetRegion, WireBundle

EPS_ACTIVE = 1e-10
_RANK_TOL = 1e-9  # relative eigenvalue threshold separating invertible contrasts


class FormulationError(ValueError):
    """Geometry or conductivity configuration the formulation cannot represent."""


class SolverError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# contrast
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ContrastField:
    """Per-tet ``chi = (sigma_i I - sigma) sigma^-1`` and per-fiber ``sigma_i - sigma_l``."""

    sigma_background: float
    chi: np.ndarray  # (nk, 3, 3)
    contrast: np.ndarray  # (nk, 3, 3) sigma_i I - sigma
    active: np.ndarray  # (nk,)
    wire_factor: np.ndarray  # (nf,)
    wire_active: np.ndarray  # (nf,)


def compute_contrast(sigma_background: float, tensors=None, sigma_l=None) -> ContrastField:
    if sigma_background <= 0:
        raise FormulationError("background conductivity must be positive")
    T = np.zeros((0, 3, 3)) if tensors is None else np.asarray(tensors, float)
    if T.ndim == 2:
        T = T[None]
    C = sigma_background * np.eye(3) - T
    chi = np.linalg.solve(T.transpose(0, 2, 1), C.transpose(0, 2, 1)).transpose(0, 2, 1) if len(T) else C.copy()
    active = np.linalg.norm(chi, axis=(1, 2)) > EPS_ACTIVE
    sl = np.zeros(0) if sigma_l is None else np.atleast_1d(np.asarray(sigma_l, float))
    wf = sigma_background - sl
    w_active = np.abs(wf) > EPS_ACTIVE * sigma_background
    return ContrastField(float(sigma_background), chi, C, active, wf, w_active)


# --------------------------------------------------------------------------
# layout and system
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DofBlock:
    kind: str  # surface | swg | wire
    index: int  # surface layer, region or bundle number
    start: int
    stop: int

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)


@dataclass(frozen=True)
class DofLayout:
    blocks: tuple[DofBlock, ...]

    @property
    def size(self) -> int:
        return self.blocks[-1].stop if self.blocks else 0

    def of_kind(self, kind: str) -> list[DofBlock]:
        return [b for b in self.blocks if b.kind == kind]

    def surface(self, layer: int) -> DofBlock:
        return next(b for b in self.blocks if b.kind == "surface" and b.index == layer)


@dataclass
class _VolumeRows:
    basis: SwgBasis
    sigma_host: float
    host_layer: int
    contrast: np.ndarray  # (nk_active, 3, 3)
    form: str  # "inverse" (C^-1 J = grad phi) or "contrast" (J = C grad phi)
    test: ops.TestSampling


@dataclass
class _WireRows:
    basis: WireHatBasis
    sigma_host: float
    host_layer: int
    factor: np.ndarray  # per fiber sigma_i - sigma_l
    fiber_offset: int
    test: ops.TestSampling


@dataclass
class BlockSystem:
    matrix: np.ndarray
    layout: DofLayout
    model: NestedHeadModel
    families: list[ops.SourceFamily]
    options: ops.AssemblyOptions
    volumes: list[_VolumeRows] = field(default_factory=list)
    wires: list[_WireRows] = field(default_factory=list)
    deflation: np.ndarray | None = None  # normalised w on the full layout
    alpha: float = 0.0
    timings: dict = field(default_factory=dict)
    _solver: object = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.layout.size

    def rhs(self, dipoles: Sequence[Dipole]) -> np.ndarray:
        """Right-hand sides ``(size, len(dipoles))``."""
        return np.column_stack([_dipole_rhs(self, d) for d in dipoles]) if dipoles else np.zeros((self.size, 0))


def _surface_coefficient(model: NestedHeadModel, i: int) -> float:
    si, so = model.sigma_of(i), model.sigma_of(i + 1)
    if so == si:
        raise FormulationError(f"degenerate interface {i}: equal conductivities on both sides")
    return (si + so) / (2.0 * (so - si))


def _check_inside(model: NestedHeadModel, points: np.ndarray, host: int, what: str) -> None:
    if not 1 <= host <= model.n_layers:
        raise FormulationError(f"{what}: host layer {host} does not exist")
    comp = model.compartment_of(points)
    if np.any(comp != host):
        raise FormulationError(f"{what} leaves compartment {host} or touches one of its surfaces")


def host_compartment(model: NestedHeadModel, dipole: Dipole) -> int:
    comp = int(model.compartment_of(dipole.position[None])[0])
    if comp == model.n_layers + 1:
        raise FormulationError("dipole outside the head")
    scale = max(float(np.abs(model.surfaces[-1].vertices).max()), 1e-12)
    for s in model.surfaces:
        _, dist, _ = s.closest_points(dipole.position[None])
        if dist[0] < 1e-9 * scale:
            raise FormulationError(f"dipole lies on interface {s.layer_index}")
    return comp


def surface_families(model: NestedHeadModel, opts: ops.AssemblyOptions) -> list[ops.SourceFamily]:
    return [ops.pyramid_family(s, opts) for s in model.surfaces]


def surface_rows(model: NestedHeadModel, opts: ops.AssemblyOptions):
    """Tested normal-derivative samplings of every interface (pyramid testing)."""
    return [ops.surface_normal_test(s, opts) for s in model.surfaces]


def assemble_surface_bem(model: NestedHeadModel, opts: ops.AssemblyOptions | None = None) -> np.ndarray:
    """Classical indirect (single-layer) BEM matrix for isotropic nested compartments."""
    opts = opts or ops.AssemblyOptions()
    fams = surface_families(model, opts)
    tests = surface_rows(model, opts)
    return _surface_block_matrix(model, fams, tests, opts)


def flux_consistent(block: np.ndarray, row_weights: np.ndarray, col_weights: np.ndarray, enclosed: float) -> np.ndarray:
    """Enforce Gauss's law on the column sums of a tested ``D*`` block.

    The flux of ``S p_n`` through a closed row surface is ``-enclosed * int p_n``
    (1 if the column surface lies inside, 1/2 if it coincides, 0 if outside).
    The quadrature residual of each column is spread over the rows in
    proportion to ``int p_m``, which makes the constant-potential null space
    of the surface system exact.
    """
    residual = block.sum(axis=0) + enclosed * col_weights
    return block - np.outer(row_weights / row_weights.sum(), residual)


def _surface_block_matrix(model, fams, tests, opts) -> np.ndarray:
    sizes = [f.size for f in fams]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    w = [PyramidBasis(s).integrals for s in model.surfaces]
    A = np.zeros((offs[-1], offs[-1]))
    for i, test in enumerate(tests):
        rows = slice(offs[i], offs[i + 1])
        for k, fam in enumerate(fams):
            enclosed = 1.0 if k < i else (0.5 if k == i else 0.0)
            D = flux_consistent(ops.tested_block(test, [fam], opts.threads), w[i], w[k], enclosed)
            A[rows, offs[k] : offs[k + 1]] = -D
        A[rows, rows] += _surface_coefficient(model, i + 1) * PyramidBasis(model.surfaces[i]).gram
    return A


def _contrast_form(C: np.ndarray) -> str:
    ev = np.linalg.eigvalsh(C)
    scale = np.abs(ev).max(axis=1)
    return "inverse" if np.all(np.abs(ev).min(axis=1) > _RANK_TOL * scale) else "contrast"


def build_system(
    model: NestedHeadModel,
    regions: Sequence[TetRegion] = (),
    bundles: Sequence[WireBundle] = (),
    opts: ops.AssemblyOptions | None = None,
) -> BlockSystem:
    """Assemble the Galerkin matrix of the surface, volume and wire equations.

    Tets and fibers without contrast carry no unknowns. With no active
    unknowns the matrix is exactly :func:`assemble_surface_bem`.
    """
    opts = opts or ops.AssemblyOptions()
    t0 = time.perf_counter()
    for i in range(1, model.n_layers + 1):
        _surface_coefficient(model, i)

    fams = surface_families(model, opts)
    blocks, start = [], 0
    for i, f in enumerate(fams):
        blocks.append(DofBlock("surface", i + 1, start, start + f.size))
        start += f.size

    volumes: list[_VolumeRows] = []
    for r_id, region in enumerate(regions):
        sigma_host = model.sigma_of(region.host_layer)
        _check_inside(model, region.vertices[np.unique(region.tets)], region.host_layer, f"tet region {r_id}")
        con = compute_contrast(sigma_host, region.sigma)
        if not np.any(con.active):
            continue
        sub = tet_subset(region, con.active)
        basis = SwgBasis(sub)
        C = con.contrast[con.active]
        form = _contrast_form(C)
        if form == "inverse":
            test = ops.swg_divergence_test(basis, opts)
        else:
            test = ops.swg_vector_test(basis, C, opts)
        volumes.append(_VolumeRows(basis, sigma_host, region.host_layer, C, form, test))
        fams.append(ops.swg_family(basis, sigma_host, opts, tag=f"region{r_id}"))
        blocks.append(DofBlock("swg", r_id, start, start + basis.size))
        start += basis.size

    wires: list[_WireRows] = []
    fiber_offset = 0
    for b_id, bundle in enumerate(bundles):
        sigma_host = model.sigma_of(bundle.host_layer)
        if bundle.n_fibers:
            _check_inside(model, bundle.all_nodes, bundle.host_layer, f"wire bundle {b_id}")
        con = compute_contrast(sigma_host, sigma_l=bundle.sigma_l)
        if not np.any(con.wire_active):
            continue
        sub = bundle.subset(con.wire_active)
        basis = WireHatBasis(sub)
        if basis.size == 0:
            continue
        test = ops.wire_derivative_test(basis, opts, fiber_offset)
        wires.append(_WireRows(basis, sigma_host, bundle.host_layer, con.wire_factor[con.wire_active], fiber_offset, test))
        fams.append(ops.wire_family(basis, sigma_host, fiber_offset, tag=f"bundle{b_id}"))
        blocks.append(DofBlock("wire", b_id, start, start + basis.size))
        start += basis.size
        fiber_offset += sub.n_fibers

    layout = DofLayout(tuple(blocks))
    n_surf = model.n_layers
    A = np.zeros((layout.size, layout.size))
    tests = surface_rows(model, opts)
    ns = blocks[n_surf - 1].stop
    A[:ns, :ns] = _surface_block_matrix(model, fams[:n_surf], tests, opts)
    extra = fams[n_surf:]
    if extra:
        for i, test in enumerate(tests):
            A[blocks[i].slice, ns:] = -ops.tested_block(test, extra, opts.threads)
        row_blocks = blocks[n_surf:]
        row_tests = [v.test for v in volumes] + [w.test for w in wires]
        for blk, test in zip(row_blocks, row_tests):
            A[blk.slice, :] = -ops.tested_block(test, fams, opts.threads)
        for blk, v in zip(row_blocks[: len(volumes)], volumes):
            if v.form == "inverse":
                A[blk.slice, blk.slice] += v.basis.weighted_gram(np.linalg.inv(v.contrast))
            else:
                A[blk.slice, blk.slice] += v.basis.gram
        for blk, w in zip(row_blocks[len(volumes) :], wires):
            inv_c = 1.0 / w.factor[_dof_fibers(w.basis)]
            A[blk.slice, blk.slice] += inv_c[:, None] * w.basis.gram
    system = BlockSystem(A, layout, model, fams, opts, volumes, wires)
    system.timings["assembly"] = time.perf_counter() - t0
    return system


def _dof_fibers(basis: WireHatBasis) -> np.ndarray:
    out = np.zeros(basis.size, dtype=int)
    for i, (a, b) in enumerate(basis.fiber_ranges):
        out[a:b] = i
    return out


# --------------------------------------------------------------------------
# right-hand sides
# --------------------------------------------------------------------------


def _hessian_normal(corners: np.ndarray, normals: np.ndarray, r0: np.ndarray) -> np.ndarray:
    """``H_j n`` of ``F_j(x) = int lambda_j / |x - r| dA`` at ``x = r0`` per triangle: ``(nt, 3, 3)``.

    Central difference of the closed-form gradient with a step relative to
    the distance, so the truncation error stays near 1e-8.
    """
    dist = np.linalg.norm(corners.mean(axis=1) - r0, axis=1)
    h = 1e-4 * np.maximum(dist, 1e-12)
    xp = r0[None, :] + h[:, None] * normals
    xm = r0[None, :] - h[:, None] * normals
    gp = integrals.triangle_linear_grad_inv_r(xp, corners)
    gm = integrals.triangle_linear_grad_inv_r(xm, corners)
    return (gp - gm) / (2.0 * h)[:, None, None]


def _surface_rhs(surface, dipole: Dipole, sigma_s: float, opts: ops.AssemblyOptions) -> np.ndarray:
    """``int p_m n . grad phi_inf`` with exact near-triangle integrals."""
    corners = surface.corners
    r0 = dipole.position
    c = corners.mean(axis=1)
    near = np.linalg.norm(c - r0, axis=1) < 4.0 * surface.diameters
    out = np.zeros(surface.n_vertices)
    rule = tri_quadrature(6)
    far = ~near
    if np.any(far):
        bary = rule.barycentric
        pts = np.einsum("qa,eak->eqk", bary, corners[far])
        w = rule.weights[None, :] * 2.0 * surface.areas[far][:, None]
        g = dipole_infinite_gradient(dipole, sigma_s, pts.reshape(-1, 3)).reshape(pts.shape)
        dn = np.einsum("eqk,ek->eq", g, surface.normals[far])
        local = np.einsum("eq,qa->ea", dn * w, bary)
        np.add.at(out, surface.triangles[far].ravel(), local.ravel())
    if np.any(near):
        Hn = _hessian_normal(corners[near], surface.normals[near], r0)
        local = -(Hn @ dipole.moment) / (FOUR_PI * sigma_s)
        np.add.at(out, surface.triangles[near].ravel(), local.ravel())
    return out


def _potential_integrals_tets(corners, dipole: Dipole, sigma_s: float) -> np.ndarray:
    """``int_T phi_inf dV`` per tet, exact."""
    g = integrals.tet_grad_inv_r(np.broadcast_to(dipole.position, (len(corners), 3)), corners)
    return g @ dipole.moment / (FOUR_PI * sigma_s)


def _potential_integrals_triangles(corners, dipole: Dipole, sigma_s: float) -> np.ndarray:
    g = integrals.triangle_grad_inv_r(np.broadcast_to(dipole.position, (len(corners), 3)), corners)
    return g @ dipole.moment / (FOUR_PI * sigma_s)


def _potential_integrals_segments(a, b, dipole: Dipole, sigma_s: float) -> np.ndarray:
    r0 = np.broadcast_to(dipole.position, (len(a), 3))
    g = integrals.segment_grad_inv_r(r0, a, b, np.zeros(len(a)))
    return g @ dipole.moment / (FOUR_PI * sigma_s)


def _volume_rhs(v: _VolumeRows, dipole: Dipole, sigma_s: float) -> np.ndarray:
    basis = v.basis
    region = basis.region
    if v.form == "inverse":
        # int f . grad phi_inf = -int phi_inf div f + int_boundary phi_inf f . n
        out = np.zeros(basis.size)
        It = _potential_integrals_tets(region.corners, dipole, sigma_s)
        vals = -(basis.tet_signs / region.volumes[:, None]) * It[:, None]
        np.add.at(out, basis.tet_dofs.ravel(), vals.ravel())
        bd = basis.boundary_dofs
        if len(bd):
            If = _potential_integrals_triangles(basis.boundary_triangles, dipole, sigma_s)
            out[bd] += If / basis.face_areas[bd]
        return out
    lam = _tet_barycentric(region.corners, dipole.position)
    if np.any(np.all(lam >= -1e-12, axis=1)):
        raise FormulationError("dipole inside a contrast region with a singular contrast tensor")
    g = dipole_infinite_gradient(dipole, sigma_s, v.test.points)
    return sum(v.test.weights[c].T @ g[:, c] for c in range(3))


def _tet_barycentric(corners: np.ndarray, r: np.ndarray) -> np.ndarray:
    T = (corners[:, 1:] - corners[:, :1]).transpose(0, 2, 1)
    st = np.linalg.solve(T, (r - corners[:, 0])[:, :, None])[:, :, 0]
    return np.column_stack([1.0 - st.sum(axis=1), st])


def _wire_rhs(w: _WireRows, dipole: Dipole, sigma_s: float) -> np.ndarray:
    # int h d phi_inf/dl = -sum_seg h' int_seg phi_inf
    basis = w.basis
    Iseg = _potential_integrals_segments(basis.seg_a, basis.seg_b, dipole, sigma_s)
    out = np.zeros(basis.size)
    for m in range(2):
        ok = basis.seg_dofs[:, m] >= 0
        np.add.at(out, basis.seg_dofs[ok, m], -basis.slopes[ok, m] * Iseg[ok])
    return out


def _dipole_rhs(system: BlockSystem, dipole: Dipole) -> np.ndarray:
    model = system.model
    host = host_compartment(model, dipole)
    sigma_s = model.sigma_of(host)
    b = np.zeros(system.size)
    for blk, surface in zip(system.layout.of_kind("surface"), model.surfaces):
        b[blk.slice] = _surface_rhs(surface, dipole, sigma_s, system.options)
    for blk, v in zip(system.layout.of_kind("swg"), system.volumes):
        b[blk.slice] = _volume_rhs(v, dipole, sigma_s)
    for blk, w in zip(system.layout.of_kind("wire"), system.wires):
        b[blk.slice] = _wire_rhs(w, dipole, sigma_s)
    return b


# --------------------------------------------------------------------------
# deflation and solution
# --------------------------------------------------------------------------


def deflate(system: BlockSystem, alpha: float | None = None) -> BlockSystem:
    """Add ``alpha w w^T`` on the outermost surface block, ``w_m = int p_m`` normalised.

    ``alpha`` defaults to the mean diagonal entry of that block.
    """
    blk = system.layout.surface(system.model.n_layers)
    w = np.zeros(system.size)
    w[blk.slice] = PyramidBasis(system.model.surfaces[-1]).integrals
    w /= np.linalg.norm(w)
    if alpha is None:
        alpha = float(np.mean(np.diag(system.matrix)[blk.slice]))
        if alpha == 0.0:
            alpha = 1.0
    A = system.matrix.copy()
    ws = w[blk.slice]
    A[blk.slice, blk.slice] += alpha * np.outer(ws, ws)
    out = BlockSystem(
        A, system.layout, system.model, system.families, system.options,
        system.volumes, system.wires, w, alpha, dict(system.timings),
    )
    return out


@dataclass(frozen=True)
class ForwardSolution:
    coefficients: np.ndarray
    layout: DofLayout
    families: tuple[ops.SourceFamily, ...]
    dipole: Dipole | None
    sigma_source: float
    residual: float = 0.0

    def block(self, kind: str, index: int) -> np.ndarray:
        blk = next(b for b in self.layout.blocks if b.kind == kind and b.index == index)
        return self.coefficients[blk.slice]

    def potential(self, points, threads: int = 1) -> np.ndarray:
        return eval_potential(self, points, threads)

    def gradient(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        F = ops.field_at(self.families, pts, "grad")
        g = np.einsum("pnc,n->pc", F, self.coefficients) if F.shape[1] else np.zeros((len(pts), 3))
        if self.dipole is not None:
            g = g + dipole_infinite_gradient(self.dipole, self.sigma_source, pts)
        return g


def eval_potential(solution: ForwardSolution, points, threads: int = 1) -> np.ndarray:
    """``phi(r)`` from the representation formula at arbitrary points."""
    pts = np.atleast_2d(np.asarray(points, float))
    out = np.zeros(len(pts))
    if solution.families:
        size = ops._chunk_size(solution.families, "pot")
        for sl in ops._chunks(len(pts), size):
            out[sl] = ops.field_at(solution.families, pts[sl], "pot") @ solution.coefficients
    if solution.dipole is not None:
        out += dipole_infinite_potential(solution.dipole, solution.sigma_source, pts)
    return out


class _Factorization:
    def __init__(self, A: np.ndarray):
        self.A = A
        self.lu = sla.lu_factor(A, check_finite=True)
        diag = np.abs(np.diag(self.lu[0]))
        if diag.min(initial=np.inf) <= np.finfo(float).eps * diag.max(initial=0.0) * len(diag):
            raise SolverError("factorization: matrix is singular to working precision")

    def solve(self, B: np.ndarray) -> np.ndarray:
        return sla.lu_solve(self.lu, B)


def _gmres(A: np.ndarray, b: np.ndarray, tol: float, restart: int, maxiter: int) -> np.ndarray:
    d = np.diag(A).copy()
    d[d == 0] = 1.0
    M = spla.LinearOperator(A.shape, matvec=lambda x: x / d, dtype=float)
    x, info = spla.gmres(A, b, rtol=tol, atol=0.0, restart=restart, maxiter=maxiter, M=M)
    if info != 0:
        raise SolverError(f"solve: GMRES did not converge ({info} iterations)")
    return x


def solve_many(
    system: BlockSystem, B: np.ndarray, method: str = "direct", tol: float = 1e-8, restart: int = 200, maxiter: int = 2000
) -> np.ndarray:
    B = np.asarray(B, float)
    if B.ndim == 1:
        B = B[:, None]
    if not np.all(np.isfinite(system.matrix)):
        raise SolverError("assembly: matrix has non-finite entries")
    if method == "direct":
        if system._solver is None:
            t0 = time.perf_counter()
            system._solver = _Factorization(system.matrix)
            system.timings["factorization"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        X = system._solver.solve(B)
        system.timings["solve"] = system.timings.get("solve", 0.0) + time.perf_counter() - t0
    elif method == "iterative":
        t0 = time.perf_counter()
        X = np.column_stack([_gmres(system.matrix, B[:, j], tol, restart, maxiter) for j in range(B.shape[1])])
        system.timings["solve"] = system.timings.get("solve", 0.0) + time.perf_counter() - t0
    else:
        raise ValueError(f"unknown solver {method!r}")
    if not np.all(np.isfinite(X)):
        raise SolverError("solve: non-finite solution")
    return X


def solve(
    system: BlockSystem, source: Dipole | np.ndarray, method: str = "direct", tol: float = 1e-8
) -> ForwardSolution:
    """Solve for one dipole (or an explicit right-hand side with no source term)."""
    if isinstance(source, Dipole):
        b = system.rhs([source])[:, 0]
        dipole = source
        sigma_s = system.model.sigma_of(host_compartment(system.model, source))
    else:
        b = np.asarray(source, float)
        dipole, sigma_s = None, 0.0
    x = solve_many(system, b, method, tol)[:, 0]
    nb = np.linalg.norm(b)
    res = float(np.linalg.norm(system.matrix @ x - b) / nb) if nb > 0 else 0.0
    return ForwardSolution(x, system.layout, tuple(system.families), dipole, sigma_s, res)


def forward(
    model: NestedHeadModel,
    dipole: Dipole,
    regions: Sequence[TetRegion] = (),
    bundles: Sequence[WireBundle] = (),
    opts: ops.AssemblyOptions | None = None,
    method: str = "direct",
) -> ForwardSolution:
    return solve(deflate(build_system(model, regions, bundles, opts)), dipole, method)


def mean_referenced(v: np.ndarray, axis: int = 0) -> np.ndarray:
    return v - v.mean(axis=axis, keepdims=True)


@dataclass
class Leadfield:
    matrix: np.ndarray  # (n_electrodes, 3 * n_dipoles)
    timings: dict


def compute_leadfield(
    system: BlockSystem, positions, electrodes: np.ndarray, method: str = "direct", tol: float = 1e-8
) -> Leadfield:
    """Mean-referenced electrode potentials for unit x, y, z moments at each position.

    ``system`` must be deflated; its factorization is shared by every column.
    """
    positions = np.atleast_2d(np.asarray(positions, float))
    E = np.atleast_2d(np.asarray(electrodes, float))
    dipoles = [Dipole(p, e) for p in positions for e in np.eye(3)]
    t0 = time.perf_counter()
    B = system.rhs(dipoles)
    system.timings["rhs"] = time.perf_counter() - t0
    X = solve_many(system, B, method, tol)
    t0 = time.perf_counter()
    F = ops.field_at(system.families, E, "pot") if system.families else np.zeros((len(E), 0))
    L = F @ X
    for j, d in enumerate(dipoles):
        sigma_s = system.model.sigma_of(host_compartment(system.model, d))
        L[:, j] += dipole_infinite_potential(d, sigma_s, E)
    system.timings["evaluation"] = time.perf_counter() - t0
    return Leadfield(mean_referenced(L), dict(system.timings))


def homogeneous_solution(dipole: Dipole, sigma: float) -> ForwardSolution:
    """Solution in an unbounded homogeneous medium: no surfaces, no contrast."""
    if sigma <= 0:
        raise FormulationError("conductivity must be positive")
    return ForwardSolution(np.zeros(0), DofLayout(()), (), dipole, float(sigma))
