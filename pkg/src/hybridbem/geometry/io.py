"""Plain-text mesh formats.

Blank lines and ``#`` comments are ignored everywhere.

* surface:   ``surf <nv> <nt>``, nv lines ``x y z``, nt lines ``i j k`` (0-based)
* tets:      ``tet <nv> <nk>``, nv vertex lines, nk lines
  ``a b c d sxx syy szz sxy sxz syz``
* wires:     ``wire <nf>``, then per fiber ``fiber <nn> <a> <sigma_l>`` and nn
  node lines ``x y z``
* electrodes: lines ``label x y z``
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .meshes import ElectrodeSet, MeshError, TetRegion, TriangleSurface, WireBundle


class MeshFormatError(MeshError):
    pass


def _lines(path) -> list[list[str]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    out = []
    for raw in path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            out.append(line.split())
    return out


def _header(rows, keyword: str, nfields: int, path) -> list[int]:
    if not rows or rows[0][0] != keyword or len(rows[0]) != nfields + 1:
        raise MeshFormatError(f"{path}: expected header '{keyword}' with {nfields} counts")
    try:
        return [int(x) for x in rows[0][1:]]
    except ValueError as exc:
        raise MeshFormatError(f"{path}: bad header counts") from exc


def _floats(rows, width: int, path) -> np.ndarray:
    try:
        arr = np.array([[float(x) for x in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise MeshFormatError(f"{path}: non-numeric entry") from exc
    if len(rows) and arr.shape[1:] != (width,):
        raise MeshFormatError(f"{path}: expected {width} columns")
    return arr.reshape(-1, width)


def load_surface_mesh(path, layer_index: int = 1) -> TriangleSurface:
    rows = _lines(path)
    nv, nt = _header(rows, "surf", 2, path)
    if len(rows) != 1 + nv + nt:
        raise MeshFormatError(f"{path}: expected {nv} vertices and {nt} triangles, found {len(rows) - 1} data lines")
    verts = _floats(rows[1 : 1 + nv], 3, path)
    tris = _floats(rows[1 + nv :], 3, path).astype(np.int64)
    return TriangleSurface.closed(verts, tris, layer_index)


def save_surface_mesh(path, surface: TriangleSurface) -> None:
    with open(path, "w") as fh:
        fh.write(f"surf {surface.n_vertices} {surface.n_triangles}\n")
        np.savetxt(fh, surface.vertices, fmt="%.17g")
        np.savetxt(fh, surface.triangles, fmt="%d")


def load_tet_region(path, host_layer: int = 1) -> TetRegion:
    rows = _lines(path)
    nv, nk = _header(rows, "tet", 2, path)
    if len(rows) != 1 + nv + nk:
        raise MeshFormatError(f"{path}: expected {nv} vertices and {nk} tets")
    verts = _floats(rows[1 : 1 + nv], 3, path)
    data = _floats(rows[1 + nv :], 10, path)
    tets = data[:, :4].astype(np.int64)
    sxx, syy, szz, sxy, sxz, syz = data[:, 4:].T
    sigma = np.stack(
        [np.stack([sxx, sxy, sxz], -1), np.stack([sxy, syy, syz], -1), np.stack([sxz, syz, szz], -1)], axis=1
    )
    return TetRegion(verts, tets, sigma, host_layer)


def save_tet_region(path, region: TetRegion) -> None:
    s = region.sigma
    comps = np.column_stack([s[:, 0, 0], s[:, 1, 1], s[:, 2, 2], s[:, 0, 1], s[:, 0, 2], s[:, 1, 2]])
    with open(path, "w") as fh:
        fh.write(f"tet {len(region.vertices)} {region.n_tets}\n")
        np.savetxt(fh, region.vertices, fmt="%.17g")
        for t, c in zip(region.tets, comps):
            fh.write(" ".join(str(int(i)) for i in t) + " " + " ".join(f"{x:.17g}" for x in c) + "\n")


def load_wire_bundle(path, host_layer: int = 1, max_seg_len: float | None = None) -> WireBundle:
    rows = _lines(path)
    (nf,) = _header(rows, "wire", 1, path)
    fibers, radius, sigma_l = [], [], []
    k = 1
    for i in range(nf):
        if k >= len(rows) or rows[k][0] != "fiber" or len(rows[k]) != 4:
            raise MeshFormatError(f"{path}: expected 'fiber <nn> <a> <sigma_l>' for fiber {i}")
        nn = int(rows[k][1])
        radius.append(float(rows[k][2]))
        sigma_l.append(float(rows[k][3]))
        if nn < 2:
            raise MeshFormatError(f"{path}: fiber {i} needs at least 2 nodes")
        fibers.append(_floats(rows[k + 1 : k + 1 + nn], 3, path))
        if len(fibers[-1]) != nn:
            raise MeshFormatError(f"{path}: fiber {i} truncated")
        k += 1 + nn
    if k != len(rows):
        raise MeshFormatError(f"{path}: trailing data after {nf} fibers")
    bundle = WireBundle(tuple(fibers), np.array(radius), np.array(sigma_l), host_layer)
    return bundle.resampled(max_seg_len)


def save_wire_bundle(path, bundle: WireBundle) -> None:
    with open(path, "w") as fh:
        fh.write(f"wire {bundle.n_fibers}\n")
        for f, a, s in zip(bundle.fibers, bundle.radius, bundle.sigma_l):
            fh.write(f"fiber {len(f)} {a:.17g} {s:.17g}\n")
            np.savetxt(fh, f, fmt="%.17g")


def load_electrodes(path) -> ElectrodeSet:
    rows = _lines(path)
    labels, pos = [], []
    for r in rows:
        if len(r) != 4:
            raise MeshFormatError(f"{path}: electrode lines are 'label x y z'")
        labels.append(r[0])
        pos.append([float(x) for x in r[1:]])
    return ElectrodeSet(np.array(pos, float).reshape(-1, 3), tuple(labels))


def save_electrodes(path, electrodes: ElectrodeSet) -> None:
    with open(path, "w") as fh:
        for lab, p in zip(electrodes.labels, electrodes.positions):
            fh.write(f"{lab} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
