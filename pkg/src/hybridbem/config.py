"""Run configuration: INI-style sections with flat ``key = value`` entries.

Example::

    [model]
    source = sphere            ; or "files"
    # surfaces = brain.surf, skull.surf, scalp.surf   (files, innermost first)
    # sigma = 0.33, 0.0125, 0.33
    # electrodes = cap.txt
    # tets = skull.tet         ; optional, comma-separated
    # tet_hosts = 2
    # wires = tracts.wire      ; optional
    # wire_hosts = 1
    # max_seg_len = 0.002

    [sphere]
    radii = 0.087, 0.092, 0.1
    sigma = 0.33, 0.0125, 0.33
    level = 3
    electrodes = vertices      ; or an electrode count
    eccentricities = 5:95:5    ; percent of the innermost radius
    orientation = both         ; radial | tangential | both
    moment = 1e-8              ; A m
    bound_pct = 5

    [dipoles]
    d1 = 0, 0, 0.05, 0, 0, 1e-8    ; x y z (m), px py pz (A m)

    [solver]
    method = direct
    tol = 1e-8
    quadrature_order = 4
    tet_order = 3
    wire_order = 4
    test_refinement = 3
    threads = 1

    [output]
    directory = out
    compare_models = false

Relative paths are resolved against the directory of the config file.
"""
from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .analytic import Dipole
from .elements.quadrature import SUPPORTED_ORDERS

SECTIONS = {
    "model": {"source", "surfaces", "sigma", "electrodes", "tets", "tet_hosts", "wires", "wire_hosts", "max_seg_len"},
    "sphere": {"radii", "sigma", "level", "electrodes", "eccentricities", "orientation", "moment", "bound_pct", "n_max", "tol"},
    "dipoles": None,  # free keys
    "solver": {"method", "tol", "quadrature_order", "tet_order", "wire_order", "test_refinement", "threads"},
    "output": {"directory", "compare_models"},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SphereConfig:
    radii: tuple[float, ...] = (0.087, 0.092, 0.1)
    sigma: tuple[float, ...] = (0.33, 0.0125, 0.33)
    level: int = 3
    electrodes: int | None = None  # None: every vertex of the outer surface
    eccentricities: tuple[float, ...] = tuple(float(e) for e in range(5, 100, 5))
    orientation: str = "both"
    moment: float = 1e-8
    bound_pct: float = 5.0
    n_max: int = 100
    tol: float = 1e-8


@dataclass(frozen=True)
class SolverConfig:
    method: str = "direct"
    tol: float = 1e-8
    quadrature_order: int = 4
    tet_order: int = 3
    wire_order: int = 4
    test_refinement: int = 3
    threads: int = 1


@dataclass(frozen=True)
class RunConfig:
    source: str
    sphere: SphereConfig
    solver: SolverConfig
    output_dir: Path
    surfaces: tuple[Path, ...] = ()
    sigma: tuple[float, ...] = ()
    electrodes: Path | None = None
    tets: tuple[Path, ...] = ()
    tet_hosts: tuple[int, ...] = ()
    wires: tuple[Path, ...] = ()
    wire_hosts: tuple[int, ...] = ()
    max_seg_len: float | None = None
    dipoles: tuple[tuple[str, Dipole], ...] = ()
    compare_models: bool = False
    digest: str = field(default="", compare=False)

    def with_overrides(self, *, threads=None, output=None, solver=None, quadrature_order=None) -> "RunConfig":
        """Apply command-line flags; the digest covers them."""
        s = self.solver
        changes = {}
        if threads is not None:
            if threads < 1:
                raise ConfigError("--threads must be >= 1")
            changes["threads"] = int(threads)
        if solver is not None:
            changes["method"] = _choice("solver", solver, ("direct", "iterative"))
        if quadrature_order is not None:
            if quadrature_order not in SUPPORTED_ORDERS:
                raise ConfigError(f"--quadrature-order must be one of {SUPPORTED_ORDERS}")
            changes["quadrature_order"] = int(quadrature_order)
        cfg = replace(self, solver=replace(s, **changes))
        if output is not None:
            cfg = replace(cfg, output_dir=Path(output))
        # threads and the output location do not change results, so they stay out of the digest
        extra = {k: v for k, v in changes.items() if k != "threads"}
        if extra:
            cfg = replace(cfg, digest=_sha(self.digest + json.dumps(extra, sort_keys=True)))
        return cfg


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _floats(section: str, key: str, text: str, count: int | None = None) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: expected numbers, got {text!r}") from exc
    if count is not None and len(vals) != count:
        raise ConfigError(f"[{section}] {key}: expected {count} numbers, got {len(vals)}")
    if not all(np.isfinite(vals)):
        raise ConfigError(f"[{section}] {key}: non-finite value")
    return vals


def _ints(section: str, key: str, text: str) -> tuple[int, ...]:
    vals = _floats(section, key, text)
    if any(v != int(v) for v in vals):
        raise ConfigError(f"[{section}] {key}: expected integers")
    return tuple(int(v) for v in vals)


def _choice(key: str, value: str, options) -> str:
    v = value.strip().lower()
    if v not in options:
        raise ConfigError(f"{key}: {value!r} is not one of {', '.join(options)}")
    return v


def _range(text: str) -> tuple[float, ...]:
    """``a:b:step`` inclusive, or a comma list."""
    if ":" in text:
        parts = _floats("sphere", "eccentricities", text.replace(":", " "), 3)
        a, b, step = parts
        if step <= 0 or b < a:
            raise ConfigError("[sphere] eccentricities: range needs start <= stop and step > 0")
        n = int(np.floor((b - a) / step + 1e-9)) + 1
        return tuple(round(a + k * step, 10) for k in range(n))
    return _floats("sphere", "eccentricities", text)


def _paths(base: Path, text: str) -> tuple[Path, ...]:
    out = []
    for item in (t.strip() for t in text.split(",")):
        if not item:
            continue
        p = Path(item)
        p = p if p.is_absolute() else base / p
        if not p.is_file():
            raise ConfigError(f"referenced file does not exist: {p}")
        out.append(p)
    return tuple(out)


def _positive(section: str, key: str, vals) -> None:
    if any(v <= 0 for v in vals):
        raise ConfigError(f"[{section}] {key}: values must be positive")


def parse_config(text: str, base_dir=".") -> RunConfig:
    """Parse and validate configuration text; raises :class:`ConfigError`."""
    base = Path(base_dir)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";",), interpolation=None)
    cp.optionxform = str  # keep dipole labels as written
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        allowed = SECTIONS[sec]
        if allowed is not None:
            unknown = set(cp[sec]) - allowed
            if unknown:
                raise ConfigError(f"[{sec}] unknown keys: {', '.join(sorted(unknown))}")

    def get(sec, key, default=None):
        return cp[sec][key] if cp.has_option(sec, key) else default

    sp = SphereConfig()
    if cp.has_section("sphere"):
        radii = _floats("sphere", "radii", get("sphere", "radii")) if get("sphere", "radii") else sp.radii
        sig = _floats("sphere", "sigma", get("sphere", "sigma")) if get("sphere", "sigma") else sp.sigma
        elec = get("sphere", "electrodes", "vertices").strip()
        n_elec = None if elec == "vertices" else _ints("sphere", "electrodes", elec)[0]
        sp = SphereConfig(
            radii=radii,
            sigma=sig,
            level=_ints("sphere", "level", get("sphere", "level", str(sp.level)))[0],
            electrodes=n_elec,
            eccentricities=_range(get("sphere", "eccentricities")) if get("sphere", "eccentricities") else sp.eccentricities,
            orientation=_choice("[sphere] orientation", get("sphere", "orientation", sp.orientation), ("radial", "tangential", "both")),
            moment=_floats("sphere", "moment", get("sphere", "moment", str(sp.moment)), 1)[0],
            bound_pct=_floats("sphere", "bound_pct", get("sphere", "bound_pct", str(sp.bound_pct)), 1)[0],
            n_max=_ints("sphere", "n_max", get("sphere", "n_max", str(sp.n_max)))[0],
            tol=_floats("sphere", "tol", get("sphere", "tol", str(sp.tol)), 1)[0],
        )
    if len(sp.radii) != len(sp.sigma) or not sp.radii:
        raise ConfigError("[sphere] radii and sigma must have the same non-zero length")
    if any(np.diff(sp.radii) <= 0):
        raise ConfigError("[sphere] radii must be strictly increasing")
    _positive("sphere", "radii", sp.radii)
    _positive("sphere", "sigma", sp.sigma)
    _positive("sphere", "moment", (sp.moment,))
    _positive("sphere", "bound_pct", (sp.bound_pct,))
    if sp.level < 0:
        raise ConfigError("[sphere] level must be >= 0")
    if sp.electrodes is not None and sp.electrodes < 1:
        raise ConfigError("[sphere] electrodes must be 'vertices' or a positive count")
    if any(e < 0 or e >= 100 for e in sp.eccentricities):
        raise ConfigError("[sphere] eccentricities must lie in [0, 100) percent")

    sv = SolverConfig()
    if cp.has_section("solver"):
        sv = SolverConfig(
            method=_choice("[solver] method", get("solver", "method", sv.method), ("direct", "iterative")),
            tol=_floats("solver", "tol", get("solver", "tol", str(sv.tol)), 1)[0],
            quadrature_order=_ints("solver", "quadrature_order", get("solver", "quadrature_order", str(sv.quadrature_order)))[0],
            tet_order=_ints("solver", "tet_order", get("solver", "tet_order", str(sv.tet_order)))[0],
            wire_order=_ints("solver", "wire_order", get("solver", "wire_order", str(sv.wire_order)))[0],
            test_refinement=_ints("solver", "test_refinement", get("solver", "test_refinement", str(sv.test_refinement)))[0],
            threads=_ints("solver", "threads", get("solver", "threads", str(sv.threads)))[0],
        )
    _positive("solver", "tol", (sv.tol,))
    _positive("solver", "threads", (sv.threads,))
    for key in ("quadrature_order", "tet_order", "wire_order"):
        if getattr(sv, key) not in SUPPORTED_ORDERS:
            raise ConfigError(f"[solver] {key} must be one of {SUPPORTED_ORDERS}")
    if sv.test_refinement < 0:
        raise ConfigError("[solver] test_refinement must be >= 0")

    source = _choice("[model] source", get("model", "source", "sphere") if cp.has_section("model") else "sphere", ("sphere", "files"))
    kw: dict = {}
    if cp.has_section("model"):
        if get("model", "tets"):
            kw["tets"] = _paths(base, get("model", "tets"))
            hosts = _ints("model", "tet_hosts", get("model", "tet_hosts", "1 " * len(kw["tets"])))
            if len(hosts) != len(kw["tets"]):
                raise ConfigError("[model] tet_hosts needs one entry per tet file")
            kw["tet_hosts"] = hosts
        if get("model", "wires"):
            kw["wires"] = _paths(base, get("model", "wires"))
            hosts = _ints("model", "wire_hosts", get("model", "wire_hosts", "1 " * len(kw["wires"])))
            if len(hosts) != len(kw["wires"]):
                raise ConfigError("[model] wire_hosts needs one entry per wire file")
            kw["wire_hosts"] = hosts
        if get("model", "max_seg_len"):
            kw["max_seg_len"] = _floats("model", "max_seg_len", get("model", "max_seg_len"), 1)[0]
            _positive("model", "max_seg_len", (kw["max_seg_len"],))
    if source == "files":
        if not get("model", "surfaces"):
            raise ConfigError("[model] source = files needs 'surfaces'")
        kw["surfaces"] = _paths(base, get("model", "surfaces"))
        if not get("model", "sigma"):
            raise ConfigError("[model] source = files needs 'sigma'")
        kw["sigma"] = _floats("model", "sigma", get("model", "sigma"), len(kw["surfaces"]))
        _positive("model", "sigma", kw["sigma"])
        if not get("model", "electrodes"):
            raise ConfigError("[model] source = files needs 'electrodes'")
        kw["electrodes"] = _paths(base, get("model", "electrodes"))[0]
    n_layers = len(kw.get("surfaces", ())) if source == "files" else len(sp.radii)
    for key in ("tet_hosts", "wire_hosts"):
        if any(not 1 <= h <= n_layers for h in kw.get(key, ())):
            raise ConfigError(f"[model] {key}: compartments run from 1 to {n_layers}")

    dipoles = []
    if cp.has_section("dipoles"):
        for label, value in cp["dipoles"].items():
            v = _floats("dipoles", label, value, 6)
            dipoles.append((label, Dipole(v[:3], v[3:])))

    out_dir = Path("out")
    compare = False
    if cp.has_section("output"):
        d = Path(get("output", "directory", "out"))
        out_dir = d if d.is_absolute() else base / d
        try:
            compare = cp.getboolean("output", "compare_models", fallback=False)
        except ValueError as exc:
            raise ConfigError(f"[output] compare_models: {exc}") from exc
    else:
        out_dir = base / out_dir

    return RunConfig(
        source=source, sphere=sp, solver=sv, output_dir=out_dir, dipoles=tuple(dipoles),
        compare_models=compare, digest=_sha(text), **kw,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), path.parent)
