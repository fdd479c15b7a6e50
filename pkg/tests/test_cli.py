import re

import numpy as np
import pytest

from hybridbem import __version__
from hybridbem import formulation as fm
from hybridbem.analytic import rdm
from hybridbem.cli import main
from hybridbem.geometry import (
    WireBundle,
    generate_ball_tets,
    generate_sphere_surface,
    save_electrodes,
    save_surface_mesh,
    save_tet_region,
    save_wire_bundle,
    sphere_electrodes,
)

RADII = (0.087, 0.092, 0.1)
SIGMA = (0.33, 0.0125, 0.33)
HEADER = re.compile(r"^# hybridbem (\S+) config_sha256=([0-9a-f]{16})$")


def read_csv(path):
    lines = path.read_text().splitlines()
    m = HEADER.match(lines[0])
    assert m and m.group(1) == __version__
    cols = lines[1].split(",")
    rows = [line.split(",") for line in lines[2:]]
    return cols, rows


def column(path, name):
    cols, rows = read_csv(path)
    k = cols.index(name)
    return np.array([float(r[k]) for r in rows])


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("head")
    for i, r in enumerate(RADII):
        save_surface_mesh(d / f"s{i + 1}.surf", generate_sphere_surface(r, 1, i + 1))
    # level-1 facets sag up to 5 mm below the sphere, so electrodes sit halfway in
    save_electrodes(d / "cap.txt", sphere_electrodes(256, 0.0975))
    save_electrodes(d / "four.txt", sphere_electrodes(4, 0.0975))
    save_tet_region(d / "null.tet", generate_ball_tets(0.03, 0.015, SIGMA[0], host_layer=1))
    fiber = np.linspace([-0.03, 0.0, 0.0], [0.03, 0.0, 0.0], 9)
    save_wire_bundle(d / "tract.wire", WireBundle((fiber,), np.array([0.005]), np.array([3.3]), 1))
    return d


def write_config(path, model="", dipoles="d1 = 0 0 0.05 0 0 1e-8", extra=""):
    path.write_text(
        "[model]\nsource = files\nsurfaces = s1.surf, s2.surf, s3.surf\nsigma = 0.33 0.0125 0.33\n"
        f"electrodes = cap.txt\n{model}\n[dipoles]\n{dipoles}\n{extra}\n"
    )
    return path


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def plain(files, tmp_path_factory):
    """Surface-only potentials, shared by the comparisons below."""
    out = tmp_path_factory.mktemp("plain")
    assert run("solve", "--config", write_config(files / "plain.ini"), "--output", out) == 0
    return out / "potentials_d1.csv"


# ---------------------------------------------------------------- solve


def test_solve_writes_one_row_per_electrode(files, tmp_path, capsys):
    cfg = write_config(files / "plain.ini")
    assert run("solve", "--config", cfg, "--output", tmp_path) == 0
    cols, rows = read_csv(tmp_path / "potentials_d1.csv")
    assert cols == ["electrode_index", "label", "phi_mV"]
    assert len(rows) == 256
    assert [r[0] for r in rows] == [str(i) for i in range(1, 257)]
    phi = column(tmp_path / "potentials_d1.csv", "phi_mV")
    assert abs(phi.mean()) < 1e-12 * np.abs(phi).max()  # mean referenced
    assert "wrote" in capsys.readouterr().out


def test_zero_contrast_tets_leave_potentials_unchanged(files, plain, tmp_path):
    cfg = write_config(files / "null.ini", model="tets = null.tet\ntet_hosts = 1")
    assert run("solve", "--config", cfg, "--output", tmp_path / "b") == 0
    a = column(plain, "phi_mV")
    b = column(tmp_path / "b" / "potentials_d1.csv", "phi_mV")
    assert np.abs(a - b).max() <= 1e-10 * np.abs(a).max()


def test_wire_bundle_changes_potentials(files, plain, tmp_path):
    cfg = write_config(files / "wire.ini", model="wires = tract.wire\nwire_hosts = 1")
    assert run("solve", "--config", cfg, "--output", tmp_path / "b") == 0
    a = column(plain, "phi_mV")
    b = column(tmp_path / "b" / "potentials_d1.csv", "phi_mV")
    assert rdm(b, a) > 1e-3


def test_compare_export_has_256_electrode_schema(files, tmp_path):
    cfg = write_config(
        files / "cmp.ini", model="wires = tract.wire", dipoles="src A = 0.01 0 0.05 0 0 1e-8",
        extra="[output]\ncompare_models = true",
    )
    assert run("solve", "--config", cfg, "--output", tmp_path) == 0
    cols, rows = read_csv(tmp_path / "compare_src_A.csv")
    assert cols == ["electrode_index", "phi_mV_isotropic", "phi_mV_hybrid"]
    assert len(rows) == 256 and all(len(r) == 3 for r in rows)
    iso = column(tmp_path / "compare_src_A.csv", "phi_mV_isotropic")
    hyb = column(tmp_path / "compare_src_A.csv", "phi_mV_hybrid")
    assert np.all(np.isfinite(iso)) and not np.allclose(iso, hyb)
    assert np.array_equal(hyb, column(tmp_path / "potentials_src_A.csv", "phi_mV"))


def test_outputs_are_byte_identical(files, tmp_path):
    cfg = write_config(files / "wire.ini", model="wires = tract.wire\nwire_hosts = 1")
    run("solve", "--config", cfg, "--output", tmp_path / "a")
    run("solve", "--config", cfg, "--output", tmp_path / "b", "--threads", 2)
    assert (tmp_path / "a" / "potentials_d1.csv").read_bytes() == (tmp_path / "b" / "potentials_d1.csv").read_bytes()


def test_header_hash_follows_config(files, plain, tmp_path):
    run("solve", "--config", write_config(files / "plain.ini"), "--output", tmp_path, "--quadrature-order", 6)
    h = [HEADER.match(p.read_text().splitlines()[0]).group(2) for p in (plain, tmp_path / "potentials_d1.csv")]
    assert h[0] != h[1]


# ---------------------------------------------------------------- leadfield


def leadfield_config(files, name, dipoles):
    text = write_config(files / name, dipoles=dipoles).read_text().replace("cap.txt", "four.txt")
    (files / name).write_text(text)
    return files / name


def test_leadfield_shape_and_timings(files, tmp_path, capsys):
    cfg = leadfield_config(files, "lf.ini", "p = 0 0 0.05 0 0 1\nq = 0.02 -0.01 0.03 0 0 1")
    assert run("leadfield", "--config", cfg, "--output", tmp_path) == 0
    cols, rows = read_csv(tmp_path / "leadfield.csv")
    assert cols[2:] == [f"{lab}_{c}_V_per_Am" for lab in "pq" for c in "xyz"]
    L = np.array([[float(x) for x in r[2:]] for r in rows])
    assert L.shape == (4, 6) and np.all(np.isfinite(L))
    timings = (tmp_path / "leadfield_timings.txt").read_text()
    assert HEADER.match(timings.splitlines()[0])
    for key in ("assembly_s", "factorization_s", "solve_s"):
        assert key in timings
    assert "assembly_s" in capsys.readouterr().out


def test_leadfield_matches_solve(files, tmp_path):
    p = np.array([0.3e-8, -0.5e-8, 1e-8])
    cfg = leadfield_config(files, "lf1.ini", f"d1 = 0.01 0.02 0.04 {p[0]} {p[1]} {p[2]}")
    run("leadfield", "--config", cfg, "--output", tmp_path)
    run("solve", "--config", cfg, "--output", tmp_path)
    _, rows = read_csv(tmp_path / "leadfield.csv")
    L = np.array([[float(x) for x in r[2:]] for r in rows])
    phi = column(tmp_path / "potentials_d1.csv", "phi_mV")
    assert np.abs(L @ p * 1e3 - phi).max() <= 1e-12 * np.abs(phi).max()


def test_leadfield_repeatable(files, tmp_path):
    cfg = leadfield_config(files, "lf.ini", "p = 0 0 0.05 0 0 1\nq = 0.02 -0.01 0.03 0 0 1")
    run("leadfield", "--config", cfg, "--output", tmp_path / "a")
    run("leadfield", "--config", cfg, "--output", tmp_path / "b")
    assert (tmp_path / "a" / "leadfield.csv").read_bytes() == (tmp_path / "b" / "leadfield.csv").read_bytes()


# ---------------------------------------------------------------- validate-sphere


def sphere_config(path, level=1, **keys):
    body = "\n".join(f"{k} = {v}" for k, v in keys.items())
    path.write_text(f"[sphere]\nlevel = {level}\n{body}\n[output]\ndirectory = out\n")
    return path


def test_validate_sphere_writes_sweep(tmp_path, capsys):
    cfg = sphere_config(tmp_path / "v.ini", eccentricities="0:40:20", bound_pct=50)
    assert run("validate-sphere", "--config", cfg) == 0
    cols, rows = read_csv(tmp_path / "out" / "validate_sphere.csv")
    assert cols == ["eccentricity_pct", "relative_error_pct"]
    ecc = [float(r[0]) for r in rows]
    re_pct = np.array([float(r[1]) for r in rows])
    assert ecc == [0.0, 20.0, 40.0]
    assert np.all(np.isfinite(re_pct)) and np.all(re_pct > 0)
    assert "relative error" in capsys.readouterr().out


def test_validate_sphere_center_radial_dipole_is_finite(tmp_path):
    cfg = sphere_config(tmp_path / "v.ini", eccentricities="0", orientation="radial", bound_pct=50)
    assert run("validate-sphere", "--config", cfg) == 0
    _, rows = read_csv(tmp_path / "out" / "validate_sphere.csv")
    assert np.isfinite(float(rows[0][1]))


def test_validate_sphere_bound_violation_exits_4(tmp_path, capsys):
    cfg = sphere_config(tmp_path / "v.ini", level=0, eccentricities="50", bound_pct=1e-6)
    assert run("validate-sphere", "--config", cfg) == 4
    assert "exceeds bound" in capsys.readouterr().err
    assert (tmp_path / "out" / "validate_sphere.csv").is_file()


# ---------------------------------------------------------------- info and errors


def test_info_reports_dofs(files, capsys):
    cfg = write_config(files / "info.ini", model="tets = null.tet\nwires = tract.wire")
    assert run("info", "--config", cfg) == 0
    out = capsys.readouterr().out
    assert "surface 1: 42 vertices, 80 triangles" in out
    assert "electrodes: 256" in out
    assert "dofs tet region 0: 0" in out  # zero contrast drops out
    n_wire = int(re.search(r"dofs wire bundle 0: (\d+)", out).group(1))
    assert n_wire == 7  # interior nodes of a 9-node fiber; end currents vanish
    assert "dofs total: 133" in out


@pytest.mark.parametrize(
    "text",
    [
        "[solver]\nmethod = lu\n",
        "[model]\nsource = files\nsurfaces = none.surf\n",
        "[sphere]\nlevel = 0\n",  # solve without dipoles
        "[sphere]\nlevel = 0\n[dipoles]\nd = 0 0 0.2 0 0 1\n",  # outside the head
        "[sphere]\nlevel = 0\n[dipoles]\nd = 0 0 0.087 0 0 1\n",  # on an interface
    ],
)
def test_config_errors_exit_2(tmp_path, capsys, text):
    (tmp_path / "c.ini").write_text(text)
    assert run("solve", "--config", tmp_path / "c.ini") == 2
    assert capsys.readouterr().err.startswith("config error:")


def test_unsupported_quadrature_order_exits_2(tmp_path, capsys):
    (tmp_path / "c.ini").write_text("[sphere]\nlevel = 0\n[dipoles]\nd = 0 0 0.05 0 0 1e-8\n")
    assert run("solve", "--config", tmp_path / "c.ini", "--quadrature-order", 5) == 2
    assert "quadrature-order" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path):
    assert run("info", "--config", tmp_path / "missing.ini") == 2


def test_malformed_mesh_exits_2(files, tmp_path):
    (tmp_path / "bad.surf").write_text("surf 3 1\n0 0 0\n1 0 0\n")
    (tmp_path / "c.ini").write_text(
        f"[model]\nsource = files\nsurfaces = bad.surf\nsigma = 1\nelectrodes = {files / 'cap.txt'}\n"
    )
    assert run("info", "--config", tmp_path / "c.ini") == 2


def test_solver_failure_exits_3_and_names_stage(tmp_path, capsys, monkeypatch):
    def broken(*args, **kwargs):
        raise fm.SolverError("solve: GMRES did not converge (2000 iterations)")

    monkeypatch.setattr(fm, "solve_many", broken)
    (tmp_path / "c.ini").write_text("[sphere]\nlevel = 0\nelectrodes = 8\n[dipoles]\nd = 0 0 0.05 0 0 1e-8\n")
    assert run("solve", "--config", tmp_path / "c.ini") == 3
    assert "solve failed" in capsys.readouterr().err


def test_singular_system_exits_3(tmp_path, capsys, monkeypatch):
    monkeypatch.setattr(fm, "deflate", lambda system, alpha=None: system)  # keep the null space
    (tmp_path / "c.ini").write_text("[sphere]\nlevel = 0\nelectrodes = 8\n[dipoles]\nd = 0 0 0.05 0 0 1e-8\n")
    assert run("solve", "--config", tmp_path / "c.ini") == 3
    assert "failed" in capsys.readouterr().err


def test_parser_requires_config():
    with pytest.raises(SystemExit):
        main(["solve"])
