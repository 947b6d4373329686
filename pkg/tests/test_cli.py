"""End-to-end checks of the command line driver.

Most tests call main() in process so the suite stays fast; one smoke
test goes through a real interpreter to cover the module entry point.
"""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

import solidangle.mesh as ms
from solidangle.cli import main


def run_cli(capsys, *args):
    code = main(list(args))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_spec(tmp_path, name, spec):
    path = tmp_path / name
    path.write_text(json.dumps(spec))
    return str(path)


# ------------------------------------------------------------ eval / grad


def test_eval_inside_in_plane(capsys):
    code, out, _ = run_cli(capsys, "eval", "--point", "0.5,0,0")
    assert code == 0
    header, row = out.strip().splitlines()
    assert header.split(",")[0] == "angle"
    assert float(row.split(",")[0]) == pytest.approx(0.5, abs=1e-9)


def test_eval_outside_in_plane(capsys):
    code, out, _ = run_cli(capsys, "eval", "--point", "2,0,0")
    assert code == 0
    angle = float(out.strip().splitlines()[1].split(",")[0])
    assert min(angle, 1.0 - angle) == pytest.approx(0.0, abs=1e-9)


def test_eval_on_curve_is_domain_error(capsys):
    code, _, err = run_cli(capsys, "eval", "--point", "1,0,0")
    assert code == 2
    assert "proximity" in err


def test_eval_with_spec_file(capsys, tmp_path):
    spec = write_spec(tmp_path, "knot.json",
                      {"kind": "torus_knot", "p": 2, "q": 3,
                       "R": 2.0, "r": 0.5})
    code, out, _ = run_cli(capsys, "eval", "--curve", spec,
                           "--point", "0.1,0.2,0.3", "--tol", "1e-8")
    assert code == 0
    assert 0.0 <= float(out.strip().splitlines()[1].split(",")[0]) < 1.0


def test_eval_four_dimensional_spec(capsys, tmp_path):
    spec = write_spec(tmp_path, "rt4.json",
                      {"kind": "ring_torus4", "R": 2.0, "r": 0.5})
    code, out, _ = run_cli(capsys, "eval", "--curve", spec,
                           "--point", "0.1,0,0.2,0.1", "--tol", "1e-8")
    assert code == 0
    assert len(out.strip().splitlines()) == 2


def test_grad_matches_direct_call(capsys):
    import solidangle.manifold as mf
    import solidangle.potential as pt

    code, out, _ = run_cli(capsys, "grad", "--point", "0.4,0.3,0.5")
    assert code == 0
    header, row = out.strip().splitlines()
    assert header == "gx,gy,gz,norm"
    got = np.array([float(v) for v in row.split(",")])
    ref = pt.grad_phi(mf.Circle(), [0.4, 0.3, 0.5])
    assert np.allclose(got[:3], ref, rtol=1e-12, atol=1e-15)
    assert got[3] == pytest.approx(float(np.linalg.norm(ref)), rel=1e-12)


# ------------------------------------------------------------ exit codes


def test_unknown_kind_is_config_error(capsys, tmp_path):
    spec = write_spec(tmp_path, "bad.json", {"kind": "mobius"})
    code, _, err = run_cli(capsys, "eval", "--curve", spec,
                           "--point", "1,2,3")
    assert code == 1
    assert "mobius" in err


def test_missing_spec_file_is_config_error(capsys, tmp_path):
    code, _, err = run_cli(capsys, "eval",
                           "--curve", str(tmp_path / "nope.json"),
                           "--point", "1,2,3")
    assert code == 1


def test_wrong_point_dimension_is_config_error(capsys):
    code, _, err = run_cli(capsys, "eval", "--point", "1,2")
    assert code == 1
    assert "coordinates" in err


def test_malformed_point_is_config_error(capsys):
    code, _, err = run_cli(capsys, "eval", "--point", "1,two,3")
    assert code == 1


def test_usage_errors_map_to_config_exit(capsys):
    assert run_cli(capsys, "bogus-command")[0] == 1
    assert run_cli(capsys, "eval")[0] == 1  # --point is required
    assert run_cli(capsys, "--help")[0] == 0


# ------------------------------------------------------------ oracle-compare


def test_oracle_compare_accuracy_and_reproducibility(capsys, tmp_path):
    out1 = str(tmp_path / "oc1.csv")
    out2 = str(tmp_path / "oc2.csv")
    code, out, _ = run_cli(capsys, "oracle-compare", "--count", "60",
                           "--seed", "3", "--out", out1)
    assert code == 0
    assert "max_dist_phi_circle" in out
    rows = read_csv(out1)
    assert len(rows) == 60
    worst = max(float(r["dist_phi_circle"]) for r in rows)
    assert worst <= 1e-8
    assert max(float(r["dist_paxton_circle"]) for r in rows) <= 1e-10
    # branch coverage: both in-plane branches plus generic points
    in_plane = [r for r in rows if float(r["z"]) == 0.0]
    inside = [r for r in in_plane
              if np.hypot(float(r["x"]), float(r["y"])) < 1.0]
    assert inside and len(in_plane) > len(inside)
    assert len(rows) > len(in_plane)
    # same seed, different worker count: same bytes
    code, _, _ = run_cli(capsys, "oracle-compare", "--count", "60",
                         "--seed", "3", "--workers", "3", "--out", out2)
    assert code == 0
    with open(out1, "rb") as a, open(out2, "rb") as b:
        assert a.read() == b.read()


def test_oracle_compare_needs_the_circle(capsys, tmp_path):
    spec = write_spec(tmp_path, "knot.json",
                      {"kind": "torus_knot", "p": 2, "q": 3,
                       "R": 2.0, "r": 0.5})
    code, _, err = run_cli(capsys, "oracle-compare", "--curve", spec)
    assert code == 1
    assert "circle" in err


# ------------------------------------------------------------ surface


def test_surface_command_writes_mesh_and_stats(capsys, tmp_path):
    out = str(tmp_path / "disk.obj")
    code, text, _ = run_cli(capsys, "surface", "--level", "0.25",
                            "--grid", "24", "--rings", "4",
                            "--out", out, "--workers", "2")
    assert code == 0
    assert "boundary_loops 1" in text
    mesh = ms.import_mesh(out)
    census = ms.edge_census(mesh)
    assert census["nonmanifold"] == 0
    assert census["boundary"] > 0
    stats = {r["key"]: r["value"] for r in read_csv(str(tmp_path / "disk_stats.csv"))}
    assert stats["boundary_loops"] == "1"
    assert float(stats["genus"]) == 0.0
    assert float(stats["max_residual"]) < 1e-3
    assert int(stats["vertices"]) == mesh.vertices.shape[0]


def test_surface_ply_format(capsys, tmp_path):
    out = str(tmp_path / "disk.ply")
    code, _, _ = run_cli(capsys, "surface", "--level", "0.3",
                         "--grid", "20", "--rings", "3",
                         "--out", out, "--format", "ply", "--workers", "2")
    assert code == 0
    mesh = ms.import_mesh(out)
    assert mesh.n_triangles > 0


def test_surface_refuses_level_near_zero(capsys, tmp_path):
    code, _, err = run_cli(capsys, "surface", "--level", "0.001",
                           "--grid", "16",
                           "--out", str(tmp_path / "s.obj"))
    assert code == 2
    assert "fiber" in err


# ------------------------------------------------------------ reports


@pytest.fixture(scope="module")
def report_dir(tmp_path_factory):
    outdir = tmp_path_factory.mktemp("reports")
    code = main(["reports", "--out", str(outdir), "--workers", "2"])
    assert code == 0
    return outdir


def test_reports_write_csv_and_png(report_dir):
    for stem in ("decay", "euler_residual", "tube_derivative", "winding"):
        assert (report_dir / (stem + ".csv")).exists()
        png = report_dir / (stem + ".png")
        assert png.exists()
        assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_reports_decay_slopes(report_dir):
    rows = read_csv(str(report_dir / "decay.csv"))
    circle = [r for r in rows if r["manifold"] == "circle"]
    assert len(circle) == 5
    assert abs(float(circle[0]["phi_slope"]) + 2.0) <= 0.1
    ring = [r for r in rows if r["manifold"] == "ring_torus4"]
    assert abs(float(ring[0]["phi_slope"]) + 3.0) <= 0.2


def test_reports_euler_slope(report_dir):
    rows = read_csv(str(report_dir / "euler_residual.csv"))
    assert abs(float(rows[0]["euler_slope"]) + 3.0) <= 0.2


def test_reports_winding_constant(report_dir):
    rows = read_csv(str(report_dir / "winding.csv"))
    for label in ("circle", "trefoil"):
        winds = {int(r["winding"]) for r in rows if r["manifold"] == label}
        assert len(winds) == 1
        assert winds.pop() in (-1, 1)


def test_reports_tube_meridional_sign(report_dir):
    rows = read_csv(str(report_dir / "tube_derivative.csv"))
    eps = float(rows[0]["eps"])
    assert eps in (-1.0, 1.0)
    # deviation from eps decays with the tube radius; check the smallest
    small = [r for r in rows if float(r["r"]) <= 2e-3]
    assert small
    for r in small:
        assert abs(float(r["dphi_dangle"]) - eps) <= 0.01


# ------------------------------------------------------------ entry point


def test_module_entry_point_subprocess():
    proc = subprocess.run(
        [sys.executable, "-m", "solidangle", "eval", "--point", "0.5,0,0"],
        capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0].startswith("angle,")


def test_selfcheck_passes(capsys):
    code, out, _ = run_cli(capsys, "selfcheck")
    assert code == 0
    assert "9/9 checks passed" in out
    assert "FAIL" not in out
