"""Level-set extraction: grids, marching, collar, fuse, and the driver."""

import os

import numpy as np
import pytest

from solidangle import levelset as ls
from solidangle import manifold as mf
from solidangle import mesh as msh
from solidangle import potential as pt
from solidangle.angles import angdiff, angle_mod
from solidangle.errors import (ConfigError, ConvergenceError, DomainError,
                               FuseError)

CIRCLE = mf.Circle()
T = 0.25
RES = 40
RINGS = 5


@pytest.fixture(scope="module")
def circle_run():
    """One full pipeline on the circle, shared by the checks below."""
    bounds = ls.auto_bounds(CIRCLE, T)
    grid = ls.sample_grid(CIRCLE, T, bounds, RES, tol=1e-8, workers=2)
    interior = ls.extract_iso(grid, T, workers=2)
    frame = mf.build_frame(CIRCLE)
    r_rings = ls.collar_radii(0.8 * interior.info["clip_radius"], RINGS)
    collar = ls.collar_stitch(CIRCLE, frame, T, r_rings, w_count=80,
                              workers=2)
    fused = ls.fuse(interior, collar)
    return {"bounds": bounds, "grid": grid, "interior": interior,
            "frame": frame, "collar": collar, "fused": fused}


def test_auto_bounds_contains_curve_and_shrinks_with_level():
    wide = ls.auto_bounds(CIRCLE, 0.1)
    narrow = ls.auto_bounds(CIRCLE, 0.4)
    pts = CIRCLE.chart(np.arange(64) / 64)
    assert np.all(pts > wide[0]) and np.all(pts < wide[1])
    # a level nearer 0 decays later, so its box must be at least as large
    assert np.all(narrow[1] - narrow[0] <= wide[1] - wide[0] + 1e-12)


def test_auto_bounds_refuses_levels_near_zero():
    with pytest.raises(DomainError):
        ls.auto_bounds(CIRCLE, 0.001)
    with pytest.raises(DomainError):
        ls.auto_bounds(CIRCLE, 0.995)


def test_sample_grid_masks_nodes_on_the_curve():
    # 25 nodes over [-1.5, 1.5] puts nodes exactly on the unit circle
    bounds = np.array([[-1.5, -1.5, -1.5], [1.5, 1.5, 1.5]])
    grid = ls.sample_grid(CIRCLE, T, bounds, 25, tol=1e-6)
    assert grid.mask_radius > 0
    assert not grid.valid.all()
    on_curve = grid.dist < grid.mask_radius
    assert np.array_equal(~grid.valid, on_curve)
    assert np.all(grid.values[~grid.valid] == 0.0)


def test_sample_grid_rejects_bad_config():
    bounds = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])
    with pytest.raises(ConfigError):
        ls.sample_grid(CIRCLE, T, bounds, 4)
    with pytest.raises(ConfigError):
        ls.sample_grid(CIRCLE, T, bounds[::-1], 16)


def test_grid_dump_round_trips_values(tmp_path, circle_run):
    grid = circle_run["grid"]
    path = tmp_path / "grid.txt"
    ls.dump_grid(grid, str(path))
    lines = path.read_text().splitlines()
    nx, ny, nz = grid.resolution
    assert lines[0] == "# angle grid %d %d %d" % (nx, ny, nz)
    assert len(lines) == 3 + nx * ny * nz
    probe = lines[3 + (5 * ny + 7) * nz + 11].split()
    i, j, k = map(int, probe[:3])
    assert (i, j, k) == (5, 7, 11)
    assert float(probe[3]) == grid.values[5, 7, 11]
    assert int(probe[4]) == int(grid.valid[5, 7, 11])
    assert float(probe[5]) == grid.dist[5, 7, 11]


def test_extract_iso_interior_quality(circle_run):
    interior = circle_run["interior"]
    assert interior.mesh.n_triangles > 500
    census = msh.edge_census(interior.mesh)
    assert census["nonmanifold"] == 0
    assert msh.orientation_consistent(interior.mesh)
    assert np.all(np.isfinite(interior.residual))
    assert interior.residual.max() < 1e-3
    assert np.all(interior.provenance == ls.PROV_INTERIOR)
    # the guard band skips sheets near other levels without probing them
    assert interior.info["probed_cells"] == 0


def test_extract_iso_normals_follow_gradient(circle_run):
    interior = circle_run["interior"]
    tri = interior.mesh.vertices[interior.mesh.triangles[::40]]
    nv = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    res = pt.grad_batch(CIRCLE, tri.mean(axis=1), tol=1e-8)
    ok = res.code == 0
    dots = np.einsum("ij,ij->i", nv[ok], res.grad[ok])
    assert np.all(dots > 0)


def test_extract_iso_empty_region_gives_empty_mesh():
    bounds = np.array([[4.0, 4.0, 4.0], [6.0, 6.0, 6.0]])
    grid = ls.sample_grid(CIRCLE, T, bounds, 12, tol=1e-6)
    iso = ls.extract_iso(grid, T)
    assert iso.mesh.n_triangles == 0
    assert iso.mesh.n_vertices == 0
    assert "rejected_cells" in iso.info


def test_extract_iso_determinism_across_workers(circle_run):
    grid = circle_run["grid"]
    again = ls.extract_iso(grid, T, workers=1)
    assert np.array_equal(again.mesh.vertices,
                          circle_run["interior"].mesh.vertices)
    assert np.array_equal(again.mesh.triangles,
                          circle_run["interior"].mesh.triangles)
    assert np.array_equal(again.residual, circle_run["interior"].residual)


def test_sample_grid_determinism_across_workers():
    bounds = np.array([[-1.4, -1.4, -0.9], [1.4, 1.4, 0.9]])
    g1 = ls.sample_grid(CIRCLE, T, bounds, 16, tol=1e-6, workers=1)
    g2 = ls.sample_grid(CIRCLE, T, bounds, 16, tol=1e-6, workers=3)
    assert np.array_equal(g1.values, g2.values)
    assert np.array_equal(g1.valid, g2.valid)


def test_meridian_solve_residual_and_uniqueness(circle_run):
    frame = circle_run["frame"]
    phi = ls.meridian_solve(CIRCLE, frame, T, 0.05, 0.3)
    x = mf.from_tubular(CIRCLE, frame,
                        mf.TubularCoords(w=0.3, r=0.05, phi=phi))
    val = pt.phi(CIRCLE, x, tol=1e-12)
    assert abs(angdiff(val.angle, T)) <= 1e-10


def test_meridian_solve_degree_near_tube(circle_run):
    # the meridian map converges to a degree -1 rotation: level shifts
    # translate to meridian shifts of the same size and fixed sign
    frame = circle_run["frame"]
    r = 1e-3
    levels = [0.25, 0.30, 0.35]
    sols = [ls.meridian_solve(CIRCLE, frame, tt, r, 0.125) for tt in levels]
    s1 = angdiff(sols[1], sols[0])
    s2 = angdiff(sols[2], sols[1])
    assert abs(abs(s1) - 0.05) < 2e-3
    assert abs(s1 - s2) < 1e-3


def test_meridian_solve_ring_continuity(circle_run):
    frame = circle_run["frame"]
    ws = np.arange(96) / 96
    phis = ls.meridian_solve(CIRCLE, frame, T, 0.04, ws)
    steps = np.abs(angdiff(np.roll(phis, -1), phis))
    assert steps.max() < 0.05


def test_meridian_solve_rejects_bad_radius(circle_run):
    frame = circle_run["frame"]
    with pytest.raises(DomainError):
        ls.meridian_solve(CIRCLE, frame, T, 0.0, 0.1)
    with pytest.raises(DomainError):
        ls.meridian_solve(CIRCLE, frame, T, 0.6, 0.1)


def test_collar_quality(circle_run):
    collar = circle_run["collar"]
    assert collar.residual[collar.provenance == ls.PROV_COLLAR].max() <= 1e-10
    assert np.all(collar.residual[collar.provenance == ls.PROV_ON_M] == 0.0)
    census = msh.edge_census(collar.mesh)
    assert census["nonmanifold"] == 0
    assert msh.orientation_consistent(collar.mesh)
    loops = msh.boundary_loops(collar.mesh)
    assert len(loops) == 2
    # on-M ring vertices sit exactly on the chart
    onm = collar.mesh.vertices[collar.provenance == ls.PROV_ON_M]
    ws = collar.info["ws"]
    assert np.allclose(onm, CIRCLE.chart(ws), atol=0.0)


def test_collar_rejects_bad_ring_config(circle_run):
    frame = circle_run["frame"]
    with pytest.raises(ConfigError):
        ls.collar_stitch(CIRCLE, frame, T, np.array([0.1, 0.05]), 32)
    with pytest.raises(ConfigError):
        ls.collar_stitch(CIRCLE, frame, T, np.array([0.05, 0.1, 0.0]), 32)
    with pytest.raises(ConfigError):
        ls.collar_stitch(CIRCLE, frame, T, np.array([0.6, 0.3, 0.0]), 32)
    with pytest.raises(ConfigError):
        ls.collar_stitch(CIRCLE, frame, T, np.array([0.1, 0.0]), 4)


def test_fused_surface_is_a_disk_bounded_on_the_curve(circle_run):
    fused = circle_run["fused"]
    stats = ls.mesh_stats(fused, m=CIRCLE)
    assert stats["census"]["nonmanifold"] == 0
    assert stats["boundary_loops"] == 1
    assert stats["components"] == 1
    assert stats["euler_characteristic"] == 1
    assert stats["genus"] == 0.0
    assert stats["max_residual"] <= 1e-3
    assert stats["grad_floor"] > 0.0
    loops = msh.boundary_loops(fused.mesh)
    assert np.all(fused.provenance[loops[0]] == ls.PROV_ON_M)
    # boundary vertices lie on the curve itself
    bdry = fused.mesh.vertices[loops[0]]
    d = np.abs(np.hypot(bdry[:, 0], bdry[:, 1]) - 1.0)
    assert np.max(np.hypot(d, np.abs(bdry[:, 2]))) < 1e-12


def test_fused_vertices_stay_near_the_fiber(circle_run):
    # residual over gradient bounds the distance to the true level set
    fused = circle_run["fused"]
    grid = circle_run["grid"]
    h = float(np.max(grid.spacing))
    off = fused.provenance != ls.PROV_ON_M
    pick = np.nonzero(off)[0][::7]
    res = pt.grad_batch(CIRCLE, fused.mesh.vertices[pick], tol=1e-8)
    ok = res.code == 0
    dist_est = fused.residual[pick][ok] / np.linalg.norm(res.grad[ok], axis=1)
    assert dist_est.max() <= 2.0 * h


def test_fused_surface_respects_revolution_symmetry(circle_run):
    # the circle's level set is a surface of revolution: vertex height
    # depends only on cylinder radius, tightly, at matched radii
    fused = circle_run["fused"]
    v = fused.mesh.vertices[fused.provenance == ls.PROV_INTERIOR]
    rho = np.hypot(v[:, 0], v[:, 1])
    z = v[:, 2]
    order = np.argsort(rho)
    rho, z = rho[order], z[order]
    # compare nearby-radius pairs on the same side of the plane
    same = (np.diff(rho) < 1e-3) & (np.sign(z[:-1]) == np.sign(z[1:]))
    assert np.count_nonzero(same) > 50
    assert np.max(np.abs(np.diff(z))[same]) < 0.02


def test_collar_refinement_changes_little(circle_run):
    # halving the innermost positive radius (one more ring) moves the
    # collar area by well under ten percent
    interior = circle_run["interior"]
    frame = circle_run["frame"]
    r_rings = ls.collar_radii(0.8 * interior.info["clip_radius"], RINGS + 1)
    collar2 = ls.collar_stitch(CIRCLE, frame, T, r_rings, w_count=80,
                               workers=2)
    fused2 = ls.fuse(interior, collar2)
    a1 = ls.mesh_stats(circle_run["fused"])["area_collar"]
    a2 = ls.mesh_stats(fused2)["area_collar"]
    assert abs(a2 - a1) / a1 < 0.10


def test_fuse_rejects_mismatched_levels(circle_run):
    collar = circle_run["collar"]
    frame = circle_run["frame"]
    bad = ls.collar_stitch(CIRCLE, frame, 0.4,
                           ls.collar_radii(0.08, 3), w_count=32)
    with pytest.raises(FuseError):
        ls.fuse(circle_run["interior"], bad)


def test_extract_surface_driver_matches_manual_pipeline(circle_run):
    fused, grid = ls.extract_surface(CIRCLE, T, resolution=RES,
                                     rings=RINGS, w_count=80, workers=2)
    assert np.array_equal(grid.values, circle_run["grid"].values)
    assert np.array_equal(fused.mesh.vertices,
                          circle_run["fused"].mesh.vertices)
    assert np.array_equal(fused.mesh.triangles,
                          circle_run["fused"].mesh.triangles)


def test_extract_surface_rejects_surfaces_and_bad_levels():
    with pytest.raises(DomainError):
        ls.extract_surface(mf.FlatTorus4(2.0, 0.5), T, resolution=16)
    with pytest.raises(DomainError):
        ls.extract_surface(CIRCLE, 0.005, resolution=16)


def test_mesh_stats_counts_provenance_areas(circle_run):
    stats = ls.mesh_stats(circle_run["fused"])
    total = stats["area"]
    assert total > 0
    assert abs(stats["area_interior"] + stats["area_collar"] - total) < 1e-12
    assert stats["area_interior"] > stats["area_collar"] > 0
