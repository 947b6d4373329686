"""Level sets of the map as triangle-meshed surfaces bounded by M.

For a non-critical value t the set of points where the map equals t is a
surface whose closure meets M along all of it.  The extraction splits the
job in two: a marching-cubes pass over a sampled grid handles everything
safely away from M (where local lifts of the circle-valued map exist on
each cell), and an explicit collar built in tube coordinates handles the
part near M, where the map sweeps a full turn around each meridian and no
grid resolution would suffice.  A zipper strip of triangles bridges the
two open boundaries into a single mesh whose only boundary lies on M.

All angles are in turns.  Vertex provenance is tracked so downstream
checks can tell grid-extracted points from collar points from points
placed exactly on M.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from skimage.measure import marching_cubes

from .angles import angdiff, angle_mod, mod_distance, winding_number
from .errors import (ConfigError, ConvergenceError, DomainError,
                     ExtractionError, FuseError)
from .manifold import build_frame, nearest_point, tube_points, tube_radius
from .mesh import (TriMesh, boundary_loops, component_labels,
                   connected_components, edge_census, empty_mesh,
                   euler_characteristic, orientation_consistent,
                   triangle_areas, weld_duplicate_vertices)
from .potential import (GRID_TOL, _FAIL_CONVERGENCE, grad_batch,
                        manifold_distances, phi_batch)

# levels this close to 0 (mod 1) may have unbounded fibers; refuse them
LEVEL_FLOOR = 0.02

# guard band half-width for cell admissibility, in turns: a cell whose
# recentered corner values stay within 1/4 of the level cannot wrap
GUARD_BAND = 0.25

# Newton polish steps are capped at this fraction of the cell diagonal
POLISH_CAP = 0.45

# vertex provenance codes
PROV_INTERIOR = 0
PROV_COLLAR = 1
PROV_ON_M = 2

MERIDIAN_TOL = 1e-10
MERIDIAN_SCAN = 16
_MERIDIAN_SLOPE_MIN = 0.5

# innermost collar rings can sit so close to M that the quadrature hits
# its sample cap before the meridian eval tolerance; rows capped with an
# error estimate below this ceiling are still usable, since an angle
# error d moves the solved point by only ~2*pi*r*d at those radii
_RING_NOISE_CEIL = 1e-3

_ADVANCE = 1.0  # lift headroom when zipping loops


@dataclass
class AngleGrid:
    """Sampled map values on a rectilinear grid, with a validity mask.

    values holds angles in [0, 1); valid marks nodes that were actually
    evaluated (far enough from M, quadrature converged).  dist keeps the
    distance of every node to M so later stages can build clip radii
    without re-solving the nearest-point problem.
    """

    bounds: np.ndarray            # (2, 3) [lo; hi]
    resolution: tuple
    values: np.ndarray            # (nx, ny, nz) angles
    valid: np.ndarray             # (nx, ny, nz) bool
    dist: np.ndarray              # (nx, ny, nz) distance to M
    manifold: object = None
    tol: float = GRID_TOL
    mask_radius: float = 0.0      # nodes closer than this were never evaluated

    @property
    def spacing(self):
        lo, hi = self.bounds
        res = np.asarray(self.resolution, dtype=float)
        return (hi - lo) / (res - 1.0)

    def axes(self):
        lo, hi = self.bounds
        return [np.linspace(lo[k], hi[k], self.resolution[k]) for k in range(3)]


def dump_grid(grid, path):
    """Write the grid as text: one node per line, i j k angle valid dist."""
    with open(path, "w", encoding="ascii") as f:
        f.write("# angle grid %d %d %d\n" % tuple(grid.resolution))
        f.write("# bounds %s\n" % " ".join(
            "%.17g" % v for v in np.asarray(grid.bounds).ravel()))
        f.write("# i j k angle valid dist\n")
        nx, ny, nz = grid.resolution
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    f.write("%d %d %d %.17g %d %.17g\n" % (
                        i, j, k, grid.values[i, j, k],
                        int(grid.valid[i, j, k]), grid.dist[i, j, k]))


@dataclass
class IsoMesh:
    """Extracted level-set mesh with per-vertex diagnostics.

    residual is the distance (mod 1) of the map value at each vertex from
    the target level; vertices placed exactly on M get 0 by convention.
    provenance uses the PROV_* codes.  info carries stage-specific keys
    (clip radius, inadmissible cell count, collar radii, ...).
    """

    mesh: TriMesh
    t: float
    residual: np.ndarray
    provenance: np.ndarray
    info: dict = field(default_factory=dict)


def _chart_cloud(m, per_axis=512):
    if m.n == 1:
        w = np.arange(per_axis) / per_axis
    else:
        g = np.arange(per_axis) / per_axis
        w = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    return m.chart(w)


def auto_bounds(m, t, pad=1.15, tol=1e-6):
    """Axis-aligned cube guaranteed to contain the t level set.

    Fits the far-field decay of the map along a direction stencil and
    solves for the radius where the amplitude falls below half the mod-1
    distance from t to 0, then verifies by sampling the box faces.
    Raises DomainError when t is too close to 0 for any bounded fiber to
    be certain.
    """
    tm = mod_distance(t, 0.0)
    if tm < LEVEL_FLOOR:
        raise DomainError(
            f"level {t} is within {LEVEL_FLOOR} of 0 mod 1; the fiber may "
            "be unbounded and no finite box is guaranteed to contain it")
    cloud = _chart_cloud(m, 512 if m.n == 1 else 48)
    lo, hi = cloud.min(axis=0), cloud.max(axis=0)
    center = 0.5 * (lo + hi)
    r0 = float(np.linalg.norm(cloud - center, axis=1).max())

    # two-radius decay fit around the cloud center
    dirs = _face_directions()
    amps = []
    radii = np.array([4.0 * r0, 8.0 * r0])
    for rr in radii:
        res = phi_batch(m, center + rr * dirs, tol=tol)
        ok = res.code == 0
        if not np.any(ok):
            raise ExtractionError("decay fit failed: no far-field values")
        amps.append(float(np.max(np.abs(angdiff(res.angle[ok], 0.0)))))
    if amps[1] <= 0.0:
        r_out = radii[0]
    else:
        slope = math.log(amps[1] / amps[0]) / math.log(radii[1] / radii[0])
        slope = min(slope, -1.0)
        # amp(R) ~ amps[1] * (R / radii[1])^slope  <=  tm / 2
        r_out = radii[1] * (0.5 * tm / amps[1]) ** (1.0 / slope)
    r_out = pad * max(r_out, 1.25 * r0)

    for _ in range(4):
        box = np.array([center - r_out, center + r_out])
        worst = _face_amplitude(m, box, tol)
        if worst < 0.5 * tm:
            return box
        r_out *= 1.3
    raise ExtractionError(
        f"could not verify a bounding box for level {t}: face amplitude "
        f"{worst:.3g} vs required {0.5 * tm:.3g}")


def _face_directions():
    # axes plus cube corners, normalized
    eye = np.eye(3)
    corners = np.array([[sx, sy, sz] for sx in (-1, 1)
                        for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
    dirs = np.vstack([eye, -eye, corners / math.sqrt(3.0)])
    return dirs


def _face_amplitude(m, box, tol, per_edge=7):
    lo, hi = box
    g = [np.linspace(lo[k], hi[k], per_edge) for k in range(3)]
    pts = []
    for axis in range(3):
        for side in (0, 1):
            uu, vv = np.meshgrid(g[(axis + 1) % 3], g[(axis + 2) % 3],
                                 indexing="ij")
            face = np.empty((per_edge * per_edge, 3))
            face[:, axis] = box[side, axis]
            face[:, (axis + 1) % 3] = uu.ravel()
            face[:, (axis + 2) % 3] = vv.ravel()
            pts.append(face)
    pts = np.vstack(pts)
    res = phi_batch(m, pts, tol=tol)
    ok = res.code == 0
    if not np.all(ok):
        return math.inf
    return float(np.max(np.abs(angdiff(res.angle, 0.0))))


def grid_scales(m, spacing):
    """Clip radius and grid mask radius for a given node spacing.

    The clip radius bounds the collar/grid interface: grid triangles
    inside it are discarded and replaced by the collar.  The mask radius
    keeps grid nodes far enough from M that quadrature stays affordable
    while still leaving at least one admissible cell layer outside the
    clip.
    """
    h = float(np.max(spacing))
    eps0 = tube_radius(m)
    r_clip = max(2.0 * h, eps0 / 4.0)
    delta = max(0.2 * h, r_clip - 1.8 * h)
    return r_clip, delta


def sample_grid(m, t, bounds, resolution, tol=GRID_TOL, workers=1):
    """Evaluate the map on a rectilinear grid, masking near-M nodes.

    Nodes within the mask radius of M, and nodes whose quadrature failed,
    are marked invalid; everything else carries a converged angle.  The
    result is deterministic and independent of workers.
    """
    if np.isscalar(resolution):
        resolution = (int(resolution),) * 3
    resolution = tuple(int(r) for r in resolution)
    if min(resolution) < 8:
        raise ConfigError(f"grid resolution {resolution} too coarse")
    bounds = np.asarray(bounds, dtype=float).reshape(2, 3)
    if np.any(bounds[1] <= bounds[0]):
        raise ConfigError("grid bounds must satisfy lo < hi on every axis")

    axes = [np.linspace(bounds[0][k], bounds[1][k], resolution[k])
            for k in range(3)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([X, Y, Z], axis=-1).reshape(-1, 3)

    dist = manifold_distances(m, nodes)
    spacing = (bounds[1] - bounds[0]) / (np.asarray(resolution) - 1.0)
    _, delta = grid_scales(m, spacing)
    far = dist >= delta

    values = np.zeros(len(nodes))
    valid = np.zeros(len(nodes), dtype=bool)
    if np.any(far):
        res = phi_batch(m, nodes[far], tol=tol, workers=workers)
        ok = res.code == 0
        idx = np.nonzero(far)[0]
        values[idx[ok]] = res.angle[ok]
        valid[idx[ok]] = True

    return AngleGrid(bounds=bounds, resolution=resolution,
                     values=values.reshape(resolution),
                     valid=valid.reshape(resolution),
                     dist=dist.reshape(resolution),
                     manifold=m, tol=tol, mask_radius=delta)


def _corner_stack(a):
    # (nx-1, ny-1, nz-1, 8) view of cell corners
    return np.stack([a[:-1, :-1, :-1], a[1:, :-1, :-1],
                     a[:-1, 1:, :-1], a[1:, 1:, :-1],
                     a[:-1, :-1, 1:], a[1:, :-1, 1:],
                     a[:-1, 1:, 1:], a[1:, 1:, 1:]], axis=-1)


def extract_iso(grid, t, polish=True, workers=1):
    """March the level set through admissible grid cells.

    A cell is admissible when all eight corners are valid and carry
    values within the guard band of t after recentering; on such cells
    the local lift angdiff(value, t) is single-valued and ordinary
    marching cubes applies.  Valid cells rejected by the band are
    counted; any of them with a map value at the cell center within the
    band would put surface in a cell we cannot lift, which raises
    ExtractionError (one level of center probing is the only refinement
    attempted).  Vertices are Newton-polished along the gradient and
    re-evaluated for residuals.
    """
    m = grid.manifold
    if m is None:
        raise ConfigError("grid carries no manifold reference")
    t = float(t)
    F = angdiff(grid.values, t)
    node_ok = grid.valid & (np.abs(F) < GUARD_BAND)

    all_valid = np.all(_corner_stack(grid.valid), axis=-1)
    admissible = np.all(_corner_stack(node_ok), axis=-1)
    rejected = all_valid & ~admissible
    n_rejected = int(np.count_nonzero(rejected))

    probed = _probe_rejected(m, grid, t, rejected, workers)

    spacing = grid.spacing
    try:
        verts, faces, _, _ = marching_cubes(
            F, 0.0, spacing=tuple(spacing), mask=node_ok,
            allow_degenerate=False)
    except (ValueError, RuntimeError):
        return IsoMesh(mesh=empty_mesh(), t=t,
                       residual=np.zeros(0), provenance=np.zeros(0, np.uint8),
                       info={"rejected_cells": n_rejected,
                             "probed_cells": probed,
                             "clip_radius": grid_scales(m, spacing)[0]})
    verts = verts + grid.bounds[0]
    faces = faces.astype(np.int64)

    cell_diag = float(np.linalg.norm(spacing))
    if polish:
        verts, residual = _polish(m, verts, t, grid.tol, cell_diag, workers)
    else:
        res = phi_batch(m, verts, tol=grid.tol, workers=workers)
        residual = np.where(res.code == 0,
                            np.abs(angdiff(res.angle, t)), np.nan)

    faces = _orient_by_gradient(m, verts, faces, grid.tol, workers)

    mesh = TriMesh(verts, faces)
    dist = manifold_distances(m, verts)
    info = {"rejected_cells": n_rejected, "probed_cells": probed,
            "clip_radius": grid_scales(m, spacing)[0],
            "cell_diag": cell_diag, "dist": dist, "manifold": m}
    return IsoMesh(mesh=mesh, t=t, residual=residual,
                   provenance=np.full(len(verts), PROV_INTERIOR, np.uint8),
                   info=info)


def _probe_rejected(m, grid, t, rejected, workers):
    """Classify cells the guard band skipped; fail only on real holes.

    Most rejected cells simply sit on another sheet of the map (their
    corner values cluster away from t); those are skipped.  Cells the
    level does cross are fine inside the clip radius, where the collar
    replaces the grid anyway.  A crossing cell outside the clip radius
    gets one refinement step (a center evaluation); if that still puts
    the level inside the cell, extraction stops rather than emit a hole.
    Returns the number of center evaluations spent.
    """
    idx = np.argwhere(rejected)
    if len(idx) == 0:
        return 0
    corners = _corner_stack(grid.values)[tuple(idx.T)]
    z = np.exp(2j * math.pi * corners)
    mu = np.angle(z.mean(axis=-1)) / (2.0 * math.pi)
    off = angdiff(corners, mu[:, None])
    width = off.max(axis=-1) - off.min(axis=-1)
    dt = angdiff(t, mu)
    crossing = (dt >= off.min(axis=-1)) & (dt <= off.max(axis=-1))
    suspect = crossing | (width >= 0.5)
    if not np.any(suspect):
        return 0

    axes = grid.axes()
    spacing = grid.spacing
    sidx = idx[suspect]
    centers = np.stack([axes[k][sidx[:, k]] + 0.5 * spacing[k]
                        for k in range(3)], axis=-1)
    r_clip, _ = grid_scales(m, spacing)
    dist = manifold_distances(m, centers)
    outside = dist >= r_clip
    if not np.any(outside):
        return 0
    res = phi_batch(m, centers[outside], tol=grid.tol, workers=workers)
    hole = (res.code == 0) & (np.abs(angdiff(res.angle, t)) < GUARD_BAND)
    if np.any(hole):
        bad = sidx[outside][hole][0]
        raise ExtractionError(
            "level %s crosses grid cell %s outside the collar region and "
            "the guard band cannot lift it; refine the grid" %
            (t, tuple(int(v) for v in bad)))
    return int(np.count_nonzero(outside))


def _polish(m, verts, t, tol, cell_diag, workers):
    cap = POLISH_CAP * cell_diag
    res = grad_batch(m, verts, tol=max(tol, 1e-10), workers=workers)
    ok = res.code == 0
    g = res.grad[ok]
    gn2 = np.einsum("ij,ij->i", g, g)
    step = -angdiff(res.angle[ok], t)[:, None] * g / np.maximum(gn2, 1e-300)[:, None]
    ln = np.linalg.norm(step, axis=1)
    scale = np.minimum(1.0, cap / np.maximum(ln, 1e-300))
    out = verts.copy()
    out[ok] += step * scale[:, None]
    check = phi_batch(m, out, tol=tol, workers=workers)
    cok = check.code == 0
    residual = np.where(cok, np.abs(angdiff(check.angle, t)), np.nan)
    # a polish step that failed to re-evaluate is rolled back
    bad = ~cok
    if np.any(bad):
        out[bad] = verts[bad]
        back = phi_batch(m, verts[bad], tol=tol, workers=workers)
        residual[bad] = np.where(back.code == 0,
                                 np.abs(angdiff(back.angle, t)), np.nan)
    return out, residual


def _orient_by_gradient(m, verts, faces, tol, workers):
    """Flip triangles so normals follow the ascending map direction."""
    if len(faces) == 0:
        return faces
    tri = verts[faces]
    nv = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    centers = tri.mean(axis=1)
    res = grad_batch(m, centers, tol=max(tol, 1e-8), workers=workers)
    ok = res.code == 0
    dots = np.einsum("ij,ij->i", nv, res.grad)
    flip = ok & (dots < 0)
    out = faces.copy()
    out[flip] = out[flip][:, ::-1]
    return out


# ---------------------------------------------------------------------------
# meridian solving and the collar


def _ring_solve(m, frame, t, r, ws, tol, workers, seed=None):
    """Solve the map to level t on the meridian circle at every w in ws.

    Returns meridian angles phi (turns) and the achieved residuals.
    Bracketing uses a coarse scan (or a seed from a neighboring ring,
    verified and widened on failure), then safeguarded secant iteration
    on the recentered value.  Rings close enough to M that the
    quadrature caps out solve to the achievable noise floor instead of
    tol; the returned residuals report whatever was reached.
    """
    ws = np.asarray(ws, dtype=float)
    P = len(ws)
    eval_tol = min(tol * 0.1, 1e-11)
    noise = 0.0  # worst accepted capped-row estimate; relaxes the target

    def accept(res, sel):
        nonlocal noise
        bad = res.code != 0
        if np.any(bad):
            capped = bad & (res.code == _FAIL_CONVERGENCE) \
                & (res.err_estimate <= _RING_NOISE_CEIL)
            hard = bad & ~capped
            if np.any(hard):
                j = int(np.nonzero(hard)[0][0])
                raise ConvergenceError(
                    f"meridian evaluation failed at w={sel[j]:.6g}, "
                    f"r={r:.3g} (code {int(res.code[j])})")
            noise = max(noise, float(res.err_estimate[capped].max()))
        return angdiff(res.angle, t)

    def f(phi, rows=None):
        sel = ws if rows is None else ws[rows]
        pts = tube_points(m, frame, sel, np.full(len(sel), r), phi)
        return accept(phi_batch(m, pts, tol=eval_tol, workers=workers), sel)

    lo = np.empty(P)
    hi = np.empty(P)
    flo = np.empty(P)
    fhi = np.empty(P)
    need_scan = np.ones(P, dtype=bool)

    if seed is not None:
        width = 0.08
        slo, shi = seed - width, seed + width
        fs_lo = f(slo)
        fs_hi = f(shi)
        good = (np.abs(fs_lo) < 0.25) & (np.abs(fs_hi) < 0.25) \
            & (fs_lo * fs_hi <= 0)
        lo[good], hi[good] = slo[good], shi[good]
        flo[good], fhi[good] = fs_lo[good], fs_hi[good]
        need_scan = ~good

    if np.any(need_scan):
        sub = np.nonzero(need_scan)[0]
        angs = np.arange(MERIDIAN_SCAN) / MERIDIAN_SCAN
        wrep = np.repeat(ws[sub], MERIDIAN_SCAN)
        arep = np.tile(angs, len(sub))
        pts = tube_points(m, frame, wrep, np.full(len(wrep), r), arep)
        res = phi_batch(m, pts, tol=eval_tol, workers=workers)
        fs = accept(res, wrep).reshape(len(sub), MERIDIAN_SCAN)
        fn = np.roll(fs, -1, axis=1)
        # the true crossing pair straddles zero without wrapping; the
        # degree -1 meridian map guarantees exactly one such pair
        cand = (fs * fn <= 0) & (np.abs(fs - fn) < 0.5)
        if not np.all(cand.any(axis=1)):
            j = sub[int(np.nonzero(~cand.any(axis=1))[0][0])]
            raise ConvergenceError(
                f"no meridian bracket at w={ws[j]:.6g}, r={r:.3g}")
        k = np.argmax(cand, axis=1)
        rows = np.arange(len(sub))
        lo[sub] = angs[k]
        hi[sub] = angs[k] + 1.0 / MERIDIAN_SCAN
        flo[sub] = fs[rows, k]
        fhi[sub] = fn[rows, k]

    x = 0.5 * (lo + hi)
    fx = f(x)
    # below the solve target the sign of f is meaningless anyway, so a
    # capped quadrature only lifts the target to a multiple of its noise
    tol_eff = max(tol, 4.0 * noise)
    active = np.abs(fx) > tol_eff
    for _ in range(80):
        if not np.any(active):
            break
        rows = np.nonzero(active)[0]
        denom = fhi[rows] - flo[rows]
        safe = np.where(denom == 0, 1.0, denom)
        sec = lo[rows] - flo[rows] * (hi[rows] - lo[rows]) / safe
        inside = (denom != 0) & (sec > lo[rows]) & (sec < hi[rows])
        xn = np.where(inside, sec, 0.5 * (lo[rows] + hi[rows]))
        fn_ = f(xn, rows)
        neg = fn_ * flo[rows] <= 0
        hi[rows] = np.where(neg, xn, hi[rows])
        fhi[rows] = np.where(neg, fn_, fhi[rows])
        lo[rows] = np.where(neg, lo[rows], xn)
        flo[rows] = np.where(neg, flo[rows], fn_)
        x[rows] = xn
        fx[rows] = fn_
        tol_eff = max(tol, 4.0 * noise)
        active[rows] = np.abs(fn_) > tol_eff
    stuck = np.abs(fx) > tol_eff
    if np.any(stuck):
        j = int(np.nonzero(stuck)[0][0])
        raise ConvergenceError(
            f"meridian solve stalled at w={ws[j]:.6g}, r={r:.3g}, "
            f"residual {abs(fx[j]):.3g}")
    return angle_mod(x), np.abs(fx)


def _ring_slopes(m, frame, t, r, ws, phis, workers):
    """|d(map)/d(phi)| along the ring, in turns per turn."""
    pts = tube_points(m, frame, ws, np.full(len(ws), r), phis)
    res = grad_batch(m, pts, tol=1e-8, workers=workers)
    if np.any(res.code != 0):
        raise ConvergenceError("gradient failed on a collar ring")
    v1, v2 = frame.at(ws)
    ang = 2.0 * math.pi * phis[:, None]
    dx = 2.0 * math.pi * r * (-np.sin(ang) * v1 + np.cos(ang) * v2)
    return np.abs(np.einsum("ij,ij->i", res.grad, dx))


def meridian_solve(m, frame, t, r, w, tol=MERIDIAN_TOL, workers=1):
    """Meridian angle phi where the map hits t on the circle (w, r).

    The meridian map is degree -1 for small r, so the solution is unique
    there.  Raises ConvergenceError when the meridian derivative is too
    small for a well-conditioned solve (|d/dphi| < 1/2 turn per turn).
    """
    eps0 = tube_radius(m)
    r = float(r)
    if not 0.0 < r < eps0:
        raise DomainError(f"meridian radius {r} outside (0, {eps0:.6g})")
    ws = np.atleast_1d(np.asarray(w, dtype=float))
    phis, resid = _ring_solve(m, frame, t, r, ws, tol, workers)
    slopes = _ring_slopes(m, frame, t, r, ws, phis, workers)
    if np.any(slopes < _MERIDIAN_SLOPE_MIN):
        j = int(np.argmin(slopes))
        raise ConvergenceError(
            f"meridian derivative {slopes[j]:.3g} below "
            f"{_MERIDIAN_SLOPE_MIN} at w={ws[j]:.6g}, r={r}: the level is "
            "critical on this meridian")
    if np.isscalar(w) or np.asarray(w).ndim == 0:
        return float(phis[0])
    return phis


def collar_radii(r_outer, rings=8):
    """Geometric ladder from the interface radius down to 0."""
    if rings < 2:
        raise ConfigError("collar needs at least 2 rings")
    rr = r_outer * 0.5 ** np.arange(rings)
    return np.append(rr, 0.0)


def collar_stitch(m, frame, t, r_rings, w_count=128, tol=MERIDIAN_TOL,
                  workers=1):
    """Triangulated collar of the level set inside the tube around M.

    Solves the meridian equation on every ring of r_rings (a decreasing
    sequence ending in 0; the final ring is placed exactly on M as the
    limit of the solved rings) and joins consecutive rings with a
    cylinder of triangles oriented along the ascending map direction.
    Ring-to-ring continuity is checked through the winding of the
    meridian angles along w.  Residuals on the innermost rings may sit
    above tol when the quadrature caps out there; the residual array
    records what each solve actually achieved.
    """
    r_rings = np.asarray(r_rings, dtype=float)
    if len(r_rings) < 2 or r_rings[-1] != 0.0:
        raise ConfigError("r_rings must end with the on-M ring at r=0")
    if np.any(np.diff(r_rings) >= 0):
        raise ConfigError("r_rings must be strictly decreasing")
    eps0 = tube_radius(m)
    if r_rings[0] >= eps0:
        raise ConfigError(
            f"outer collar radius {r_rings[0]} not inside the tube "
            f"(radius {eps0:.6g})")
    w_count = int(w_count)
    if w_count < 8:
        raise ConfigError("collar needs at least 8 meridians")

    ws = np.arange(w_count) / w_count
    n_solved = len(r_rings) - 1
    phis = np.empty((n_solved, w_count))
    resid = np.empty((n_solved, w_count))
    seed = None
    for k in range(n_solved):
        phis[k], resid[k] = _ring_solve(m, frame, t, r_rings[k], ws, tol,
                                        workers, seed=seed)
        seed = phis[k]

    slopes = _ring_slopes(m, frame, t, r_rings[0], ws, phis[0], workers)
    if np.any(slopes < _MERIDIAN_SLOPE_MIN):
        raise ConvergenceError(
            "meridian derivative below %.2g on the outer collar ring"
            % _MERIDIAN_SLOPE_MIN)

    winds = [winding_number(phis[k]) for k in range(n_solved)]
    if len(set(winds)) > 1:
        raise ExtractionError(
            f"collar rings disagree on meridian winding: {winds}")

    verts = np.empty(((n_solved + 1) * w_count, 3))
    for k in range(n_solved):
        verts[k * w_count:(k + 1) * w_count] = tube_points(
            m, frame, ws, np.full(w_count, r_rings[k]), phis[k])
    verts[n_solved * w_count:] = m.chart(ws)

    faces = _cylinder_faces(n_solved + 1, w_count)
    # orient by the gradient at one outer-ring quad midpoint
    probe = 0.5 * (verts[0] + verts[w_count])
    res = grad_batch(m, probe[None], tol=1e-8, workers=1)
    if res.code[0] == 0:
        tri = verts[faces[0]]
        nv = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        if float(nv @ res.grad[0]) < 0:
            faces = faces[:, ::-1]

    residual = np.concatenate([resid.ravel(), np.zeros(w_count)])
    provenance = np.concatenate([
        np.full(n_solved * w_count, PROV_COLLAR, np.uint8),
        np.full(w_count, PROV_ON_M, np.uint8)])
    info = {"radii": r_rings, "w_count": w_count, "ws": ws,
            "outer_radius": float(r_rings[0]), "winding": winds[0],
            "phis": phis, "manifold": m}
    return IsoMesh(mesh=TriMesh(verts, faces), t=float(t),
                   residual=residual, provenance=provenance, info=info)


def _cylinder_faces(n_rings, w_count):
    faces = []
    for k in range(n_rings - 1):
        a = k * w_count + np.arange(w_count)
        b = k * w_count + (np.arange(w_count) + 1) % w_count
        c = a + w_count
        d = b + w_count
        faces.append(np.stack([a, b, d], axis=1))
        faces.append(np.stack([a, d, c], axis=1))
    return np.concatenate(faces, axis=0).astype(np.int64)


# ---------------------------------------------------------------------------
# fusing the grid mesh and the collar


def _loop_w_params(m, verts, loop):
    out = np.empty(len(loop))
    for i, v in enumerate(loop):
        out[i] = float(nearest_point(m, verts[v]).w)
    return out


def _lift_turns(w):
    steps = angdiff(np.roll(w, -1), w)[:-1]
    return np.concatenate([[w[0]], w[0] + np.cumsum(steps)])


def _clip_interior(interior):
    """Drop triangles inside the clip radius and slivers cut off by it."""
    mesh = interior.mesh
    dist = interior.info["dist"]
    r_clip = interior.info["clip_radius"]
    keep = np.all(dist[mesh.triangles] >= r_clip, axis=1)
    faces = mesh.triangles[keep]
    if len(faces) == 0:
        raise FuseError("clip removed the whole grid mesh")
    clipped = TriMesh(mesh.vertices, faces)
    labels = component_labels(clipped)
    if labels.max() > 0:
        areas = triangle_areas(clipped)
        totals = np.bincount(labels, weights=areas)
        main = int(np.argmax(totals))
        dropped = totals.sum() - totals[main]
        if dropped > 0.05 * totals.sum():
            raise FuseError(
                f"clip split the grid mesh into {labels.max() + 1} pieces "
                f"with {dropped / totals.sum():.1%} of the area off the "
                "main component")
        faces = faces[labels == main]
    used = np.unique(faces)
    remap = np.full(mesh.vertices.shape[0], -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return (TriMesh(mesh.vertices[used], remap[faces]),
            interior.residual[used], interior.provenance[used], used)


def _zip_loops(liftA, idxA, liftB, idxB):
    """Manifold triangle strip between two cyclically aligned loops.

    Both loops are walked in the direction of increasing lift; A edges
    are emitted in walk order and B edges reversed, which is exactly the
    pairing that keeps the fused mesh consistently oriented when A is
    walked against its induced orientation and B along its own.
    """
    nA, nB = len(idxA), len(idxB)
    liftA = np.append(liftA, liftA[0] + _ADVANCE)
    liftB = np.append(liftB, liftB[0] + _ADVANCE)
    ia = np.append(idxA, idxA[0])
    ib = np.append(idxB, idxB[0])
    faces = []
    i = j = 0
    while i < nA or j < nB:
        take_a = j >= nB or (i < nA and liftA[i + 1] <= liftB[j + 1])
        if take_a:
            faces.append((ia[i], ia[i + 1], ib[j]))
            i += 1
        else:
            faces.append((ia[i], ib[j + 1], ib[j]))
            j += 1
    return np.asarray(faces, dtype=np.int64)


def fuse(interior, collar, weld_tol=None):
    """Join the clipped grid mesh and the collar into one surface.

    The grid mesh is clipped at the interface radius, its boundary loop
    and the collar's outer ring are aligned by base parameter, and a
    zipper strip of triangles bridges the gap.  The fused mesh must come
    out edge-manifold, consistently oriented, with its only boundary on
    M; anything else raises FuseError.
    """
    if mod_distance(interior.t, collar.t) > 1e-12:
        raise FuseError(
            f"interior and collar target different levels "
            f"({interior.t} vs {collar.t})")
    manifold = _manifold_of(interior, collar)
    meshI, resI, provI, _ = _clip_interior(interior)
    meshC = collar.mesh

    loopsI = boundary_loops(meshI)
    if len(loopsI) != 1:
        raise FuseError(
            f"clipped grid mesh has {len(loopsI)} boundary loops, need 1")
    loopA = loopsI[0]

    loopsC = boundary_loops(meshC)
    onm = collar.provenance == PROV_ON_M
    outer = [lp for lp in loopsC if not onm[lp].any()]
    if len(outer) != 1:
        raise FuseError("collar does not expose exactly one free ring")
    loopB = outer[0]

    wA = _loop_w_params(manifold, meshI.vertices, loopA)
    w_count = collar.info["w_count"]
    wB = np.array([(v % w_count) / w_count for v in loopB])

    sA = winding_number(wA)
    sB = winding_number(wB)
    if abs(sA) != 1 or sA != -sB:
        raise FuseError(
            f"boundary loops wind incompatibly around M ({sA} vs {sB})")

    # walk A against its induced orientation and B along its own; both
    # then advance the same way around M and the strip edges come out
    # reversed relative to each mesh, which keeps the fusion oriented
    loopA = np.asarray(loopA[::-1])
    wA = wA[::-1]
    loopB = np.asarray(loopB)
    shift = int(np.argmin(np.abs(angdiff(wB, wA[0]))))
    loopB = np.roll(loopB, -shift)
    wB = np.roll(wB, -shift)
    liftA = _lift_turns(wA)
    liftB = _lift_turns(wB)
    if sB < 0:
        liftA, liftB = -liftA, -liftB
    liftB = liftB + np.round(liftA[0] - liftB[0])

    nI = meshI.vertices.shape[0]
    verts = np.vstack([meshI.vertices, meshC.vertices])
    facesC = meshC.triangles + nI
    strip = _zip_loops(liftA, loopA, liftB, loopB + nI)
    faces = np.vstack([meshI.triangles, strip, facesC])
    residual = np.concatenate([resI, collar.residual])
    provenance = np.concatenate([provI, collar.provenance])

    fused = TriMesh(verts, faces)
    if weld_tol is None:
        diag = float(np.linalg.norm(verts.max(axis=0) - verts.min(axis=0)))
        weld_tol = 1e-12 * max(diag, 1.0)
    welded = weld_duplicate_vertices(fused, weld_tol)
    if welded.vertices.shape[0] != fused.vertices.shape[0]:
        # welding would scramble the per-vertex arrays; coincidences at
        # the interface mean the clip and collar overlap
        raise FuseError("grid and collar meshes share vertices; widen the "
                        "clip radius")

    census = edge_census(fused)
    if census["nonmanifold"] != 0:
        raise FuseError(f"fused mesh is not edge-manifold: {census}")
    if not orientation_consistent(fused):
        raise FuseError("fused mesh is not consistently oriented")
    loops = boundary_loops(fused)
    for lp in loops:
        if not np.all(provenance[lp] == PROV_ON_M):
            raise FuseError("fused mesh has a boundary loop off M")

    info = {"boundary_loops": len(loops),
            "strip_triangles": int(len(strip)),
            "clip_radius": interior.info["clip_radius"],
            "collar_outer": collar.info["outer_radius"]}
    return IsoMesh(mesh=fused, t=interior.t, residual=residual,
                   provenance=provenance, info=info)


def _manifold_of(*isos):
    for iso in isos:
        mm = iso.info.get("manifold")
        if mm is not None:
            return mm
    raise ConfigError("no manifold reference available for fusing")


def mesh_stats(iso, m=None, grad_tol=1e-6, grad_sample=256, workers=1):
    """Summary dictionary for an extracted surface.

    Genus assumes each component is orientable and counts boundary loops
    as capped disks.  The gradient floor is evaluated on a deterministic
    subsample of off-M vertices; a positive floor certifies the level was
    non-critical on the sampled set.
    """
    mesh = iso.mesh
    census = edge_census(mesh)
    loops = boundary_loops(mesh) if census["nonmanifold"] == 0 else []
    chi = euler_characteristic(mesh)
    comps = connected_components(mesh)
    b = len(loops)
    genus = (2 * comps - chi - b) / 2.0
    areas = triangle_areas(mesh)
    tri_prov = iso.provenance[mesh.triangles].max(axis=1) \
        if len(mesh.triangles) else np.zeros(0, np.uint8)
    area_interior = float(areas[tri_prov == PROV_INTERIOR].sum())
    area_collar = float(areas[tri_prov != PROV_INTERIOR].sum())
    finite = iso.residual[np.isfinite(iso.residual)]
    stats = {
        "t": iso.t,
        "vertices": int(mesh.vertices.shape[0]),
        "triangles": int(mesh.triangles.shape[0]),
        "census": census,
        "boundary_loops": b,
        "euler_characteristic": int(chi),
        "components": int(comps),
        "genus": genus,
        "area": float(areas.sum()),
        "area_interior": area_interior,
        "area_collar": area_collar,
        "max_residual": float(finite.max()) if len(finite) else 0.0,
        "mean_residual": float(finite.mean()) if len(finite) else 0.0,
        "unreadable_vertices": int(np.count_nonzero(
            ~np.isfinite(iso.residual))),
    }
    if m is not None:
        off = np.nonzero(iso.provenance != PROV_ON_M)[0]
        if len(off):
            stride = max(1, len(off) // grad_sample)
            pick = off[::stride]
            res = grad_batch(m, mesh.vertices[pick], tol=grad_tol,
                             workers=workers)
            ok = res.code == 0
            norms = np.linalg.norm(res.grad[ok], axis=1)
            stats["grad_floor"] = float(norms.min()) if len(norms) else 0.0
            stats["grad_samples"] = int(np.count_nonzero(ok))
    return stats


def extract_surface(m, t, resolution=64, rings=8, w_count=None,
                    tol=GRID_TOL, meridian_tol=MERIDIAN_TOL, workers=1,
                    bounds=None):
    """Full pipeline: bounds, grid, march, collar, fuse.

    Returns (IsoMesh, AngleGrid).  Only curves in R^3 are supported; the
    level t must stay away from 0 mod 1 (see auto_bounds).
    """
    if m.n != 1:
        raise DomainError("surface extraction is limited to curves in R^3")
    t = angle_mod(float(t))
    if bounds is None:
        bounds = auto_bounds(m, t)
    grid = sample_grid(m, t, bounds, resolution, tol=tol, workers=workers)
    interior = extract_iso(grid, t, workers=workers)
    if interior.mesh.n_triangles == 0:
        raise ExtractionError(
            f"no level-set surface found in the grid for t={t}")

    frame = build_frame(m)
    r_clip = interior.info["clip_radius"]
    r_rings = collar_radii(0.8 * r_clip, rings)
    if w_count is None:
        # meridian spacing comparable to the grid spacing along the curve
        length = _curve_length(m)
        w_count = int(min(512, max(64, round(length / float(np.max(grid.spacing))))))
    collar = collar_stitch(m, frame, t, r_rings, w_count,
                           tol=meridian_tol, workers=workers)
    fused = fuse(interior, collar)
    fused.info["grid_resolution"] = grid.resolution
    fused.info["w_count"] = w_count
    return fused, grid


def _curve_length(m, samples=4096):
    w = np.arange(samples) / samples
    tan = m.tangents(w).reshape(samples, -1)
    return float(np.mean(np.linalg.norm(tan, axis=1)))
