"""Command line driver.

Subcommands mirror the library layers: point evaluation, gradient,
oracle comparison on the standard circle, level-surface extraction, the
report battery, and a quick selfcheck.  Numbers are printed with 17
significant digits; tables are CSV files with headers, and each report
CSV gets a PNG figure rendered next to it.

Exit codes: 0 success, 1 malformed configuration (bad flags, bad spec
files), 2 domain or numeric failure (point on the curve, level too close
to zero, convergence problems).
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys

import numpy as np

from . import manifold as mf
from . import oracles as orc
from . import potential as pt
from .angles import angle_mod, mod_distance
from .elliptic import ellK
from .errors import (ConfigError, ConvergenceError, DomainError,
                     ExtractionError, MeshFormatError, PoleError)
from .forms import lambda_deriv, lambda_eval
from .mesh import disk_mesh, edge_census, export_mesh

FMT = "%.17g"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return FMT % v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _load_manifold(path):
    if path is None:
        return mf.Circle()
    return mf.load_spec(path)


def _parse_point(text, dim):
    parts = [p.strip() for p in text.split(",")]
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"bad --point {text!r}: {exc}") from exc
    if len(vals) != dim:
        raise ConfigError(
            f"--point needs {dim} coordinates for this manifold, got {len(vals)}")
    return np.array(vals, dtype=float)


# ------------------------------------------------------------ eval / grad


def cmd_eval(args):
    m = _load_manifold(args.curve)
    x = _parse_point(args.point, m.ambient_dim)
    rec = pt.phi(m, x, tol=args.tol).record()
    keys = ["angle", "raw", "err_estimate", "n_samples", "pole_index"]
    print(",".join(keys))
    print(",".join(_fmt(rec[k]) for k in keys))
    return 0


def cmd_grad(args):
    m = _load_manifold(args.curve)
    x = _parse_point(args.point, m.ambient_dim)
    g = np.asarray(pt.grad_phi(m, x, tol=args.tol)).reshape(-1)
    names = ["gx", "gy", "gz", "gw"][:m.ambient_dim]
    print(",".join(names + ["norm"]))
    print(",".join([_fmt(v) for v in g] + [_fmt(float(np.linalg.norm(g)))]))
    return 0


# ------------------------------------------------------------ oracle-compare


def stratified_circle_points(rng, count):
    """Sample points covering all three closed-form branches of the oracle.

    A tenth of the budget goes to each in-plane branch (inside, outside,
    with x3 exactly zero) and the rest is generic: uniform over the cube,
    rejected to the ball |x| <= 5 and to distance >= 0.05 from the curve.
    """
    n_in = max(1, count // 10)
    n_out = max(1, count // 10)
    n_gen = count - n_in - n_out
    blocks = []
    for lo, hi, k in ((0.0, 0.95, n_in), (1.05, 5.0, n_out)):
        r = rng.uniform(lo, hi, k)
        a = 2.0 * np.pi * rng.uniform(0.0, 1.0, k)
        blocks.append(np.stack(
            [r * np.cos(a), r * np.sin(a), np.zeros(k)], axis=-1))
    kept = np.zeros((0, 3))
    while len(kept) < n_gen:
        cand = rng.uniform(-5.0, 5.0, (4 * n_gen, 3))
        rad = np.hypot(cand[:, 0], cand[:, 1])
        good = (np.hypot(rad - 1.0, cand[:, 2]) >= 0.05) \
            & (np.linalg.norm(cand, axis=1) <= 5.0)
        kept = np.concatenate([kept, cand[good]])
    blocks.append(kept[:n_gen])
    return np.concatenate(blocks, axis=0)


def cmd_oracle_compare(args):
    m = _load_manifold(args.curve)
    if not isinstance(m, mf.Circle):
        raise ConfigError(
            "oracle-compare has closed forms for the standard circle only")
    rng = np.random.default_rng(args.seed)
    pts = stratified_circle_points(rng, args.count)
    res = pt.phi_batch(m, pts, tol=args.tol, workers=args.workers)
    res.raise_any()
    r0 = np.hypot(pts[:, 0], pts[:, 1])
    ref = np.array([orc.circle_phi(r, z) for r, z in zip(r0, pts[:, 2])])
    pax = np.array([orc.circle_phi_paxton(r, z) for r, z in zip(r0, pts[:, 2])])
    d_phi = mod_distance(res.angle, ref)
    d_pax = mod_distance(pax, ref)
    rows = zip(pts[:, 0], pts[:, 1], pts[:, 2],
               res.angle, ref, pax, d_phi, d_pax)
    _write_csv(args.out,
               ["x", "y", "z", "phi", "circle_phi", "paxton",
                "dist_phi_circle", "dist_paxton_circle"], rows)
    print(f"points {len(pts)}")
    print("max_dist_phi_circle " + FMT % float(d_phi.max()))
    print("max_dist_paxton_circle " + FMT % float(d_pax.max()))
    print(f"wrote {args.out}")
    return 0


# ------------------------------------------------------------ surface


def cmd_surface(args):
    from . import levelset as ls

    m = _load_manifold(args.curve)
    iso, _ = ls.extract_surface(m, args.level, resolution=args.grid,
                                rings=args.rings, tol=args.tol,
                                workers=args.workers)
    export_mesh(iso.mesh, args.out, fmt=args.format)
    stats = ls.mesh_stats(iso, m, workers=args.workers)
    rows = []
    for key, val in stats.items():
        if key == "census":
            rows.extend(("census_" + k, v) for k, v in val.items())
        else:
            rows.append((key, val))
    stats_path = os.path.splitext(args.out)[0] + "_stats.csv"
    _write_csv(stats_path, ["key", "value"], rows)
    print(f"vertices {stats['vertices']}  triangles {stats['triangles']}  "
          f"boundary_loops {stats['boundary_loops']}  "
          f"genus {_fmt(stats['genus'])}")
    print("max_residual " + FMT % stats["max_residual"])
    print(f"wrote {args.out}")
    print(f"wrote {stats_path}")
    return 0


# ------------------------------------------------------------ reports


def _report_decay(outdir, tol, workers):
    from . import plots

    specs = [("circle", mf.Circle(), np.geomspace(10.0, 100.0, 5)),
             ("ring_torus4", mf.RingTorus4(), np.array([10.0, 20.0, 40.0])),
             ("flat_torus4", mf.FlatTorus4(), np.array([10.0, 20.0, 40.0]))]
    rows, groups = [], []
    for label, m, radii in specs:
        rep = pt.decay_report(m, radii, tol=tol, workers=workers)
        for r, mp, me in zip(rep["radii"], rep["max_phi"], rep["max_euler"]):
            rows.append((label, r, mp, me,
                         rep["phi_slope"], rep["euler_slope"]))
        groups.append((label, rep["radii"], rep["max_phi"],
                       rep["max_euler"], rep["phi_slope"],
                       rep["euler_slope"]))
    csv_path = os.path.join(outdir, "decay.csv")
    png_path = os.path.join(outdir, "decay.png")
    _write_csv(csv_path, ["manifold", "radius", "max_phi", "max_euler",
                          "phi_slope", "euler_slope"], rows)
    plots.decay_figure(groups, png_path)
    return [csv_path, png_path]


def _report_euler(outdir, tol, workers):
    from . import plots

    m = mf.AffineImage(mf.Circle(), np.eye(3),
                       offset=np.array([0.3, -0.2, 0.4]))
    rep = pt.decay_report(m, np.geomspace(10.0, 100.0, 5), tol=tol,
                          workers=workers)
    rows = [(r, me, rep["euler_slope"])
            for r, me in zip(rep["radii"], rep["max_euler"])]
    csv_path = os.path.join(outdir, "euler_residual.csv")
    png_path = os.path.join(outdir, "euler_residual.png")
    _write_csv(csv_path, ["radius", "max_euler", "euler_slope"], rows)
    plots.euler_figure(rep["radii"], rep["max_euler"], rep["euler_slope"],
                       "off-center circle", png_path)
    return [csv_path, png_path]


def _report_tube(outdir, tol, workers):
    from . import plots

    m = mf.Circle()
    frame = mf.build_frame(m)
    r_values = np.geomspace(1e-3, 0.3, 6)
    rep = pt.tube_derivative_report(m, frame, r_values,
                                    ang_grid=np.arange(8) / 8.0, w_count=4,
                                    tol=tol, workers=workers)
    rows = [(row["r"], row["w"], row["angle"], row["dphi_dangle"],
             row["dphi_dr"], rep["eps"], rep["dr_exponent"],
             rep["log_bound_ratio"]) for row in rep["rows"]]
    csv_path = os.path.join(outdir, "tube_derivative.csv")
    png_path = os.path.join(outdir, "tube_derivative.png")
    _write_csv(csv_path, ["r", "w", "angle", "dphi_dangle", "dphi_dr",
                          "eps", "dr_exponent", "log_bound_ratio"], rows)
    plots.tube_figure(rep, r_values, png_path)
    return [csv_path, png_path]


def _report_winding(outdir, workers):
    from . import plots

    specs = [("circle", mf.Circle(), 0.25),
             ("trefoil", mf.TorusKnot(2, 3), 0.125)]
    rows, entries = [], []
    for label, m, r in specs:
        frame = mf.build_frame(m)
        winds = [pt.meridian_winding(m, frame, w, r)
                 for w in np.arange(32) / 32.0]
        rows.extend((label, w, "", r, k)
                    for w, k in zip(np.arange(32) / 32.0, winds))
        entries.append((label, winds))
    csv_path = os.path.join(outdir, "winding.csv")
    png_path = os.path.join(outdir, "winding.png")
    _write_csv(csv_path, ["manifold", "w1", "w2", "r", "winding"], rows)
    plots.winding_figure(entries, png_path)
    return [csv_path, png_path]


def cmd_reports(args):
    os.makedirs(args.out, exist_ok=True)
    written = []
    written += _report_decay(args.out, args.tol, args.workers)
    written += _report_euler(args.out, args.tol, args.workers)
    written += _report_tube(args.out, args.tol, args.workers)
    written += _report_winding(args.out, args.workers)
    for path in written:
        print(f"wrote {path}")
    return 0


# ------------------------------------------------------------ selfcheck


def cmd_selfcheck(args):
    from . import levelset as ls

    m = mf.Circle()
    checks = []

    def add(name, value, limit):
        checks.append((name, value <= limit,
                       FMT % value + "  (limit " + FMT % limit + ")"))

    add("in_plane_inside",
        mod_distance(pt.phi(m, [0.5, 0.0, 0.0]).angle, 0.5), 1e-9)
    add("in_plane_outside",
        mod_distance(pt.phi(m, [2.0, 0.0, 0.0]).angle, 0.0), 1e-9)

    x = np.array([0.7, 0.3, 0.4])
    ref = orc.circle_phi(float(np.hypot(x[0], x[1])), float(x[2]))
    add("oracle_generic_point",
        mod_distance(pt.phi(m, x).angle, ref), 1e-8)

    raws = []
    for z in ([0.0, 0.0, 1.0], [1.0, 0.0, 0.0],
              [0.6, -0.6, 0.52], [-0.3, 0.9, 0.9]):
        if len(raws) == 2:
            break
        try:
            raws.append(pt.phi_raw_with_pole(m, [0.3, 1.2, 0.7],
                                             np.array(z)).raw)
        except PoleError:
            continue
    if len(raws) == 2:
        d = raws[0] - raws[1]
        add("pole_independence", abs(d - round(d)), 1e-7)
    else:
        checks.append(("pole_independence", False,
                       "fewer than two admissible poles"))

    u = np.linspace(-1.0 + 1e-6, 0.95, 200)
    worst = 0.0
    for n in (1, 2, 3):
        resid = (1.0 - u * u) * lambda_deriv(n, u, 1) \
            - (n + 1) * u * lambda_eval(n, u) - (-1.0) ** n
        worst = max(worst, float(np.max(np.abs(resid))))
    add("profile_ode_residual", worst, 1e-10)

    kp = 1e-4
    add("elliptic_log_limit",
        abs(ellK(math.sqrt(1.0 - kp * kp)) - math.log(4.0 / kp)), 1e-6)

    disk = disk_mesh(rings=12, segments=256)
    census = edge_census(disk)
    checks.append(("disk_mesh_manifold", census["nonmanifold"] == 0,
                   str(census)))
    h = 0.7
    axis = angle_mod(-0.5 + h / (2.0 * math.sqrt(1.0 + h * h)))
    si = pt.phi_via_seifert_mesh(disk, [0.0, 0.0, h])
    add("disk_mesh_axis_value", mod_distance(si.angle, axis), 1e-3)

    frame = mf.build_frame(m)
    phi_star = ls.meridian_solve(m, frame, 0.25, 0.05, 0.0,
                                 workers=args.workers)
    probe = mf.from_tubular(m, frame, mf.TubularCoords(0.0, 0.05, phi_star))
    add("meridian_solve_residual",
        mod_distance(pt.phi(m, probe).angle, 0.25), 1e-9)

    bad = [c for c in checks if not c[1]]
    for name, ok, detail in checks:
        print(("ok   " if ok else "FAIL ") + name + "  " + detail)
    print(f"{len(checks) - len(bad)}/{len(checks)} checks passed")
    return 2 if bad else 0


# ------------------------------------------------------------ parser


def build_parser():
    p = argparse.ArgumentParser(
        prog="solidangle",
        description="Solid angle maps of closed curves and surfaces: "
                    "evaluation, oracles, level-set surfaces, reports.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, tol_default):
        sp.add_argument("--curve", metavar="PATH", default=None,
                        help="manifold spec JSON (default: unit circle)")
        sp.add_argument("--tol", type=float, default=tol_default,
                        help="quadrature tolerance")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--seed", type=int, default=0)

    e = sub.add_parser("eval", help="evaluate the map at one point")
    common(e, pt.DEFAULT_TOL)
    e.add_argument("--point", required=True,
                   help="comma-separated coordinates")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("grad", help="ambient gradient at one point")
    common(g, pt.DEFAULT_TOL)
    g.add_argument("--point", required=True,
                   help="comma-separated coordinates")
    g.set_defaults(func=cmd_grad)

    o = sub.add_parser("oracle-compare",
                       help="compare quadrature against the circle oracles")
    common(o, pt.DEFAULT_TOL)
    o.add_argument("--count", type=int, default=500)
    o.add_argument("--out", default="oracle_compare.csv")
    o.set_defaults(func=cmd_oracle_compare)

    s = sub.add_parser("surface",
                       help="extract a level set as a bounded mesh")
    common(s, pt.GRID_TOL)
    s.add_argument("--level", type=float, required=True)
    s.add_argument("--grid", type=int, default=64,
                   help="nodes per axis of the sampling grid")
    s.add_argument("--rings", type=int, default=8,
                   help="collar refinement rings toward the curve")
    s.add_argument("--out", default="surface.obj")
    s.add_argument("--format", choices=("obj", "ply"), default=None,
                   help="mesh format (default: from --out extension)")
    s.set_defaults(func=cmd_surface)

    r = sub.add_parser("reports",
                       help="decay, Euler, tube-derivative and winding "
                            "reports (CSV + PNG)")
    common(r, pt.DEFAULT_TOL)
    r.add_argument("--out", default=".", help="output directory")
    r.set_defaults(func=cmd_reports)

    c = sub.add_parser("selfcheck", help="fast invariant battery")
    common(c, pt.DEFAULT_TOL)
    c.set_defaults(func=cmd_selfcheck)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if not exc.code else 1
    try:
        return args.func(args) or 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DomainError, PoleError, ConvergenceError, ExtractionError,
            MeshFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
