"""Charts, nearest points, framings, and tubular coordinates."""

import math
import pickle

import numpy as np
import pytest

from solidangle import manifold as mf
from solidangle.angles import mod_distance
from solidangle.errors import ConfigError, DomainError, ProximityError

CIRCLE = mf.Circle()
TREFOIL = mf.TorusKnot(2, 3, 2.0, 0.5)
FLAT = mf.FlatTorus4(2.0, 0.5)
RING = mf.RingTorus4(2.0, 0.5)


def test_secant_basics():
    assert np.allclose(mf.secant([0, 0, 0], [2, 0, 0]), [1, 0, 0])
    rng = np.random.default_rng(0)
    for _ in range(100):
        x, y = rng.normal(size=3), rng.normal(size=3)
        if np.linalg.norm(x - y) < 1e-3:
            continue
        s = mf.secant(x, y)
        assert np.linalg.norm(s) == pytest.approx(1.0, abs=1e-14)
        assert np.allclose(mf.secant(y, x), -s, atol=1e-15)
    with pytest.raises(ProximityError):
        mf.secant([1, 2, 3], [1, 2, 3 + 1e-14])


def test_chart_derivatives_match_fd():
    h = 1e-6
    for m in (CIRCLE, TREFOIL):
        for w0 in (0.0, 0.137, 0.5, 0.83):
            fd1 = (m.chart(w0 + h) - m.chart(w0 - h)) / (2 * h)
            assert np.allclose(fd1, m.tangents(w0)[0], atol=1e-7 * (1 + np.abs(fd1).max()))
            fd2 = (m.tangents(w0 + h)[0] - m.tangents(w0 - h)[0]) / (2 * h)
            assert np.allclose(fd2, m.second(w0), atol=1e-6 * (1 + np.abs(fd2).max()))
    w = np.array([0.21, 0.68])
    for m2 in (FLAT, RING):
        for ax in range(2):
            e = np.zeros(2)
            e[ax] = h
            fd = (m2.chart(w + e) - m2.chart(w - e)) / (2 * h)
            assert np.allclose(fd, m2.tangents(w)[ax], atol=1e-7)
            fd2 = (m2.tangents(w + e) - m2.tangents(w - e)) / (2 * h)
            assert np.allclose(fd2, m2.second(w)[:, ax], atol=1e-6)


def test_polyline_interpolates_vertices():
    ws = np.linspace(0.0, 1.0, 48, endpoint=False)
    pts = TREFOIL.chart(ws)
    pl = mf.PolylineCurve(pts)
    # knots sit at normalized chord length; the spline is exact there
    closed = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    knots = np.concatenate([[0.0], np.cumsum(seg)[:-1]]) / seg.sum()
    assert np.max(np.abs(pl.chart(knots) - pts)) < 1e-9


def test_validation_accepts_builtins():
    for m in (CIRCLE, TREFOIL, FLAT):
        mf.validate_manifold(m)


def test_validation_rejects_self_intersection():
    # figure-eight polyline crosses itself at the origin
    t = np.linspace(0.0, 1.0, 64, endpoint=False)
    pts = np.stack([np.sin(4 * np.pi * t), np.sin(2 * np.pi * t),
                    np.zeros_like(t)], axis=1)
    eight = mf.PolylineCurve(pts)
    with pytest.raises(ConfigError):
        mf.validate_manifold(eight)


def test_from_spec_and_errors():
    assert isinstance(mf.from_spec({"kind": "circle"}), mf.Circle)
    m = mf.from_spec({"kind": "torus_knot", "p": 2, "q": 3, "R": 2.0, "r": 0.5})
    assert (m.p, m.q) == (2, 3)
    assert isinstance(mf.from_spec({"kind": "flat_torus4", "R": 2.0, "r": 0.5}),
                      mf.FlatTorus4)
    assert isinstance(mf.from_spec({"kind": "ring_torus4", "R": 2.0, "r": 0.5}),
                      mf.RingTorus4)
    ws = np.linspace(0.0, 1.0, 32, endpoint=False)
    pts = CIRCLE.chart(ws) + [0.0, 0.0, 1.0]
    m = mf.from_spec({"kind": "polyline", "points": pts.tolist()})
    assert isinstance(m, mf.PolylineCurve)
    with pytest.raises(ConfigError):
        mf.from_spec({"kind": "sphere"})
    with pytest.raises(ConfigError):
        mf.from_spec({"kind": "circle", "radius": 2})
    with pytest.raises(ConfigError):
        mf.from_spec({"kind": "torus_knot", "p": 2, "q": 3})
    with pytest.raises(ConfigError):
        mf.from_spec({"kind": "torus_knot", "p": 2, "q": 4, "R": 2.0, "r": 0.5})
    with pytest.raises(ConfigError):
        mf.from_spec({"kind": "flat_torus4", "R": 0.0, "r": 0.5})
    with pytest.raises(ConfigError):
        mf.from_spec({"kind": "ring_torus4", "R": 0.5, "r": 0.5})
    with pytest.raises(ConfigError):
        mf.from_spec("circle")


def test_nearest_point_circle():
    res = mf.nearest_point(CIRCLE, [2.0, 0.0, 0.0])
    assert res.distance == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(res.point, [1.0, 0.0, 0.0], atol=1e-12)
    assert mod_distance(res.w, 0.0) < 1e-10
    assert not res.ambiguous


def test_nearest_point_axis_ambiguity():
    for h in (0.0, 1.5, -2.0):
        res = mf.nearest_point(CIRCLE, [0.0, 0.0, h])
        assert res.distance == pytest.approx(math.sqrt(1 + h * h), rel=1e-12)
        assert res.ambiguous


def test_nearest_point_beats_parameter_scan():
    rng = np.random.default_rng(7)
    scan_w = rng.uniform(size=10000)
    scan_pts = TREFOIL.chart(scan_w)
    for _ in range(20):
        x = rng.normal(size=3) * 1.5
        res = mf.nearest_point(TREFOIL, x)
        scan = float(np.min(np.linalg.norm(scan_pts - x, axis=1)))
        assert res.distance <= scan + 1e-9


def test_nearest_point_flat_torus():
    rng = np.random.default_rng(8)
    for _ in range(10):
        w0 = rng.uniform(size=2)
        base = FLAT.chart(w0)
        res = mf.nearest_point(FLAT, base * 1.01)
        d = math.hypot(mod_distance(res.w[0], w0[0]), mod_distance(res.w[1], w0[1]))
        assert d < 1e-6
    # the origin is equidistant from the whole torus
    res = mf.nearest_point(FLAT, np.zeros(4))
    assert res.ambiguous
    assert res.distance == pytest.approx(math.hypot(2.0, 0.5), rel=1e-12)


def test_circle_frame_is_radial_and_vertical():
    fr = mf.build_frame(CIRCLE)
    w = np.linspace(0.0, 1.0, 100, endpoint=False)
    v1, v2 = fr.at(w)
    radial = CIRCLE.chart(w)
    assert np.max(np.abs(v1 - radial)) < 1e-9
    assert np.max(np.abs(v2 - [0.0, 0.0, 1.0])) < 1e-9
    assert abs(fr.holonomy) < 1e-9


def test_frame_orthonormality_and_closure():
    for m in (CIRCLE, TREFOIL):
        fr = mf.build_frame(m)
        w = np.linspace(0.0, 1.0, 1000, endpoint=False)
        v1, v2 = fr.at(w)
        t = m.tangents(w)[:, 0, :]
        t = t / np.linalg.norm(t, axis=1, keepdims=True)
        for resid in (np.sum(v1 * v2, axis=1), np.sum(v1 * t, axis=1),
                      np.sum(v2 * t, axis=1), np.sum(v1 * v1, axis=1) - 1.0,
                      np.sum(v2 * v2, axis=1) - 1.0):
            assert np.max(np.abs(resid)) <= 1e-10
        a0, a1 = fr.at(0.0), fr.at(1.0)
        assert np.max(np.abs(a0[0] - a1[0])) <= 1e-8
    fr = mf.build_frame(FLAT)
    w = np.stack([np.linspace(0, 1, 40, endpoint=False),
                  np.linspace(0, 1, 40, endpoint=False) * 0.7], axis=-1)
    v1, v2 = fr.at(w)
    t = FLAT.tangents(w)
    assert np.max(np.abs(np.sum(v1 * v2, axis=1))) <= 1e-12
    assert np.max(np.abs(np.einsum("kd,kid->ki", v1, t))) <= 1e-12
    assert np.max(np.abs(np.einsum("kd,kid->ki", v2, t))) <= 1e-12


def test_frame_transport_refines_quadratically():
    coarse = mf.build_frame(TREFOIL, resolution=256)
    fine = mf.build_frame(TREFOIL, resolution=2048)
    w = np.linspace(0.0, 1.0, 500, endpoint=False)
    diff = np.max(np.linalg.norm(coarse.at(w)[0] - fine.at(w)[0], axis=1))
    assert diff < 1e-3


def test_frame_requires_known_kind():
    with pytest.raises(DomainError):
        mf.build_frame(mf.AffineImage(FLAT, np.diag([1.0, 2.0, 1.0, 1.0])))


def test_tube_radius_values():
    assert mf.tube_radius(CIRCLE) == pytest.approx(0.5, rel=1e-9)
    r = mf.tube_radius(TREFOIL)
    assert 0.0 < r <= 0.5
    assert mf.tube_radius(FLAT) == pytest.approx(0.25, rel=1e-9)


def test_tube_radius_scales():
    scaled = mf.AffineImage(CIRCLE, 3.0 * np.eye(3))
    assert mf.tube_radius(scaled) == pytest.approx(1.5, rel=1e-9)


def test_tubular_examples():
    fr = mf.build_frame(CIRCLE)
    tc = mf.to_tubular(CIRCLE, fr, [1.3, 0.0, 0.0])
    assert mod_distance(tc.w, 0.0) < 1e-10
    assert tc.r == pytest.approx(0.3, abs=1e-12)
    assert mod_distance(tc.phi, 0.0) < 1e-10
    tc = mf.to_tubular(CIRCLE, fr, [1.0, 0.0, 0.3])
    assert mod_distance(tc.phi, 0.25) < 1e-10
    with pytest.raises(DomainError):
        mf.to_tubular(CIRCLE, fr, [3.0, 0.0, 0.0])
    with pytest.raises(DomainError):
        mf.to_tubular(CIRCLE, fr, [0.0, 0.0, 0.2])  # ambiguous axis point


def test_tubular_round_trip():
    rng = np.random.default_rng(9)
    for m in (CIRCLE, TREFOIL):
        fr = mf.build_frame(m)
        eps0 = mf.tube_radius(m)
        for _ in range(200):
            w0 = float(rng.uniform())
            r0 = float(rng.uniform(0.02, 0.95)) * eps0
            p0 = float(rng.uniform())
            x = mf.from_tubular(m, fr, mf.TubularCoords(w0, r0, p0))
            tc = mf.to_tubular(m, fr, x)
            assert mod_distance(tc.w, w0) <= 1e-10
            assert abs(tc.r - r0) <= 1e-10
            assert mod_distance(tc.phi, p0) <= 1e-10
    fr = mf.build_frame(FLAT)
    eps0 = mf.tube_radius(FLAT)
    for _ in range(100):
        w0 = rng.uniform(size=2)
        r0 = float(rng.uniform(0.02, 0.95)) * eps0
        p0 = float(rng.uniform())
        x = mf.from_tubular(FLAT, fr, mf.TubularCoords(w0, r0, p0))
        tc = mf.to_tubular(FLAT, fr, x)
        assert mod_distance(tc.w[0], w0[0]) <= 1e-10
        assert mod_distance(tc.w[1], w0[1]) <= 1e-10
        assert abs(tc.r - r0) <= 1e-10
        assert mod_distance(tc.phi, p0) <= 1e-10


def test_tube_points_vectorized():
    fr = mf.build_frame(TREFOIL)
    w = np.linspace(0.0, 1.0, 17, endpoint=False)
    r = np.full(17, 0.1)
    phi = np.linspace(0.0, 1.0, 17, endpoint=False)
    pts = mf.tube_points(TREFOIL, fr, w, r, phi)
    for j in (0, 5, 16):
        single = mf.from_tubular(TREFOIL, fr, mf.TubularCoords(w[j], r[j], phi[j]))
        assert np.allclose(pts[j], single, atol=1e-14)


def test_reversed_flips_orientation_only():
    rev = TREFOIL.reversed()
    assert rev.orientation == -1
    assert TREFOIL.orientation == 1
    w = np.linspace(0.0, 1.0, 9, endpoint=False)
    assert np.allclose(rev.chart(w), TREFOIL.chart(w))
    assert np.allclose(rev.tangents(w), TREFOIL.tangents(w))


def test_affine_image_validation():
    with pytest.raises(ConfigError):
        mf.AffineImage(CIRCLE, np.eye(4))
    with pytest.raises(ConfigError):
        mf.AffineImage(CIRCLE, np.zeros((3, 3)))
    rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    moved = mf.AffineImage(CIRCLE, rot, [0.0, 0.0, 2.0])
    assert np.allclose(moved.chart(0.0), [0.0, 1.0, 2.0], atol=1e-15)


def test_everything_pickles():
    objs = [CIRCLE, TREFOIL, FLAT, mf.build_frame(CIRCLE), mf.build_frame(FLAT),
            mf.AffineImage(CIRCLE, 2.0 * np.eye(3)), TREFOIL.reversed()]
    ws = np.linspace(0.0, 1.0, 16, endpoint=False)
    objs.append(mf.PolylineCurve(TREFOIL.chart(ws)))
    for obj in objs:
        clone = pickle.loads(pickle.dumps(obj))
        if isinstance(obj, mf.ParamManifold):
            assert np.allclose(clone.chart(ws if obj.n == 1 else np.stack([ws, ws], -1)),
                               obj.chart(ws if obj.n == 1 else np.stack([ws, ws], -1)))


def test_quadrature_sample_cache():
    m = mf.Circle()
    y1, t1 = m.quadrature_samples(256)
    y2, t2 = m.quadrature_samples(256)
    assert y1 is y2 and t1 is t2
    assert y1.shape == (256, 3) and t1.shape == (256, 1, 3)
    y4, t4 = FLAT.quadrature_samples(64)
    assert y4.shape == (64 * 64, 4) and t4.shape == (64 * 64, 2, 4)
