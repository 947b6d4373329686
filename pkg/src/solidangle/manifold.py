"""Closed oriented parametrized submanifolds of codimension two.

Charts are smooth periodic maps from the unit n-torus [0,1)^n into
R^{n+2}: curves in R^3 (n=1) and the flat 2-torus in R^4 (n=2).
Built-ins: unit circle, (p,q) torus knots, closed polylines smoothed by
periodic cubic splines, and the flat torus. Wrappers provide affine
images and orientation reversal.

Orientation is stored as a +-1 flag and consumed by the integrators:
the pullback densities are linear in the first tangent row, so reversal
is a final sign flip and never touches the cached geometry.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial.distance import cdist

from .angles import angle_mod, mod_distance
from .errors import ConfigError, DomainError, ProximityError

TWO_PI = 2.0 * math.pi

NEAREST_GRID_CURVE = 1024
NEAREST_GRID_TORUS = 128
FRAME_SAMPLES = 2048
AMBIGUITY_TOL = 1e-9
QUAD_CACHE_LIMIT = 2 ** 18


def secant(x, y):
    """Unit vector pointing from x toward y.

    Broadcasts over leading axes; raises ProximityError when any pair is
    closer than 1e-12.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = y - x
    r = np.linalg.norm(d, axis=-1)
    if np.any(r < 1e-12):
        raise ProximityError("secant undefined: points closer than 1e-12")
    if d.ndim == 1:
        return d / r
    return d / r[..., None]


class ParamManifold:
    """Base class for closed oriented parametrized submanifolds.

    Subclasses provide chart/tangents/second as periodic functions on
    [0,1)^n. tangents returns the true derivative rows d(chart)/dw_i of
    shape (..., n, n+2); second returns d2/dw2 of shape (..., n+2) for
    curves and the (..., n, n, n+2) tensor for n=2.
    """

    n = 1
    orientation = 1

    @property
    def ambient_dim(self):
        return self.n + 2

    def chart(self, w):
        raise NotImplementedError

    def tangents(self, w):
        raise NotImplementedError

    def second(self, w):
        raise NotImplementedError

    def reversed(self):
        """Copy of this manifold with the opposite orientation."""
        other = copy.copy(self)
        other.orientation = -self.orientation
        return other

    # geometry caches are orientation-neutral and shared by reversed copies
    def _cache(self):
        c = self.__dict__.get("_cache_store")
        if c is None:
            c = self.__dict__["_cache_store"] = {}
        return c

    def _param_grid(self, count):
        if self.n == 1:
            return np.arange(count) / count
        g = np.arange(count) / count
        a, b = np.meshgrid(g, g, indexing="ij")
        return np.stack([a.ravel(), b.ravel()], axis=-1)

    def dense_samples(self):
        """Cached (params, chart points) used by searches and audits."""
        cache = self._cache()
        if "dense" not in cache:
            count = NEAREST_GRID_CURVE if self.n == 1 else NEAREST_GRID_TORUS
            w = self._param_grid(count)
            cache["dense"] = (w, self.chart(w))
        return cache["dense"]

    def quadrature_samples(self, count):
        """Chart points and true tangent rows on the regular count^n grid.

        Cached while the total stays small enough that repeated grid
        scans reuse the geometry instead of re-evaluating the chart.
        """
        cache = self._cache()
        key = ("quad", count)
        if key in cache:
            return cache[key]
        w = self._param_grid(count)
        out = (self.chart(w), self.tangents(w))
        if count ** self.n <= QUAD_CACHE_LIMIT:
            cache[key] = out
        return out

    @property
    def bounding_radius(self):
        cache = self._cache()
        if "bound" not in cache:
            _, pts = self.dense_samples()
            cache["bound"] = float(np.max(np.linalg.norm(pts, axis=1)))
        return cache["bound"]

    @property
    def diameter(self):
        cache = self._cache()
        if "diam" not in cache:
            _, pts = self.dense_samples()
            stride = max(1, len(pts) // 512)
            sub = np.ascontiguousarray(pts[::stride])
            cache["diam"] = float(np.max(cdist(sub, sub)))
        return cache["diam"]


class Circle(ParamManifold):
    """Unit circle in the xy-plane: w -> (cos 2pi w, sin 2pi w, 0)."""

    n = 1

    def chart(self, w):
        th = TWO_PI * np.asarray(w, dtype=float)
        return np.stack([np.cos(th), np.sin(th), np.zeros_like(th)], axis=-1)

    def tangents(self, w):
        th = TWO_PI * np.asarray(w, dtype=float)
        t = TWO_PI * np.stack([-np.sin(th), np.cos(th), np.zeros_like(th)], axis=-1)
        return t[..., None, :]

    def second(self, w):
        th = TWO_PI * np.asarray(w, dtype=float)
        return -TWO_PI ** 2 * np.stack(
            [np.cos(th), np.sin(th), np.zeros_like(th)], axis=-1)


class TorusKnot(ParamManifold):
    """(p,q) torus knot on the torus of major radius R, minor radius r."""

    n = 1

    def __init__(self, p, q, R=2.0, r=0.5):
        p, q = int(p), int(q)
        if p == 0 or q == 0 or math.gcd(abs(p), abs(q)) != 1:
            raise ConfigError(f"torus knot needs coprime nonzero (p,q), got ({p},{q})")
        if not 0.0 < float(r) < float(R):
            raise ConfigError(f"torus knot needs 0 < r < R, got R={R}, r={r}")
        self.p = p
        self.q = q
        self.R = float(R)
        self.r = float(r)

    def _trig(self, w):
        w = np.asarray(w, dtype=float)
        a = TWO_PI * self.p * w
        b = TWO_PI * self.q * w
        return np.cos(a), np.sin(a), np.cos(b), np.sin(b)

    def chart(self, w):
        ca, sa, cb, sb = self._trig(w)
        rho = self.R + self.r * cb
        return np.stack([rho * ca, rho * sa, self.r * sb], axis=-1)

    def tangents(self, w):
        ca, sa, cb, sb = self._trig(w)
        wp = TWO_PI * self.p
        wq = TWO_PI * self.q
        rho = self.R + self.r * cb
        drho = -wq * self.r * sb
        t = np.stack([drho * ca - wp * rho * sa,
                      drho * sa + wp * rho * ca,
                      wq * self.r * cb], axis=-1)
        return t[..., None, :]

    def second(self, w):
        ca, sa, cb, sb = self._trig(w)
        wp = TWO_PI * self.p
        wq = TWO_PI * self.q
        rho = self.R + self.r * cb
        drho = -wq * self.r * sb
        ddrho = -wq ** 2 * self.r * cb
        return np.stack([ddrho * ca - 2 * wp * drho * sa - wp ** 2 * rho * ca,
                         ddrho * sa + 2 * wp * drho * ca - wp ** 2 * rho * sa,
                         -wq ** 2 * self.r * sb], axis=-1)


class PolylineCurve(ParamManifold):
    """Closed curve through the given vertices.

    The vertices are interpolated by a periodic cubic spline on the
    normalized chord-length parameter, so the chart is C^2 and corners
    in the raw polyline are rounded at the scale of the vertex spacing.
    """

    n = 1

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ConfigError("polyline needs a list of points in R^3")
        if len(pts) > 1 and np.linalg.norm(pts[0] - pts[-1]) < 1e-12:
            pts = pts[:-1]
        if len(pts) < 4:
            raise ConfigError("polyline needs at least 4 distinct points")
        closed = np.vstack([pts, pts[:1]])
        seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
        if np.any(seg < 1e-12):
            raise ConfigError("polyline has coincident consecutive points")
        t = np.concatenate([[0.0], np.cumsum(seg)]) / float(seg.sum())
        self.points = pts
        self._spline = CubicSpline(t, closed, bc_type="periodic", axis=0)
        self._d1 = self._spline.derivative(1)
        self._d2 = self._spline.derivative(2)

    def chart(self, w):
        return self._spline(np.mod(np.asarray(w, dtype=float), 1.0))

    def tangents(self, w):
        t = self._d1(np.mod(np.asarray(w, dtype=float), 1.0))
        return t[..., None, :]

    def second(self, w):
        return self._d2(np.mod(np.asarray(w, dtype=float), 1.0))


class FlatTorus4(ParamManifold):
    """Flat 2-torus in R^4: (a,b) -> (R cos a', R sin a', r cos b', r sin b')."""

    n = 2

    def __init__(self, R=2.0, r=0.5):
        if not (float(R) > 0.0 and float(r) > 0.0):
            raise ConfigError(f"flat torus needs positive radii, got R={R}, r={r}")
        self.R = float(R)
        self.r = float(r)

    def chart(self, w):
        w = np.asarray(w, dtype=float)
        a = TWO_PI * w[..., 0]
        b = TWO_PI * w[..., 1]
        return np.stack([self.R * np.cos(a), self.R * np.sin(a),
                         self.r * np.cos(b), self.r * np.sin(b)], axis=-1)

    def tangents(self, w):
        w = np.asarray(w, dtype=float)
        a = TWO_PI * w[..., 0]
        b = TWO_PI * w[..., 1]
        z = np.zeros_like(a)
        ta = TWO_PI * self.R * np.stack([-np.sin(a), np.cos(a), z, z], axis=-1)
        tb = TWO_PI * self.r * np.stack([z, z, -np.sin(b), np.cos(b)], axis=-1)
        return np.stack([ta, tb], axis=-2)

    def second(self, w):
        w = np.asarray(w, dtype=float)
        a = TWO_PI * w[..., 0]
        b = TWO_PI * w[..., 1]
        z = np.zeros_like(a)
        saa = -TWO_PI ** 2 * self.R * np.stack([np.cos(a), np.sin(a), z, z], axis=-1)
        sbb = -TWO_PI ** 2 * self.r * np.stack([z, z, np.cos(b), np.sin(b)], axis=-1)
        zero = np.zeros_like(saa)
        row0 = np.stack([saa, zero], axis=-2)
        row1 = np.stack([zero, sbb], axis=-2)
        return np.stack([row0, row1], axis=-3)


class RingTorus4(ParamManifold):
    """Ring torus in the x4 = 0 slice of R^4.

    Unlike the flat torus this embedding has a nonzero far-field dipole
    (its central symmetry reverses the surface orientation), so the map
    decays at the generic R^-3 rate instead of R^-4.
    """

    n = 2

    def __init__(self, R=2.0, r=0.5):
        if not 0.0 < float(r) < float(R):
            raise ConfigError(f"ring torus needs 0 < r < R, got R={R}, r={r}")
        self.R = float(R)
        self.r = float(r)

    def chart(self, w):
        w = np.asarray(w, dtype=float)
        a = TWO_PI * w[..., 0]
        b = TWO_PI * w[..., 1]
        rho = self.R + self.r * np.cos(b)
        return np.stack([rho * np.cos(a), rho * np.sin(a),
                         self.r * np.sin(b), np.zeros_like(a)], axis=-1)

    def tangents(self, w):
        w = np.asarray(w, dtype=float)
        a = TWO_PI * w[..., 0]
        b = TWO_PI * w[..., 1]
        rho = self.R + self.r * np.cos(b)
        z = np.zeros_like(a)
        ta = TWO_PI * np.stack([-rho * np.sin(a), rho * np.cos(a), z, z],
                               axis=-1)
        tb = TWO_PI * self.r * np.stack([-np.sin(b) * np.cos(a),
                                         -np.sin(b) * np.sin(a),
                                         np.cos(b), z], axis=-1)
        return np.stack([ta, tb], axis=-2)

    def second(self, w):
        w = np.asarray(w, dtype=float)
        a = TWO_PI * w[..., 0]
        b = TWO_PI * w[..., 1]
        rho = self.R + self.r * np.cos(b)
        z = np.zeros_like(a)
        saa = -TWO_PI ** 2 * np.stack([rho * np.cos(a), rho * np.sin(a),
                                       z, z], axis=-1)
        sab = TWO_PI ** 2 * self.r * np.stack([np.sin(b) * np.sin(a),
                                               -np.sin(b) * np.cos(a),
                                               z, z], axis=-1)
        sbb = -TWO_PI ** 2 * self.r * np.stack([np.cos(b) * np.cos(a),
                                                np.cos(b) * np.sin(a),
                                                np.sin(b), z], axis=-1)
        row0 = np.stack([saa, sab], axis=-2)
        row1 = np.stack([sab, sbb], axis=-2)
        return np.stack([row0, row1], axis=-3)


class AffineImage(ParamManifold):
    """Affine image A x + b of a base manifold; A must be invertible."""

    def __init__(self, base, matrix, offset=None):
        d = base.n + 2
        A = np.asarray(matrix, dtype=float)
        if A.shape != (d, d):
            raise ConfigError(f"affine matrix must be {d}x{d}")
        if abs(np.linalg.det(A)) < 1e-12:
            raise ConfigError("affine map must be invertible")
        self.base = base
        self.matrix = A
        self.offset = (np.zeros(d) if offset is None
                       else np.asarray(offset, dtype=float))
        if self.offset.shape != (d,):
            raise ConfigError(f"affine offset must have length {d}")
        self.n = base.n
        self.orientation = base.orientation

    def chart(self, w):
        return self.base.chart(w) @ self.matrix.T + self.offset

    def tangents(self, w):
        return self.base.tangents(w) @ self.matrix.T

    def second(self, w):
        return self.base.second(w) @ self.matrix.T


_SPEC_FIELDS = {
    "circle": set(),
    "torus_knot": {"p", "q", "R", "r"},
    "polyline": {"points"},
    "flat_torus4": {"R", "r"},
    "ring_torus4": {"R", "r"},
}


def from_spec(spec):
    """Build and validate a manifold from its dict description.

    Recognized forms (field names are normative for the CLI):
      {"kind": "circle"}
      {"kind": "torus_knot", "p": 2, "q": 3, "R": 2.0, "r": 0.5}
      {"kind": "polyline", "points": [[x, y, z], ...]}
      {"kind": "flat_torus4", "R": 2.0, "r": 0.5}
      {"kind": "ring_torus4", "R": 2.0, "r": 0.5}
    """
    if not isinstance(spec, dict):
        raise ConfigError("manifold spec must be a JSON object")
    kind = spec.get("kind")
    if kind not in _SPEC_FIELDS:
        raise ConfigError(f"unknown manifold kind: {kind!r}")
    allowed = _SPEC_FIELDS[kind]
    extra = set(spec) - allowed - {"kind"}
    if extra:
        raise ConfigError(f"unknown fields for {kind!r}: {sorted(extra)}")
    missing = allowed - set(spec)
    if missing:
        raise ConfigError(f"missing fields for {kind!r}: {sorted(missing)}")
    if kind == "circle":
        m = Circle()
    elif kind == "torus_knot":
        m = TorusKnot(spec["p"], spec["q"], spec["R"], spec["r"])
    elif kind == "polyline":
        m = PolylineCurve(spec["points"])
    elif kind == "flat_torus4":
        m = FlatTorus4(spec["R"], spec["r"])
    else:
        m = RingTorus4(spec["R"], spec["r"])
    validate_manifold(m)
    return m


def load_spec(path):
    """Read a manifold description from a JSON file."""
    import json

    try:
        with open(path) as fh:
            spec = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read manifold spec: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return from_spec(spec)


def validate_manifold(m, separation=0.05, min_distance=1e-3):
    """Audit injectivity and chart rank on a sample grid.

    Pairs of samples at parameter separation >= `separation` must be at
    least `min_distance` apart in space, and the chart derivative must
    have full rank at every sample.
    """
    if m.n == 1:
        w = np.arange(512) / 512.0
        pts = m.chart(w)
        tan = m.tangents(w)[:, 0, :]
        if float(np.min(np.linalg.norm(tan, axis=1))) < 1e-9:
            raise ConfigError("chart derivative is rank-deficient at a sample")
        dp = np.abs(w[:, None] - w[None, :])
        dp = np.minimum(dp, 1.0 - dp)
        dist = cdist(pts, pts)
        sel = dp >= separation
        if float(np.min(dist[sel])) <= min_distance:
            raise ConfigError("chart fails the injectivity audit "
                              f"(separation {separation}, floor {min_distance})")
    else:
        w = m._param_grid(48)
        pts = m.chart(w)
        tan = m.tangents(w)
        gram = np.einsum("kid,kjd->kij", tan, tan)
        det = gram[:, 0, 0] * gram[:, 1, 1] - gram[:, 0, 1] ** 2
        if float(np.min(det)) < 1e-12:
            raise ConfigError("chart derivative is rank-deficient at a sample")
        da = np.abs(w[:, None, 0] - w[None, :, 0])
        da = np.minimum(da, 1.0 - da)
        db = np.abs(w[:, None, 1] - w[None, :, 1])
        db = np.minimum(db, 1.0 - db)
        dp = np.hypot(da, db)
        dist = cdist(pts, pts)
        sel = dp >= separation
        if float(np.min(dist[sel])) <= min_distance:
            raise ConfigError("chart fails the injectivity audit")
    return m


# --------------------------------------------------------- nearest point

@dataclass
class NearestPoint:
    """Foot point of x on M: parameter, distance, chart point, ambiguity."""

    w: object
    distance: float
    point: np.ndarray
    ambiguous: bool


def nearest_point(m, x):
    """Parameter minimizing the distance from x to the chart.

    Coarse scan over the cached dense samples followed by Newton polish
    of every surviving local minimum; `ambiguous` is set when two
    parameter-distant minima agree in distance to 1e-9 (cut locus).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (m.ambient_dim,):
        raise ConfigError(f"point must have {m.ambient_dim} coordinates")
    if m.n == 1:
        return _nearest_curve(m, x)
    return _nearest_torus(m, x)


def _newton_curve(m, x, w0, step_cap, iters=14):
    w = float(w0)
    for _ in range(iters):
        y = m.chart(w)
        t = m.tangents(w)[0]
        s = m.second(w)
        g = float(np.dot(y - x, t))
        h = float(np.dot(t, t) + np.dot(y - x, s))
        if not math.isfinite(h) or abs(h) < 1e-13:
            break
        step = min(max(g / h, -step_cap), step_cap)
        w -= step
        if abs(step) < 1e-15:
            break
    return w % 1.0


def _nearest_curve(m, x):
    wgrid, pts = m.dense_samples()
    d2 = np.sum((pts - x) ** 2, axis=1)
    loc = (d2 <= np.roll(d2, 1)) & (d2 <= np.roll(d2, -1))
    idx = np.nonzero(loc)[0]
    order = idx[np.argsort(d2[idx], kind="stable")][:16]
    grid_h = 1.0 / len(wgrid)
    cands = []
    for j in order:
        w = _newton_curve(m, x, wgrid[j], 2.0 * grid_h)
        y = m.chart(w)
        cands.append((float(np.linalg.norm(y - x)), w, y))
    cands.sort(key=lambda c: c[0])
    dist, wbest, ybest = cands[0]
    ambiguous = False
    for d, w, _ in cands[1:]:
        if mod_distance(w, wbest) > 4.0 * grid_h:
            if abs(d - dist) <= AMBIGUITY_TOL * (1.0 + dist):
                ambiguous = True
            break
    return NearestPoint(wbest, dist, ybest, ambiguous)


def _newton_torus(m, x, w0, step_cap, iters=16):
    w = np.array(w0, dtype=float)
    for _ in range(iters):
        y = m.chart(w)
        t = m.tangents(w)
        s = m.second(w)
        res = y - x
        g = t @ res
        hess = t @ t.T + np.einsum("ijd,d->ij", s, res)
        det = hess[0, 0] * hess[1, 1] - hess[0, 1] * hess[1, 0]
        if not math.isfinite(det) or abs(det) < 1e-13:
            break
        step = np.clip(np.linalg.solve(hess, g), -step_cap, step_cap)
        w = w - step
        if float(np.max(np.abs(step))) < 1e-15:
            break
    return np.mod(w, 1.0)


def _nearest_torus(m, x):
    wgrid, pts = m.dense_samples()
    g = NEAREST_GRID_TORUS
    d2 = np.sum((pts - x) ** 2, axis=1).reshape(g, g)
    loc = np.ones_like(d2, dtype=bool)
    for ax in (0, 1):
        for sh in (1, -1):
            loc &= d2 <= np.roll(d2, sh, axis=ax)
    idx = np.nonzero(loc.ravel())[0]
    order = idx[np.argsort(d2.ravel()[idx], kind="stable")][:16]
    grid_h = 1.0 / g
    cands = []
    for j in order:
        w = _newton_torus(m, x, wgrid[j], 2.0 * grid_h)
        y = m.chart(w)
        cands.append((float(np.linalg.norm(y - x)), w, y))
    cands.sort(key=lambda c: c[0])
    dist, wbest, ybest = cands[0]
    ambiguous = False
    for d, w, _ in cands[1:]:
        sep = math.hypot(mod_distance(w[0], wbest[0]), mod_distance(w[1], wbest[1]))
        if sep > 4.0 * grid_h:
            if abs(d - dist) <= AMBIGUITY_TOL * (1.0 + dist):
                ambiguous = True
            break
    return NearestPoint(wbest, dist, ybest, ambiguous)


# ----------------------------------------------------------- normal frames

class NormalFrame:
    """Oriented orthonormal pair (v1, v2) of normal fields along M."""

    manifold = None

    def at(self, w):
        """Return (v1, v2) at parameter w; vectorized over leading axes."""
        raise NotImplementedError


class CurveFrame(NormalFrame):
    """Rotation-minimizing frame along a closed curve.

    v1 is parallel-transported by the double-reflection rule over the
    sample grid and the closure defect (holonomy) is spread uniformly so
    the field closes up exactly. Queries interpolate the stored samples
    and re-orthonormalize against the exact tangent; v2 = v1 x T, which
    puts the unit circle's frame at (radial outward, e3).
    """

    def __init__(self, manifold, v1_samples, holonomy):
        self.manifold = manifold
        self.v1_samples = np.asarray(v1_samples, dtype=float)
        self.holonomy = float(holonomy)
        self.resolution = len(self.v1_samples)

    def at(self, w):
        w = np.asarray(w, dtype=float)
        scalar = w.ndim == 0
        wv = np.atleast_1d(w) % 1.0
        res = self.resolution
        pos = wv * res
        j0 = np.floor(pos).astype(int) % res
        frac = (pos - np.floor(pos))[:, None]
        j1 = (j0 + 1) % res
        v = (1.0 - frac) * self.v1_samples[j0] + frac * self.v1_samples[j1]
        tan = self.manifold.tangents(wv)[:, 0, :]
        tan = tan / np.linalg.norm(tan, axis=1, keepdims=True)
        v = v - np.sum(v * tan, axis=1, keepdims=True) * tan
        nrm = np.linalg.norm(v, axis=1, keepdims=True)
        if float(np.min(nrm)) < 1e-8:
            raise DomainError("frame interpolation degenerate")
        v1 = v / nrm
        v2 = np.cross(v1, tan)
        if scalar:
            return v1[0], v2[0]
        return v1, v2


class FlatTorusFrame(NormalFrame):
    """Explicit normal frame of the flat torus and scaled-orthogonal images."""

    def __init__(self, manifold, rotation=None):
        self.manifold = manifold
        self.rotation = None if rotation is None else np.asarray(rotation, float)
        self.holonomy = 0.0

    def at(self, w):
        w = np.asarray(w, dtype=float)
        a = TWO_PI * w[..., 0]
        b = TWO_PI * w[..., 1]
        z = np.zeros_like(a)
        v1 = np.stack([np.cos(a), np.sin(a), z, z], axis=-1)
        v2 = np.stack([z, z, np.cos(b), np.sin(b)], axis=-1)
        if self.rotation is not None:
            v1 = v1 @ self.rotation.T
            v2 = v2 @ self.rotation.T
        return v1, v2


def _double_reflect(p0, t0, v0, p1, t1):
    # Wang et al. double-reflection step: reflect across the chord
    # bisector, then across the bisector of the reflected/next tangents
    d = p1 - p0
    c1 = float(np.dot(d, d))
    if c1 < 1e-30:
        vl, tl = v0, t0
    else:
        vl = v0 - (2.0 / c1) * np.dot(d, v0) * d
        tl = t0 - (2.0 / c1) * np.dot(d, t0) * d
    e = t1 - tl
    c2 = float(np.dot(e, e))
    v = vl if c2 < 1e-30 else vl - (2.0 / c2) * np.dot(e, vl) * e
    v = v - np.dot(v, t1) * t1
    return v / np.linalg.norm(v)


def build_frame(m, resolution=FRAME_SAMPLES):
    """Deterministic normal framing of M.

    Curves get a rotation-minimizing frame closed up by distributing the
    holonomy angle uniformly; the flat torus gets its explicit frame.
    """
    if m.n == 1:
        return _build_curve_frame(m, resolution)
    if isinstance(m, FlatTorus4):
        return FlatTorusFrame(m)
    if isinstance(m, AffineImage) and isinstance(m.base, FlatTorus4):
        mat = m.matrix
        scale = abs(np.linalg.det(mat)) ** 0.25
        rot = mat / scale
        if not np.allclose(rot @ rot.T, np.eye(4), atol=1e-10):
            raise DomainError("explicit torus frame needs a scaled-orthogonal map")
        return FlatTorusFrame(m, rot)
    raise DomainError("no frame construction for this 2-manifold")


def _build_curve_frame(m, res):
    w = np.arange(res + 1) / res
    pts = m.chart(w)
    tan = m.tangents(w)[:, 0, :]
    nrm = np.linalg.norm(tan, axis=1)
    if float(np.min(nrm)) < 1e-12:
        raise DomainError("chart derivative is rank-deficient; cannot frame")
    tan = tan / nrm[:, None]
    k = int(np.argmin(np.abs(tan[0])))
    v = np.zeros(3)
    v[k] = 1.0
    v -= np.dot(v, tan[0]) * tan[0]
    v /= np.linalg.norm(v)
    v1 = np.empty((res + 1, 3))
    v1[0] = v
    for j in range(res):
        v1[j + 1] = _double_reflect(pts[j], tan[j], v1[j], pts[j + 1], tan[j + 1])
    v2_0 = np.cross(v1[0], tan[0])
    holonomy = math.atan2(float(np.dot(v1[res], v2_0)),
                          float(np.dot(v1[res], v1[0])))
    phase = -holonomy * np.arange(res + 1) / res
    v2 = np.cross(v1, tan)
    v1c = np.cos(phase)[:, None] * v1 + np.sin(phase)[:, None] * v2
    return CurveFrame(m, v1c[:res], holonomy)


# ------------------------------------------------------------- tube radius

def tube_radius(m):
    """Conservative tube radius: half the smaller of two reach proxies.

    The proxies are the minimum curvature radius and the bottleneck
    distance. A sample pair counts toward the bottleneck only when its
    chord is shorter than half its intrinsic separation, so pairs that
    merely neighbor each other along M never qualify; the unit circle is
    governed by curvature alone and returns exactly 0.5.
    """
    cache = m._cache()
    if "tube" not in cache:
        r0 = _tube_radius_curve(m) if m.n == 1 else _tube_radius_torus(m)
        for _ in range(3):
            if _tube_ok(m, r0):
                break
            r0 *= 0.5
        cache["tube"] = r0
    return cache["tube"]


def _tube_ok(m, r0, count=16):
    # offsets of size 0.9 r0 along a normal direction must land at
    # distance 0.9 r0 from M, else the radius overestimates the reach
    w = (np.arange(count) + 0.37) / count
    if m.n == 2:
        w = np.stack([w, np.mod(w * 1.618, 1.0)], axis=-1)
    pts = np.atleast_2d(m.chart(w))
    tans = m.tangents(w)
    for j in range(count):
        t = tans[j]
        basis = []
        for k in range(m.ambient_dim):
            e = np.zeros(m.ambient_dim)
            e[k] = 1.0
            for row in t:
                e = e - (np.dot(e, row) / np.dot(row, row)) * row
            for b in basis:
                e = e - np.dot(e, b) * b
            n = np.linalg.norm(e)
            if n > 1e-6:
                basis.append(e / n)
            if len(basis) == 2:
                break
        probe = pts[j] + 0.9 * r0 * basis[0]
        near = nearest_point(m, probe)
        if abs(near.distance - 0.9 * r0) > 0.02 * r0:
            return False
    return True


def _tube_radius_curve(m, samples=1024):
    w = np.arange(samples) / samples
    pts = m.chart(w)
    tan = m.tangents(w)[:, 0, :]
    sec = m.second(w)
    sp = np.linalg.norm(tan, axis=1)
    num = np.sum(sec * sec, axis=1) * sp ** 2 - np.sum(tan * sec, axis=1) ** 2
    kappa = np.sqrt(np.maximum(num, 0.0)) / sp ** 3
    r_curv = 1.0 / max(float(np.max(kappa)), 1e-300)
    seg = sp / samples
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    s = s[:-1]
    ds = np.abs(s[:, None] - s[None, :])
    ds = np.minimum(ds, total - ds)
    chord = cdist(pts, pts)
    qual = chord < 0.5 * ds
    r_bottle = float(np.min(chord[qual])) / 2.0 if np.any(qual) else math.inf
    return 0.5 * min(r_bottle, r_curv)


def _tube_radius_torus(m, grid=48):
    w = m._param_grid(grid)
    pts = m.chart(w)
    tan = m.tangents(w)
    sec = m.second(w)
    t1 = tan[:, 0, :]
    t2 = tan[:, 1, :]
    e1 = t1 / np.linalg.norm(t1, axis=1, keepdims=True)
    e2 = t2 - np.sum(t2 * e1, axis=1, keepdims=True) * e1
    e2 = e2 / np.linalg.norm(e2, axis=1, keepdims=True)
    kmax = 0.0
    for th in np.linspace(0.0, math.pi, 16, endpoint=False):
        c, s = math.cos(th), math.sin(th)
        vel = c * t1 + s * t2
        acc = (c * c * sec[:, 0, 0] + 2 * c * s * sec[:, 0, 1]
               + s * s * sec[:, 1, 1])
        nrm = (acc - np.sum(acc * e1, axis=1, keepdims=True) * e1
               - np.sum(acc * e2, axis=1, keepdims=True) * e2)
        k = np.linalg.norm(nrm, axis=1) / np.sum(vel * vel, axis=1)
        kmax = max(kmax, float(np.max(k)))
    r_curv = 1.0 / max(kmax, 1e-300)
    len1 = float(np.mean(np.linalg.norm(t1, axis=1)))
    len2 = float(np.mean(np.linalg.norm(t2, axis=1)))
    da = np.abs(w[:, None, 0] - w[None, :, 0])
    da = np.minimum(da, 1.0 - da)
    db = np.abs(w[:, None, 1] - w[None, :, 1])
    db = np.minimum(db, 1.0 - db)
    intrinsic = np.hypot(da * len1, db * len2)
    chord = cdist(pts, pts)
    qual = chord < 0.5 * intrinsic
    r_bottle = float(np.min(chord[qual])) / 2.0 if np.any(qual) else math.inf
    return 0.5 * min(r_bottle, r_curv)


# ------------------------------------------------------ tubular coordinates

@dataclass
class TubularCoords:
    """Tube coordinates: base parameter, radius, meridional angle in turns."""

    w: object
    r: float
    phi: float


def from_tubular(m, frame, coords):
    """Point chart(w) + r cos(2 pi phi) v1 + r sin(2 pi phi) v2."""
    v1, v2 = frame.at(coords.w)
    y = m.chart(coords.w)
    ang = TWO_PI * coords.phi
    return y + coords.r * (math.cos(ang) * v1 + math.sin(ang) * v2)


def tube_points(m, frame, w, r, phi):
    """Vectorized from_tubular for arrays of (w, r, phi)."""
    v1, v2 = frame.at(w)
    y = m.chart(w)
    ang = TWO_PI * np.asarray(phi, dtype=float)
    rr = np.asarray(r, dtype=float)[..., None]
    return y + rr * (np.cos(ang)[..., None] * v1 + np.sin(ang)[..., None] * v2)


def to_tubular(m, frame, x, eps0=None):
    """Invert from_tubular inside the tube of radius eps0 (default: tube_radius)."""
    x = np.asarray(x, dtype=float)
    eps = tube_radius(m) if eps0 is None else float(eps0)
    near = nearest_point(m, x)
    if near.distance >= eps:
        raise DomainError(f"point at distance {near.distance:.6g} is outside "
                          f"the tube of radius {eps:.6g}")
    if near.ambiguous:
        raise DomainError("tube coordinates ambiguous: multiple nearest points")
    v1, v2 = frame.at(near.w)
    off = x - near.point
    c1 = float(np.dot(off, v1))
    c2 = float(np.dot(off, v2))
    return TubularCoords(near.w, math.hypot(c1, c2),
                         angle_mod(math.atan2(c2, c1) / TWO_PI))
