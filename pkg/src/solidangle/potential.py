"""Circle-valued solid-angle potential of a closed submanifold.

phi(x) integrates the pulled-back primitive of the spherical volume form
over the manifold and divides by the sphere area, so the result is a class
in R/Z.  The raw (unreduced) integral depends on the projection pole; two
poles give raws differing by an integer, which the pole-independence tests
pin down.

Quadrature is the periodic trapezoid rule with sample doubling: spectral
for smooth closed charts, so far points converge at the first comparison
and cost concentrates near the manifold.  All reductions run in a fixed
chunk/block layout, which makes results byte-identical for any worker
count and lets grid scans fan out across processes safely.
"""

from __future__ import annotations

import copy
import math
import multiprocessing
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .angles import angdiff, angle_mod, winding_number
from .errors import ConvergenceError, DomainError, PoleError, ProximityError
from .forms import (
    MARGIN_THRESHOLD,
    SECANT_POLE_CAP,
    PoleFrame,
    _minor_dets,
    lambda_deriv,
    lambda_eval,
    pole_frame,
    sphere_area,
)
from .manifold import tube_points
from .mesh import TriMesh, point_triangle_distances, triangle_areas

__all__ = [
    "PhiValue",
    "BatchResult",
    "SurfaceIntegral",
    "pole_candidates",
    "select_pole",
    "phi",
    "phi_batch",
    "phi_raw_with_pole",
    "grad_phi",
    "grad_batch",
    "phi_via_seifert_mesh",
    "euler_residual",
    "decay_report",
    "tube_derivative_report",
    "meridian_winding",
    "DEFAULT_TOL",
    "GRID_TOL",
]

DEFAULT_TOL = 1e-10
GRID_TOL = 1e-8

# doubling quadrature: first sample count (per axis) and total-point cap
START_SAMPLES = {1: 256, 2: 64}
SAMPLE_CAP = 2 ** 20
PROXIMITY_FACTOR = 1e-6

# fixed evaluation layout; changing these changes low-order bits everywhere
POINT_CHUNK = 512
SAMPLE_BLOCK = 1024
_MARGIN_BLOCK = 128
# row blocking for nearest-point scans; value-neutral, memory only
_NEAREST_BLOCK = 16384
SELECT_TARGET = {1: 512, 2: 1024}
FIB_COUNT = 64

_OK, _FAIL_PROXIMITY, _FAIL_POLE, _FAIL_CONVERGENCE = 0, 1, 2, 3
# reported error estimates never drop below the rounding noise of the
# sample means, so a further doubling stays within the estimate
_ERR_FLOOR = 1e-15


# ------------------------------------------------------------ pole selection


_CANDIDATE_CACHE: dict[int, np.ndarray] = {}


def pole_candidates(dim):
    """Fixed pole candidate list in R^dim: +-axes first, then 64 spiral points.

    The axis pairs come first so symmetric configurations resolve to the
    lowest-index axis; the spiral fills the sphere densely enough that some
    candidate clears the margin for every x at a reasonable distance.
    """
    got = _CANDIDATE_CACHE.get(dim)
    if got is not None:
        return got
    if dim not in (3, 4):
        raise DomainError("pole candidates exist for ambient dimension 3 or 4")
    axes = []
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        axes.append(e.copy())
        axes.append(-e)
    if dim == 3:
        j = np.arange(FIB_COUNT)
        z = 1.0 - (2.0 * j + 1.0) / FIB_COUNT
        rho = np.sqrt(np.maximum(1.0 - z * z, 0.0))
        ang = j * math.pi * (3.0 - math.sqrt(5.0))
        spiral = np.stack([rho * np.cos(ang), rho * np.sin(ang), z], axis=1)
    else:
        # double-spiral lattice on S^3 (Alexa's super-Fibonacci constants)
        j = np.arange(FIB_COUNT) + 0.5
        t = j / FIB_COUNT
        d = 2.0 * math.pi * j
        r = np.sqrt(t)
        rr = np.sqrt(1.0 - t)
        alpha = d / math.sqrt(2.0)
        beta = d / 1.533751168755204288118041
        spiral = np.stack([r * np.sin(alpha), r * np.cos(alpha),
                           rr * np.sin(beta), rr * np.cos(beta)], axis=1)
    out = np.concatenate([np.array(axes), spiral], axis=0)
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    out.setflags(write=False)
    _CANDIDATE_CACHE[dim] = out
    return out


def _selection_points(m, sample_count=None):
    if sample_count is None:
        _, pts = m.dense_samples()
        target = SELECT_TARGET[m.n]
        stride = max(1, len(pts) // target)
        return pts[::stride]
    w = m._param_grid(int(sample_count))
    return m.chart(w)


def _margins_against(points, X, candidates):
    """max_y <Sec_x(y), z> for each x in X and each candidate z."""
    P = len(X)
    margins = np.full((P, len(candidates)), -np.inf)
    for s in range(0, len(points), _MARGIN_BLOCK):
        block = points[s:s + _MARGIN_BLOCK]
        dx = block[None, :, :] - X[:, None, :]
        r = np.sqrt((dx * dx).sum(-1))
        sec = dx / r[..., None]
        dots = sec @ candidates.T
        np.maximum(margins, dots.max(axis=1), out=margins)
    return margins


# points closer to a curve than this many cloud spacings get their pole
# margins augmented with a local secant sweep (see _near_sweep_margins)
_SWEEP_GATE = 16.0


def _near_sweep_margins(m, X, dist, cands):
    """Candidate alignment against secants into the window around the foot.

    Near a curve the secant image sweeps half a great circle within a
    parameter window of order dist/speed, which the global selection
    samples step right over; a pole picked without seeing that sweep can
    sit on it and abort the dense quadrature.  A geometric ladder of
    parameter offsets from a quarter of the sweep scale out to a few
    selection spacings restores the sweep to the margin estimate.
    """
    _, w0 = _cheap_nearest(m, X)
    speed = np.linalg.norm(m.tangents(w0).reshape(len(X), -1), axis=-1)
    base = dist / np.maximum(speed, 1e-30)
    scales = 2.0 ** np.arange(-2.0, 13.0)
    offs = np.minimum(base[:, None] * scales[None, :],
                      4.0 / SELECT_TARGET[1])
    W = np.concatenate([np.zeros((len(X), 1)), offs, -offs], axis=1)
    W = (w0[:, None] + W) % 1.0
    pts = m.chart(W.ravel()).reshape(len(X), W.shape[1], -1)
    dx = pts - X[:, None, :]
    r = np.sqrt((dx * dx).sum(-1))
    sec = dx / np.maximum(r, 1e-300)[..., None]
    return np.einsum("pkd,cd->pkc", sec, cands).max(axis=1)


def select_pole(m, x, margin=MARGIN_THRESHOLD, sample_count=None) -> PoleFrame:
    """Pick the projection pole with the widest sampled angular gap.

    Scans the fixed candidate list against secant directions from x to a
    subsample of the manifold and returns the candidate minimizing the
    largest inner product, ties resolved by list order.  Points near a
    curve also scan a dense local window around the nearest point, where
    the secant sweep is too narrow for the global subsample to see.
    Raises PoleError when no candidate's sampled maximum stays at or
    below margin.

    sample_count (per axis) densifies the secant sampling; the reported
    margin can only grow under densification, and by less than 1e-3 for
    the built-in charts at their default sampling.
    """
    x = np.asarray(x, dtype=float).reshape(m.ambient_dim)
    pts = _selection_points(m, sample_count)
    cands = pole_candidates(m.ambient_dim)
    margins = _margins_against(pts, x[None], cands)[0]
    if m.n == 1 and sample_count is None:
        d = manifold_distances(m, x[None])
        if 0.0 < d[0] < _SWEEP_GATE * _sample_spacing(m):
            local = _near_sweep_margins(m, x[None], d, cands)[0]
            margins = np.maximum(margins, local)
    best = int(np.argmin(margins))
    if not margins[best] <= margin:
        raise PoleError(
            f"no pole candidate clears margin {margin:g} "
            f"(best {margins[best]:.6f}); x may be too close to the manifold")
    return pole_frame(cands[best], margin=margins[best], index=best)


# ------------------------------------------------------------------ results


@dataclass(frozen=True)
class PhiValue:
    """One potential evaluation: reduced angle plus its audit trail."""

    angle: float
    raw: float
    pole: PoleFrame
    n_samples: int
    err_estimate: float

    def record(self):
        """Flat dict for delimited output."""
        return {
            "angle": self.angle,
            "raw": self.raw,
            "err_estimate": self.err_estimate,
            "n_samples": self.n_samples,
            "pole_index": self.pole.index,
        }


@dataclass
class BatchResult:
    """Vectorized evaluation results with per-point failure codes.

    code 0 = ok, 1 = proximity floor, 2 = no pole / pole hit during
    quadrature, 3 = sample cap reached before the tolerance was met.
    Rows with codes 1 and 2 carry zeros in the value fields; code 3 rows
    keep the last quadrature estimate so they stay inspectable.
    """

    angle: np.ndarray
    raw: np.ndarray
    err_estimate: np.ndarray
    n_samples: np.ndarray
    pole_index: np.ndarray
    pole_margin: np.ndarray
    code: np.ndarray
    ambient_dim: int
    grad: np.ndarray | None = None

    @property
    def ok(self):
        return self.code == _OK

    def raise_any(self):
        bad = np.nonzero(self.code != _OK)[0]
        if bad.size == 0:
            return
        i = int(bad[0])
        c = int(self.code[i])
        if c == _FAIL_PROXIMITY:
            raise ProximityError(
                f"point {i} is within the proximity floor of the manifold")
        if c == _FAIL_POLE:
            raise PoleError(
                f"point {i}: no projection pole clears the secant margin")
        raise ConvergenceError(
            f"point {i}: quadrature cap {SAMPLE_CAP} reached "
            f"(last change {self.err_estimate[i]:.3e})")

    def value(self, i) -> PhiValue:
        if self.code[i] != _OK:
            single = BatchResult(*[np.atleast_1d(getattr(self, f))[i:i + 1]
                                   for f in ("angle", "raw", "err_estimate",
                                             "n_samples", "pole_index",
                                             "pole_margin", "code")],
                                 ambient_dim=self.ambient_dim)
            single.raise_any()
        cands = pole_candidates(self.ambient_dim)
        idx = int(self.pole_index[i])
        frame = pole_frame(cands[idx], margin=float(self.pole_margin[i]),
                           index=idx)
        return PhiValue(angle=float(self.angle[i]), raw=float(self.raw[i]),
                        pole=frame, n_samples=int(self.n_samples[i]),
                        err_estimate=float(self.err_estimate[i]))


def _concat_results(parts):
    fields = ("angle", "raw", "err_estimate", "n_samples", "pole_index",
              "pole_margin", "code")
    kw = {f: np.concatenate([getattr(p, f) for p in parts]) for f in fields}
    grads = [p.grad for p in parts]
    grad = np.concatenate(grads) if grads[0] is not None else None
    return BatchResult(ambient_dim=parts[0].ambient_dim, grad=grad, **kw)


# ------------------------------------------------------- distance estimation


def _cheap_nearest(m, X):
    """Distance to the dense sample cloud plus the nearest parameter.

    Blocked along both axes so the pairwise matrix never materializes;
    full grids can run to millions of query points.
    """
    w, pts = m.dense_samples()
    best = np.full(len(X), np.inf)
    arg = np.zeros(len(X), dtype=np.int64)
    for r in range(0, len(X), _NEAREST_BLOCK):
        xb = X[r:r + _NEAREST_BLOCK]
        bb = best[r:r + _NEAREST_BLOCK]
        ab = arg[r:r + _NEAREST_BLOCK]
        for s in range(0, len(pts), SAMPLE_BLOCK):
            d = cdist(xb, pts[s:s + SAMPLE_BLOCK])
            i = d.argmin(axis=1)
            v = d[np.arange(len(xb)), i]
            take = v < bb
            bb[take] = v[take]
            ab[take] = i[take] + s
    return best, w[arg]


def _refine_curve(m, X, w, iters=10):
    step_cap = 2.0 / len(m.dense_samples()[0])
    for _ in range(iters):
        y = m.chart(w)
        t = m.tangents(w)[:, 0, :]
        s2 = m.second(w)
        dx = y - X
        g = (dx * t).sum(-1)
        h = (t * t).sum(-1) + (dx * s2).sum(-1)
        safe = np.abs(h) > 1e-30
        step = np.where(safe, g / np.where(safe, h, 1.0), 0.0)
        np.clip(step, -step_cap, step_cap, out=step)
        w = (w - step) % 1.0
    return np.linalg.norm(m.chart(w) - X, axis=-1)


def _refine_torus(m, X, w, iters=10):
    count = int(round(math.sqrt(len(m.dense_samples()[0]))))
    step_cap = 2.0 / max(count, 1)
    for _ in range(iters):
        y = m.chart(w)
        t = m.tangents(w)
        s2 = m.second(w)
        dx = y - X
        g = np.einsum("pi,pji->pj", dx, t)
        h = np.einsum("pji,pki->pjk", t, t) + np.einsum("pi,pjki->pjk", dx, s2)
        det = h[:, 0, 0] * h[:, 1, 1] - h[:, 0, 1] * h[:, 1, 0]
        safe = np.abs(det) > 1e-30
        dsafe = np.where(safe, det, 1.0)
        s0 = (h[:, 1, 1] * g[:, 0] - h[:, 0, 1] * g[:, 1]) / dsafe
        s1 = (h[:, 0, 0] * g[:, 1] - h[:, 1, 0] * g[:, 0]) / dsafe
        step = np.where(safe[:, None], np.stack([s0, s1], axis=1), 0.0)
        np.clip(step, -step_cap, step_cap, out=step)
        w = (w - step) % 1.0
    return np.linalg.norm(m.chart(w) - X, axis=-1)


def _sample_spacing(m):
    """Upper bound on the chart-sample spacing of the dense grid."""
    cache = m._cache()
    if "spacing" not in cache:
        w, pts = m.dense_samples()
        count = len(w) if m.n == 1 else int(round(math.sqrt(len(w))))
        t = m.tangents(w)
        tmax = float(np.max(np.linalg.norm(t, axis=-1)))
        cache["spacing"] = 2.0 * tmax / count
    return cache["spacing"]


def manifold_distances(m, X):
    """Distance from each row of X to the manifold.

    Sample-cloud distance, Newton-polished near the manifold where the
    cloud alone over-reports.  Used for proximity floors and grid masks.
    """
    X = np.asarray(X, dtype=float).reshape(-1, m.ambient_dim)
    cheap, w0 = _cheap_nearest(m, X)
    gate = 4.0 * _sample_spacing(m)
    near = cheap < gate
    if np.any(near):
        refine = _refine_curve if m.n == 1 else _refine_torus
        fine = refine(m, X[near], w0[near])
        cheap = cheap.copy()
        cheap[near] = np.minimum(cheap[near], fine)
    return cheap


# ----------------------------------------------------------- quadrature core


def _block_terms(n, dx, tan, need_grad):
    """Density (and x-gradient) sums over one sample block, pole-capped.

    dx: (P, B, d) rotated separations, tan: (B, n, d) rotated tangents.
    Rows where any secant runs into the pole cap are flagged; their sums
    are garbage and must be discarded by the caller.
    """
    d = dx.shape[-1]
    r2 = (dx * dx).sum(-1)
    r = np.sqrt(r2)
    u = dx[..., -1] / r
    bad = (u > SECANT_POLE_CAP).any(axis=-1)
    uc = np.clip(u, -1.0, SECANT_POLE_CAP)
    lam = lambda_eval(n, uc)
    det, cof = _minor_dets(dx, tan)
    rpow = r ** (n + 1)
    dens = lam * det / rpow
    tot = dens.sum(axis=-1)
    if not need_grad:
        return tot, None, bad
    dlam = lambda_deriv(n, uc, 1)
    du = uc[..., None] * dx / r[..., None]
    du[..., -1] -= 1.0
    du /= r[..., None]
    grad = (dlam * det / rpow)[..., None] * du
    grad += ((n + 1) * lam * det / (rpow * r2))[..., None] * dx
    grad[..., : d - 1] -= (lam / rpow)[..., None] * cof
    return tot, grad.sum(axis=1), bad


def _mean_over(m, rotation, Xr, samples, need_grad):
    """Blocked mean of the rotated density over the given chart samples."""
    Y, T = samples
    P = len(Xr)
    total = np.zeros(P)
    gtotal = np.zeros((P, m.ambient_dim)) if need_grad else None
    badrow = np.zeros(P, dtype=bool)
    for s in range(0, len(Y), SAMPLE_BLOCK):
        Yb = Y[s:s + SAMPLE_BLOCK] @ rotation.T
        Tb = T[s:s + SAMPLE_BLOCK] @ rotation.T
        dx = Yb[None, :, :] - Xr[:, None, :]
        tot, gtot, bad = _block_terms(m.n, dx, Tb, need_grad)
        total += tot
        if need_grad:
            gtotal += gtot
        badrow |= bad
    k = float(len(Y))
    if need_grad:
        return total / k, gtotal / k, badrow
    return total / k, None, badrow


def _integrate_group(m, Xs, frame, tol, need_grad, start, cap):
    """Doubling trapezoid integration for points sharing one pole.

    Returns (raw, err, n_samples, grad, code) arrays aligned with Xs; raw
    carries the orientation sign and the 1/sphere_area normalization.
    """
    n = m.n
    d = m.ambient_dim
    P = len(Xs)
    scale = float(m.orientation) / sphere_area(n + 1)
    rot = frame.rotation
    Xr = Xs @ rot.T

    raw = np.zeros(P)
    err = np.zeros(P)
    ns = np.zeros(P, dtype=np.int64)
    grad = np.zeros((P, d))
    code = np.full(P, _FAIL_CONVERGENCE, dtype=np.uint8)

    idx = np.arange(P)

    def register_bad(mask, why):
        code[idx[mask]] = why

    N = start
    val, gval, bad = _mean_over(m, rot, Xr, m.quadrature_samples(N), need_grad)
    val = val * scale
    if need_grad:
        gval = gval * scale
    if np.any(bad):
        register_bad(bad, _FAIL_POLE)
        keep = ~bad
        idx, Xr, val = idx[keep], Xr[keep], val[keep]
        if need_grad:
            gval = gval[keep]

    ldiff = np.full(len(idx), np.inf)
    while len(idx):
        total_next = (2 * N) ** n
        if total_next > cap:
            # keep the last estimate so capped rows stay inspectable
            raw[idx] = val
            err[idx] = ldiff
            ns[idx] = N ** n
            if need_grad:
                grad[idx] = gval @ rot
            break
        if n == 1:
            Y, T = m.quadrature_samples(2 * N)
            oval, og, bad = _mean_over(m, rot, Xr, (Y[1::2], T[1::2]),
                                       need_grad)
            new = 0.5 * (val + oval * scale)
            newg = 0.5 * (gval + og * scale) if need_grad else None
        else:
            nval, ng, bad = _mean_over(m, rot, Xr,
                                       m.quadrature_samples(2 * N), need_grad)
            new = nval * scale
            newg = ng * scale if need_grad else None
        if np.any(bad):
            register_bad(bad, _FAIL_POLE)
            keep = ~bad
            idx, Xr, val, new = idx[keep], Xr[keep], val[keep], new[keep]
            ldiff = ldiff[keep]
            if need_grad:
                gval, newg = gval[keep], newg[keep]
            if not len(idx):
                break
        diff = np.abs(new - val)
        if need_grad:
            diff = np.maximum(diff, np.abs(newg - gval).max(axis=-1))
        conv = diff < tol
        if np.any(conv):
            done = idx[conv]
            raw[done] = new[conv]
            err[done] = np.maximum(diff[conv], _ERR_FLOOR)
            ns[done] = total_next
            code[done] = _OK
            if need_grad:
                grad[done] = newg[conv] @ rot
        keep = ~conv
        idx, Xr, val = idx[keep], Xr[keep], new[keep]
        ldiff = diff[keep]
        if need_grad:
            gval = newg[keep]
        N *= 2
    return raw, err, ns, grad, code


def _eval_points(m, X, tol, need_grad, start=None, cap=SAMPLE_CAP,
                 forced_frame=None):
    """Evaluate one chunk of points; the worker entry point."""
    X = np.asarray(X, dtype=float).reshape(-1, m.ambient_dim)
    P = len(X)
    n = m.n
    if start is None:
        start = START_SAMPLES[n]
    raw = np.zeros(P)
    err = np.zeros(P)
    ns = np.zeros(P, dtype=np.int64)
    pidx = np.full(P, -1, dtype=np.int64)
    pmarg = np.full(P, np.nan)
    code = np.zeros(P, dtype=np.uint8)
    grad = np.zeros((P, m.ambient_dim)) if need_grad else None

    dist = manifold_distances(m, X)
    delta = PROXIMITY_FACTOR * m.diameter
    prox = dist < delta
    code[prox] = _FAIL_PROXIMITY
    live = np.nonzero(~prox)[0]
    if live.size == 0:
        return BatchResult(angle_mod(raw), raw, err, ns, pidx, pmarg, code,
                           m.ambient_dim, grad)

    cands = pole_candidates(m.ambient_dim)
    if forced_frame is not None:
        margins = _margins_against(_selection_points(m), X[live],
                                   np.asarray([forced_frame.z]))
        best = np.zeros(live.size, dtype=np.int64)
        bestm = margins[:, 0]
        pidx[live] = forced_frame.index
        pmarg[live] = bestm
        # a forced pole only has to avoid the hard evaluation cap
        nopole = bestm > SECANT_POLE_CAP
    else:
        margins = _margins_against(_selection_points(m), X[live], cands)
        if n == 1:
            near = dist[live] < _SWEEP_GATE * _sample_spacing(m)
            if np.any(near):
                rows = np.nonzero(near)[0]
                local = _near_sweep_margins(m, X[live][rows],
                                            dist[live][rows], cands)
                margins[rows] = np.maximum(margins[rows], local)
        best = margins.argmin(axis=1)
        bestm = margins[np.arange(live.size), best]
        pidx[live] = best
        pmarg[live] = bestm
        nopole = bestm > MARGIN_THRESHOLD
    code[live[nopole]] = _FAIL_POLE
    good = ~nopole
    for b in np.unique(best[good]):
        sel = good & (best == b)
        rows = live[sel]
        frame = forced_frame if forced_frame is not None else \
            pole_frame(cands[b], margin=float(bestm[sel].max()), index=int(b))
        r_, e_, s_, g_, c_ = _integrate_group(
            m, X[rows], frame, tol, need_grad, start, cap)
        raw[rows] = r_
        err[rows] = e_
        ns[rows] = s_
        code[rows] = c_
        if need_grad:
            grad[rows] = g_
    # rows that never produced a value stay zeroed; capped rows keep
    # their last estimate alongside the failure code
    have = (code == _OK) | (code == _FAIL_CONVERGENCE)
    angle = np.where(have, angle_mod(raw), 0.0)
    raw = np.where(have, raw, 0.0)
    return BatchResult(angle, raw, err, ns, pidx, pmarg, code,
                       m.ambient_dim, grad)


def _eval_star(args):
    return _eval_points(*args)


def _batch(m, points, tol, need_grad, workers, start, cap):
    X = np.asarray(points, dtype=float).reshape(-1, m.ambient_dim)
    chunks = [X[s:s + POINT_CHUNK] for s in range(0, len(X), POINT_CHUNK)]
    if not chunks:
        return BatchResult(*[np.zeros(0) for _ in range(3)],
                           np.zeros(0, np.int64), np.zeros(0, np.int64),
                           np.zeros(0), np.zeros(0, np.uint8),
                           m.ambient_dim,
                           np.zeros((0, m.ambient_dim)) if need_grad else None)
    if workers and workers > 1:
        # ship a cache-free copy so task pickles stay small; workers
        # rebuild the (deterministic) sample caches on first use
        m_send = copy.copy(m)
        m_send.__dict__.pop("_cache_store", None)
        args = [(m_send, c, tol, need_grad, start, cap) for c in chunks]
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(int(workers)) as pool:
            parts = pool.map(_eval_star, args)
    else:
        parts = [_eval_points(m, c, tol, need_grad, start, cap)
                 for c in chunks]
    return _concat_results(parts)


# -------------------------------------------------------------- public entry


def phi(m, x, tol=DEFAULT_TOL) -> PhiValue:
    """Potential at one point, with automatic pole selection.

    Raises ProximityError within 1e-6 * diameter of the manifold,
    PoleError when no candidate pole works, and ConvergenceError when the
    doubling quadrature hits its cap before two successive levels agree
    to tol.
    """
    x = np.asarray(x, dtype=float).reshape(1, m.ambient_dim)
    res = _eval_points(m, x, float(tol), need_grad=False)
    res.raise_any()
    return res.value(0)


def phi_batch(m, points, tol=GRID_TOL, workers=1) -> BatchResult:
    """Vectorized phi over many points; failures are coded, not raised.

    The evaluation layout (point chunks, sample blocks) is fixed, so the
    result is byte-identical for every workers value.
    """
    return _batch(m, points, float(tol), False, workers, None, SAMPLE_CAP)


def grad_phi(m, x, tol=DEFAULT_TOL) -> np.ndarray:
    """Ambient gradient of the potential (of any smooth local lift)."""
    x = np.asarray(x, dtype=float).reshape(1, m.ambient_dim)
    res = _eval_points(m, x, float(tol), need_grad=True)
    res.raise_any()
    return res.grad[0].copy()


def grad_batch(m, points, tol=GRID_TOL, workers=1) -> BatchResult:
    """Vectorized gradient evaluation; .grad holds the vectors."""
    return _batch(m, points, float(tol), True, workers, None, SAMPLE_CAP)


def phi_raw_with_pole(m, x, z, tol=DEFAULT_TOL) -> PhiValue:
    """Potential with a caller-chosen pole (for pole-independence audits).

    z may be a direction vector or a PoleFrame.  The sampled secant image
    must stay below the hard evaluation cap for this pole; the selection
    margin is not enforced, so convergence may cost more samples.
    """
    if isinstance(z, PoleFrame):
        frame = z
    else:
        frame = pole_frame(z, index=-1)
    x = np.asarray(x, dtype=float).reshape(1, m.ambient_dim)
    res = _eval_points(m, x, float(tol), need_grad=False, forced_frame=frame)
    res.raise_any()
    return PhiValue(angle=float(res.angle[0]), raw=float(res.raw[0]),
                    pole=frame, n_samples=int(res.n_samples[0]),
                    err_estimate=float(res.err_estimate[0]))


# ------------------------------------------------------------------- audits


def euler_residual(m, x, tol=DEFAULT_TOL) -> float:
    """x . grad(phi) + (n+1) * phi_lifted, with the lift nearest zero.

    Far from the manifold phi decays like |x|^-(n+1), so the residual of
    the Euler identity for degree -(n+1) homogeneity decays one order
    faster; its log-log slope is a sensitive far-field consistency check.
    """
    x = np.asarray(x, dtype=float).reshape(1, m.ambient_dim)
    res = _eval_points(m, x, float(tol), need_grad=True)
    res.raise_any()
    rep = angdiff(res.angle[0], 0.0)
    return float(x[0] @ res.grad[0] + (m.n + 1) * rep)


def _stencil_directions(dim):
    grids = np.meshgrid(*([np.array([-1.0, 0.0, 1.0])] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    pts = pts[np.any(pts != 0.0, axis=1)]
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def decay_report(m, radii=None, tol=DEFAULT_TOL, workers=1):
    """Far-field decay audit over a lattice direction stencil.

    For each radius reports the largest mod-1 distance of phi from 0 and
    the largest Euler residual over all stencil directions, plus fitted
    log-log slopes; phi should give -(n+1) and the residual -(n+2).
    """
    if radii is None:
        radii = np.geomspace(10.0, 100.0, 9)
    radii = np.asarray(radii, dtype=float)
    dirs = _stencil_directions(m.ambient_dim)
    n1 = m.n + 1
    max_phi = np.empty(len(radii))
    max_euler = np.empty(len(radii))
    for i, R in enumerate(radii):
        pts = R * dirs
        res = _batch(m, pts, float(tol), True, workers, None, SAMPLE_CAP)
        res.raise_any()
        rep = angdiff(res.angle, 0.0)
        max_phi[i] = float(np.max(np.abs(rep)))
        resid = (pts * res.grad).sum(axis=1) + n1 * rep
        max_euler[i] = float(np.max(np.abs(resid)))
    phi_slope = float(np.polyfit(np.log(radii), np.log(max_phi), 1)[0])
    euler_slope = float(np.polyfit(np.log(radii), np.log(max_euler), 1)[0])
    rows = [{"radius": float(r), "max_phi": float(p), "max_euler": float(e)}
            for r, p, e in zip(radii, max_phi, max_euler)]
    return {"radii": radii, "max_phi": max_phi, "max_euler": max_euler,
            "phi_slope": phi_slope, "euler_slope": euler_slope, "rows": rows}


def meridian_winding(m, frame, w, r, samples=64, tol=1e-3) -> int:
    """Winding of phi around one meridian loop of the tube at radius r.

    The winding survives per-sample angle errors well below half a turn
    (the wrapped steps then still telescope to the true total), so rows
    that hit the sample cap are kept as long as their error estimate is
    small against that slack; anything worse, or any other failure,
    raises as usual.
    """
    ang = np.arange(samples) / samples
    if m.n == 1:
        ws = np.full(samples, float(w))
    else:
        ws = np.tile(np.asarray(w, dtype=float).reshape(1, 2), (samples, 1))
    pts = tube_points(m, frame, ws, r, ang)
    res = phi_batch(m, pts, tol=tol)
    slack = 0.05 * (0.5 - 1.0 / samples)
    capped = res.code == _FAIL_CONVERGENCE
    if np.any(capped) and float(res.err_estimate[capped].max()) > slack:
        res.raise_any()
    elif not np.all(capped | res.ok):
        res.raise_any()
    return winding_number(res.angle)


def tube_derivative_report(m, frame, r_values, ang_grid=None, w_count=8,
                           tol=DEFAULT_TOL, workers=1):
    """Centered-difference behavior of phi around a tube of the manifold.

    Samples meridian circles at several base points and radii; reports the
    meridional derivative (in turns per turn, which should sit near a
    constant sign eps = +-1), the radial derivative, a fitted log-log
    exponent for its growth as r -> 0, and the ratio against (1 - ln r),
    which stays bounded when the radial derivative grows logarithmically.
    """
    if ang_grid is None:
        ang_grid = (np.arange(16) + 0.5) / 16.0
    ang_grid = np.asarray(ang_grid, dtype=float)
    r_values = np.asarray(r_values, dtype=float)
    if m.n == 1:
        base = np.arange(w_count) / w_count
    else:
        g = np.arange(max(2, int(math.isqrt(w_count)))) / max(
            2, int(math.isqrt(w_count)))
        a, b = np.meshgrid(g, g, indexing="ij")
        base = np.stack([a.ravel(), b.ravel()], axis=-1)
    h_ang = 1e-3
    rows = []
    max_dr = np.empty(len(r_values))
    for i, r in enumerate(r_values):
        # radial step small against r: the derivative grows like -ln r,
        # so the r^-2 third derivative would otherwise dominate the FD
        hr = min(1e-3, 0.05 * float(r))
        W = np.repeat(base, len(ang_grid), axis=0)
        A = np.tile(ang_grid, len(base) if m.n == 1 else len(base))
        if m.n == 1:
            W = W.ravel()
        pts = np.concatenate([
            tube_points(m, frame, W, r, A + h_ang),
            tube_points(m, frame, W, r, A - h_ang),
            tube_points(m, frame, W, r + hr, A),
            tube_points(m, frame, W, r - hr, A),
        ])
        res = _batch(m, pts, float(tol), False, workers, None, SAMPLE_CAP)
        res.raise_any()
        k = len(A)
        ang = res.angle
        d_ang = angdiff(ang[:k], ang[k:2 * k]) / (2.0 * h_ang)
        d_r = angdiff(ang[2 * k:3 * k], ang[3 * k:]) / (2.0 * hr)
        max_dr[i] = float(np.max(np.abs(d_r)))
        for j in range(k):
            rows.append({"r": float(r),
                         "w": (float(W[j]) if m.n == 1 else tuple(W[j])),
                         "angle": float(A[j]),
                         "dphi_dangle": float(d_ang[j]),
                         "dphi_dr": float(d_r[j])})
        if i == 0:
            eps = -1.0 if float(np.median(d_ang)) < 0.0 else 1.0
        meridional = np.concatenate([meridional, d_ang]) if i else d_ang
    max_meridional_dev = float(np.max(np.abs(meridional - eps)))
    fit = np.polyfit(np.log(r_values), np.log(max_dr), 1) \
        if len(r_values) > 1 else (np.nan, np.nan)
    # bound check is only informative where -ln r dominates, i.e. r < 1
    denom = np.maximum(1.0 - np.log(r_values), 0.5)
    log_ratio = float(np.max(max_dr / denom))
    return {"rows": rows, "eps": float(eps),
            "max_meridional_dev": max_meridional_dev,
            "max_dphi_dr": max_dr,
            "dr_exponent": float(fit[0]),
            "log_bound_ratio": log_ratio}


# ------------------------------------------------------ surface-side integral


_RULE7_BARY, _RULE7_W = None, None
_RULE2_BARY = np.array([[2 / 3, 1 / 6, 1 / 6],
                        [1 / 6, 2 / 3, 1 / 6],
                        [1 / 6, 1 / 6, 2 / 3]])
_RULE2_W = np.array([1 / 3, 1 / 3, 1 / 3])


def _rule7():
    """13-point degree-7 symmetric triangle rule (barycentric, weights sum 1)."""
    global _RULE7_BARY, _RULE7_W
    if _RULE7_BARY is None:
        pts = [([1 / 3, 1 / 3, 1 / 3], -0.149570044467670)]
        for a, w in ((0.260345966079038, 0.175615257433204),
                     (0.065130102902216, 0.053347235608839)):
            b = 1.0 - 2.0 * a
            pts += [([b, a, a], w), ([a, b, a], w), ([a, a, b], w)]
        a, b, w = 0.312865496004875, 0.638444188569809, 0.077113760890257
        c = 1.0 - a - b
        for perm in ((a, b, c), (b, c, a), (c, a, b),
                     (a, c, b), (c, b, a), (b, a, c)):
            pts.append((list(perm), w))
        _RULE7_BARY = np.array([p for p, _ in pts])
        _RULE7_W = np.array([w for _, w in pts])
    return _RULE7_BARY, _RULE7_W


@dataclass(frozen=True)
class SurfaceIntegral:
    """Result of integrating the volume-form pullback over a mesh."""

    angle: float
    raw: float
    err_estimate: float
    n_triangles: int
    n_refined: int


def _omega_quad(x, A, B, C, bary, wts):
    """Per-triangle quadrature of det[y-x | B-A | C-A] / |y-x|^3."""
    e1 = B - A
    e2 = C - A
    cof = np.cross(e1, e2)
    pts = (bary[None, :, :, None] *
           np.stack([A, B, C], axis=1)[:, None, :, :]).sum(axis=2)
    dx = pts - x
    r = np.linalg.norm(dx, axis=-1)
    dens = np.einsum("tqi,ti->tq", dx, cof) / r ** 3
    return 0.5 * (dens * wts).sum(axis=-1)


def phi_via_seifert_mesh(mesh: TriMesh, x, tol=GRID_TOL) -> SurfaceIntegral:
    """Potential from the volume form integrated over a bounding surface.

    The mesh orientation fixes the sign; a surface whose oriented boundary
    matches the manifold reproduces phi mod 1, and two such surfaces give
    raw values differing by an integer.  Degree-7 triangle quadrature with
    one adaptive midpoint-subdivision level; per-triangle error budgets
    are area-weighted shares of tol.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    if mesh.n_triangles == 0:
        return SurfaceIntegral(0.0, 0.0, 0.0, 0, 0)
    V = mesh.vertices
    T = mesh.triangles
    scale = float(np.linalg.norm(V.max(axis=0) - V.min(axis=0)))
    dists = point_triangle_distances(x, mesh)
    floor = PROXIMITY_FACTOR * max(scale, 1e-30)
    hit = np.nonzero(dists < floor)[0]
    if hit.size:
        shown = ", ".join(str(int(t)) for t in hit[:8])
        more = "..." if hit.size > 8 else ""
        raise ProximityError(
            f"x within {floor:.3e} of triangles [{shown}{more}]")
    A, B, C = V[T[:, 0]], V[T[:, 1]], V[T[:, 2]]
    b7, w7 = _rule7()
    q7 = _omega_quad(x, A, B, C, b7, w7)
    q2 = _omega_quad(x, A, B, C, _RULE2_BARY, _RULE2_W)
    areas = triangle_areas(mesh)
    total_area = max(float(areas.sum()), 1e-300)
    budget = float(tol) * areas / total_area + 1e-18
    est = np.abs(q7 - q2)
    split = est > budget
    refined = np.nonzero(split)[0]
    if refined.size:
        Ar, Br, Cr = A[split], B[split], C[split]
        M1, M2, M3 = 0.5 * (Ar + Br), 0.5 * (Br + Cr), 0.5 * (Cr + Ar)
        child = 0.0
        for ca, cb, cc in ((Ar, M1, M3), (M1, Br, M2),
                           (M3, M2, Cr), (M1, M2, M3)):
            child = child + _omega_quad(x, ca, cb, cc, b7, w7)
        err_refined = float(np.abs(child - q7[split]).sum())
        q7 = q7.copy()
        q7[split] = child
    else:
        err_refined = 0.0
    total = float(q7.sum())
    raw = total / sphere_area(2)
    err = (float(est[~split].sum()) + err_refined) / sphere_area(2)
    return SurfaceIntegral(angle=angle_mod(raw), raw=raw,
                           err_estimate=max(err, _ERR_FLOOR),
                           n_triangles=int(len(T)), n_refined=int(refined.size))
