"""Pullback densities of the spherical volume form and its primitive.

For a point x and a pole direction z, the primitive eta_z of the volume
form on S^{n+1} pulls back along the secant map Sec_x(y) = (y-x)/|y-x|
to an n-form on the submanifold.  After rotating so z becomes the last
coordinate axis, its value on a tangent frame (t_1, ..., t_n) at y is

    lambda(u) / |y-x|^{n+1} * det[ (y-x)_{1..n+1} | t_1 | ... | t_n ]

with u = (y_{n+2} - x_{n+2}) / |y-x| and the determinant taken over the
first n+1 rotated coordinates.  lambda solves

    (1 - u^2) lambda'(u) - (n+1) u lambda(u) = (-1)^n

and is the unique solution smooth at u = -1; it blows up at u = +1, which
is why evaluation requires the secant image to stay away from the pole.

The volume form omega itself pulls back to the (n+1)-form

    det[ y-x | v_1 | ... | v_{n+1} ] / |y-x|^{n+2}

over all n+2 coordinates, with no pole.  The potential divides these
integrals by sphere_area(n+1); with that normalization the n = 1,
pole-at-e3 case reduces to the classical unknot integrand, and the tests
check it term by term.

Rotations are applied to points and frames, never folded into the formula,
so a single code path serves every pole.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import DomainError, PoleError, ProximityError

__all__ = [
    "sphere_area",
    "lambda_eval",
    "lambda_deriv",
    "lambda_eval_quadrature",
    "PoleFrame",
    "rotation_to_last_axis",
    "pole_frame",
    "eta_pullback_density",
    "eta_pullback_grad_density",
    "omega_pullback_density",
    "MARGIN_THRESHOLD",
    "SECANT_POLE_CAP",
]

# selection-time bound on <Sec_x(y), z>; keeps lambda and two derivatives tame
MARGIN_THRESHOLD = 0.95
# hard evaluation cap: refined quadrature samples may exceed the sampled
# margin slightly, but beyond this the density counts as a pole hit
SECANT_POLE_CAP = 0.999

_SERIES_TERMS = 64
_U_POLE_EDGE = 1.0 - 1e-12


def sphere_area(dim: int) -> float:
    """Surface measure of the unit sphere S^dim in R^(dim+1)."""
    if dim < 0:
        raise DomainError("sphere dimension must be >= 0")
    return 2.0 * math.pi ** ((dim + 1) / 2.0) / math.gamma((dim + 1) / 2.0)


def _series_coeffs(n: int) -> np.ndarray:
    """Coefficients c_j of the expansion of lambda around u = -1.

    lambda(u) = (-1)^n 2^p (1-u)^{-(n+1)/2} sum_j c_j (1+u)^j
    with p = (n-1)/2 and c_j = binom(p, j) (-1/2)^j / (p + j + 1).
    The binomial is generalized; for odd n the series terminates.
    """
    p = (n - 1) / 2.0
    coeffs = np.empty(_SERIES_TERMS)
    binom = 1.0
    for j in range(_SERIES_TERMS):
        coeffs[j] = binom * (-0.5) ** j / (p + j + 1.0)
        binom *= (p - j) / (j + 1.0)
    return coeffs


_COEFF_CACHE: dict[int, np.ndarray] = {}


def _coeffs(n: int) -> np.ndarray:
    # read-mostly cache; entries are fully built before being published
    got = _COEFF_CACHE.get(n)
    if got is None:
        got = _series_coeffs(n)
        _COEFF_CACHE[n] = got
    return got


def _check_n(n: int) -> int:
    n = int(n)
    if n < 1:
        raise DomainError("codimension-2 dimension n must be >= 1")
    return n


def _check_u(u):
    u = np.asarray(u, dtype=float)
    if np.any(u < -1.0):
        raise DomainError("lambda argument must lie in [-1, 1)")
    if np.any(u >= _U_POLE_EDGE):
        raise PoleError("lambda blows up as u -> 1")
    return u


def _lambda_series(n, u, order):
    """lambda (or a u-derivative) off the series at u = -1; meant for u <= 0."""
    c = _coeffs(n)
    q = (n + 1) / 2.0
    v = 1.0 + u
    w = 1.0 - u
    sgn = -1.0 if n % 2 else 1.0
    scale = sgn * 2.0 ** ((n - 1) / 2.0)
    js = np.arange(_SERIES_TERMS)
    vp = v[..., None] ** js
    if order == 0:
        return scale * (vp @ c) * w**-q
    if order == 1:
        t1 = np.where(js > 0, js, 0.0) * v[..., None] ** np.maximum(js - 1, 0)
        return scale * ((t1 @ c) * w**-q + q * (vp @ c) * w ** (-q - 1))
    a1 = np.where(js > 0, js, 0.0) * v[..., None] ** np.maximum(js - 1, 0)
    a2 = np.where(js > 1, js * (js - 1), 0.0) * v[..., None] ** np.maximum(js - 2, 0)
    total = (
        (a2 @ c) * w**-q
        + 2.0 * q * (a1 @ c) * w ** (-q - 1)
        + q * (q + 1.0) * (vp @ c) * w ** (-q - 2)
    )
    return scale * total


def _lambda_recurrence(n, u):
    """Antiderivative recurrence ending at the arcsine primitive; u > 0 only."""
    one_minus = (1.0 - u) * (1.0 + u)
    if n % 2:
        acc = u + 1.0  # I_0
        m = 1.0
    else:
        acc = 0.5 * (u * np.sqrt(one_minus) + 2.0 * np.arcsin(np.sqrt((1.0 + u) / 2.0)))
        m = 1.5
    p = (n - 1) / 2.0
    while m <= p + 1e-12:
        acc = (u * one_minus**m + 2.0 * m * acc) / (2.0 * m + 1.0)
        m += 1.0
    sgn = -1.0 if n % 2 else 1.0
    return sgn * acc * one_minus ** (-(n + 1) / 2.0)


def lambda_eval(n, u):
    """Profile function lambda_n(u), smooth at u = -1, singular at u = +1.

    Vectorized over u.  For n = 1 this is exactly 1/(u - 1).
    """
    n = _check_n(n)
    u = _check_u(u)
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    if n == 1:
        out = 1.0 / (u - 1.0)
    else:
        out = np.empty_like(u)
        neg = u <= 0.0
        if np.any(neg):
            out[neg] = _lambda_series(n, u[neg], 0)
        if np.any(~neg):
            out[~neg] = _lambda_recurrence(n, u[~neg])
    return float(out[0]) if scalar else out


def lambda_deriv(n, u, order=1):
    """Derivative of lambda of the given order (1 or 2).

    Order 1 comes from the defining ODE, lambda' = ((-1)^n + (n+1) u lambda)
    / (1 - u^2); order 2 from differentiating it once more.  Near u = -1
    both are evaluated from the series instead, where the ODE form is 0/0.
    """
    n = _check_n(n)
    if order not in (1, 2):
        raise DomainError("derivative order must be 1 or 2")
    u = _check_u(u)
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    out = np.empty_like(u)
    neg = u <= 0.0
    if np.any(neg):
        out[neg] = _lambda_series(n, u[neg], order)
    pos = ~neg
    if np.any(pos):
        up = u[pos]
        one_minus = (1.0 - up) * (1.0 + up)
        sgn = -1.0 if n % 2 else 1.0
        lam = lambda_eval(n, up)
        d1 = (sgn + (n + 1.0) * up * lam) / one_minus
        if order == 1:
            out[pos] = d1
        else:
            out[pos] = ((n + 3.0) * up * d1 + (n + 1.0) * lam) / one_minus
    return float(out[0]) if scalar else out


def lambda_eval_quadrature(n, u):
    """Validation fallback: adaptive quadrature of the defining integral."""
    n = _check_n(n)
    u = float(_check_u(u))
    p = (n - 1) / 2.0
    val, _ = quad(lambda s: ((1.0 - s) * (1.0 + s)) ** p, -1.0, u,
                  epsabs=1e-14, epsrel=1e-14, limit=200)
    sgn = -1.0 if n % 2 else 1.0
    return sgn * val * ((1.0 - u) * (1.0 + u)) ** (-(n + 1) / 2.0)


# ---------------------------------------------------------------- pole frames


@dataclass(frozen=True)
class PoleFrame:
    """Projection pole z plus the rotation carrying z to the last axis.

    margin records the largest sampled <Sec_x(y), z> seen at selection time;
    index identifies the winning candidate in the fixed candidate list.
    """

    z: np.ndarray
    rotation: np.ndarray
    margin: float = MARGIN_THRESHOLD
    index: int = -1


def rotation_to_last_axis(z: np.ndarray) -> np.ndarray:
    """Special-orthogonal matrix O with O z = e_last.

    One Householder reflection sending z to e_last, then a sign flip of the
    first coordinate to restore determinant +1 (a plain reflection would
    silently flip the orientation of the pulled-back form).
    """
    z = np.asarray(z, dtype=float)
    d = z.size
    nz = np.linalg.norm(z)
    if nz == 0.0:
        raise DomainError("pole direction must be nonzero")
    z = z / nz
    e = np.zeros(d)
    e[-1] = 1.0
    if z[-1] < 0.5:
        # reflect z -> +e (well conditioned here), then flip the first row:
        # (Hz)[0] = 0, so the image of z is untouched and det becomes +1
        w = z - e
        house = np.eye(d) - 2.0 * np.outer(w, w) / (w @ w)
        house[0] = -house[0]
    else:
        # near +e reflect to the far pole -e instead, then negate the last
        # row, which carries -e to +e and restores det +1
        w = z + e
        house = np.eye(d) - 2.0 * np.outer(w, w) / (w @ w)
        house[-1] = -house[-1]
    return house


def pole_frame(z, margin=MARGIN_THRESHOLD, index=-1) -> PoleFrame:
    z = np.asarray(z, dtype=float)
    z = z / np.linalg.norm(z)
    return PoleFrame(z=z, rotation=rotation_to_last_axis(z), margin=float(margin),
                     index=int(index))


# ------------------------------------------------------- density evaluation


def _minor_dets(dx, tangents):
    """detA and first-column cofactors of A = [dx_{0..n} | tangent columns].

    dx has shape (..., d), tangents (..., n, d) with d = n + 2; only the
    first n+1 coordinates enter.  Returns (det, cof), cof of shape (..., n+1).
    """
    n = tangents.shape[-2]
    if n == 1:
        a = tangents[..., 0, :2]
        cof = np.stack([a[..., 1], -a[..., 0]], axis=-1)
        det = dx[..., 0] * a[..., 1] - dx[..., 1] * a[..., 0]
        return det, cof
    if n == 2:
        cof = np.cross(tangents[..., 0, :3], tangents[..., 1, :3])
        det = np.einsum("...i,...i->...", dx[..., :3], cof)
        return det, cof
    d = n + 2
    cols = np.moveaxis(tangents[..., :, : d - 1], -2, -1)
    mats = np.concatenate([dx[..., : d - 1, None], cols], axis=-1)
    det = np.linalg.det(mats)
    cof = np.empty(dx.shape[:-1] + (d - 1,))
    for i in range(d - 1):
        cof[..., i] = (-1.0) ** i * np.linalg.det(np.delete(cols, i, axis=-2))
    return det, cof


def _eta_density_rotated(n, dx, tangents):
    """Density in pole-adapted coordinates; inputs already rotated."""
    r = np.linalg.norm(dx, axis=-1)
    u = dx[..., -1] / r
    det, _ = _minor_dets(dx, tangents)
    return lambda_eval(n, u) * det / r ** (n + 1)


def _eta_grad_rotated(n, dx, tangents):
    """(density, gradient w.r.t. x) in rotated coordinates."""
    d = dx.shape[-1]
    r = np.linalg.norm(dx, axis=-1)
    u = dx[..., -1] / r
    det, cof = _minor_dets(dx, tangents)
    lam = lambda_eval(n, u)
    dlam = lambda_deriv(n, u, 1)
    rpow = r ** (n + 1)
    dens = lam * det / rpow
    du = u[..., None] * dx / r[..., None]
    du[..., -1] -= 1.0
    du /= r[..., None]
    grad = (dlam * det / rpow)[..., None] * du
    grad += ((n + 1) * lam * det / (rpow * r * r))[..., None] * dx
    grad[..., : d - 1] -= (lam / rpow)[..., None] * cof
    return dens, grad


def _scalar_inputs(n, x, y, tangents):
    n = _check_n(n)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    tangents = np.atleast_2d(np.asarray(tangents, dtype=float))
    if x.shape != y.shape or x.size != n + 2 or tangents.shape != (n, n + 2):
        raise DomainError("inconsistent shapes for an n-form in R^(n+2)")
    if np.linalg.norm(y - x) < 1e-12:
        raise ProximityError("density undefined at y = x")
    return n, x, y, tangents


def _secant_pole_check(dx, rotation):
    u = (dx @ rotation[-1]) / np.linalg.norm(dx, axis=-1)
    if np.any(u > SECANT_POLE_CAP):
        raise PoleError(
            f"secant direction within {1 - SECANT_POLE_CAP:g} of the pole")
    return u


def eta_pullback_density(n, x, y, tangent_frame, frame: PoleFrame) -> float:
    """Value of the pulled-back primitive on an oriented tangent frame at y.

    tangent_frame is an (n, n+2) array of frame vectors; the value changes
    sign with their orientation and is invariant under simultaneous rotation
    of x, y, the frame vectors, and the pole.
    """
    n, x, y, tangents = _scalar_inputs(n, x, y, tangent_frame)
    _secant_pole_check(y - x, frame.rotation)
    dx = frame.rotation @ (y - x)
    tan = tangents @ frame.rotation.T
    return float(_eta_density_rotated(n, dx, tan))


def eta_pullback_grad_density(n, x, y, tangent_frame, frame: PoleFrame,
                              axis: int | None = None):
    """Analytic gradient with respect to x of eta_pullback_density.

    With axis (1-based) returns that component, otherwise the full vector in
    ambient coordinates.  Away from the pole direction the components are
    bounded by a multiple of |y-x|^{-(n+1)}.
    """
    n, x, y, tangents = _scalar_inputs(n, x, y, tangent_frame)
    _secant_pole_check(y - x, frame.rotation)
    dx = frame.rotation @ (y - x)
    tan = tangents @ frame.rotation.T
    _, grad = _eta_grad_rotated(n, dx, tan)
    full = frame.rotation.T @ grad
    if axis is None:
        return full
    if not 1 <= axis <= n + 2:
        raise DomainError(f"axis {axis} outside 1..{n + 2}")
    return float(full[axis - 1])


def omega_pullback_density(n, x, y, frame_vectors) -> float:
    """Pullback of the spherical volume form on an (n+1)-frame at y.

    det[ y-x | v_1 | ... | v_{n+1} ] / |y-x|^{n+2}; no pole, no rotation.
    """
    n = _check_n(n)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    vectors = np.atleast_2d(np.asarray(frame_vectors, dtype=float))
    d = n + 2
    if x.shape != y.shape or x.size != d or vectors.shape != (d - 1, d):
        raise DomainError("omega density needs n+1 vectors in R^(n+2)")
    dx = y - x
    r = np.linalg.norm(dx)
    if r < 1e-12:
        raise ProximityError("omega density undefined at y = x")
    mat = np.concatenate([dx[None, :], vectors], axis=0)
    return float(np.linalg.det(mat.T) / r**d)
