"""Closed-form references: the circle's solid angle and the linear model.

The unit circle sits counterclockwise in the xy-plane, so everything is
a function of the cylindrical radius r and the height x3. The global
normalization is the one used by the quadrature path: the angle at
(0,0,h) is -1/2 + h/(2 sqrt(1+h^2)) mod 1, approaching 1/2 from either
side of the plane far away and 0 at infinity.

Near-circle callers parametrize the meridian disk by
(r, x3) = (1 + eps cos 2 pi lambda, eps sin 2 pi lambda); on that circle
the complementary modulus is exactly eps / sqrt(4 + 4 eps c + eps^2),
which the derivative formulas exploit to stay accurate at eps = 1e-5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .angles import angle_mod
from .elliptic import (EllipticModulus, dK_dk, dLambda0_dbeta,
                       dLambda0_dk, ellE, ellK, heuman_lambda0, ellPi)
from .errors import ConfigError, DomainError

FOUR_PI = 4.0 * math.pi
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class CylindricalPoint:
    """Axis distance and height relative to the unit circle's plane."""

    r: float
    x3: float

    @classmethod
    def from_point(cls, x) -> "CylindricalPoint":
        x = np.asarray(x, dtype=float)
        if x.shape != (3,):
            raise ConfigError("cylindrical reduction needs a point in R^3")
        return cls(math.hypot(x[0], x[1]), float(x[2]))


def _circle_modulus(r: float, x3: float) -> EllipticModulus:
    # k^2 = 4r / ((1+r)^2 + x3^2); k' carries (1-r)^2 + x3^2 exactly so
    # nothing cancels when the point hugs the circle
    rmax = math.sqrt((1.0 + r) ** 2 + x3 * x3)
    k = 2.0 * math.sqrt(r) / rmax
    kp = math.hypot(1.0 - r, x3) / rmax
    return EllipticModulus(min(k, 1.0), kp)


def circle_phi(r, x3=None):
    """Solid angle map of the unit circle at cylindrical (r, x3).

    Closed form in complete elliptic integrals and Heuman's lambda; the
    in-plane values are exactly 1/2 (inside) and 0 (outside), and the
    r = 1 column is the pure-K expression, odd in x3.
    """
    if x3 is None:
        r, x3 = r.r, r.x3
    r = float(r)
    x3 = float(x3)
    if r < 0.0:
        raise DomainError(f"cylindrical radius must be >= 0, got {r}")
    if math.hypot(r - 1.0, x3) < 1e-12:
        raise DomainError("solid angle undefined on the circle itself")
    if x3 == 0.0:
        return 0.0 if r > 1.0 else 0.5
    if r == 1.0:
        rmax = math.sqrt(4.0 + x3 * x3)
        val = 0.25 + (2.0 * x3 / rmax) * ellK(2.0 / rmax) / FOUR_PI
        if x3 > 0.0:
            val -= 0.5  # odd continuation: -phi(1, -x3) mod 1
        return angle_mod(val)
    mod = _circle_modulus(r, x3)
    rmax = math.sqrt((1.0 + r) ** 2 + x3 * x3)
    beta = math.asin(min(abs(x3) / math.hypot(1.0 - r, x3), 1.0))
    sign = math.copysign(1.0, x3 * (1.0 - r))
    c = 0.0 if r > 1.0 else -TWO_PI
    total = c + (2.0 * x3 / rmax) * ellK(mod) \
        + math.pi * sign * heuman_lambda0(beta, mod)
    return angle_mod(total / FOUR_PI)


def circle_phi_paxton(r0, x3=None):
    """Paxton's three-branch formula, extended to signed heights.

    The printed branches give the unsigned angle at height L > 0; the
    signed map evaluates them at L = |x3| and negates for x3 > 0, which
    matches circle_phi on every branch.
    """
    if x3 is None:
        r0, x3 = r0.r, r0.x3
    r0 = float(r0)
    x3 = float(x3)
    if r0 < 0.0:
        raise DomainError(f"cylindrical radius must be >= 0, got {r0}")
    if math.hypot(r0 - 1.0, x3) < 1e-12:
        raise DomainError("solid angle undefined on the circle itself")
    big_l = abs(x3)
    rmax = math.sqrt((1.0 + r0) ** 2 + big_l * big_l)
    mod = _circle_modulus(r0, big_l)
    k_term = (2.0 * big_l / rmax) * ellK(mod) / FOUR_PI
    if r0 == 1.0:
        val = 0.25 - k_term
    else:
        xi = math.atan2(big_l, abs(1.0 - r0))
        lam = heuman_lambda0(xi, mod) / 4.0
        if r0 < 1.0:
            val = 0.5 - k_term - lam
        else:
            val = lam - k_term
    if x3 > 0.0:
        val = -val
    return angle_mod(val)


def circle_phi_pi_form(r, x3):
    """The K + Pi expression equivalent to circle_phi away from r = 1."""
    r = float(r)
    x3 = float(x3)
    if abs(r - 1.0) < 1e-12:
        raise DomainError("the Pi form degenerates at r = 1")
    if math.hypot(r - 1.0, x3) < 1e-12:
        raise DomainError("solid angle undefined on the circle itself")
    mod = _circle_modulus(r, x3)
    rmax = math.sqrt((1.0 + r) ** 2 + x3 * x3)
    alpha2 = 4.0 * r / (1.0 + r) ** 2
    c = 0.0 if r > 1.0 else -TWO_PI
    total = c + (2.0 * x3 / rmax) * ellK(mod) \
        + (2.0 * x3 * (1.0 - r) / ((1.0 + r) * rmax)) * ellPi(alpha2, mod)
    return angle_mod(total / FOUR_PI)


def _tube_modulus(eps: float, lam: float):
    # point (r, x3) = (1 + eps c, eps s); on that circle k' = eps/rmax exactly
    c = math.cos(TWO_PI * lam)
    s = math.sin(TWO_PI * lam)
    q = 4.0 + 4.0 * eps * c + eps * eps
    rmax = math.sqrt(q)
    r = 1.0 + eps * c
    mod = EllipticModulus(2.0 * math.sqrt(r) / rmax, eps / rmax)
    return mod, r, rmax, c, s


def circle_dphi_deps(eps, lam):
    """Radial derivative of the circle's map on the meridian circle.

    Equals (1/4pi) 2 sin(2 pi lambda) (K - E) / (r rmax) at
    (r, x3) = (1 + eps cos 2 pi lambda, eps sin 2 pi lambda); grows like
    -ln(eps) sin(2 pi lambda) as the tube shrinks.
    """
    eps = float(eps)
    if not 0.0 < eps < 0.9:
        raise DomainError(f"eps must lie in (0, 0.9), got {eps}")
    mod, r, rmax, _, s = _tube_modulus(eps, float(lam))
    k_minus_e = ellK(mod) - ellE(mod)
    return 2.0 * s * k_minus_e / (r * rmax) / FOUR_PI


def circle_dphi_dlambda(eps, lam):
    """Meridional derivative of the circle's map at (eps, lambda).

    Assembled by the chain rule from dK/dk and the Heuman-lambda partial
    derivatives; tends to -E(1) = -1 as eps -> 0, uniformly in lambda.
    """
    eps = float(eps)
    lam = float(lam)
    if not 0.0 < eps < 0.9:
        raise DomainError(f"eps must lie in (0, 0.9), got {eps}")
    mod, r, rmax, c, s = _tube_modulus(eps, lam)
    kp = mod.k_prime
    x3 = eps * s
    dx3 = TWO_PI * eps * c
    drmax = -FOUR_PI * eps * s / rmax
    dk = -TWO_PI * kp ** 3 * s / math.sqrt(r)
    k_val = ellK(mod)
    t1 = 2.0 * (dx3 * k_val / rmax + x3 * dK_dk(mod) * dk / rmax
                - x3 * k_val * drmax / (rmax * rmax))
    # sign(s c) factors: sigma * dbeta/dlam = -2 pi always, so the prefactor
    # pi * sigma * dbeta/dlam is -2 pi^2; the dLambda0/dk term carries
    # |s| sign(c); both kinks cancel smoothly
    beta = math.asin(min(abs(s), 1.0))
    t2 = -2.0 * math.pi * math.pi * dLambda0_dbeta(beta, mod)
    sc = s * c
    if sc != 0.0:
        sigma = -math.copysign(1.0, sc)
        t2 += math.pi * sigma * dLambda0_dk(beta, mod) * dk
    return (t1 + t2) / FOUR_PI


def circle_near_limit(lam):
    """Uniform eps -> 0 limit of the map on the meridian circle: -lambda."""
    return angle_mod(-float(lam))


@dataclass(frozen=True)
class HalfPlaneModel:
    """Oriented linear model: the half-plane w1 <= 0 inside w2 = 0.

    e1 and e2 are an orthonormal pair spanning the normal 2-plane of the
    edge; coordinates of x are w_i = <x - origin, e_i>.
    """

    origin: np.ndarray
    e1: np.ndarray
    e2: np.ndarray

    @classmethod
    def standard(cls, dim=3) -> "HalfPlaneModel":
        e1 = np.zeros(dim)
        e2 = np.zeros(dim)
        e1[0] = 1.0
        e2[1] = 1.0
        return cls(np.zeros(dim), e1, e2)

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "e1", np.asarray(self.e1, dtype=float))
        object.__setattr__(self, "e2", np.asarray(self.e2, dtype=float))
        gram = np.array([
            [self.e1 @ self.e1, self.e1 @ self.e2],
            [self.e2 @ self.e1, self.e2 @ self.e2],
        ])
        if not np.allclose(gram, np.eye(2), atol=1e-10):
            raise ConfigError("half-plane directions must be orthonormal")

    def coords(self, x):
        d = np.asarray(x, dtype=float) - self.origin
        return float(d @ self.e1), float(d @ self.e2)


def linear_phi(x, model=None):
    """Angle of the linear half-plane model: beta with sign +1.

    In adapted coordinates (w1, w2) = rho (cos 2 pi beta, sin 2 pi beta)
    the map is beta itself; rotating the half-space shifts it by a
    constant.
    """
    model = HalfPlaneModel.standard() if model is None else model
    w1, w2 = model.coords(x)
    if abs(w2) < 1e-12 and w1 <= 1e-12:
        raise DomainError("point lies on the half-plane model")
    return angle_mod(math.atan2(w2, w1) / TWO_PI)


def linear_phi_grad(x, model=None):
    """Ambient gradient of linear_phi: (-w2 e1 + w1 e2) / (2 pi rho^2)."""
    model = HalfPlaneModel.standard() if model is None else model
    w1, w2 = model.coords(x)
    if abs(w2) < 1e-12 and w1 <= 1e-12:
        raise DomainError("point lies on the half-plane model")
    rho2 = w1 * w1 + w2 * w2
    return (-w2 * model.e1 + w1 * model.e2) / (TWO_PI * rho2)
