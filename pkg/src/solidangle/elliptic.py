"""Legendre elliptic integrals and Heuman's lambda function.

Everything reduces to Carlson's symmetric forms R_F, R_D, R_J (evaluated by
scipy.special's duplication iterations), so the complete and incomplete
integrals share one converged kernel.  The modulus convention is Legendre's
k, not the parameter m = k^2.

Near k = 1 the complementary modulus matters more than k itself; the
EllipticModulus pair carries both so callers that know k' exactly (for
example k' = eps/sqrt(4 + 4 eps c + eps^2) on a thin tube) do not lose it
to the 1 - k^2 cancellation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import special as _sp

from .errors import DomainError

__all__ = [
    "EllipticModulus",
    "ellK",
    "ellE",
    "ellF",
    "ellE_inc",
    "ellPi",
    "heuman_lambda0",
    "dK_dk",
    "dE_dk",
    "dLambda0_dk",
    "dLambda0_dbeta",
]

# below this k', K(k) and log(4/k') agree to ~1e-15 and the log form is exact
K_LOG_SWITCH = 1e-8


@dataclass(frozen=True)
class EllipticModulus:
    """Modulus pair (k, k') with k^2 + k'^2 = 1."""

    k: float
    k_prime: float

    @classmethod
    def from_k(cls, k: float) -> "EllipticModulus":
        k = float(k)
        if not 0.0 <= k <= 1.0:
            raise DomainError(f"modulus k = {k!r} outside [0, 1]")
        return cls(k, math.sqrt((1.0 - k) * (1.0 + k)))

    @classmethod
    def from_k_prime(cls, k_prime: float) -> "EllipticModulus":
        k_prime = float(k_prime)
        if not 0.0 <= k_prime <= 1.0:
            raise DomainError(f"complementary modulus {k_prime!r} outside [0, 1]")
        return cls(math.sqrt((1.0 - k_prime) * (1.0 + k_prime)), k_prime)

    @property
    def complement(self) -> "EllipticModulus":
        return EllipticModulus(self.k_prime, self.k)


def _as_modulus(k) -> EllipticModulus:
    if isinstance(k, EllipticModulus):
        return k
    return EllipticModulus.from_k(k)


def ellK(k) -> float:
    """Complete elliptic integral of the first kind K(k)."""
    m = _as_modulus(k)
    if m.k_prime == 0.0:
        raise DomainError("K(k) diverges at k = 1")
    if m.k_prime < K_LOG_SWITCH:
        return math.log(4.0 / m.k_prime)
    return float(_sp.elliprf(0.0, m.k_prime * m.k_prime, 1.0))


def ellE(k) -> float:
    """Complete elliptic integral of the second kind E(k)."""
    m = _as_modulus(k)
    if m.k_prime == 0.0:
        return 1.0
    kp2 = m.k_prime * m.k_prime
    k2 = m.k * m.k
    return float(_sp.elliprf(0.0, kp2, 1.0) - (k2 / 3.0) * _sp.elliprd(0.0, kp2, 1.0))


def _check_amplitude(phi: float) -> float:
    phi = float(phi)
    if not -math.pi / 2 <= phi <= math.pi / 2:
        raise DomainError(f"amplitude {phi!r} outside [-pi/2, pi/2]")
    return phi


def ellF(phi, k) -> float:
    """Incomplete elliptic integral of the first kind F(phi, k)."""
    phi = _check_amplitude(phi)
    m = _as_modulus(k)
    if abs(phi) == math.pi / 2:
        # same code path as ellK by construction
        if m.k_prime == 0.0:
            raise DomainError("F(pi/2, 1) diverges")
        return math.copysign(ellK(m), phi)
    s = math.sin(phi)
    c = math.cos(phi)
    # 1 - k^2 s^2 rewritten as c^2 + (k' s)^2: no cancellation near k = 1
    d2 = c * c + (m.k_prime * s) ** 2
    return float(s * _sp.elliprf(c * c, d2, 1.0))


def ellE_inc(phi, k) -> float:
    """Incomplete elliptic integral of the second kind E(phi, k)."""
    phi = _check_amplitude(phi)
    m = _as_modulus(k)
    if abs(phi) == math.pi / 2:
        return math.copysign(ellE(m), phi)
    s = math.sin(phi)
    c = math.cos(phi)
    d2 = c * c + (m.k_prime * s) ** 2
    k2 = m.k * m.k
    val = s * _sp.elliprf(c * c, d2, 1.0) - (k2 * s**3 / 3.0) * _sp.elliprd(
        c * c, d2, 1.0
    )
    return float(val)


def ellPi(alpha2, k) -> float:
    """Complete elliptic integral of the third kind Pi(alpha^2, k).

    The characteristic alpha2 may be negative; alpha2 >= 1 and k = 1 are
    outside the domain.
    """
    alpha2 = float(alpha2)
    if alpha2 >= 1.0:
        raise DomainError(f"characteristic alpha^2 = {alpha2!r} must be < 1")
    m = _as_modulus(k)
    if m.k_prime == 0.0:
        raise DomainError("Pi(alpha^2, 1) diverges")
    kp2 = m.k_prime * m.k_prime
    rj = _sp.elliprj(0.0, kp2, 1.0, 1.0 - alpha2)
    return float(ellK(m) + (alpha2 / 3.0) * rj)


def heuman_lambda0(beta, k) -> float:
    """Heuman's lambda function Lambda0(beta, k).

    Defined through the complementary-modulus combination
    (2/pi) * (E(k) F(beta, k') + K(k) E(beta, k') - K(k) F(beta, k')).
    Lambda0(pi/2, k) = 1 identically (Legendre relation) and
    Lambda0(beta, 0) = sin(beta).
    """
    beta = float(beta)
    if not 0.0 <= beta <= math.pi / 2:
        raise DomainError(f"beta = {beta!r} outside [0, pi/2]")
    m = _as_modulus(k)
    if m.k_prime == 0.0:
        raise DomainError("Lambda0 undefined at k = 1")
    if beta == math.pi / 2:
        return 1.0
    comp = m.complement
    bigk = ellK(m)
    bige = ellE(m)
    f_c = ellF(beta, comp)
    e_c = ellE_inc(beta, comp)
    return (2.0 / math.pi) * (f_c * (bige - bigk) + bigk * e_c)


def _interior_modulus(k) -> EllipticModulus:
    m = _as_modulus(k)
    if m.k == 0.0 or m.k_prime == 0.0:
        raise DomainError("derivative needs k strictly inside (0, 1)")
    return m


def dK_dk(k) -> float:
    """dK/dk = (E - k'^2 K) / (k k'^2)."""
    m = _interior_modulus(k)
    kp2 = m.k_prime * m.k_prime
    return (ellE(m) - kp2 * ellK(m)) / (m.k * kp2)


def dE_dk(k) -> float:
    """dE/dk = (E - K) / k."""
    m = _interior_modulus(k)
    return (ellE(m) - ellK(m)) / m.k


def dLambda0_dk(beta, k) -> float:
    """dLambda0/dk = 2 (E - K) sin(beta) cos(beta) / (pi k sqrt(1 - k'^2 sin^2 beta))."""
    beta = float(beta)
    m = _interior_modulus(k)
    s = math.sin(beta)
    c = math.cos(beta)
    delta = math.sqrt(c * c + (m.k * s) ** 2)  # = sqrt(1 - k'^2 s^2)
    return 2.0 * (ellE(m) - ellK(m)) * s * c / (math.pi * m.k * delta)


def dLambda0_dbeta(beta, k) -> float:
    """dLambda0/dbeta = 2 (E - k'^2 sin^2(beta) K) / (pi sqrt(1 - k'^2 sin^2 beta))."""
    beta = float(beta)
    m = _interior_modulus(k)
    s = math.sin(beta)
    c = math.cos(beta)
    kp2 = m.k_prime * m.k_prime
    delta = math.sqrt(c * c + (m.k * s) ** 2)
    return 2.0 * (ellE(m) - kp2 * s * s * ellK(m)) / (math.pi * delta)
