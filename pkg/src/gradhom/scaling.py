"""Tensor maxima, intrinsic lengths and HS1/HS2 regime classification."""

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConsistencyError, GradhomError, UnsupportedRegimeError

HS1 = "HS1"
HS2 = "HS2"
OTHER = "other"

DEFAULT_TOL = math.log(3.0)


@dataclass(frozen=True)
class RegimeMultipliers:
    """Powers of epsilon multiplying S in sigma, A in mu and S in mu."""

    s_in_sigma: float
    a_in_mu: float
    s_in_mu: float


@dataclass(frozen=True)
class ScalingReport:
    calK: float
    calS: float
    calA: float
    ell_SG: float
    ell_chiral: float
    p_prime: float
    q_prime: float
    epsilon: float
    regime: str

    def to_dict(self):
        return asdict(self)


def _frobenius_max(arr, order):
    flat = arr.reshape((-1,) + arr.shape[order:]) if arr.ndim > order else arr.reshape(-1, 1)
    return float(np.max(np.sqrt(np.sum(flat**2, axis=0))))


def tensor_maxima(field):
    """(calK, calS, calA): largest nodal Frobenius norm of each tensor field."""
    return _frobenius_max(field.K, 4), _frobenius_max(field.S, 5), _frobenius_max(field.A, 6)


def _check_conjugate(p_prime, q_prime):
    if p_prime <= 1 or q_prime <= 1 or not math.isfinite(p_prime) or not math.isfinite(q_prime):
        raise GradhomError(f"p', q' must lie in (1, inf), got {p_prime}, {q_prime}")
    if abs(1.0 / p_prime + 1.0 / q_prime - 1.0) > 1e-12:
        raise GradhomError(f"1/p' + 1/q' must equal 1, got {1 / p_prime + 1 / q_prime}")


def intrinsic_lengths(calK, calS, calA, p_prime=2.0, q_prime=2.0):
    """Return (ell_SG, ell_chiral) from calA = calK ell_SG^2 and calS = calK ell_SG^(1/p') ell_chiral^(1/q')."""
    if calK <= 0:
        raise GradhomError("calK must be positive")
    _check_conjugate(p_prime, q_prime)
    if calA < 0 or calS < 0:
        raise GradhomError("tensor maxima must be non-negative")
    if calA == 0:
        if calS > 0:
            raise ConsistencyError("chiral coupling S without second-gradient tensor A")
        return 0.0, 0.0
    ell_sg = math.sqrt(calA / calK)
    ell_chiral = (calS / (calK * ell_sg ** (1.0 / p_prime))) ** q_prime
    return ell_sg, ell_chiral


def _within(value, target, tol):
    if value <= 0 or target <= 0:
        return value == target
    return abs(math.log(value / target)) <= tol


def classify_regime(ell_SG, ell_chiral, epsilon, q_prime=2.0, tol=DEFAULT_TOL):
    """HS1, HS2 or ``other`` by comparing logarithms within ``tol``.

    A vanishing chiral length (S = 0) places no constraint on the regime.
    """
    if not 0 < epsilon < 1:
        raise GradhomError(f"epsilon must lie in (0, 1), got {epsilon}")
    if tol <= 0:
        raise GradhomError("tol must be positive")

    def chiral_ok(target):
        return ell_chiral == 0 or _within(ell_chiral, target, tol)

    if _within(ell_SG, epsilon, tol) and chiral_ok(epsilon ** (q_prime + 1)):
        return HS1
    if _within(ell_SG, 1.0, tol) and chiral_ok(epsilon**q_prime):
        return HS2
    return OTHER


def regime_multipliers(regime):
    regime = normalize_regime(regime)
    if regime == HS1:
        return RegimeMultipliers(2.0, 2.0, 2.0)
    if regime == HS2:
        return RegimeMultipliers(1.0, 0.0, 1.0)
    raise UnsupportedRegimeError(f"regime {regime!r} is not homogenized")


def normalize_regime(regime):
    r = str(regime).upper()
    if r in (HS1, HS2):
        return r
    if r == OTHER.upper():
        return OTHER
    raise UnsupportedRegimeError(f"unknown regime {regime!r}")


def scaling_report(field, epsilon, p_prime=2.0, q_prime=2.0, tol=DEFAULT_TOL):
    calK, calS, calA = tensor_maxima(field)
    ell_sg, ell_ch = intrinsic_lengths(calK, calS, calA, p_prime, q_prime)
    regime = classify_regime(ell_sg, ell_ch, epsilon, q_prime, tol)
    return ScalingReport(calK, calS, calA, ell_sg, ell_ch, p_prime, q_prime, epsilon, regime)
