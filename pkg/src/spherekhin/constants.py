"""Explicit constants of the sphere/Gaussian moment comparison, as one cached table."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .errors import DomainError
from .kernel import check_dimension, check_exponent, gaussian_abs_moment

C_KH = 0.77
C_KH_DIAG_FACTOR = 0.385  # c_Kh / 2, as written in the diagonal comparison
BRANCH_POINT = 4.0


def _pd(p, d):
    return check_exponent(p, 2.0), check_dimension(d)


def _shifted_product(p: float, d: int) -> float:
    # (p + d - 2)(p + d - 4) / (d (d + 2))
    return (p + d - 2) * (p + d - 4) / (d * (d + 2))


def beta(p: float, d: int) -> float:
    """p(p-2)(p+d-2)(p+d-4) / (4d(d+2)), the second-derivative prefactor."""
    p, d = _pd(p, d)
    return p * (p - 2) * (p + d - 2) * (p + d - 4) / (4.0 * d * (d + 2))


def kappa(p: float, d: int) -> float:
    p, d = _pd(p, d)
    return p * (p - 2) * (p + d - 2) * (p + d - 4) / (4.0 * d * d * (d + 2))


def beta_tilde(p: float, d: int) -> float:
    return 2.0 * beta(p, d) / d


def c_main(p: float, d: int, branch: str | None = None) -> float:
    """Constant in the lower bound by sum a_j^4.

    ``branch`` forces the 'low' (2 <= p <= 4) or 'high' (p > 4) formula, used to
    measure the jump at p = 4.
    """
    p, d = _pd(p, d)
    base = (p + d - 2) * (p + d - 4) / (24.0 * d * d * (d + 2))
    if branch is None:
        branch = "low" if p <= BRANCH_POINT else "high"
    if branch == "low":
        return 3.0 * p * (p - 2) * base
    if branch == "high":
        return base
    raise DomainError(f"unknown branch {branch!r}")


def c_diag(p: float, d: int, branch: str | None = None) -> float:
    """Constant of the comparison with the diagonal vector (n^-1/2, ..., n^-1/2)."""
    p, d = _pd(p, d)
    if branch is None:
        branch = "low" if p <= BRANCH_POINT else "high"
    lead = p * (p - 2) / (4.0 * d)
    if branch == "low":
        return lead * _shifted_product(p, d)
    if branch == "high":
        return lead * C_KH_DIAG_FACTOR
    raise DomainError(f"unknown branch {branch!r}")


def c_diag_proof_route(p: float, d: int) -> float:
    """The same constant assembled from its factors: beta/d for p <= 4, c_Kh p(p-2)/(8d) above."""
    p, d = _pd(p, d)
    if p <= BRANCH_POINT:
        return beta(p, d) / d
    return C_KH * p * (p - 2) / (8.0 * d)


def m_cut(p: float) -> float:
    """Cut-off m_p = sqrt(1 - 2^(-1/(p-4))) for p > 4 and 1 otherwise."""
    p = check_exponent(p, 2.0)
    if p <= BRANCH_POINT:
        return 1.0
    return math.sqrt(-math.expm1(-math.log(2.0) / (p - 4)))


def m_cut_margin(p: float) -> float:
    """m_p^4 * 3p(p-2) - 1, positive whenever the cut-off is admissible."""
    p = check_exponent(p, 2.0)
    return m_cut(p) ** 4 * 3.0 * p * (p - 2) - 1.0


@dataclass(frozen=True)
class ConstantSet:
    p: float
    d: int
    c_main: float
    c_diag: float
    kappa: float
    beta: float
    beta_tilde: float
    m_cut: float
    c_kh: float = C_KH

    def to_dict(self) -> dict:
        return asdict(self)


@lru_cache(maxsize=4096)
def _constant_set(p: float, d: int) -> ConstantSet:
    return ConstantSet(p=p, d=d, c_main=c_main(p, d), c_diag=c_diag(p, d), kappa=kappa(p, d),
                       beta=beta(p, d), beta_tilde=beta_tilde(p, d), m_cut=m_cut(p))


def constant_set(p: float, d: int) -> ConstantSet:
    """Cached table of all constants for (p, d); entries are immutable."""
    p, d = _pd(p, d)
    return _constant_set(p, d)


def branch_jump(d: int) -> dict:
    """Left and right limits at p = 4 of the piecewise constants."""
    d = check_dimension(d)
    return {
        "c_main": (c_main(4.0, d, "low"), c_main(4.0, d, "high")),
        "c_diag": (c_diag(4.0, d, "low"), c_diag(4.0, d, "high")),
    }


# ---------------------------------------------------------------------------
# Khinchin-type constant for 0 < q < 2


def _check_q(q: float) -> float:
    q = float(q)
    if not 0.0 < q < 2.0:
        raise DomainError(f"q must lie in (0, 2), got {q}")
    return q


def two_point_term(q: float, d: int) -> float:
    """2^(-q/2) E|xi_1 + xi_2|^q = E|(xi_1 + xi_2)/sqrt 2|^q."""
    from .moments import CoeffVector, MomentQuery, sum_moment_exact

    q, d = _check_q(q), check_dimension(d)
    a = CoeffVector((math.sqrt(0.5), math.sqrt(0.5)))
    return sum_moment_exact(MomentQuery(d, q, a)).value


def steinhaus_two_point(q: float) -> float:
    """Closed form of the two-point term in the plane: 2^(q/2) G((q+1)/2) / (sqrt(pi) G(q/2+1))."""
    q = _check_q(q)
    return math.exp(0.5 * q * math.log(2.0) + gammaln(0.5 * q + 0.5)
                    - 0.5 * math.log(math.pi) - gammaln(0.5 * q + 1.0))


def steinhaus_lower_bound(q: float) -> float:
    """Log-convexity lower bound 2^((q+1)/2) / sqrt(pi (q+1)) on the planar two-point term."""
    q = _check_q(q)
    return 2.0 ** ((q + 1) / 2.0) / math.sqrt(math.pi * (q + 1))


STEINHAUS_BOUND_ARGMIN = 1.0 / math.log(2.0) - 1.0


def khinchin_best_constant(q: float, d: int) -> float:
    """min(two-point term, E|Z|^q), the best constant in the L_q - L_2 comparison."""
    q, d = _check_q(q), check_dimension(d)
    return min(two_point_term(q, d), gaussian_abs_moment(q, d))


@dataclass(frozen=True)
class WendelCheck:
    q: float
    d: int
    gaussian_moment: float
    ratio_bound: float
    exp_bound: float

    @property
    def holds(self) -> bool:
        return (self.gaussian_moment >= self.ratio_bound >= self.exp_bound >= math.exp(-0.25) - 1e-15)


def wendel_bounds_check(q: float, d: int) -> WendelCheck:
    """E|Z|^q against the chain (1+s)^-(1-s) >= exp(-s(1-s)) >= exp(-1/4), s = q/2."""
    q, d = _check_q(q), check_dimension(d)
    s = q / 2.0
    return WendelCheck(q=q, d=d, gaussian_moment=gaussian_abs_moment(q, d),
                       ratio_bound=(1.0 + s) ** (s - 1.0), exp_bound=math.exp(-s * (1.0 - s)))


def khinchin_grid_minimum(d_values=(2, 3, 4, 8, 16, 64, 256), num: int = 199) -> float:
    """Smallest best constant over a dense q-grid in (0, 2) and the given dimensions."""
    qs = np.linspace(0.01, 1.99, num)
    return min(khinchin_best_constant(q, d) for d in d_values for q in qs)
