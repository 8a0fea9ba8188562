"""Special-function values, densities, quadrature rules and samplers.

Conventions used throughout the package:

* ``xi`` is uniform on the unit sphere of R^d and ``Z`` is Gaussian with
  covariance I_d / d, so that E|xi|^2 = E|Z|^2 = 1.
* ``theta = <xi, e_1>`` is the one-dimensional marginal of ``xi``; its density
  on (-1, 1) is proportional to (1 - x^2)^((d-3)/2).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import mpmath
import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import gammaln, hyp2f1, polygamma, roots_jacobi, roots_legendre

from .errors import DomainError, SingularIntegrandError

# Below this value of 1 - (r0/r1)^2 the argument of 2F1 cannot be represented
# accurately near z = 1 and negative exponents are evaluated with mpmath.
_NEAR_ONE = 1e-12


def check_dimension(d) -> int:
    """Validate a sphere dimension; the theorems require d >= 2."""
    if isinstance(d, bool) or int(d) != d:
        raise DomainError(f"dimension must be an integer, got {d!r}")
    d = int(d)
    if d < 2:
        raise DomainError(f"dimension must be >= 2, got {d}")
    return d


def check_exponent(p, minimum: float = 2.0, strict: bool = False) -> float:
    p = float(p)
    if not np.isfinite(p) or p < minimum or (strict and p == minimum):
        op = ">" if strict else ">="
        raise DomainError(f"exponent must be {op} {minimum}, got {p}")
    return p


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent, reproducible generator for ``(seed, *stream)``.

    Distinct ``stream`` tuples give statistically independent substreams
    (SeedSequence spawn keys), so parallel workers never share draws.
    """
    if seed is None:
        raise DomainError("an explicit seed is required")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# Gaussian radius


# In double precision the log-gamma difference loses ~log10(d log d) digits,
# so it is taken at 40 digits. Near p = 0 and p = 2, where E|Z|^p = 1, a
# polygamma series in s = (p - anchor)/2 is used instead; only its leading
# coefficient digamma(a) - log(d/2) needs the extra digits.
_SERIES_RADIUS = 0.05
_SERIES_TERMS = 14


@lru_cache(maxsize=4096)
def _log_gaussian_moment(p: float, d: int) -> float:
    x = d / 2.0
    if p == int(p) and int(p) % 2 == 0:
        k = np.arange(int(p) // 2)
        return float(np.sum(np.log1p(2.0 * k / d)))
    anchor = 0.0 if p < 1.0 else 2.0
    s = (p - anchor) / 2.0
    if abs(s) < _SERIES_RADIUS:
        a = x + anchor / 2.0
        with mpmath.workdps(40):
            slope = float(mpmath.digamma(a) - mpmath.log(x))
        total = s * slope
        term = s
        for k in range(2, _SERIES_TERMS + 1):
            term *= s / k
            total += term * float(polygamma(k - 1, a))
        return float(total)
    with mpmath.workdps(40):
        mx, mh = mpmath.mpf(d) / 2, mpmath.mpf(p) / 2
        return float(mpmath.loggamma(mx + mh) - mpmath.loggamma(mx) - mh * mpmath.log(mx))


def gaussian_abs_moment(p: float, d: int) -> float:
    """E|Z|^p = Gamma((p+d)/2) / ((d/2)^(p/2) Gamma(d/2)), evaluated in log space."""
    d = check_dimension(d)
    p = check_exponent(p, minimum=0.0)
    if p == 0.0:
        return 1.0
    return float(np.exp(_log_gaussian_moment(p, d)))


def gaussian_moment_excess(p: float, d: int) -> float:
    """E|Z|^p - 1 without the cancellation of subtracting 1 from the moment."""
    d = check_dimension(d)
    p = check_exponent(p, minimum=0.0)
    if p == 0.0:
        return 0.0
    return float(np.expm1(_log_gaussian_moment(p, d)))


# ---------------------------------------------------------------------------
# The marginal theta


def theta_alpha(d: int) -> float:
    return (d - 3) / 2.0


def theta_norm_constant(d: int) -> float:
    """A_d = sqrt(pi) Gamma((d-1)/2) / Gamma(d/2)."""
    d = check_dimension(d)
    return float(np.exp(0.5 * np.log(np.pi) + gammaln((d - 1) / 2.0) - gammaln(d / 2.0)))


def theta_density(x, d: int):
    """Density of theta on the open interval (-1, 1)."""
    d = check_dimension(d)
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) >= 1.0):
        raise DomainError("theta density is defined on the open interval (-1, 1)")
    out = (1.0 - x * x) ** theta_alpha(d) / theta_norm_constant(d)
    return float(out) if out.ndim == 0 else out


def theta_moment(m: int, d: int) -> float:
    """E[theta^m]; odd moments vanish, even ones are Gamma ratios."""
    d = check_dimension(d)
    if m < 0 or int(m) != m:
        raise DomainError("moment order must be a nonnegative integer")
    if m % 2:
        return 0.0
    k = m // 2
    return float(np.exp(gammaln(k + 0.5) + gammaln(d / 2.0) - gammaln(0.5) - gammaln(k + d / 2.0)))


@dataclass(frozen=True)
class JacobiRule:
    """Gauss rule for the law of theta: weight (1 - x^2)^alpha, normalized to mass one."""

    d: int
    alpha: float
    nodes: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.nodes)

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


def _recurrence_offdiag(alpha: float, K: int) -> np.ndarray:
    # monic Gegenbauer recurrence coefficients b_k, k = 1..K-1
    k = np.arange(1, K, dtype=float)
    b = k * (k + 2 * alpha) / ((2 * k + 2 * alpha + 1) * (2 * k + 2 * alpha - 1))
    return np.sqrt(b)


@lru_cache(maxsize=256)
def _jacobi_rule_arrays(d: int, K: int):
    if d == 2:
        i = np.arange(1, K + 1)
        nodes = np.sort(np.cos((2 * i - 1) * np.pi / (2 * K)))
        weights = np.full(K, 1.0 / K)
    else:
        alpha = theta_alpha(d)
        if K == 1:
            nodes, weights = np.zeros(1), np.ones(1)
        else:
            off = _recurrence_offdiag(alpha, K)
            nodes, vecs = eigh_tridiagonal(np.zeros(K), off)
            weights = vecs[0, :] ** 2
            weights = weights / weights.sum()
            nodes = 0.5 * (nodes - nodes[::-1])  # exact symmetry
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def jacobi_rule(d: int, K: int) -> JacobiRule:
    """K-node Gauss-Jacobi rule for theta in dimension d (Golub-Welsch).

    Exact for polynomials of degree <= 2K - 1 integrated against the law of
    theta. For d = 2 the Chebyshev nodes cos((2i - 1) pi / 2K) are used.
    """
    d = check_dimension(d)
    K = int(K)
    if K < 1:
        raise DomainError("node count must be >= 1")
    nodes, weights = _jacobi_rule_arrays(d, K)
    return JacobiRule(d=d, alpha=theta_alpha(d), nodes=nodes, weights=weights)


@lru_cache(maxsize=256)
def _one_sided_rule(alpha: float, K: int, left: bool):
    # weight (1 + y)^alpha on (-1, 1) if left else (1 - y)^alpha
    y, w = roots_jacobi(K, 0.0, alpha) if left else roots_jacobi(K, alpha, 0.0)
    return y, w


def _theta_average_pieces(func, d: int, K: int, cuts: Sequence[float]) -> float:
    alpha = theta_alpha(d)
    edges = [-1.0] + sorted(c for c in cuts if -1.0 < c < 1.0) + [1.0]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        if lo == -1.0 and hi == 1.0:
            rule = jacobi_rule(d, K)
            total += rule.integrate(func) * theta_norm_constant(d)
            continue
        if lo == -1.0:
            y, w = _one_sided_rule(alpha, K, True)
            x = lo + half * (y + 1.0)
            total += half ** (alpha + 1) * np.dot(w, func(x) * (1.0 - x) ** alpha)
        elif hi == 1.0:
            y, w = _one_sided_rule(alpha, K, False)
            x = hi - half * (1.0 - y)
            total += half ** (alpha + 1) * np.dot(w, func(x) * (1.0 + x) ** alpha)
        else:
            y, w = roots_legendre(K)
            x = lo + half * (y + 1.0)
            total += half * np.dot(w, func(x) * (1.0 - x * x) ** alpha)
    return float(total / theta_norm_constant(d))


def theta_average(func, d: int, K: int = 64, cuts: Sequence[float] = ()) -> tuple[float, float]:
    """E[func(theta)] and a node-halving error estimate.

    ``cuts`` are points of (-1, 1) where ``func`` is not smooth; the interval
    is split there and each piece gets its own Gauss rule, with the endpoint
    behaviour of the weight built into the rules touching -1 and 1.
    """
    d = check_dimension(d)
    if not cuts:
        fine = jacobi_rule(d, K).integrate(func)
        coarse = jacobi_rule(d, max(1, K // 2)).integrate(func)
    else:
        fine = _theta_average_pieces(func, d, K, cuts)
        coarse = _theta_average_pieces(func, d, max(1, K // 2), cuts)
    return fine, abs(fine - coarse)


# ---------------------------------------------------------------------------
# Closed-form sphere averages


def _hyp_params(q: float, d: int):
    return -q / 2.0, 1.0 - d / 2.0 - q / 2.0, d / 2.0


def _hyp_near_one(q: float, d: int, w: float) -> float:
    a, b, c = _hyp_params(q, d)
    z = mpmath.mpf(1) - mpmath.mpf(w)
    return float(mpmath.hyp2f1(a, b, c, z))


def sphere_average(r, s, q: float, d: int):
    """E|r e + s xi|^q for radii r, s >= 0 (broadcasting over arrays).

    Uses the mean-value formula over spheres,
    E|r e + s xi|^q = r1^q 2F1(-q/2, 1 - d/2 - q/2; d/2; (r0/r1)^2),
    with r1 = max(r, s), r0 = min(r, s); the expression is symmetric in (r, s).
    Returns +inf where the expectation diverges (q <= -(d-1) with r = s > 0).
    """
    d = int(d)
    q = float(q)
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    r, s = np.broadcast_arrays(r, s)
    r1 = np.maximum(r, s)
    r0 = np.minimum(r, s)
    out = np.empty(r1.shape)
    zero = r1 == 0.0
    pos = ~zero
    if np.any(zero):
        out[zero] = 1.0 if q == 0.0 else (0.0 if q > 0 else np.inf)
    if np.any(pos):
        R1 = r1[pos]
        R0 = r0[pos]
        ratio = R0 / R1
        t2 = ratio * ratio
        w = (1.0 - ratio) * (1.0 + ratio)
        a, b, c = _hyp_params(q, d)
        h = hyp2f1(a, b, c, t2)
        if q < 0:
            near = w < _NEAR_ONE
            if np.any(near):
                idx = np.flatnonzero(near)
                singular = q <= -(d - 1)
                for i in idx:
                    h[i] = np.inf if (singular and w[i] == 0.0) else _hyp_near_one(q, d, w[i])
        out[pos] = R1**q * h
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Samplers


def sample_theta(d: int, rng: np.random.Generator, size) -> np.ndarray:
    """Draws of theta: cos(pi U) for d = 2, uniform for d = 3, scaled Beta otherwise."""
    if d == 2:
        return np.cos(np.pi * rng.random(size))
    if d == 3:
        return 2.0 * rng.random(size) - 1.0
    h = (d - 1) / 2.0
    return 2.0 * rng.beta(h, h, size) - 1.0


def sample_sphere(d: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """Uniform points on S^{d-1}; shape ``(d,)`` or ``(*size, d)``."""
    d = check_dimension(d)
    shape = (d,) if size is None else tuple(np.atleast_1d(size)) + (d,)
    g = rng.standard_normal(shape)
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


RADIAL_KINDS = ("sphere", "gaussian", "ball", "product")


@dataclass(frozen=True)
class RadialLaw:
    """Law of a nonnegative radius.

    ``sphere``: identically 1. ``gaussian``: |Z| = sqrt(chi2(d)/d).
    ``ball``: radius of a uniform point of the unit ball (density d r^(d-1)).
    ``product``: R1 R2 with densities d r^(d-1) and (d+2) r^(d+1).
    """

    kind: str
    d: int

    def __post_init__(self):
        if self.kind not in RADIAL_KINDS:
            raise DomainError(f"unknown radial law {self.kind!r}")
        check_dimension(self.d)


def sample_radial(law: RadialLaw, rng: np.random.Generator, size=None) -> np.ndarray:
    d = law.d
    if law.kind == "sphere":
        return np.ones(size) if size is not None else np.float64(1.0)
    if law.kind == "gaussian":
        # chi2(d) = 2 Gamma(d/2)
        return np.sqrt(2.0 * rng.standard_gamma(d / 2.0, size) / d)
    if law.kind == "ball":
        return rng.random(size) ** (1.0 / d)
    u1 = rng.random(size)
    u2 = rng.random(size)
    return u1 ** (1.0 / d) * u2 ** (1.0 / (d + 2))


def product_radius_density(r, d: int):
    """Density of R1 R2 on (0, 1): d(d+2)/2 r^(d-1) (1 - r^2)."""
    r = np.asarray(r, dtype=float)
    return 0.5 * d * (d + 2) * r ** (d - 1) * (1.0 - r * r)


def product_radius_moment(m: float, d: int) -> float:
    """E[(R1 R2)^m] = d(d+2) / ((m+d)(m+d+2)), finite for m > -d."""
    if m <= -d:
        raise SingularIntegrandError("E[(R1 R2)^m] diverges for m <= -d")
    return d * (d + 2) / ((m + d) * (m + d + 2))
