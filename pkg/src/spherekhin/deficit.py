"""Swap deficits D_p(a, v) = E|aZ + v|^p - E|a xi + v|^p and their lower bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import constants
from .errors import DomainError, PreconditionError
from .kernel import (
    check_dimension,
    check_exponent,
    gaussian_moment_excess,
    make_rng,
    sample_radial,
    sample_sphere,
    RadialLaw,
    sphere_average,
    theta_average,
)
from .moments import (
    MC_CHUNK,
    Estimate,
    MomentQuery,
    _chi2_density,
    _Running,
    exact,
    quad_pieces,
    g_prime_closed,
    g_second_derivative,
    shifted_gaussian_moment,
    shifted_single_moment,
)


def branch_of(p: float) -> str:
    return "low" if p <= constants.BRANCH_POINT else "high"


# ---------------------------------------------------------------------------
# Pointwise deficit


def _centered_deficit_unit(w: float, p: float, d: int) -> tuple[float, float]:
    # E[g(T) - g(1) - g'(1)(T - 1)] with g(t) = E|w e + sqrt(t) xi|^p and T = |Z|^2.
    # Subtracting the tangent line removes the O(1) cancellation between the two moments.
    g1 = sphere_average(w, 1.0, p, d)
    slope = g_prime_closed(w, 1.0, p, d)

    def f(T):
        return (sphere_average(w, math.sqrt(T), p, d) - g1 - slope * (T - 1.0)) * _chi2_density(T, d)

    edges = sorted({0.0, 1.0, w * w, np.inf})
    total, err = quad_pieces(f, edges)
    # cancellation floor: the integrand is a difference of terms of size ~ g(1)
    err += 64 * np.finfo(float).eps * (abs(g1) + abs(slope))
    return total, err


def deficit(a: float, v: float, p: float, d: int, method: str = "centered") -> Estimate:
    """D_p(a, v); only |v| matters by rotational invariance.

    ``centered`` integrates g(T) - g(1) - g'(1)(T - 1) against the law of
    T = |Z|^2 (E T = 1 makes the tangent term vanish), which stays accurate
    when the deficit is tiny compared with the moments. ``direct`` subtracts
    the two moments.
    """
    p = check_exponent(p, 2.0)
    d = check_dimension(d)
    a, v = abs(float(a)), float(v)
    if v < 0:
        raise DomainError("|v| must be >= 0")
    if a == 0.0 or p == 2.0:
        # second moments of aZ + v and a xi + v agree
        return exact(0.0)
    if v == 0.0:
        return exact(a**p * gaussian_moment_excess(p, d))
    if method == "direct":
        g = shifted_gaussian_moment(v, a, p, d)
        s = shifted_single_moment(v, a, 1.0, p, d)
        return Estimate(g.value - s.value, "quadrature", g.err + s.err, 0)
    if method == "centered":
        val, err = _centered_deficit_unit(v / a, p, d)
        scale = a**p
        return Estimate(scale * val, "quadrature", scale * err, 0)
    raise DomainError(f"unknown method {method!r}")


def deficit_lower_bound(a: float, v: float, p: float, d: int) -> float:
    """kappa a^4 (|v|^2 + 2a^2)^((p-4)/2) for p <= 4 and kappa a^4 |v|^(p-4) for p > 4."""
    p = check_exponent(p, 2.0)
    d = check_dimension(d)
    a, v = abs(float(a)), float(v)
    k = constants.kappa(p, d)
    if k == 0.0 or a == 0.0:
        return 0.0
    if p <= constants.BRANCH_POINT:
        return k * a**4 * (v * v + 2 * a * a) ** ((p - 4) / 2.0)
    if v == 0.0:
        return 0.0
    return k * a**4 * v ** (p - 4)


@dataclass(frozen=True)
class DeficitSample:
    p: float
    d: int
    a: float
    shift: float
    value: Estimate
    bound: float
    branch: str

    @property
    def margin(self) -> float:
        return self.value.value - self.bound


def deficit_sample(a: float, v: float, p: float, d: int, method: str = "centered") -> DeficitSample:
    return DeficitSample(p=float(p), d=int(d), a=float(a), shift=float(v),
                         value=deficit(a, v, p, d, method), bound=deficit_lower_bound(a, v, p, d),
                         branch=branch_of(p))


# ---------------------------------------------------------------------------
# Lindeberg telescoping


@dataclass(frozen=True)
class SwapTrace:
    """Partially swapped moments E|S_k|^p, k = 0..n, and their successive differences.

    ``terms[k-1]`` estimates E|S_k|^p - E|S_{k-1}|^p; all estimates share one
    draw set so the terms telescope to ``total`` exactly.
    """

    query: MomentQuery
    moments: tuple
    terms: tuple
    total: Estimate
    step_bounds: tuple
    averaged_bounds: tuple
    refined_applies: bool
    seed: int = 0

    @property
    def telescoping_residual(self) -> float:
        return sum(t.value for t in self.terms) - self.total.value

    def step_margins_sigma(self) -> list[float]:
        """(term - refined bound) / stderr per step."""
        out = []
        for t, b in zip(self.terms, self.step_bounds):
            out.append((t.value - b) / t.err if t.err > 0 else math.inf)
        return out


def _step_bound_refined(a_k: float, p: float, d: int) -> float:
    return 0.5 * constants.kappa(p, d) * a_k**4


def lindeberg_decompose(query: MomentQuery, N: int, seed: int, stream=()) -> SwapTrace:
    """Replace xi_k by Z_k one coordinate at a time, with common random numbers.

    Works with the actual d-dimensional vectors: S_k = S_{k-1} + a_k (R_k - 1) xi_k
    where R_k is the Gaussian radius, so Z_k = R_k xi_k shares its direction
    with xi_k. The averaged pointwise bound E kappa a_k^4 (...) is estimated on
    the same draws from v_k = S_{k-1} - a_k xi_k.
    """
    if not query.all_sphere:
        raise PreconditionError("the swap trace starts from an all-sphere query")
    if not query.a.is_unit(1e-9):
        raise PreconditionError("the swap trace needs a unit coefficient vector")
    if query.shift != 0.0:
        raise PreconditionError("the swap trace is defined without a shift")
    if N < 2:
        raise DomainError("need at least two samples")
    p, d = query.p, query.d
    a = query.a.array
    n = a.size
    rng = make_rng(seed, *stream)
    law = RadialLaw("gaussian", d)
    mom = [_Running() for _ in range(n + 1)]
    diffs = [_Running() for _ in range(n)]
    avg_bounds = [_Running() for _ in range(n)]
    tot = _Running()
    kap = constants.kappa(p, d)
    done = 0
    while done < N:
        m = min(MC_CHUNK, N - done)
        xi = sample_sphere(d, rng, (n, m))
        radii = sample_radial(law, rng, (n, m))
        S = np.einsum("j,jmk->mk", a, xi)
        prev = np.sum(S * S, axis=1) ** (p / 2.0)
        first = prev
        mom[0].update(prev)
        for k in range(n):
            vk = S - a[k] * xi[k]
            vk2 = np.sum(vk * vk, axis=1)
            if p <= constants.BRANCH_POINT:
                pb = kap * a[k] ** 4 * (vk2 + 2 * a[k] ** 2) ** ((p - 4) / 2.0)
            else:
                pb = kap * a[k] ** 4 * vk2 ** ((p - 4) / 2.0)
            avg_bounds[k].update(pb)
            S = S + (a[k] * (radii[k] - 1.0))[:, None] * xi[k]
            cur = np.sum(S * S, axis=1) ** (p / 2.0)
            mom[k + 1].update(cur)
            diffs[k].update(cur - prev)
            prev = cur
        tot.update(prev - first)
        done += m
    est = lambda r: Estimate(r.mean, "mc", r.stderr, N)
    refined = p <= constants.BRANCH_POINT or query.a.linf <= constants.m_cut(p)
    return SwapTrace(
        query=query,
        moments=tuple(est(r) for r in mom),
        terms=tuple(est(r) for r in diffs),
        total=est(tot),
        step_bounds=tuple(_step_bound_refined(x, p, d) if refined else 0.0 for x in a),
        averaged_bounds=tuple(r.mean for r in avg_bounds),
        refined_applies=refined,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Two-coordinate local step


@dataclass(frozen=True)
class LocalStep:
    """Replace (a1, a2) by the more balanced (b1, b2) with the same l2 mass."""

    a1: float
    a2: float
    b1: float
    b2: float
    shift: float = 0.0
    tol: float = field(default=1e-12, repr=False, compare=False)
    strict: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        a1, a2, b1, b2 = self.a1, self.a2, self.b1, self.b2
        tol = self.tol
        # strict=False admits a2 = 0, the limiting case reached by zero coefficients
        positive = a2 > 0 if self.strict else a2 >= 0
        if not (a1 + tol >= b1 and b1 + tol >= b2 and b2 + tol >= a2 and positive):
            raise PreconditionError("need a1 >= b1 >= b2 >= a2 > 0")
        if abs((a1 * a1 + a2 * a2) - (b1 * b1 + b2 * b2)) > tol * max(1.0, a1 * a1 + a2 * a2):
            raise PreconditionError("the two pairs must have equal l2 mass")
        if self.shift < 0:
            raise PreconditionError("shift magnitude must be >= 0")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.a1**2 + self.a2**2)

    @property
    def l4_drop(self) -> float:
        return self.a1**4 + self.a2**4 - self.b1**4 - self.b2**4

    @property
    def product_gain(self) -> float:
        return (self.b1 * self.b2) ** 2 - (self.a1 * self.a2) ** 2

    def identity_residual(self) -> float:
        """b1^2 b2^2 - a1^2 a2^2 - (a1^4 + a2^4 - b1^4 - b2^4)/2, zero by the l2 constraint."""
        return self.product_gain - 0.5 * self.l4_drop


def local_step_gain(step: LocalStep, p: float, d: int, K: int = 64) -> Estimate:
    """E|b1 xi1 + b2 xi2 + v|^p - E|a1 xi1 + a2 xi2 + v|^p on a common theta rule."""
    p = check_exponent(p, 2.0)
    d = check_dimension(d)
    sig, v = step.sigma, step.shift
    ua, ub = step.a1 * step.a2, step.b1 * step.b2
    if ua == ub:
        return exact(0.0)
    cuts = []
    if v > 0:
        for u in (ua, ub):
            cuts.append((v * v - sig * sig) / (2 * u))

    def f(x):
        hb = sphere_average(v, np.sqrt(np.maximum(sig * sig + 2 * ub * x, 0.0)), p, d)
        ha = sphere_average(v, np.sqrt(np.maximum(sig * sig + 2 * ua * x, 0.0)), p, d)
        return hb - ha

    val, err = theta_average(f, d, K, cuts)
    return Estimate(val, "quadrature", err, K)


def local_step_bound(step: LocalStep, p: float, d: int) -> float:
    """(drop/d) beta (|v|^2 + sigma^2)^((p-4)/2) for p <= 4, (drop/d) p(p-2)/8 E|v + sigma xi|^(p-4) above."""
    p = check_exponent(p, 2.0)
    d = check_dimension(d)
    drop = step.l4_drop
    if drop == 0.0 or p == 2.0:
        return 0.0
    sig, v = step.sigma, step.shift
    if p <= constants.BRANCH_POINT:
        return drop / d * constants.beta(p, d) * (v * v + sig * sig) ** ((p - 4) / 2.0)
    return drop / d * p * (p - 2) / 8.0 * sphere_average(v, sig, p - 4, d)


def local_two_coordinate_bound(step: LocalStep, p: float, d: int, K: int = 64):
    """(gain, bound) for one balancing step; the lemma asserts gain >= bound."""
    return local_step_gain(step, p, d, K), local_step_bound(step, p, d)


# ---------------------------------------------------------------------------
# Integration by parts in theta


@dataclass(frozen=True)
class ByPartsCheck:
    lhs: float
    rhs: float
    lhs_err: float
    rhs_err: float

    @property
    def residual(self) -> float:
        return self.lhs - self.rhs


def theta_by_parts_check(u: float, sigma: float, p: float, d: int, f: str = "g_prime",
                         v: float = 1.0, K: int = 64) -> ByPartsCheck:
    """Both sides of E[f(theta) theta] = (1/d) E[f'(theta~)], theta~ from dimension d + 2.

    ``f`` is 'identity', 'cube', or 'g_prime' for f(x) = g_v'(sigma^2 + 2ux).
    """
    d = check_dimension(d)
    cuts = ()
    if f == "identity":
        fn, dfn = (lambda x: x), (lambda x: np.ones_like(x))
    elif f == "cube":
        fn, dfn = (lambda x: x**3), (lambda x: 3 * x**2)
    elif f == "g_prime":
        if not 0 < 2 * u <= sigma * sigma:
            raise DomainError("need 0 < 2u <= sigma^2 so that sigma^2 + 2u theta >= 0")
        t_of = lambda x: sigma * sigma + 2 * u * x
        fn = np.vectorize(lambda x: g_prime_closed(v, t_of(x), p, d) if t_of(x) > 0 else 0.0)
        dfn = np.vectorize(lambda x: 2 * u * g_second_derivative(v, t_of(x), p, d).value)
        if v > 0:
            cuts = ((v * v - sigma * sigma) / (2 * u),)
    else:
        raise DomainError(f"unknown test function {f!r}")
    lhs, le = theta_average(lambda x: fn(x) * x, d, K, cuts)
    rhs, re = theta_average(dfn, d + 2, K, cuts)
    return ByPartsCheck(lhs=lhs, rhs=rhs / d, lhs_err=le, rhs_err=re / d)
