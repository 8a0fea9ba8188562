"""Expectations of powers of norms of weighted sums of sphere/Gaussian vectors.

Every routine returns an :class:`Estimate` carrying its own error bar:
quadrature paths report a node-halving (or adaptive) error estimate, Monte
Carlo paths report the standard error of the mean.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import gammaln, roots_genlaguerre

from . import constants
from .errors import DomainError, ExactCapExceeded, PreconditionError, SingularIntegrandError
from .kernel import (
    check_dimension,
    gaussian_abs_moment,
    jacobi_rule,
    make_rng,
    product_radius_density,
    product_radius_moment,
    sample_theta,
    sphere_average,
    theta_average,
)

METHODS = ("closed-form", "quadrature", "nested-quadrature", "mc")
TAGS = ("sphere", "gaussian")

DEFAULT_EXACT_CAP = 5
MC_CHUNK = 1 << 16
_QUAD_OPTS = dict(epsabs=0.0, epsrel=1e-11, limit=400)


@dataclass(frozen=True)
class Estimate:
    value: float
    method: str
    err: float = 0.0
    count: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown estimate method {self.method!r}")
        if not self.err >= 0.0:
            raise DomainError("estimate error must be nonnegative")
        if self.method == "closed-form" and self.err != 0.0:
            raise DomainError("closed-form estimates carry zero error")

    @property
    def stochastic(self) -> bool:
        return self.method == "mc"

    def scaled(self, factor: float) -> "Estimate":
        return Estimate(self.value * factor, self.method, self.err * abs(factor), self.count)

    def to_dict(self) -> dict:
        return {"value": self.value, "method": self.method, "err": self.err, "count": self.count}

    @classmethod
    def from_dict(cls, data: dict) -> "Estimate":
        return cls(float(data["value"]), data["method"], float(data["err"]), int(data["count"]))


def exact(value: float) -> Estimate:
    return Estimate(float(value), "closed-form", 0.0, 0)


def _merge_method(*ests: Estimate) -> str:
    methods = {e.method for e in ests}
    for m in ("mc", "nested-quadrature", "quadrature"):
        if m in methods:
            return m
    return "closed-form"


def combine(value: float, *ests: Estimate, err: float | None = None) -> Estimate:
    """Estimate for a quantity derived from independent ``ests`` (errors in quadrature)."""
    method = _merge_method(*ests)
    if err is None:
        err = math.sqrt(sum(e.err**2 for e in ests))
    if method == "closed-form":
        err = 0.0
    return Estimate(float(value), method, float(err), max((e.count for e in ests), default=0))


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class CoeffVector:
    """Coefficients a_1..a_n; use :meth:`normalized` for unit l2 norm."""

    a: tuple

    def __post_init__(self):
        vals = tuple(float(x) for x in self.a)
        if len(vals) < 1:
            raise DomainError("coefficient vector must be nonempty")
        if not all(np.isfinite(vals)):
            raise DomainError("coefficients must be finite")
        object.__setattr__(self, "a", vals)

    @classmethod
    def normalized(cls, values: Iterable[float]) -> "CoeffVector":
        arr = np.asarray(list(values), dtype=float)
        norm = np.linalg.norm(arr)
        if norm == 0.0:
            raise DomainError("cannot normalize the zero vector")
        return cls(tuple(arr / norm))

    @classmethod
    def diagonal(cls, n: int) -> "CoeffVector":
        return cls((1.0 / math.sqrt(n),) * n)

    @property
    def n(self) -> int:
        return len(self.a)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.a)

    @property
    def l2_sq(self) -> float:
        return float(np.sum(self.array**2))

    @property
    def l4_4(self) -> float:
        return float(np.sum(self.array**4))

    @property
    def linf(self) -> float:
        return float(np.max(np.abs(self.array)))

    @property
    def delta(self) -> float:
        """Diagonal deficit sum_j (1/n - a_j^2)^2."""
        return float(np.sum((1.0 / self.n - self.array**2) ** 2))

    def is_unit(self, tol: float = 1e-12) -> bool:
        return abs(self.l2_sq - 1.0) <= tol


@dataclass(frozen=True)
class MomentQuery:
    """E|v + sum_j a_j X_j|^p with X_j uniform on the sphere or Gaussian per ``mix``."""

    d: int
    p: float
    a: CoeffVector
    shift: float = 0.0
    mix: tuple = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "d", check_dimension(self.d))
        if not isinstance(self.a, CoeffVector):
            object.__setattr__(self, "a", CoeffVector(tuple(self.a)))
        if not self.shift >= 0.0:
            raise DomainError("shift magnitude must be >= 0")
        mix = self.mix if self.mix is not None else ("sphere",) * self.a.n
        mix = tuple(mix)
        if len(mix) != self.a.n or any(t not in TAGS for t in mix):
            raise DomainError("mix needs one 'sphere'/'gaussian' tag per coefficient")
        object.__setattr__(self, "mix", mix)
        object.__setattr__(self, "p", float(self.p))

    @property
    def all_sphere(self) -> bool:
        return all(t == "sphere" for t in self.mix)


# ---------------------------------------------------------------------------
# Single shifted sphere moment


def shifted_single_moment(v: float, a: float, t: float, q: float, d: int,
                          method: str = "closed", K: int = 64) -> Estimate:
    """E|v + a sqrt(t) xi|^q, i.e. E_theta (|v|^2 + a^2 t + 2 a sqrt(t) |v| theta)^(q/2)."""
    d = check_dimension(d)
    if t < 0 or v < 0:
        raise DomainError("need |v| >= 0 and t >= 0")
    s = abs(a) * math.sqrt(t)
    if q < 0:
        if v == 0.0 and s == 0.0:
            raise SingularIntegrandError("negative exponent at the origin")
        if q <= -(d - 1) and v == s:
            raise SingularIntegrandError("E|v + s xi|^q diverges for q <= -(d-1) when |v| = s")
    if method == "closed":
        return exact(sphere_average(v, s, q, d))
    if method == "jacobi":
        A, B = v * v + s * s, 2.0 * v * s
        val, err = theta_average(lambda x: np.maximum(A + B * x, 0.0) ** (q / 2.0), d, K)
        return Estimate(val, "quadrature", err, K)
    raise DomainError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# Sums of sphere vectors: nested quadrature


def _is_even_integer(p: float) -> bool:
    return p == int(p) and int(p) % 2 == 0


def _exact_coeffs(query: MomentQuery) -> np.ndarray:
    # |v + S| has the law of ||v| xi_0 + S|: the shift is one more coefficient
    c = np.abs(query.a.array)
    if query.shift > 0:
        c = np.append(c, query.shift)
    c = np.sort(c[c > 0])[::-1]
    return c


_DEFAULT_NODES = {1: 64, 2: 64, 3: 40}


def _nested_value(c: np.ndarray, p: float, d: int, K: int) -> float:
    rule = jacobi_rule(d, K)
    r2 = np.array([c[0] ** 2])
    w = np.array([1.0])
    for ak in c[1:-1]:
        r = np.sqrt(r2)
        r2 = (r2[:, None] + ak * ak + 2.0 * ak * r[:, None] * rule.nodes[None, :]).ravel()
        np.maximum(r2, 0.0, out=r2)
        w = (w[:, None] * rule.weights[None, :]).ravel()
    return float(np.dot(w, sphere_average(np.sqrt(r2), c[-1], p, d)))


def sum_moment_exact(query: MomentQuery, K: int | None = None,
                     cap: int = DEFAULT_EXACT_CAP) -> Estimate:
    """Deterministic E|v + sum a_j xi_j|^p.

    The squared radius of the partial sums follows
    rho_k^2 = rho_{k-1}^2 + a_k^2 + 2 a_k rho_{k-1} theta_k; coefficients are
    taken in decreasing order, the intermediate theta_k are integrated on a
    tensor Gauss-Jacobi grid and the last one in closed form.

    For even integer p every level is a polynomial of degree <= p/2 and a
    rule with ceil((p/2 + 1)/2) nodes is exact, so the cap does not apply.
    """
    if not query.all_sphere:
        raise PreconditionError("exact evaluation needs all-sphere summands")
    p, d = query.p, query.d
    c = _exact_coeffs(query)
    m = len(c)
    if m == 0:
        if p < 0:
            raise SingularIntegrandError("negative exponent of the zero vector")
        return exact(1.0 if p == 0 else 0.0)
    if m == 1:
        return exact(c[0] ** p)
    if m == 2:
        return exact(shifted_single_moment(c[0], c[1], 1.0, p, d).value)
    levels = m - 2
    if _is_even_integer(p) and p >= 0:
        k_exact = max(1, math.ceil((p / 2 + 1) / 2))
        if k_exact**levels > 4_000_000:
            raise ExactCapExceeded(f"{k_exact}^{levels} grid points is too many")
        return Estimate(_nested_value(c, p, d, k_exact), "nested-quadrature", 0.0, k_exact)
    if m > cap:
        raise ExactCapExceeded(f"{m} summands exceed the exact-mode cap {cap}; use Monte Carlo")
    if K is None:
        K = _DEFAULT_NODES.get(levels, 32)
    if K < 2:
        raise DomainError("need at least 2 nodes per level")
    fine = _nested_value(c, p, d, K)
    coarse = _nested_value(c, p, d, K // 2)
    return Estimate(fine, "nested-quadrature", abs(fine - coarse), K)


def exact_available(query: MomentQuery, cap: int = DEFAULT_EXACT_CAP) -> bool:
    if not query.all_sphere:
        return False
    m = len(_exact_coeffs(query))
    if m <= max(2, cap):
        return True
    if _is_even_integer(query.p):
        k = max(1, math.ceil((query.p / 2 + 1) / 2))
        return k ** (m - 2) <= 4_000_000
    return False


# ---------------------------------------------------------------------------
# Monte Carlo


class _Running:
    """Streaming mean and sum of squared deviations (Chan et al. merge)."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, x: np.ndarray):
        nb = x.size
        if nb == 0:
            return
        mb = float(np.mean(x))
        m2b = float(np.sum((x - mb) ** 2))
        n = self.n + nb
        delta = mb - self.mean
        self.mean += delta * nb / n
        self.m2 += m2b + delta * delta * self.n * nb / n
        self.n = n

    @property
    def stderr(self) -> float:
        if self.n < 2:
            return float("inf")
        return math.sqrt(self.m2 / (self.n - 1) / self.n)


def _mc_norm_powers(coeff_sets: Sequence[np.ndarray], tags: Sequence[str], shift: float,
                    p: float, d: int, N: int, rng: np.random.Generator):
    """Yield, chunk by chunk, |S|^p for each coefficient set sharing the same draws.

    Radius recursion: rho^2 <- rho^2 + L^2 + 2 L rho theta, with L = a for a
    sphere summand and L = a |Z| for a Gaussian one.
    """
    n = len(tags)
    done = 0
    while done < N:
        m = min(MC_CHUNK, N - done)
        thetas = [sample_theta(d, rng, m) for _ in range(n)]
        radii = [np.sqrt(2.0 * rng.standard_gamma(d / 2.0, m) / d) if t == "gaussian" else None
                 for t in tags]
        out = []
        for c in coeff_sets:
            r2 = np.full(m, shift * shift)
            for k in range(n):
                L = c[k] if radii[k] is None else c[k] * radii[k]
                r2 = r2 + L * L + 2.0 * L * np.sqrt(r2) * thetas[k]
                np.maximum(r2, 0.0, out=r2)
            out.append(r2 ** (p / 2.0))
        yield out
        done += m


def _mc_order(query: MomentQuery):
    # largest coefficients first keeps the recursion aligned across paired queries
    order = np.argsort(-np.abs(query.a.array), kind="stable")
    return order


def sum_moment_mc(query: MomentQuery, N: int, seed: int, stream: Sequence[int] = ()) -> Estimate:
    """Sample mean of |v + sum a_j X_j|^p; identical (seed, stream, N) give identical output."""
    if N < 2:
        raise DomainError("need at least two samples")
    rng = make_rng(seed, *stream)
    order = _mc_order(query)
    c = np.abs(query.a.array)[order]
    tags = [query.mix[i] for i in order]
    acc = _Running()
    for (vals,) in _mc_norm_powers([c], tags, query.shift, query.p, query.d, N, rng):
        acc.update(vals)
    return Estimate(acc.mean, "mc", acc.stderr, N)


def paired_sum_moment_mc(qa: MomentQuery, qb: MomentQuery, N: int, seed: int,
                         stream: Sequence[int] = ()):
    """Common-random-number estimates of E|S_a|^p, E|S_b|^p and their difference (b - a)."""
    if qa.a.n != qb.a.n or qa.mix != qb.mix or qa.p != qb.p or qa.d != qb.d:
        raise PreconditionError("paired queries must share n, mix, p and d")
    if qa.shift != qb.shift:
        raise PreconditionError("paired queries must share the shift")
    if not (qa.all_sphere and qb.all_sphere):
        raise PreconditionError("paired estimation supports all-sphere queries")
    rng = make_rng(seed, *stream)
    ca = np.sort(np.abs(qa.a.array))[::-1]
    cb = np.sort(np.abs(qb.a.array))[::-1]
    tags = ["sphere"] * qa.a.n
    acc_a, acc_b, acc_d = _Running(), _Running(), _Running()
    for va, vb in _mc_norm_powers([ca, cb], tags, qa.shift, qa.p, qa.d, N, rng):
        acc_a.update(va)
        acc_b.update(vb)
        acc_d.update(vb - va)
    return (Estimate(acc_a.mean, "mc", acc_a.stderr, N),
            Estimate(acc_b.mean, "mc", acc_b.stderr, N),
            Estimate(acc_d.mean, "mc", acc_d.stderr, N))


def sum_moment(query: MomentQuery, method: str = "auto", N: int = 1_000_000, seed: int = 0,
               stream: Sequence[int] = (), K: int | None = None,
               cap: int = DEFAULT_EXACT_CAP) -> Estimate:
    """Dispatch to the exact path when available, Monte Carlo otherwise."""
    if method == "exact" or (method == "auto" and exact_available(query, cap)):
        return sum_moment_exact(query, K=K, cap=cap)
    if method in ("mc", "auto"):
        return sum_moment_mc(query, N, seed, stream)
    raise DomainError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# Gaussian-shifted moment


def quad_pieces(f, edges) -> tuple[float, float]:
    """Adaptive quadrature over consecutive intervals of ``edges`` (last may be inf).

    Roundoff warnings are expected at tight tolerances; the returned error is
    the sum of the per-piece estimates.
    """
    total, err = 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for lo, hi in zip(edges[:-1], edges[1:]):
            if hi <= lo:
                continue
            val, e = integrate.quad(f, lo, hi, **_QUAD_OPTS)
            total += val
            err += e
    return total, err


def _chi2_density(T, d: int):
    # density of |Z|^2 = chi2(d)/d
    h = d / 2.0
    with np.errstate(divide="ignore"):
        logf = h * np.log(h) + (h - 1) * np.log(T) - h * T - gammaln(h)
    return np.exp(logf)


def gaussian_mixture_integral(func, d: int, kink: float | None = None) -> tuple[float, float]:
    """E[func(|Z|^2)] by adaptive quadrature, split at ``kink`` where func is not smooth."""
    f = lambda T: func(T) * _chi2_density(T, d)
    edges = {0.0, 1.0, np.inf}
    if kink is not None and kink > 0:
        edges.add(kink)
    return quad_pieces(f, sorted(edges))


def shifted_gaussian_moment(v: float, a: float, p: float, d: int, method: str = "adaptive",
                            K: int = 96) -> Estimate:
    """E|a Z + v|^p as a mixture over r = |Z| of E|v + a r xi|^p."""
    d = check_dimension(d)
    if p < 0:
        raise DomainError("exponent must be >= 0")
    a = abs(a)
    if a == 0.0:
        return exact(v**p)
    if v == 0.0:
        return exact(a**p * gaussian_abs_moment(p, d))
    g = lambda T: sphere_average(v, a * np.sqrt(T), p, d)
    if method == "adaptive":
        val, err = gaussian_mixture_integral(g, d, kink=(v / a) ** 2)
        return Estimate(val, "quadrature", err, 0)
    if method == "laguerre":
        def rule(k):
            x, w = roots_genlaguerre(k, d / 2.0 - 1.0)
            w = w / math.exp(gammaln(d / 2.0))
            return float(np.dot(w, g(2.0 * x / d)))
        fine, coarse = rule(K), rule(K // 2)
        return Estimate(fine, "quadrature", abs(fine - coarse), K)
    raise DomainError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# Ball averages and derivatives of g_v(t) = E|v + sqrt(t) xi|^q


def _radial_integral(density, inner, kink: float | None) -> tuple[float, float]:
    f = lambda r: density(r) * inner(r)
    # a kink within 1e-12 of an endpoint only costs quad a sliver interval
    if kink is not None and 1e-12 < kink < 1.0 - 1e-12:
        return quad_pieces(f, [0.0, kink, 1.0])
    return quad_pieces(f, [0.0, 1.0])


def ball_average(v: float, s: float, q: float, d: int) -> Estimate:
    """Average of |v + s x|^q over x uniform in the unit ball of R^d."""
    d = check_dimension(d)
    if v < 0 or s < 0:
        raise DomainError("need |v| >= 0 and s >= 0")
    if s == 0.0:
        if v == 0.0 and q < 0:
            raise SingularIntegrandError("negative exponent at the origin")
        return exact(1.0 if q == 0 else v**q)
    if v <= s and q <= -d:
        raise SingularIntegrandError("ball average diverges for q <= -d")
    if v == 0.0:
        return exact(s**q * d / (d + q))
    val, err = _radial_integral(lambda r: d * r ** (d - 1),
                                lambda r: sphere_average(v, s * r, q, d), v / s)
    return Estimate(val, "quadrature", err, 0)


def g_prime(v: float, t: float, q: float, d: int) -> Estimate:
    """d/dt E|v + sqrt(t) xi|^q through the ball integral of the Laplacian.

    Against the uniform probability on the ball the derivative equals
    q (q + d - 2) / (2d) times the ball average of |v + sqrt(t) x|^(q-2).
    """
    if t <= 0:
        raise DomainError("t must be > 0")
    d = check_dimension(d)
    pref = q * (q + d - 2) / (2.0 * d)
    if pref == 0.0:
        return exact(0.0)
    return ball_average(v, math.sqrt(t), q - 2, d).scaled(pref)


def g_prime_closed(v: float, t: float, q: float, d: int) -> float:
    """Same derivative in closed form, via the theta integration-by-parts identity.

    g'(t) = (q/2) [ E_d|v + sqrt(t) xi|^(q-2) + ((q-2)|v|^2/d) E_{d+2}|v + sqrt(t) xi|^(q-4) ].
    """
    if q == 0:
        return 0.0
    s = math.sqrt(t)
    first = sphere_average(v, s, q - 2, d)
    second = 0.0 if (v == 0.0 or q == 2) else (q - 2) * v * v / d * sphere_average(v, s, q - 4, d + 2)
    return 0.5 * q * (first + second)


def g_second_derivative(v: float, eta: float, p: float, d: int) -> Estimate:
    """g_v''(eta) = beta_{p,d} E|v + R1 R2 sqrt(eta) xi|^(p-4).

    R1 R2 has density d(d+2)/2 r^(d-1) (1 - r^2) on (0, 1), so the two radial
    levels collapse to one.
    """
    d = check_dimension(d)
    if eta <= 0:
        raise DomainError("eta must be > 0")
    if p < 2:
        raise DomainError("p must be >= 2")
    b = constants.beta(p, d)
    if b == 0.0:
        return exact(0.0)
    q = p - 4.0
    if q <= -d:
        raise SingularIntegrandError("E|v + R1 R2 sqrt(eta) xi|^(p-4) diverges for p <= 4 - d")
    s = math.sqrt(eta)
    if v == 0.0:
        return exact(b * s**q * product_radius_moment(q, d))
    val, err = _radial_integral(lambda r: product_radius_density(r, d),
                                lambda r: sphere_average(v, s * r, q, d), v / s)
    return Estimate(b * val, "quadrature", b * err, 0)
