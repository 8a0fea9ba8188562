"""Verification records, sweeps, balancing walks and tightness probes."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from . import constants
from .deficit import LocalStep, deficit, deficit_lower_bound, local_step_bound, local_step_gain
from .errors import DomainError, PreconditionError
from .kernel import check_dimension, check_exponent, gaussian_abs_moment, gaussian_moment_excess, make_rng
from .moments import (
    CoeffVector,
    Estimate,
    MomentQuery,
    _mc_norm_powers,
    _Running,
    combine,
    exact,
    exact_available,
    paired_sum_moment_mc,
    sum_moment,
)

INEQUALITY_IDS = (
    "thm-main",
    "thm-diag",
    "lpl2-homogeneous",
    "lemma2-bound",
    "lemma4-bound",
    "remark-scaling",
    "schur-ttransform",
    "khinchin-lower",
)
VERDICTS = ("pass", "fail", "inconclusive")

PASS_SIGMA = -4.0
FAIL_SIGMA = -6.0
ABS_TOL = 1e-8
REL_TOL = 1e-6


@dataclass(frozen=True)
class Budget:
    """Numerical settings shared by every check."""

    samples: int = 1_000_000
    nodes: int | None = None
    cap: int = 5
    seed: int = 0
    stream: tuple = ()
    max_retries: int = 2

    def moment(self, query: MomentQuery, substream: int = 0) -> Estimate:
        return sum_moment(query, "auto", N=self.samples, seed=self.seed,
                          stream=self.stream + (substream,), K=self.nodes, cap=self.cap)

    def exact_ok(self, query: MomentQuery) -> bool:
        return exact_available(query, self.cap)


@dataclass(frozen=True)
class VerificationRecord:
    """One checked instance of lhs <= rhs."""

    inequality_id: str
    params: dict
    lhs: Estimate
    rhs: Estimate
    margin: float
    sigma_margin: float
    verdict: str
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.inequality_id not in INEQUALITY_IDS:
            raise DomainError(f"unknown inequality id {self.inequality_id!r}")
        if self.verdict not in VERDICTS:
            raise DomainError(f"unknown verdict {self.verdict!r}")

    @property
    def stochastic(self) -> bool:
        return self.lhs.stochastic or self.rhs.stochastic

    def to_dict(self) -> dict:
        return {
            "inequality_id": self.inequality_id,
            "params": self.params,
            "lhs": self.lhs.to_dict(),
            "rhs": self.rhs.to_dict(),
            "margin": self.margin,
            "sigma_margin": None if math.isinf(self.sigma_margin) else self.sigma_margin,
            "verdict": self.verdict,
            "extras": self.extras,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "VerificationRecord":
        sm = data["sigma_margin"]
        return cls(
            inequality_id=data["inequality_id"],
            params=data["params"],
            lhs=Estimate.from_dict(data["lhs"]),
            rhs=Estimate.from_dict(data["rhs"]),
            margin=float(data["margin"]),
            sigma_margin=math.inf if sm is None else float(sm),
            verdict=data["verdict"],
            extras=data.get("extras", {}),
        )


def deterministic_tolerance(lhs: Estimate, rhs: Estimate) -> float:
    """Absolute 1e-8 or relative 1e-6 (whichever is looser), widened by quadrature error bars."""
    scale = max(abs(lhs.value), abs(rhs.value))
    return max(ABS_TOL, REL_TOL * scale) + lhs.err + rhs.err


def judge(iid: str, params: dict, lhs: Estimate, rhs: Estimate, err: float | None = None,
          extras: dict | None = None) -> VerificationRecord:
    """Build a record with the verdict policy.

    Deterministic: pass iff margin >= -tolerance. Stochastic: sigma-margin
    >= -4 passes, <= -6 fails, in between is inconclusive. ``err`` overrides
    the combined standard error (used for paired estimators).
    """
    margin = rhs.value - lhs.value
    stochastic = lhs.stochastic or rhs.stochastic
    if not stochastic:
        tol = deterministic_tolerance(lhs, rhs)
        verdict = "pass" if margin >= -tol else "fail"
        sigma = math.inf
    else:
        if err is None:
            err = math.hypot(lhs.err, rhs.err)
        sigma = margin / err if err > 0 else (math.inf if margin >= 0 else -math.inf)
        if sigma >= PASS_SIGMA:
            verdict = "pass"
        elif sigma <= FAIL_SIGMA:
            verdict = "fail"
        else:
            verdict = "inconclusive"
    return VerificationRecord(iid, params, lhs, rhs, float(margin), float(sigma), verdict, dict(extras or {}))


def with_retries(check: Callable[[Budget], VerificationRecord], budget: Budget) -> VerificationRecord:
    """Rerun inconclusive stochastic checks with 4x the samples on fresh streams."""
    rec = check(budget)
    attempt = 0
    while rec.verdict == "inconclusive" and attempt < budget.max_retries:
        attempt += 1
        budget = replace(budget, samples=budget.samples * 4, stream=budget.stream + (1000 + attempt,))
        rec = check(budget)
    if attempt:
        rec = replace(rec, extras={**rec.extras, "retries": attempt})
    return rec


def _vec_params(p, d, a: CoeffVector, **more) -> dict:
    out = {"p": float(p), "d": int(d), "n": a.n, "a": list(a.a)}
    out.update(more)
    return out


def _require_unit(a: CoeffVector):
    if not a.is_unit(1e-9):
        raise PreconditionError("coefficients must have unit l2 norm")


# ---------------------------------------------------------------------------
# Theorem-level checks


def verify_theorem_main(p: float, d: int, a: CoeffVector, budget: Budget = Budget()) -> VerificationRecord:
    """E|sum a_j xi_j|^p + c_main ||a||_4^4 <= E|Z|^p."""
    p, d = check_exponent(p), check_dimension(d)
    _require_unit(a)
    c = constants.c_main(p, d)

    def run(b: Budget):
        m = b.moment(MomentQuery(d, p, a))
        lhs = Estimate(m.value + c * a.l4_4, m.method, m.err, m.count)
        rhs = exact(gaussian_abs_moment(p, d))
        return judge("thm-main", _vec_params(p, d, a), lhs, rhs,
                     extras={"c": c, "l4_4": a.l4_4, "moment": m.value})

    return with_retries(run, budget)


def verify_theorem_diag(p: float, d: int, a: CoeffVector, budget: Budget = Budget()) -> VerificationRecord:
    """E|sum a_j xi_j|^p + c_diag delta(a) <= E|sum xi_j / sqrt(n)|^p."""
    p, d = check_exponent(p), check_dimension(d)
    _require_unit(a)
    if a.n < 2:
        raise PreconditionError("the diagonal comparison needs n >= 2")
    c = constants.c_diag(p, d)
    delta = a.delta
    qa, qd = MomentQuery(d, p, a), MomentQuery(d, p, CoeffVector.diagonal(a.n))

    def run(b: Budget):
        extras = {"c": c, "delta": delta}
        if b.exact_ok(qa) and b.exact_ok(qd):
            ma, md = b.moment(qa, 0), b.moment(qd, 1)
            lhs = Estimate(ma.value + c * delta, ma.method, ma.err, ma.count)
            return judge("thm-diag", _vec_params(p, d, a), lhs, md, extras=extras)
        ma, md, diff = paired_sum_moment_mc(qa, qd, b.samples, b.seed, b.stream)
        lhs = Estimate(ma.value + c * delta, "mc", ma.err, ma.count)
        extras["paired_err"] = diff.err
        return judge("thm-diag", _vec_params(p, d, a), lhs, md, err=diff.err, extras=extras)

    return with_retries(run, budget)


def verify_homogeneous_lpl2(p: float, d: int, a: Sequence[float], budget: Budget = Budget()) -> VerificationRecord:
    """E|sum a_j xi_j|^p <= E|Z|^p (sum a_j^2)^(p/2) for unnormalized a."""
    p, d = check_exponent(p), check_dimension(d)
    a = a if isinstance(a, CoeffVector) else CoeffVector(tuple(a))

    def run(b: Budget):
        lhs = b.moment(MomentQuery(d, p, a))
        rhs = exact(gaussian_abs_moment(p, d) * a.l2_sq ** (p / 2.0))
        return judge("lpl2-homogeneous", _vec_params(p, d, a), lhs, rhs)

    return with_retries(run, budget)


def t_transform(x: Sequence[float], i: int, j: int, lam: float) -> np.ndarray:
    """y = lam x + (1 - lam) x with coordinates i and j swapped."""
    if not 0.0 <= lam <= 1.0:
        raise DomainError("lam must lie in [0, 1]")
    x = np.asarray(x, dtype=float)
    y = x.copy()
    y[i] = lam * x[i] + (1 - lam) * x[j]
    y[j] = lam * x[j] + (1 - lam) * x[i]
    return y


def is_t_transform(x, y, tol: float = 1e-12) -> bool:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.shape != y.shape:
        return False
    diff = np.flatnonzero(np.abs(x - y) > tol)
    if diff.size == 0:
        return True
    if diff.size != 2:
        return False
    i, j = diff
    lo, hi = min(x[i], x[j]), max(x[i], x[j])
    return (abs(x[i] + x[j] - y[i] - y[j]) <= tol * max(1.0, hi)
            and lo - tol <= y[i] <= hi + tol and lo - tol <= y[j] <= hi + tol)


def schur_ttransform_check(p: float, d: int, x: Sequence[float], y: Sequence[float],
                           budget: Budget = Budget()) -> VerificationRecord:
    """E|sum sqrt(x_j) xi_j|^p <= E|sum sqrt(y_j) xi_j|^p when y is a T-transform of x."""
    p, d = check_exponent(p), check_dimension(d)
    x, y = np.asarray(x, float), np.asarray(y, float)
    if np.any(x < 0) or np.any(y < 0):
        raise DomainError("weights must be nonnegative")
    if not is_t_transform(x, y):
        raise PreconditionError("y is not a T-transform of x")
    ax, ay = CoeffVector(tuple(np.sqrt(x))), CoeffVector(tuple(np.sqrt(y)))
    qx, qy = MomentQuery(d, p, ax), MomentQuery(d, p, ay)
    params = {"p": p, "d": d, "n": len(x), "x": list(map(float, x)), "y": list(map(float, y))}

    def run(b: Budget):
        if b.exact_ok(qx) and b.exact_ok(qy):
            return judge("schur-ttransform", params, b.moment(qx, 0), b.moment(qy, 1))
        mx, my, diff = paired_sum_moment_mc(qx, qy, b.samples, b.seed, b.stream)
        return judge("schur-ttransform", params, mx, my, err=diff.err, extras={"paired_err": diff.err})

    return with_retries(run, budget)


def verify_lemma2(a: float, v: float, p: float, d: int) -> VerificationRecord:
    """D_p(a, v) >= its pointwise lower bound."""
    bound = exact(deficit_lower_bound(a, v, p, d))
    val = deficit(a, v, p, d)
    return judge("lemma2-bound", {"p": float(p), "d": int(d), "a": float(a), "shift": float(v)}, bound, val)


def verify_lemma4(step: LocalStep, p: float, d: int, K: int = 64) -> VerificationRecord:
    """Balancing gain of one two-coordinate step >= its l4-drop bound."""
    gain = local_step_gain(step, p, d, K)
    bound = exact(local_step_bound(step, p, d))
    params = {"p": float(p), "d": int(d), "a1": step.a1, "a2": step.a2, "b1": step.b1, "b2": step.b2,
              "shift": step.shift}
    return judge("lemma4-bound", params, bound, gain,
                 extras={"identity_residual": step.identity_residual()})


def verify_khinchin(q: float, d: int) -> VerificationRecord:
    val = constants.khinchin_best_constant(q, d)
    return judge("khinchin-lower", {"q": float(q), "d": int(d)}, exact(constants.C_KH), exact(val))


def verify_remark_scaling(p: float, d_list: Sequence[int]) -> list[VerificationRecord]:
    """c_main(p, d) <= E|Z|^p - 1, recording d (E|Z|^p - 1) to exhibit the 1/d scale."""
    p = check_exponent(p)
    out = []
    for d in d_list:
        d = check_dimension(d)
        excess = gaussian_moment_excess(p, d)
        c = constants.c_main(p, d)
        out.append(judge("remark-scaling", {"p": p, "d": d}, exact(c), exact(excess),
                         extras={"d_times_excess": d * excess, "d_times_c": d * c}))
    return out


# ---------------------------------------------------------------------------
# Majorization and balancing walks


@dataclass(frozen=True)
class MajorizeResult:
    vector: CoeffVector
    padded: CoeffVector
    schur_record: VerificationRecord
    bound_record: VerificationRecord
    constant_bound: float


def majorize_step(a: CoeffVector, p: float, d: int, budget: Budget = Budget()) -> MajorizeResult:
    """Compare a (with a large coordinate) with the flattest vector (m_p, t, ..., t).

    (a_1^2, ..., a_n^2) majorizes (m_p^2, (1 - m_p^2)/(N - 1), ...) where
    N = n, or the smallest admissible N >= 1/m_p^2 after zero padding. The
    records check E|S_a|^p <= E|S_b|^p and E|S_b|^p + kappa m_p^4 / 2 <= E|Z|^p.
    """
    p, d = check_exponent(p), check_dimension(d)
    _require_unit(a)
    if p <= constants.BRANCH_POINT:
        raise PreconditionError("for 2 <= p <= 4 the large-coordinate case is empty")
    m = constants.m_cut(p)
    if not a.linf > m:
        raise PreconditionError("need ||a||_inf > m_p (strict)")
    n = a.n
    N = n if n * m * m >= 1 else max(2, math.ceil(1.0 / (m * m)))
    rest = math.sqrt((1.0 - m * m) / (N - 1))
    b = CoeffVector((m,) + (rest,) * (N - 1))
    padded = CoeffVector(tuple(sorted(np.abs(a.a), reverse=True)) + (0.0,) * (N - n))
    kap = constants.kappa(p, d)
    bound = 0.5 * kap * m**4
    qa, qb = MomentQuery(d, p, padded), MomentQuery(d, p, b)
    params = _vec_params(p, d, a, comparison=list(b.a))

    def schur(bud: Budget):
        if bud.exact_ok(qa) and bud.exact_ok(qb):
            return judge("schur-ttransform", params, bud.moment(qa, 0), bud.moment(qb, 1),
                         extras={"kind": "majorization"})
        ma, mb, diff = paired_sum_moment_mc(qa, qb, bud.samples, bud.seed, bud.stream)
        return judge("schur-ttransform", params, ma, mb, err=diff.err,
                     extras={"kind": "majorization", "paired_err": diff.err})

    def case_one(bud: Budget):
        mb = bud.moment(qb, 2)
        lhs = Estimate(mb.value + bound, mb.method, mb.err, mb.count)
        return judge("thm-main", _vec_params(p, d, b), lhs, exact(gaussian_abs_moment(p, d)),
                     extras={"kind": "constant-deficit", "bound": bound,
                             "c_main_term": constants.c_main(p, d) * a.l4_4})

    return MajorizeResult(b, padded, with_retries(schur, budget), with_retries(case_one, budget), bound)


def _sorted_desc(values) -> list[float]:
    return sorted((float(abs(x)) for x in values), reverse=True)


def balancing_steps(a: CoeffVector, tol: float = 1e-12) -> tuple[list[LocalStep], list[CoeffVector]]:
    """Replace (largest, smallest) by (sqrt(a_max^2 + a_min^2 - 1/n), 1/sqrt(n)) until diagonal.

    Returns the LocalSteps and the chain of sorted vectors, starting with a.
    Each step pins one more coordinate to 1/sqrt(n), so there are at most n - 1.
    """
    _require_unit(a)
    n = a.n
    target = 1.0 / math.sqrt(n)
    vals = _sorted_desc(a.a)
    pinned = [abs(x - target) <= tol for x in vals]
    chain = [CoeffVector(tuple(vals))]
    steps = []
    while True:
        free = [i for i in range(n) if not pinned[i]]
        if len(free) <= 1:
            break
        hi = max(free, key=lambda i: vals[i])
        lo = min(free, key=lambda i: vals[i])
        a1, an = vals[hi], vals[lo]
        new1 = math.sqrt(max(a1 * a1 + an * an - 1.0 / n, 0.0))
        b1, b2 = max(new1, target), min(new1, target)
        steps.append(LocalStep(a1, an, b1, b2, strict=False))
        vals[hi], vals[lo] = new1, target
        pinned[lo] = True
        if abs(new1 - target) <= tol:
            pinned[hi] = True
        order = sorted(range(n), key=lambda i: -vals[i])
        vals = [vals[i] for i in order]
        pinned = [pinned[i] for i in order]
        chain.append(CoeffVector(tuple(vals)))
    return steps, chain


@dataclass(frozen=True)
class WalkResult:
    steps: tuple
    chain: tuple
    step_records: tuple
    record: VerificationRecord
    l4_residual: float


def _chain_moments(chain: Sequence[CoeffVector], p: float, d: int, budget: Budget):
    """Moments of every vector in the chain (exact, or MC on one shared draw set) and step gains."""
    queries = [MomentQuery(d, p, c) for c in chain]
    if all(budget.exact_ok(q) for q in queries):
        ms = [budget.moment(q, i) for i, q in enumerate(queries)]
        gains = [combine(b.value - a.value, a, b, err=a.err + b.err) for a, b in zip(ms, ms[1:])]
        return ms, gains
    rng = make_rng(budget.seed, *budget.stream)
    coeffs = [np.asarray(_sorted_desc(c.a)) for c in chain]
    accs = [_Running() for _ in chain]
    diffs = [_Running() for _ in chain[1:]]
    for vals in _mc_norm_powers(coeffs, ["sphere"] * chain[0].n, 0.0, p, d, budget.samples, rng):
        for acc, v in zip(accs, vals):
            acc.update(v)
        for k, acc in enumerate(diffs):
            acc.update(vals[k + 1] - vals[k])
    N = budget.samples
    ms = [Estimate(r.mean, "mc", r.stderr, N) for r in accs]
    gains = [Estimate(r.mean, "mc", r.stderr, N) for r in diffs]
    return ms, gains


def diagonalization_walk(a: CoeffVector, p: float, d: int, budget: Budget = Budget()) -> WalkResult:
    """Balancing walk to the diagonal vector with per-step and total records.

    Step k is checked against c_diag times its l4 drop (the per-step bound
    averaged over the remaining coordinates); the total against c_diag delta(a).
    """
    p, d = check_exponent(p), check_dimension(d)
    _require_unit(a)
    if a.n < 2:
        raise PreconditionError("the walk needs n >= 2")
    steps, chain = balancing_steps(a)
    c = constants.c_diag(p, d)
    drops = [s.l4_drop for s in steps]
    l4_residual = sum(drops) - (a.l4_4 - 1.0 / a.n)
    if not steps:
        rec = judge("thm-diag", _vec_params(p, d, a), exact(0.0), exact(0.0), extras={"kind": "walk", "steps": 0})
        return WalkResult((), tuple(chain), (), rec, l4_residual)

    def run(b: Budget):
        ms, gains = _chain_moments(chain, p, d, b)
        recs = tuple(judge("thm-diag", _vec_params(p, d, chain[k], step=k), exact(c * drops[k]), g,
                           err=g.err if g.stochastic else None, extras={"kind": "walk-step"})
                     for k, g in enumerate(gains))
        total_gain = Estimate(ms[-1].value - ms[0].value, gains[0].method,
                              ms[-1].err + ms[0].err if not gains[0].stochastic else 0.0, ms[0].count)
        if total_gain.stochastic:
            # the telescoped gains share draws; the total's error is that of the paired difference
            tot_err = math.sqrt(sum(g.err**2 for g in gains))
            total_gain = replace(total_gain, err=tot_err)
        rec = judge("thm-diag", _vec_params(p, d, a), exact(c * a.delta), total_gain,
                    err=total_gain.err if total_gain.stochastic else None,
                    extras={"kind": "walk", "steps": len(steps), "l4_residual": l4_residual})
        return rec, recs

    rec, recs = run(budget)
    attempt = 0
    while any(r.verdict == "inconclusive" for r in (rec,) + recs) and attempt < budget.max_retries:
        attempt += 1
        budget = replace(budget, samples=budget.samples * 4, stream=budget.stream + (1000 + attempt,))
        rec, recs = run(budget)
    return WalkResult(tuple(steps), tuple(chain), recs, rec, l4_residual)


# ---------------------------------------------------------------------------
# Tightness search


def project_to_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum x = 1} (sort-and-threshold)."""
    y = np.asarray(y, dtype=float)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(y - tau, 0.0)


@dataclass(frozen=True)
class TightnessReport:
    inequality_id: str
    p: float
    d: int
    n: int
    ratio: float
    ratio_err: float
    argmin: tuple
    evaluations: int
    budget: int
    budget_exhausted: bool
    degenerate: bool
    restarts: tuple
    verdict: str
    seed: int = 0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["argmin"] = list(self.argmin)
        out["restarts"] = [dict(r) for r in self.restarts]
        for key in ("ratio", "ratio_err"):
            if isinstance(out[key], float) and not math.isfinite(out[key]):
                out[key] = None
        return out


def _ratio_verdict(ratio: float, err: float) -> str:
    if not math.isfinite(ratio):
        return "pass"
    margin = ratio - 1.0
    tol = max(ABS_TOL, REL_TOL) + err * 4.0
    if margin >= -tol:
        return "pass"
    if err > 0 and margin / err > FAIL_SIGMA:
        return "inconclusive"
    return "fail"


TERM_FLOOR = 1e-7  # deficit terms below this are treated as the degenerate limit


class _RatioObjective:
    """(deficit achieved) / (deficit term) as a function of the squared coefficients."""

    def __init__(self, iid: str, p: float, d: int, n: int, budget: Budget):
        self.iid, self.p, self.d, self.n, self.budget = iid, p, d, n, budget
        self.calls = 0
        self.best = (math.inf, 0.0, None)
        if iid == "thm-main":
            self.c = constants.c_main(p, d)
            self.top = exact(gaussian_abs_moment(p, d))
        elif iid == "thm-diag":
            self.c = constants.c_diag(p, d)
            self.top = budget.moment(MomentQuery(d, p, CoeffVector.diagonal(n)), 7)
        else:
            raise DomainError(f"tightness search supports thm-main and thm-diag, not {iid!r}")

    def evaluate(self, x: np.ndarray) -> tuple[float, float]:
        x = project_to_simplex(x)
        a = CoeffVector(tuple(np.sqrt(x)))
        term = a.l4_4 if self.iid == "thm-main" else a.l4_4 - 1.0 / self.n
        self.calls += 1
        if self.c == 0.0 or term <= TERM_FLOOR:
            return math.inf, 0.0
        m = self.budget.moment(MomentQuery(self.d, self.p, a))
        ratio = (self.top.value - m.value) / (self.c * term)
        # rounding in the two moments matters once the deficit term is tiny
        roundoff = 16 * np.finfo(float).eps * max(abs(self.top.value), abs(m.value))
        err = (math.hypot(self.top.err, m.err) + roundoff) / (self.c * term)
        if ratio < self.best[0]:
            self.best = (ratio, err, tuple(a.a))
        return ratio, err

    def __call__(self, y):
        return self.evaluate(np.asarray(y))[0]


def tightness_search(iid: str, p: float, d: int, n: int, budget: int = 2000, seed: int = 0,
                     restarts: int = 8, numerics: Budget | None = None) -> TightnessReport:
    """Smallest observed ratio (RHS - moment) / (c * deficit term) over unit coefficient vectors.

    Nelder-Mead runs on the squared coefficients, projected to the simplex,
    from random restarts; ``budget`` caps the total number of moment
    evaluations. Monte Carlo evaluations reuse one seed so the objective is
    a fixed function of the coefficients.
    """
    p, d = check_exponent(p), check_dimension(d)
    if budget <= 0:
        raise DomainError("budget must be positive")
    if n < 1 or (iid == "thm-diag" and n < 2):
        raise DomainError("n too small for this inequality")
    numerics = numerics or Budget(samples=200_000, seed=seed, max_retries=0)
    obj = _RatioObjective(iid, p, d, n, numerics)
    degenerate = obj.c == 0.0
    if iid == "thm-main" and n == 1 and not degenerate:
        ratio = gaussian_moment_excess(p, d) / obj.c
        return TightnessReport(iid, p, d, n, ratio, 0.0, (1.0,), 1, budget, False, False, (),
                               _ratio_verdict(ratio, 0.0), seed)
    if degenerate:
        return TightnessReport(iid, p, d, n, math.inf, 0.0, (), 0, budget, False, True, (), "pass", seed)
    rng = make_rng(seed, 99)
    per = max(n + 2, budget // max(restarts, 1))
    summary = []
    for r in range(restarts):
        if obj.calls >= budget:
            break
        if r == 0 and iid == "thm-main":
            start = np.eye(n)[0] * 0.9 + 0.1 / n  # near the singleton
        else:
            start = rng.dirichlet(np.ones(n))
        before = obj.calls
        res = minimize(obj, start, method="Nelder-Mead",
                       options={"maxfev": min(per, budget - obj.calls), "xatol": 1e-7, "fatol": 1e-10})
        summary.append({"start": list(map(float, start)), "best": float(res.fun),
                        "evaluations": obj.calls - before})
    ratio, err, arg = obj.best
    exhausted = obj.calls >= budget
    return TightnessReport(iid, p, d, n, float(ratio), float(err), tuple(arg or ()), obj.calls, budget,
                           exhausted, not math.isfinite(ratio), tuple(summary),
                           _ratio_verdict(ratio, err), seed)


# ---------------------------------------------------------------------------
# Sweeps


DEFAULT_P = (2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 6.0, 8.0, 12.0)
DEFAULT_D = (2, 3, 5, 10)
DEFAULT_N = tuple(range(1, 9))
VECTOR_IDS = ("thm-main", "thm-diag", "lpl2-homogeneous", "schur-ttransform")
LEMMA2_A = tuple(float(x) for x in np.round(np.linspace(0.1, 2.0, 8), 12))
LEMMA2_V = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
LEMMA2_P = (2.2, 3.0, 4.0, 5.0, 7.0)
KHINCHIN_Q = tuple(round(0.05 * k, 2) for k in range(1, 40))
REMARK_D = tuple(2**k for k in range(1, 11))


@dataclass(frozen=True)
class SweepConfig:
    ids: tuple = ("thm-main", "thm-diag")
    p_grid: tuple = DEFAULT_P
    d_grid: tuple = DEFAULT_D
    n_grid: tuple = DEFAULT_N
    vectors_per_cell: int = 25
    samples: int = 1_000_000
    exact_cap: int = 5
    nodes: int | None = None
    seed: int = 0
    max_retries: int = 2
    steps_per_cell: int = 50
    out: str | None = None
    format: str = "json"

    def __post_init__(self):
        for name in ("ids", "p_grid", "d_grid", "n_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "p_grid", tuple(float(p) for p in self.p_grid))
        self.validate()

    def validate(self):
        if self.seed is None:
            raise DomainError("a seed is required")
        for iid in self.ids:
            if iid not in INEQUALITY_IDS:
                raise DomainError(f"unknown inequality id {iid!r}")
        for p in self.p_grid:
            check_exponent(p)
        for d in self.d_grid:
            check_dimension(d)
        if any(int(n) != n or n < 1 for n in self.n_grid):
            raise DomainError("n values must be positive integers")
        if self.vectors_per_cell < 0 or self.samples < 2 or self.exact_cap < 2:
            raise DomainError("invalid sampling settings")
        if self.format not in ("json", "csv"):
            raise DomainError("format must be json or csv")

    def budget(self, stream: tuple) -> Budget:
        return Budget(samples=self.samples, nodes=self.nodes, cap=self.exact_cap, seed=self.seed,
                      stream=stream, max_retries=self.max_retries)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("ids", "p_grid", "d_grid", "n_grid"):
            out[k] = list(out[k])
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SweepConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise DomainError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def cell_vectors(d_index: int, n: int, count: int, seed: int) -> list[tuple[str, CoeffVector]]:
    """Test vectors for one (d, n) cell: uniform-random, spiked, diagonal and near-singleton.

    Every fifth random vector is spiked (one coordinate carries a uniform
    share in (1/2, 1) of the mass) so that the large-coordinate regime is hit.
    """
    if n == 1:
        return [("singleton", CoeffVector((1.0,)))]
    out = [("diagonal", CoeffVector.diagonal(n))]
    eps = 1e-3
    out.append(("near-singleton", CoeffVector.normalized([1.0] + [math.sqrt(eps)] * (n - 1))))
    for k in range(count):
        rng = make_rng(seed, 7, d_index, n, k)
        if k % 5 == 4:
            top = rng.uniform(0.5, 1.0)
            rest = rng.dirichlet(np.ones(n - 1)) * (1.0 - top)
            x = np.concatenate([[top], rest])
            out.append(("spiked", CoeffVector(tuple(np.sqrt(x)))))
        else:
            g = np.abs(rng.standard_normal(n))
            out.append(("uniform", CoeffVector.normalized(g)))
    return out


def _random_t_transform(a: CoeffVector, rng) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(a.a) ** 2
    i, j = rng.choice(x.size, size=2, replace=False)
    return x, t_transform(x, int(i), int(j), float(rng.uniform()))


def _random_local_step(rng, d: int) -> LocalStep:
    sigma = rng.uniform(0.2, 1.5)
    # a1 >= b1 >= b2 >= a2 > 0 with equal mass: angles phi_a >= phi_b >= pi/4 parametrize both pairs
    phi_b = rng.uniform(math.pi / 4, math.pi / 2 - 1e-3)
    phi_a = rng.uniform(phi_b, math.pi / 2 - 1e-6)
    v = float(rng.choice([0.0, rng.uniform(0.0, 2.5)]))
    a1, a2 = sigma * math.sin(phi_a), sigma * math.cos(phi_a)
    b1, b2 = sigma * math.sin(phi_b), sigma * math.cos(phi_b)
    return LocalStep(a1, a2, b1, b2, shift=v, tol=1e-12)


def sweep_jobs(cfg: SweepConfig) -> list[tuple]:
    """Deterministic job list; each job carries its own stream key."""
    jobs = []
    for ii, iid in enumerate(cfg.ids):
        if iid in VECTOR_IDS:
            for pi, p in enumerate(cfg.p_grid):
                for di, d in enumerate(cfg.d_grid):
                    for n in cfg.n_grid:
                        if iid in ("thm-diag", "schur-ttransform") and n < 2:
                            continue
                        for vi, (family, _) in enumerate(cell_vectors(di, n, cfg.vectors_per_cell, cfg.seed)):
                            jobs.append((iid, {"p": p, "d": d, "n": n, "d_index": di, "vec": vi,
                                               "family": family}, (ii, pi, di, n, vi)))
        elif iid == "lemma2-bound":
            for pi, p in enumerate(LEMMA2_P):
                for d in (2, 3, 5):
                    for a in LEMMA2_A:
                        for v in LEMMA2_V:
                            jobs.append((iid, {"p": p, "d": d, "a": a, "shift": v}, (ii, pi, d)))
        elif iid == "lemma4-bound":
            for pi, p in enumerate(cfg.p_grid):
                for di, d in enumerate(cfg.d_grid):
                    for k in range(cfg.steps_per_cell):
                        jobs.append((iid, {"p": p, "d": d, "k": k}, (ii, pi, di, k)))
        elif iid == "remark-scaling":
            for pi, p in enumerate(cfg.p_grid):
                jobs.append((iid, {"p": p}, (ii, pi)))
        elif iid == "khinchin-lower":
            for d in range(2, 11):
                for q in KHINCHIN_Q:
                    jobs.append((iid, {"q": q, "d": d}, (ii, d)))
    return jobs


def run_job(job: tuple, cfg: SweepConfig) -> list[VerificationRecord]:
    iid, params, stream = job
    budget = cfg.budget(tuple(stream))
    if iid in VECTOR_IDS:
        p, d, n = params["p"], params["d"], params["n"]
        family, a = cell_vectors(params["d_index"], n, cfg.vectors_per_cell, cfg.seed)[params["vec"]]
        if iid == "thm-main":
            rec = verify_theorem_main(p, d, a, budget)
        elif iid == "thm-diag":
            rec = verify_theorem_diag(p, d, a, budget)
        elif iid == "lpl2-homogeneous":
            scale = make_rng(cfg.seed, 8, *stream).uniform(0.5, 2.0)
            rec = verify_homogeneous_lpl2(p, d, CoeffVector(tuple(scale * x for x in a.a)), budget)
        else:
            x, y = _random_t_transform(a, make_rng(cfg.seed, 9, *stream))
            rec = schur_ttransform_check(p, d, x, y, budget)
        return [replace(rec, extras={**rec.extras, "family": family})]
    if iid == "lemma2-bound":
        return [verify_lemma2(params["a"], params["shift"], params["p"], params["d"])]
    if iid == "lemma4-bound":
        step = _random_local_step(make_rng(cfg.seed, 10, *stream), params["d"])
        return [verify_lemma4(step, params["p"], params["d"])]
    if iid == "remark-scaling":
        return verify_remark_scaling(params["p"], REMARK_D)
    if iid == "khinchin-lower":
        return [verify_khinchin(params["q"], params["d"])]
    raise DomainError(f"unknown inequality id {iid!r}")


def worker_count() -> int:
    cap = os.environ.get("SPHEREKHIN_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError as exc:
            raise DomainError("SPHEREKHIN_THREADS must be an integer") from exc
    return n


def _run_chunk(args):
    jobs, cfg = args
    return [run_job(j, cfg) for j in jobs]


def run_sweep(cfg: SweepConfig, workers: int | None = None, progress: Callable | None = None) -> list[VerificationRecord]:
    """Run every job of the sweep; records come back in job order regardless of scheduling."""
    jobs = sweep_jobs(cfg)
    workers = worker_count() if workers is None else workers
    records: list[VerificationRecord] = []
    if workers <= 1 or len(jobs) < 2:
        for k, job in enumerate(jobs):
            records.extend(run_job(job, cfg))
            if progress:
                progress(k + 1, len(jobs))
        return records
    size = max(1, len(jobs) // (workers * 8))
    chunks = [(jobs[i:i + size], cfg) for i in range(0, len(jobs), size)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for k, chunk in enumerate(pool.map(_run_chunk, chunks)):
            for recs in chunk:
                records.extend(recs)
            if progress:
                progress(min((k + 1) * size, len(jobs)), len(jobs))
    return records


def summarize(records: Sequence[VerificationRecord]) -> dict:
    """Verdict tallies and worst margins per inequality id."""
    out = {"total": len(records), "pass": 0, "fail": 0, "inconclusive": 0, "by_id": {}}
    for r in records:
        out[r.verdict] += 1
        s = out["by_id"].setdefault(r.inequality_id, {"count": 0, "pass": 0, "fail": 0, "inconclusive": 0,
                                                       "worst_margin": None, "worst_sigma_margin": None})
        s["count"] += 1
        s[r.verdict] += 1
        if s["worst_margin"] is None or r.margin < s["worst_margin"]:
            s["worst_margin"] = r.margin
        if math.isfinite(r.sigma_margin) and (s["worst_sigma_margin"] is None
                                              or r.sigma_margin < s["worst_sigma_margin"]):
            s["worst_sigma_margin"] = r.sigma_margin
    return out
