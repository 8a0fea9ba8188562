"""Acceptance criteria 1-12, each at its stated tolerance.

Every test appends one ``ACCEPTANCE <k>: PASS|FAIL ...`` line, printed together
in the terminal summary, before asserting.
"""

import json
import math
import time

import numpy as np
import pytest
from scipy import integrate, stats

from conftest import ACCEPTANCE_LINES
from oracles import mp_g_derivative
from spherekhin import constants as C
from spherekhin.cli import main
from spherekhin.deficit import lindeberg_decompose, theta_by_parts_check
from spherekhin.kernel import gaussian_abs_moment, gaussian_moment_excess, make_rng
from spherekhin.moments import CoeffVector, MomentQuery, g_prime, g_second_derivative, shifted_single_moment, \
    sum_moment_exact
from spherekhin.verifier import (
    DEFAULT_D,
    DEFAULT_P,
    KHINCHIN_Q,
    SweepConfig,
    _random_local_step,
    run_sweep,
    summarize,
    tightness_search,
    verify_khinchin,
    verify_lemma4,
    verify_remark_scaling,
)


class Criterion:
    """Collects sub-check outcomes for one criterion and reports a single line."""

    def __init__(self, k: int, title: str):
        self.k, self.title = k, title
        self.failures: list[str] = []
        self.notes: list[str] = []
        self.t0 = time.perf_counter()

    def check(self, ok: bool, what: str):
        if not ok:
            self.failures.append(what)

    def note(self, text: str):
        self.notes.append(text)

    def finish(self):
        dt = time.perf_counter() - self.t0
        status = "PASS" if not self.failures else "FAIL"
        detail = "; ".join(self.notes + [f"failed: {f}" for f in self.failures[:5]])
        line = f"ACCEPTANCE {self.k}: {status} {self.title} [{dt:.1f}s] {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert not self.failures, line


def test_criterion_01_gaussian_moments_vs_chi_squared():
    c = Criterion(1, "Gaussian moments vs chi-squared oracle")
    worst = 0.0
    for p in (2, 4, 6, 8):
        for d in range(2, 11):
            ref = stats.chi2(d).moment(p // 2) / d ** (p // 2)
            rel = abs(gaussian_abs_moment(p, d) / ref - 1)
            worst = max(worst, rel)
            c.check(rel <= 1e-12, f"p={p} d={d} rel={rel:.2e}")
    c.note(f"worst rel {worst:.1e}")
    c.finish()


def test_criterion_02_two_coefficient_identities():
    c = Criterion(2, "n=2 exact value and planar two-point closed form")
    a = CoeffVector((1 / math.sqrt(2), 1 / math.sqrt(2)))
    val = sum_moment_exact(MomentQuery(3, 4.0, a)).value
    c.check(abs(val - 4 / 3) <= 1e-10, f"E|S|^4 = {val!r}")
    worst = 0.0
    for q in (0.25, 0.5, 1.0, 1.5):
        # |xi1 + xi2| = 2|cos(phi/2)| with phi uniform on (0, pi)
        quad, _ = integrate.quad(lambda ph: (2 * abs(math.cos(ph / 2))) ** q, 0, math.pi, epsabs=0, epsrel=1e-13)
        ref = 2 ** (-q / 2) * quad / math.pi
        err = abs(C.steinhaus_two_point(q) - ref)
        worst = max(worst, err)
        c.check(err <= 1e-10, f"q={q} err={err:.1e}")
    c.note(f"n=2 value {val!r}; worst closed-form gap {worst:.1e}")
    c.finish()


def _sweep_criterion(k: int, iid: str):
    c = Criterion(k, f"{iid} default sweep")
    cfg = SweepConfig(ids=(iid,))
    records = run_sweep(cfg)
    s = summarize(records)
    c.check(s["fail"] == 0, f"{s['fail']} fail verdicts")
    by = s["by_id"][iid]
    c.note(f"{s['total']} records, pass={s['pass']} inconclusive={s['inconclusive']}, "
           f"worst margin {by['worst_margin']:.3e}, worst sigma {by['worst_sigma_margin']}")
    return c, records


@pytest.mark.slow
def test_criterion_03_theorem_main_sweep():
    c, _ = _sweep_criterion(3, "thm-main")
    c.finish()


@pytest.mark.slow
def test_criterion_04_theorem_diag_sweep():
    c, records = _sweep_criterion(4, "thm-diag")
    exact_two = [r for r in records if r.params["n"] == 2 and not r.stochastic]
    c.check(len(exact_two) > 0, "no exact n=2 cells")
    worst = min(r.margin for r in exact_two)
    c.check(worst >= -1e-8, f"exact n=2 margin {worst:.2e}")
    c.note(f"{len(exact_two)} exact n=2 cells, worst margin {worst:.2e}")
    c.finish()


def test_criterion_05_pointwise_deficit_grid():
    c = Criterion(5, "deficit >= pointwise lower bound on the full grid")
    records = run_sweep(SweepConfig(ids=("lemma2-bound",)))
    s = summarize(records)
    c.check(s["fail"] == 0 and s["inconclusive"] == 0, f"fail={s['fail']} inconclusive={s['inconclusive']}")
    c.note(f"{s['total']} grid points, worst margin {s['by_id']['lemma2-bound']['worst_margin']:.3e}")
    c.finish()


def test_criterion_06_local_step_suite():
    c = Criterion(6, "two-coordinate balancing step, 1000 steps per (p, d) cell")
    worst_identity = 0.0
    fails = 0
    count = 0
    for pi, p in enumerate(DEFAULT_P):
        for di, d in enumerate(DEFAULT_D):
            for k in range(1000):
                step = _random_local_step(make_rng(0, 10, pi, di, k), d)
                worst_identity = max(worst_identity, abs(step.identity_residual()))
                rec = verify_lemma4(step, p, d)
                count += 1
                if rec.verdict != "pass":
                    fails += 1
                    c.check(False, f"p={p} d={d} step={step} margin={rec.margin:.2e}")
    c.check(worst_identity <= 1e-12, f"identity residual {worst_identity:.1e}")
    c.note(f"{count} steps, {fails} failures, worst identity residual {worst_identity:.1e}")
    c.finish()


def test_criterion_07_derivative_identities():
    c = Criterion(7, "derivatives vs central differences and theta integration by parts")
    rng = make_rng(0, 77)
    worst1 = worst2 = 0.0
    done = 0
    while done < 50:
        v = float(rng.uniform(0.1, 2.0))
        t = float(rng.uniform(0.1, 3.0))
        p = float(rng.uniform(2.2, 10.0))
        d = int(rng.integers(2, 9))
        if abs(t - v * v) < 0.05:
            continue  # keep the difference stencil off the kink of |v + sqrt(t) xi|^(p-4)
        done += 1
        # first derivative: double-precision central difference of the moment itself
        h = 1e-4 * t
        g = lambda tt: shifted_single_moment(v, 1.0, tt, p, d).value
        fd1 = (g(t + h) - g(t - h)) / (2 * h)
        r1 = abs(g_prime(v, t, p, d).value / fd1 - 1)
        # second derivative: the same stencil evaluated at 30 digits
        fd2 = float(mp_g_derivative(v, t, p, d, 2, dps=30))
        r2 = abs(g_second_derivative(v, t, p, d).value / fd2 - 1)
        worst1, worst2 = max(worst1, r1), max(worst2, r2)
        c.check(r1 <= 1e-6, f"g' v={v:.3f} t={t:.3f} p={p:.3f} d={d} rel={r1:.1e}")
        c.check(r2 <= 1e-6, f"g'' v={v:.3f} t={t:.3f} p={p:.3f} d={d} rel={r2:.1e}")
    worst_bp = 0.0
    for f in ("identity", "cube", "g_prime"):
        for (u, sigma, p, d, v) in [(0.2, 1.0, 3.0, 3, 1.0), (0.3, 0.9, 5.0, 2, 0.7), (0.1, 0.6, 2.5, 4, 0.2),
                                    (0.25, 1.0, 6.0, 5, 0.0), (0.4, 1.2, 3.5, 2, 1.5)]:
            chk = theta_by_parts_check(u, sigma, p, d, f=f, v=v)
            worst_bp = max(worst_bp, abs(chk.residual))
            c.check(abs(chk.residual) <= 1e-8, f"by parts f={f} u={u} p={p} d={d} res={chk.residual:.1e}")
    c.note(f"50 tuples: worst rel g' {worst1:.1e}, g'' {worst2:.1e}; worst by-parts residual {worst_bp:.1e}")
    c.finish()


def test_criterion_08_khinchin_constants():
    c = Criterion(8, "Khinchin-type constants")
    worst = math.inf
    for d in range(2, 11):
        for q in KHINCHIN_Q:
            rec = verify_khinchin(q, d)
            worst = min(worst, rec.rhs.value)
            c.check(rec.verdict == "pass", f"q={q} d={d} best={rec.rhs.value:.6f}")
    q0 = C.STEINHAUS_BOUND_ARGMIN
    low = C.steinhaus_lower_bound(q0)
    c.check(abs(low - 0.774) <= 1e-3, f"lower bound at q*={q0:.4f} is {low:.6f}")
    grid = np.linspace(0.01, 1.99, 1999)
    c.check(min(C.steinhaus_lower_bound(q) for q in grid) >= low - 1e-15, "q* is not the minimizer")
    two_point = C.steinhaus_two_point(q0)
    c.check(two_point >= low, "two-point term below its bound")
    wendel_ok = all(C.wendel_bounds_check(q, d).holds for d in range(2, 11) for q in grid[::10])
    c.check(wendel_ok, "Wendel chain")
    c.note(f"grid minimum {worst:.6f}; bound at q*={q0:.6f} is {low:.6f}; planar two-point term there "
           f"{two_point:.6f}")
    c.finish()


def test_criterion_09_remark_scaling():
    c = Criterion(9, "c_main <= E|Z|^p - 1 and the 1/d scale")
    ds = list(range(2, 1025, 2))
    for p in (3.0, 4.0, 6.0, 10.0):
        for rec in verify_remark_scaling(p, ds):
            c.check(rec.verdict == "pass" and rec.margin >= 0, f"p={p} d={rec.params['d']}")
    ulp = np.spacing(2.0)
    worst = max(abs(d * gaussian_moment_excess(4.0, d) - 2.0) for d in ds)
    c.check(worst <= 4 * ulp, f"d (E|Z|^4 - 1) deviates by {worst:.1e}")
    c.note(f"{4 * len(ds)} (p, d) pairs; max |d (E|Z|^4 - 1) - 2| = {worst / ulp:.0f} ulp")
    c.finish()


def test_criterion_10_lindeberg_telescoping():
    c = Criterion(10, "Lindeberg swap traces")
    rng = make_rng(0, 1010)
    worst_res = 0.0
    worst_sigma = math.inf
    worst_bound_sigma = math.inf
    for k in range(20):
        n = int(rng.integers(1, 7))
        d = int(rng.choice(DEFAULT_D))
        p = float(rng.choice(DEFAULT_P))
        a = CoeffVector.normalized(np.abs(rng.standard_normal(n)) + 1e-3)
        tr = lindeberg_decompose(MomentQuery(d, p, a), 100_000, seed=k)
        res = abs(tr.telescoping_residual) / max(1.0, abs(tr.total.value))
        worst_res = max(worst_res, res)
        c.check(res <= 1e-12, f"trace {k}: telescoping residual {res:.1e}")
        for t in tr.terms:
            s = t.value / t.err if t.err > 0 else math.inf
            worst_sigma = min(worst_sigma, s)
            c.check(s >= -4, f"trace {k}: term {t.value:.3e} at {s:.1f} sigma")
        worst_bound_sigma = min(worst_bound_sigma, min(tr.step_margins_sigma()))
    c.note(f"worst residual {worst_res:.1e}; worst term {worst_sigma:.1f} sigma; "
           f"worst margin over the per-step bound {worst_bound_sigma:.1f} sigma")
    c.finish()


def test_criterion_11_cli_determinism(tmp_path, capsys):
    c = Criterion(11, "CLI determinism")
    outs = []
    path = tmp_path / "r.jsonl"
    for _ in range(2):
        code = main(["verify", "--ids", "thm-main,thm-diag", "--p", "3,5", "--d", "2,3", "--n", "2,7",
                     "--vectors", "3", "--samples", "50000", "--seed", "9", "--out", str(path)])
        c.check(code == 0, f"verify exit {code}")
        lines = path.read_text().splitlines()
        footer = json.loads(lines[-1])
        footer.pop("created")  # the only field allowed to differ
        outs.append((lines[:-1], footer))
    c.check(outs[0][0] == outs[1][0], "verify records differ between runs")
    c.check(outs[0][1] == outs[1][1], "summary footers differ beyond the timestamp")
    capsys.readouterr()
    texts = []
    for _ in range(2):
        main(["moment", "--d", "3", "--p", "3", "--a", "1,1,1,1,1,1,1", "--samples", "50000", "--seed", "9"])
        main(["tightness", "--id", "thm-diag", "--p", "3", "--d", "3", "--n", "3", "--budget", "40", "--seed", "9"])
        texts.append(capsys.readouterr().out)
    c.check(texts[0] == texts[1], "moment/tightness output differs between runs")
    c.note(f"{len(outs[0][0])} records byte-identical; moment and tightness output identical")
    c.finish()


def test_criterion_12_tightness_probe():
    c = Criterion(12, "tightness probe")
    dims = (2, 3, 5, 10, 100, 1000, 10_000)
    for p in DEFAULT_P[1:]:
        ratios = [tightness_search("thm-main", p, d, 1).ratio for d in dims]
        c.check(min(ratios) >= 1, f"n=1 ratio below 1 at p={p}")
        lo_branch = p <= C.BRANCH_POINT
        limit = 2.0 if lo_branch else 6 * p * (p - 2)
        c.check(abs(ratios[-1] / limit - 1) < 1e-2, f"p={p}: ratio at d=1e4 is {ratios[-1]:.4f}, limit {limit}")
        c.check(max(ratios) <= max(limit, ratios[0]) * (1 + 1e-12), f"p={p}: ratio unbounded")
        if lo_branch:
            # at p = 4 the ratio is exactly 2 for every d, so allow rounding
            c.check(all(x >= y * (1 - 1e-12) for x, y in zip(ratios, ratios[1:])),
                    f"p={p}: n=1 ratio not decreasing in d")
        else:
            monotone = "increasing" if all(x <= y for x, y in zip(ratios, ratios[1:])) else "non-monotone"
            c.note(f"p={p}: {monotone} to {limit:g}")
    worst = math.inf
    for iid in ("thm-main", "thm-diag"):
        for p in DEFAULT_P:
            for d in DEFAULT_D:
                for n in (2, 3):
                    rep = tightness_search(iid, p, d, n, budget=240, restarts=4)
                    if math.isfinite(rep.ratio):
                        worst = min(worst, rep.ratio)
                    c.check(rep.verdict != "fail" and rep.ratio >= 1 - 4 * rep.ratio_err - 1e-9,
                            f"{iid} p={p} d={d} n={n} ratio={rep.ratio:.6f}")
    c.note(f"n=1 ratios decrease in d for p <= 4; smallest optimizer ratio at n in (2, 3) is {worst:.6f}")
    c.finish()
