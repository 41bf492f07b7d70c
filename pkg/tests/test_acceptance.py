"""Acceptance suite: nine criteria, each printing one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` or directly as a script.
Tolerances and configurations are fixed here; a failing criterion is reported
with the measured values that made it fail.
"""
import math
import time
import warnings

import numpy as np
import pytest

from hierctrl import verify as V
from hierctrl.domain import build_grid, make_power_diffusion, make_regions, rasterize_regions, weights_for
from hierctrl.follower import (
    NonConvergenceError,
    as_field,
    decomposition_check,
    eval_J_gamma,
    gamma_sweep,
    grad_J_gamma,
    make_follower_problem,
    solve_lowregret,
)
from hierctrl.kkt import follower_kkt, quartet_oracle
from hierctrl.leader import LeaderProblem, adjoint_quartet_solve, epsilon_sweep
from hierctrl.pde_core import (
    FORWARD,
    Field,
    assemble_operator,
    duality_check,
    energy_constant,
    inner_x,
    norms,
    solve_forward,
)

pytestmark = pytest.mark.slow

STANDARD_REGIONS = ((0.3, 0.5), (0.25, 0.6), (0.4, 0.8))
SMALL_REGIONS = ((0.3, 0.55), (0.2, 0.7), (0.4, 0.9))


@pytest.fixture
def report(capsys):
    """Print one criterion line straight to the terminal, bypassing capture."""

    def emit(n: int, name: str, checks: dict, elapsed: float, limit: float):
        checks = dict(checks)
        checks[f"runtime {elapsed:.1f}s < {limit:g}s"] = elapsed < limit
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        line = f"CRITERION {n} {'PASS' if ok else 'FAIL'}  {name}"
        if failed:
            line += "  [failed: " + "; ".join(failed) + "]"
        with capsys.disabled():
            print("\n" + line)
        return ok, failed

    return emit


def _random_interior(rng, shape):
    a = rng.standard_normal(shape)
    a[..., 0] = a[..., -1] = 0.0
    return a


def _op(grid, alpha=0.5, a0=1.0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return assemble_operator(grid, make_power_diffusion(alpha), a0)


# ---------------------------------------------------------------------------
# 1. solver convergence
# ---------------------------------------------------------------------------

def _mms_error(n_x, n_t):
    g = build_grid(n_x, n_t, 1.0)
    op = _op(g)
    X, Tt = np.meshgrid(g.x, g.t)
    y = np.exp(-Tt) * X**1.5 * (1 - X)
    f = np.exp(-Tt) * (5 * X - 1.5)
    f[:, 0] = f[:, -1] = 0.0
    d = solve_forward(op, y[0], f).values - y
    return math.sqrt(g.dt * np.sum(op.quad_weights * d[1:] ** 2))


def test_criterion_1_solver_convergence(report):
    t0 = time.perf_counter()
    sizes = (25, 50, 100, 200)
    e_space = [_mms_error(n, n * n // 5) for n in sizes]          # dt ∝ dx²
    r_space = np.log2(np.array(e_space[:-1]) / e_space[1:])
    e_time = [_mms_error(200, n) for n in (10, 20, 40, 80)]
    r_time = np.log2(np.array(e_time[:-1]) / e_time[1:])
    el = time.perf_counter() - t0
    ok, failed = report(1, f"manufactured solution: spatial rates {np.round(r_space, 3).tolist()}, "
                           f"temporal rates {np.round(r_time, 3).tolist()}",
                        {"spatial order >= 1.8": r_space.min() >= 1.8,
                         "temporal order >= 0.9": r_time.min() >= 0.9}, el, 10)
    assert ok, failed


# ---------------------------------------------------------------------------
# 2. discrete adjointness
# ---------------------------------------------------------------------------

def test_criterion_2_discrete_adjointness(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for alpha in (0.0, 0.3, 0.5, 0.9):
        g = build_grid(50, 50, 1.0)
        op = _op(g, alpha, 1.0 + rng.random(g.shape))
        for _ in range(20):
            _, rel = duality_check(op, _random_interior(rng, g.shape), _random_interior(rng, g.n_x + 2))
            worst = max(worst, rel)
    el = time.perf_counter() - t0
    ok, failed = report(2, f"duality gap max {worst:.2e} over 80 pairs", {"gap <= 1e-10": worst <= 1e-10}, el, 5)
    assert ok, failed


# ---------------------------------------------------------------------------
# 3. energy estimate
# ---------------------------------------------------------------------------

def test_criterion_3_energy_estimate(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    violations, worst = 0, 0.0
    for i in range(50):
        alpha = (0.0, 0.3, 0.5, 0.9)[i % 4]
        g = build_grid(40, 40, 1.0)
        op = _op(g, alpha, 2.0 * rng.random(g.shape))
        y0 = _random_interior(rng, g.n_x + 2)
        f = Field(_random_interior(rng, g.shape), g, FORWARD)
        n = norms(solve_forward(op, y0, f), op)
        lhs = n.l2_final**2 + n.h1k**2
        rhs = energy_constant(op) * (norms(f, op).l2_Q**2 + inner_x(y0, y0, op.quad_weights))
        worst = max(worst, lhs / rhs)
        violations += lhs > rhs
    el = time.perf_counter() - t0
    ok, failed = report(3, f"energy bound: {violations} violations in 50, max lhs/rhs {worst:.3f}",
                        {"zero violations": violations == 0}, el, math.inf)
    assert ok, failed


# ---------------------------------------------------------------------------
# 4. follower optimality
# ---------------------------------------------------------------------------

def test_criterion_4_follower_optimality(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    g = build_grid(50, 50, 1.0)
    op = _op(g)
    reg = make_regions(g, *STANDARD_REGIONS)
    fp = make_follower_problem(op, reg, _random_interior(rng, g.shape), _random_interior(rng, g.shape),
                               gamma=0.1, mu=1.0)
    sol = solve_lowregret(fp, tol=1e-8)
    residual = sol.relative_residual

    v = _random_interior(rng, g.shape) * fp.chi_O
    w = _random_interior(rng, g.shape) * fp.chi_O
    e = 1e-4
    fd = (eval_J_gamma(v + e * w, fp) - eval_J_gamma(v - e * w, fp)) / (2 * e)
    an = fp.ip(grad_J_gamma(v, fp), as_field(w, op), fp.chi_O)
    fd_gap = abs(fd - an) / abs(an)

    g12 = build_grid(12, 12, 1.0)
    op12 = _op(g12)
    reg12 = make_regions(g12, *SMALL_REGIONS)
    fp12 = make_follower_problem(op12, reg12, _random_interior(rng, g12.shape),
                                 _random_interior(rng, g12.shape), gamma=0.1, mu=2.0)
    s12 = solve_lowregret(fp12, tol=1e-13)
    o = follower_kkt(fp12)
    kkt_gap = np.abs(s12.v.values[1:] - o["v"][1:]).max() / np.abs(o["v"]).max()

    interb_fail = 0
    for _ in range(20):
        gr = build_grid(int(rng.integers(20, 41)), int(rng.integers(10, 31)), float(rng.uniform(0.5, 2)))
        opr = _op(gr, float(rng.choice([0.0, 0.3, 0.5, 0.9])), float(rng.uniform(0.1, 2)))
        regr = make_regions(gr, *STANDARD_REGIONS)
        fr = make_follower_problem(opr, regr, _random_interior(rng, gr.shape), _random_interior(rng, gr.shape),
                                   gamma=10 ** rng.uniform(-3, 1), mu=10 ** rng.uniform(-1, 2))
        interb_fail += not solve_lowregret(fr, tol=1e-10).interb_holds()
    el = time.perf_counter() - t0
    ok, failed = report(4, f"follower: residual {residual:.1e}, FD gap {fd_gap:.1e}, KKT gap {kkt_gap:.1e}, "
                           f"control bound violations {interb_fail}/20",
                        {"residual <= 1e-8": residual <= 1e-8, "FD gap <= 1e-5": fd_gap <= 1e-5,
                         "KKT gap <= 1e-8": kkt_gap <= 1e-8, "control bound on 20 configs": interb_fail == 0},
                        el, 60)
    assert ok, failed


# ---------------------------------------------------------------------------
# 5. decomposition identity
# ---------------------------------------------------------------------------

def test_criterion_5_decomposition_identity(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    g = build_grid(40, 40, 1.0)
    op = _op(g)
    reg = make_regions(g, *STANDARD_REGIONS)
    worst = 0.0
    for _ in range(20):
        fp = make_follower_problem(op, reg, _random_interior(rng, g.shape), _random_interior(rng, g.shape),
                                   gamma=1.0, mu=1.0)
        v = _random_interior(rng, g.shape) * fp.chi_O
        worst = max(worst, decomposition_check(_random_interior(rng, g.n_x + 2), v, fp))
    el = time.perf_counter() - t0
    ok, failed = report(5, f"regret decomposition residual max {worst:.1e}", {"residual <= 1e-9": worst <= 1e-9},
                        el, 10)
    assert ok, failed


# ---------------------------------------------------------------------------
# 6. gamma sweep
# ---------------------------------------------------------------------------

def test_criterion_6_gamma_sweep(report):
    t0 = time.perf_counter()
    g = build_grid(50, 100, 1.0)
    op = _op(g)
    reg = make_regions(g, *STANDARD_REGIONS)
    X, Tt = np.meshgrid(g.x, g.t)
    h = np.sin(np.pi * Tt) * np.exp(-(((X - 0.4) / 0.05) ** 2))
    z = np.exp(-Tt) * np.exp(-(((X - 0.6) / 0.1) ** 2))
    fp = make_follower_problem(op, reg, h, z, gamma=1.0, mu=10.0)
    sw = gamma_sweep(fp, [1.0, 1e-1, 1e-2, 1e-3], tol=1e-10)
    ratios = [r["S0_over_sqrt_gamma"] for r in sw.rows]
    el = time.perf_counter() - t0
    ok, failed = report(6, f"gamma sweep: ||S(0)||/sqrt(gamma) = {[f'{r:.3e}' for r in ratios]}, "
                           f"||v|| variation {sw.v_variation:.2f}, explicit-constant bound "
                           f"{'holds' if sw.explicit_bound else 'fails'}",
                        {"||S(0)|| decreasing": sw.S0_decreasing,
                         "sqrt(gamma) bound with C fitted at gamma=1": sw.sqrt_gamma_bound,
                         "||v|| variation <= 2": sw.v_bounded}, el, 120)
    assert ok, failed


# ---------------------------------------------------------------------------
# 7. leader null control
# ---------------------------------------------------------------------------

def test_criterion_7_leader_null_control(report):
    t0 = time.perf_counter()
    g = build_grid(100, 200, 1.0)
    op = _op(g)
    reg = make_regions(g, *STANDARD_REGIONS)
    X, Tt = np.meshgrid(g.x, g.t)
    z = np.exp(-Tt) * np.exp(-(((X - 0.6) / 0.1) ** 2)) * (Tt <= 0.5)
    P = LeaderProblem(make_follower_problem(op, reg, None, z, gamma=1.0, mu=10.0))
    sw = epsilon_sweep(P, [1e-1, 1e-2, 1e-3, 1e-4], tol=1e-9)
    stat = max(d.stationarity for d in sw.diagnostics)
    ident = max(d.identity_residual for d in sw.diagnostics)
    y2 = [f"{r['norm_yT_sq']:.3e}" for r in sw.rows]
    nh = [f"{r['norm_h']:.3e}" for r in sw.rows]
    el = time.perf_counter() - t0
    ok, failed = report(7, f"epsilon sweep: ||y(T)||^2 = {y2}, ||h|| = {nh}, stationarity {stat:.1e}, "
                           f"identity {ident:.1e}",
                        {"||y(T)||^2 monotone (5% slack)": sw.monotone,
                         "||y(T)||^2 <= C sqrt(eps)": sw.sqrt_eps_bound,
                         f"||h|| within 2x (variation {sw.h_variation:.2f})": sw.h_bounded,
                         "stationarity <= 1e-6": stat <= 1e-6, "identity <= 1e-6": ident <= 1e-6},
                        el, 600)
    assert ok, failed


# ---------------------------------------------------------------------------
# 8. quartet oracle
# ---------------------------------------------------------------------------

def test_criterion_8_quartet_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    g = build_grid(12, 12, 1.0)
    op = _op(g)
    reg = make_regions(g, *SMALL_REGIONS)
    gaps = {}
    for mu, gamma in ((10.0, 1.0), (100.0, 1.0), (10.0, 0.1)):
        P = LeaderProblem(make_follower_problem(op, reg, None, None, gamma=gamma, mu=mu))
        rT = _random_interior(rng, g.n_x + 2)
        q = adjoint_quartet_solve(rT, P)
        o = quartet_oracle(rT, P.follower)
        gaps[(mu, gamma)] = max(np.abs(getattr(q, n).values - o[n]).max() / np.abs(o[n]).max()
                                for n in ("rho", "psi", "phi_adj", "zeta"))
    P = LeaderProblem(make_follower_problem(op, reg, None, None, gamma=0.01, mu=0.1))
    try:
        q = adjoint_quartet_solve(_random_interior(rng, g.n_x + 2), P)
        diverged, note = False, f"converged in {q.fp_iterations} iterations at relaxation {q.relaxation}"
    except NonConvergenceError as exc:
        diverged, note = True, str(exc)
    el = time.perf_counter() - t0
    worst = max(gaps.values())
    ok, failed = report(8, f"quartet: max oracle gap {worst:.1e}; (mu, gamma) = (0.1, 0.01): {note}",
                        {"oracle gap <= 1e-8": worst <= 1e-8,
                         "Picard divergence reported for (0.1, 0.01)": diverged}, el, 30)
    assert ok, failed


# ---------------------------------------------------------------------------
# 9. inequality suite
# ---------------------------------------------------------------------------

NESTED = ((0.42, 0.58), (0.37, 0.63), (0.33, 0.67))


def _inequality_run(n_x, n_t, n_samples):
    g = build_grid(n_x, n_t, 4.0)
    k = make_power_diffusion(0.5)
    op = _op(g)
    reg = rasterize_regions(g, (0.2, 0.7), (0.1, 0.8), (0.3, 0.9), nested=NESTED)
    W = weights_for(g, k, reg, s=1.0)
    P = LeaderProblem(make_follower_problem(op, reg, None, None, gamma=1.0, mu=10.0))
    samples = V.sample_quartets(P, n_samples, seed=0)
    cac = V.check_caccioppoli(samples, W, op, reg)
    obs = V.check_observability(samples, W, op, reg.omega)
    return W, k, cac, obs


def test_criterion_9_inequality_suite(report):
    t0 = time.perf_counter()
    hardy = {th: V.check_hardy(make_power_diffusion(th), n_samples=100) for th in (0.0, 0.3, 0.5, 0.9)}
    hardy_ok = all(r.passed and r.samples + r.skipped == 100 for r in hardy.values())

    W, k, cac2, obs2 = _inequality_run(40, 1280, 200)           # base grid, 200 samples
    Wf, _, cacf, obsf = _inequality_run(80, 2560, 200)          # doubled grid
    order_ok = V.check_weight_orderings(W, k).passed and V.check_weight_orderings(Wf, k).passed
    # the first 100 of the 200 samples are the 100-sample run (same seeded stream)
    cac1, obs1 = max(cac2.ratios[:100]), max(obs2.ratios[:100])

    spreads = {
        "caccioppoli samples": V.relative_spread(cac1, cac2.max_ratio),
        "caccioppoli grid": V.relative_spread(cac2.max_ratio, cacf.max_ratio),
        "observability samples": V.relative_spread(obs1, obs2.max_ratio),
        "observability grid": V.relative_spread(obs2.max_ratio, obsf.max_ratio),
    }
    finite = all(math.isfinite(r.max_ratio) and r.max_ratio > 0 for r in (cac2, obs2, cacf, obsf))
    el = time.perf_counter() - t0
    detail = ", ".join(f"{k} {v:.1%}" for k, v in spreads.items())
    checks = {"Hardy ratios <= 4/(1-theta)^2": hardy_ok, "weight orderings at every node": order_ok,
              "constants finite": finite}
    checks.update({f"{k} within 20%": v <= 0.2 for k, v in spreads.items()})
    ok, failed = report(9, f"inequalities: C_cacc {cac2.max_ratio:.4g} -> {cacf.max_ratio:.4g}, "
                           f"C_obs {obs2.max_ratio:.4g} -> {obsf.max_ratio:.4g}; {detail}", checks, el, 180)
    assert ok, failed


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
