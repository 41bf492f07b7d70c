"""Leader null control: adjoint quartet, gradient, CG solver and oracles."""
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hierctrl.domain import build_grid, make_power_diffusion, rasterize_regions, weights_for
from hierctrl.follower import NonConvergenceError, as_field, make_follower_problem
from hierctrl.kkt import leader_kkt, quartet_oracle
from hierctrl.leader import (
    AdmissibilityWarning,
    LeaderProblem,
    adjoint_quartet_solve,
    check_kappa_admissibility,
    epsilon_sweep,
    eval_J_eps,
    grad_J_eps,
    kappa_weighted_norm,
    log_kappa_weighted_norm,
    quartet_residuals,
    solve_null_control,
)
from hierctrl.pde_core import assemble_operator

from conftest import random_field, random_slice, small_follower, small_leader

seeds = st.integers(0, 2**32 - 1)


def rel_max(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)


@pytest.mark.parametrize("mu,gamma", [(10.0, 1.0), (100.0, 1.0), (10.0, 0.1)])
def test_quartet_matches_monolithic_solve(mu, gamma):
    rng = np.random.default_rng(7)
    P = small_leader(rng, mu=mu, gamma=gamma)
    rT = random_slice(rng, P.grid)
    q = adjoint_quartet_solve(rT, P)
    oracle = quartet_oracle(rT, P.follower)
    for name in ("rho", "psi", "phi_adj", "zeta"):
        assert rel_max(getattr(q, name).values, oracle[name]) <= 1e-8
    assert max(quartet_residuals(q, rT, P.follower).values()) < 1e-12


@given(seed=seeds, c=st.floats(0.01, 100.0))
@settings(max_examples=10, deadline=None)
def test_quartet_is_linear_in_terminal_data(seed, c):
    rng = np.random.default_rng(seed)
    P = small_leader(rng)
    rT = random_slice(rng, P.grid)
    q1 = adjoint_quartet_solve(rT, P)
    q2 = adjoint_quartet_solve(c * rT, P)
    assert np.allclose(q2.rho.values, c * q1.rho.values, rtol=1e-10, atol=1e-12 * c)


def test_zero_terminal_data_gives_zero_quartet():
    P = small_leader()
    q = adjoint_quartet_solve(np.zeros(P.grid.n_x + 2), P)
    assert q.fp_iterations == 0 and not q.rho.values.any()


def test_quartet_divergence_is_reported():
    """With a strongly negative potential the fixed-point map has spectral radius far above 1."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        P = small_leader(mu=0.1, gamma=0.01, a0=-5.0)
    rT = np.zeros(P.grid.n_x + 2)
    rT[1:-1] = 1.0
    with pytest.raises(NonConvergenceError, match="increase mu or gamma"):
        adjoint_quartet_solve(rT, P)


@given(seed=seeds)
@settings(max_examples=5, deadline=None)
def test_leader_gradient_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    P = small_leader(rng, n_x=10, n_t=8)
    g = P.grid
    h = random_field(rng, g, P.chi_omega, zero_initial=True)
    w = random_field(rng, g, P.chi_omega, zero_initial=True)
    e = 1e-3
    fd = (eval_J_eps(h + e * w, P) - eval_J_eps(h - e * w, P)) / (2 * e)
    an = P.follower.ip(grad_J_eps(h, P), as_field(w, P.op), P.chi_omega)
    assert fd == pytest.approx(an, rel=1e-6)


@pytest.mark.parametrize("eps", [1e-1, 1e-3])
def test_null_control_matches_kkt_oracle(eps):
    P = small_leader(np.random.default_rng(8), epsilon=eps)
    sol = solve_null_control(P, tol=1e-11)
    oracle = leader_kkt(P.follower, eps)
    assert rel_max(sol.h.values[1:], oracle["h"][1:]) <= 1e-8
    d = sol.diagnostics
    assert d.stationarity_rel <= 1e-8
    assert d.identity_residual <= 1e-8
    J = np.array(sol.diagnostics.J_history)
    assert np.all(np.diff(J) <= 1e-12 * J[0])


def test_zero_target_gives_zero_leader_control():
    P = small_leader(with_z=False)
    sol = solve_null_control(P)
    assert not sol.h.values.any()
    assert sol.diagnostics.norm_yT == 0.0


def test_epsilon_sweep_drives_state_to_zero():
    P = small_leader(np.random.default_rng(9), n_x=20, n_t=20)
    sw = epsilon_sweep(P, [1e-1, 1e-2, 1e-3, 1e-4])
    y2 = [r["norm_yT_sq"] for r in sw.rows]
    assert sw.monotone and sw.sqrt_eps_bound
    assert y2[-1] < y2[0]
    assert list(sw.rows[0]) == ["epsilon", "norm_h", "norm_yT_sq", "J_eps", "outer_iters"]


def test_epsilon_sweep_csv(tmp_path):
    sw = epsilon_sweep(small_leader(np.random.default_rng(10)), [1e-1, 1e-2])
    sw.to_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "epsilon,norm_h,norm_yT_sq,J_eps,outer_iters"


def test_problem_validation():
    fp = small_follower()
    with pytest.raises(ValueError):
        LeaderProblem(fp, epsilon=0.0)
    with pytest.raises(ValueError):
        LeaderProblem(fp, relaxation=1.5)


def test_kappa_admissibility():
    g = build_grid(40, 40, 1.0)
    k = make_power_diffusion(0.5)
    op = assemble_operator(g, k, 1.0)
    reg = rasterize_regions(g, (0.2, 0.7), (0.1, 0.8), (0.3, 0.9))
    W = weights_for(g, k, reg)
    X, Tt = np.meshgrid(g.x, g.t)
    bump = np.exp(-(((X - 0.6) / 0.1) ** 2))
    early = make_follower_problem(op, reg, None, bump * (Tt <= 0.5), 1, 1)
    later = make_follower_problem(op, reg, None, bump * (Tt <= 0.9), 1, 1)
    a = log_kappa_weighted_norm(early.z_d, W, op.quad_weights)
    b = log_kappa_weighted_norm(later.z_d, W, op.quad_weights)
    assert math.isfinite(a) and b > a            # mass closer to T costs more
    full = make_follower_problem(op, reg, None, bump, 1, 1)
    with pytest.warns(AdmissibilityWarning):
        assert math.isinf(check_kappa_admissibility(full.z_d, W, op.quad_weights))
    zero = make_follower_problem(op, reg, None, None, 1, 1)
    assert kappa_weighted_norm(zero.z_d, W, op.quad_weights) == 0.0
