"""Leader control by penalisation of the terminal state.

The leader minimises

    J_ε(h) = (1/2ε) ‖y(T)‖² + ½ ‖h‖²_{ω_T}

where y is the state driven by h and by the follower's low-regret response
v^γ(h). The map h ↦ y(T) is affine, so J_ε is a quadratic minimised by
conjugate gradients. Its gradient h - ρ χ_ω comes from the adjoint quartet

    φ   forward,  φ(0) = 0,           source -ρ χ_O / μ
    ζ   backward, ζ(T) = 0,           source φ χ_d / √γ
    ψ   forward,  ψ(0) = ζ(0) / √γ,   no source
    ρ   backward, ρ(T) = ρ_T,         source (ψ + φ) χ_d

with ρ_T = -y(T)/ε, solved by relaxed fixed-point iteration on ρ.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .domain import WeightSet
from .follower import (
    FieldLike,
    FollowerProblem,
    FollowerSolution,
    NonConvergenceError,
    as_field,
    solve_lowregret,
)
from .pde_core import (
    BACKWARD,
    FORWARD,
    Field,
    from_slabs,
    inner_x,
    solve_backward,
    solve_forward,
)


class AdmissibilityWarning(UserWarning):
    """The target is not square integrable against the weight 1/κ."""


@dataclass(frozen=True)
class LeaderProblem:
    follower: FollowerProblem = field(repr=False)
    epsilon: float = 1e-2
    follower_tol: Optional[float] = None      # default: outer tol / 100
    quartet_tol: float = 1e-12
    relaxation: float = 1.0
    quartet_max_iter: int = 400
    min_relaxation: float = 1.0 / 16.0
    follower_max_iter: int = 2000

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 < self.relaxation <= 1.0:
            raise ValueError("relaxation must lie in (0, 1]")
        if not self.quartet_tol > 0:
            raise ValueError("quartet_tol must be positive")
        reg = self.follower.regions
        if not (reg.omega.indicator & reg.O_d.indicator).any():
            raise ValueError("omega and O_d must intersect")

    @property
    def op(self):
        return self.follower.op

    @property
    def grid(self):
        return self.follower.grid

    @property
    def chi_omega(self) -> np.ndarray:
        return self.follower.chi_omega

    def with_epsilon(self, eps: float) -> "LeaderProblem":
        return replace(self, epsilon=float(eps))

    def norm_h(self, h: Field) -> float:
        return self.follower.norm(h, self.chi_omega)


# ---------------------------------------------------------------------------
# adjoint quartet
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdjointQuartet:
    rho: Field = field(repr=False)
    psi: Field = field(repr=False)
    phi_adj: Field = field(repr=False)
    zeta: Field = field(repr=False)
    fp_iterations: int = 0
    fp_residual: float = 0.0
    relaxation: float = 1.0

    @property
    def varrho(self) -> Field:
        """ψ + φ, the combination entering the ρ equation."""
        return Field(self.psi.values + self.phi_adj.values, self.psi.grid, FORWARD)


def _inv(x: float) -> float:
    return 0.0 if math.isinf(x) else 1.0 / x


def quartet_sweep(rho: Field, rho_T, fp: FollowerProblem):
    """One pass φ → ζ → ψ → ρ_new for a given ρ; returns all four fields."""
    op, grid = fp.op, fp.grid
    c = fp.inv_sqrt_gamma
    src_phi = Field(-_inv(fp.mu) * rho.values * fp.chi_O, grid, BACKWARD)
    phi = solve_forward(op, None, src_phi)
    zeta = solve_backward(op, None, Field(c * phi.values * fp.chi_d, grid, FORWARD))
    psi = solve_forward(op, c * zeta.initial, None)
    rho_new = solve_backward(op, rho_T, Field((psi.values + phi.values) * fp.chi_d, grid, FORWARD))
    return phi, zeta, psi, rho_new


def adjoint_quartet_solve(rho_T, prob: LeaderProblem, rho0: Optional[Field] = None) -> AdjointQuartet:
    """Relaxed fixed-point iteration on ρ, solved for ρ / ‖ρ_T‖ and rescaled.

    The relaxation is halved whenever the increment grows; once it would fall
    below ``min_relaxation`` (or ``quartet_max_iter`` is reached) the coupling
    is considered too strong and a NonConvergenceError is raised.
    """
    fp = prob.follower
    grid = fp.grid
    rho_T = np.asarray(rho_T, dtype=float)
    w = fp.op.quad_weights
    scale = math.sqrt(inner_x(rho_T, rho_T, w))
    zero = Field(grid.zeros(), grid, BACKWARD)
    if scale == 0.0:
        fz = Field(grid.zeros(), grid, FORWARD)
        return AdjointQuartet(rho=zero, psi=fz, phi_adj=fz, zeta=zero, fp_iterations=0, fp_residual=0.0,
                              relaxation=prob.relaxation)
    target = rho_T / scale
    rho = zero if rho0 is None else Field(rho0.values / scale, grid, BACKWARD)

    def qnorm(f: Field) -> float:
        return fp.norm(f)

    omega_r = prob.relaxation
    prev_inc = math.inf
    for it in range(1, prob.quartet_max_iter + 1):
        phi, zeta, psi, rho_new = quartet_sweep(rho, target, fp)
        step = rho_new - rho
        inc = qnorm(step)
        ref = qnorm(rho_new)
        if inc <= prob.quartet_tol * ref or inc == 0.0:
            # re-run the chain on the converged ρ so φ, ζ, ψ are consistent with it
            phi, zeta, psi, _ = quartet_sweep(rho_new, target, fp)
            s = scale
            return AdjointQuartet(rho=rho_new * s, psi=psi * s, phi_adj=phi * s, zeta=zeta * s,
                                  fp_iterations=it, fp_residual=inc / ref, relaxation=omega_r)
        if inc > prev_inc and it > 1:
            omega_r *= 0.5
            if omega_r < prob.min_relaxation:
                raise NonConvergenceError(
                    f"adjoint quartet fixed point diverges (mu={fp.mu}, gamma={fp.gamma}): "
                    "relaxation fell below its floor; the coupling 1/(mu sqrt(gamma)) is too strong, "
                    "increase mu or gamma",
                    residual=inc / max(ref, 1e-300), iterations=it)
        prev_inc = inc
        rho = Field(rho.values + omega_r * step.values, grid, BACKWARD)
    raise NonConvergenceError(
        f"adjoint quartet did not converge in {prob.quartet_max_iter} iterations "
        f"(mu={fp.mu}, gamma={fp.gamma}, last relaxation {omega_r}); increase mu or gamma",
        residual=inc / max(ref, 1e-300), iterations=prob.quartet_max_iter)


def quartet_residuals(q: AdjointQuartet, rho_T, fp: FollowerProblem) -> dict:
    """Relative residual of each of the four discrete equations at ``q``."""
    phi, zeta, psi, rho = quartet_sweep(q.rho, rho_T, fp)
    out = {}
    for name, got, ref in (("phi_adj", q.phi_adj, phi), ("zeta", q.zeta, zeta),
                           ("psi", q.psi, psi), ("rho", q.rho, rho)):
        denom = max(fp.norm(ref), 1e-300)
        out[name] = fp.norm(got - ref) / denom if fp.norm(ref) > 0 else fp.norm(got)
    return out


# ---------------------------------------------------------------------------
# leader functional
# ---------------------------------------------------------------------------

def _inner_tol(prob: LeaderProblem, outer_tol: float = 1e-8) -> float:
    return prob.follower_tol if prob.follower_tol is not None else outer_tol / 100.0


def leader_state_map(h: FieldLike, prob: LeaderProblem, tol: Optional[float] = None):
    """y(T) for leader control h with the follower's low-regret response."""
    fp = prob.follower.with_h(as_field(h, prob.op).values * prob.chi_omega)
    sol = solve_lowregret(fp, tol=tol or _inner_tol(prob), max_iter=prob.follower_max_iter)
    return sol.y.final.copy(), sol


def eval_J_eps(h: FieldLike, prob: LeaderProblem) -> float:
    h = as_field(h, prob.op)
    yT, _ = leader_state_map(h, prob)
    return (0.5 / prob.epsilon) * inner_x(yT, yT, prob.op.quad_weights) + 0.5 * prob.norm_h(h) ** 2


def _control_from_backward(rho: Field, mask: np.ndarray) -> Field:
    return from_slabs(rho.slabs() * mask, rho.grid, FORWARD)


def grad_J_eps(h: FieldLike, prob: LeaderProblem) -> Field:
    """(h - ρ) χ_ω with ρ from the quartet with terminal data -y(T)/ε."""
    h = as_field(h, prob.op)
    yT, _ = leader_state_map(h, prob)
    q = adjoint_quartet_solve(-yT / prob.epsilon, prob)
    rho_c = _control_from_backward(q.rho, prob.chi_omega)
    return from_slabs((h.slabs() - rho_c.slabs()) * prob.chi_omega, prob.grid, FORWARD)


@dataclass(frozen=True)
class LeaderDiagnostics:
    epsilon: float
    norm_h: float
    norm_yT: float
    J_eps: float
    outer_iters: int
    stationarity: float               # ‖h - ρ‖_{ω_T}
    stationarity_rel: float           # relative to ‖h‖
    identity_lhs: float               # ‖h‖² + ‖y(T)‖²/ε
    identity_rhs: float               # <z_d, φ>_{O_d^T}
    identity_residual: float          # relative gap
    follower_residual: float
    quartet_iterations: int
    J_history: tuple = field(default=(), repr=False)

    @property
    def norm_yT_sq(self) -> float:
        return self.norm_yT**2

    def to_record(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "epsilon", "norm_h", "norm_yT", "J_eps", "outer_iters", "stationarity", "stationarity_rel",
            "identity_lhs", "identity_rhs", "identity_residual", "follower_residual", "quartet_iterations")}
        d["norm_yT_sq"] = self.norm_yT_sq
        return d


@dataclass(frozen=True)
class LeaderSolution:
    h: Field = field(repr=False)
    follower: FollowerSolution = field(repr=False)
    quartet: AdjointQuartet = field(repr=False)
    diagnostics: LeaderDiagnostics = None

    def write_fields(self, directory, prefix: str = "leader") -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.h.to_csv(d / f"{prefix}_h.csv")
        self.follower.write_fields(d, prefix=f"{prefix}_follower")
        for name in ("rho", "psi", "phi_adj", "zeta"):
            getattr(self.quartet, name).to_csv(d / f"{prefix}_{name}.csv")


def solve_null_control(prob: LeaderProblem, tol: float = 1e-9, max_iter: int = 300) -> LeaderSolution:
    """Minimise J_ε by CG in the weighted L²(ω_T) product.

    Stops when ‖h - ρ‖ ≤ tol ‖ρ(0)‖, ρ(0) being the adjoint at h = 0. Hessian
    products use the follower response to h alone (z_d = 0), so each outer
    iteration costs one follower solve and one quartet solve.
    """
    fp = prob.follower
    grid = fp.grid
    chi = prob.chi_omega
    w = prob.op.quad_weights
    eps = prob.epsilon
    inner = _inner_tol(prob, tol)
    lin = replace(prob, follower=replace(fp, z_d=Field(grid.zeros(), grid, FORWARD)))

    def ip(a, b):
        return fp.ip(from_slabs(a, grid), from_slabs(b, grid), chi)

    def adjoint_of(yT, problem):
        q = adjoint_quartet_solve(-yT / eps, problem)
        return _control_from_backward(q.rho, chi).slabs()

    def hess(d):
        yT, _ = leader_state_map(from_slabs(d, grid), lin, tol=inner)
        return d - adjoint_of(yT, lin)

    h = np.zeros((grid.n_t, grid.n_x + 2))
    yT0, _ = leader_state_map(from_slabs(h, grid), prob, tol=inner)
    r = adjoint_of(yT0, prob)                       # -∇J/1 at h = 0
    J = 0.5 / eps * inner_x(yT0, yT0, w)
    history = [J]
    r0 = math.sqrt(max(ip(r, r), 0.0))
    rr = r0**2
    d = r.copy()
    it = 0
    while math.sqrt(rr) > tol * r0 and r0 > 0.0:
        if it >= max_iter:
            raise NonConvergenceError(
                f"leader CG did not reach tol={tol} in {max_iter} iterations",
                residual=math.sqrt(rr) / r0, iterations=it,
                diagnostics={"epsilon": eps, "norm_h": math.sqrt(ip(h, h))})
        Ad = hess(d)
        curv = ip(d, Ad)
        step = rr / curv
        h = h + step * d
        J = J - step * ip(r, d) + 0.5 * step**2 * curv
        history.append(J)
        r = r - step * Ad
        rr_new = ip(r, r)
        d = r + (rr_new / rr) * d
        rr = rr_new
        it += 1

    return _finalize(prob, from_slabs(h, grid), it, tuple(history), inner)


def _finalize(prob: LeaderProblem, h: Field, iters: int, history: tuple, inner: float) -> LeaderSolution:
    fp = prob.follower
    w = prob.op.quad_weights
    chi = prob.chi_omega
    yT, fsol = leader_state_map(h, prob, tol=inner)
    q = adjoint_quartet_solve(-yT / prob.epsilon, prob)
    rho_c = _control_from_backward(q.rho, chi)
    nh = prob.norm_h(h)
    stat = fp.norm(h - rho_c, chi)
    yy = inner_x(yT, yT, w)
    lhs = nh**2 + yy / prob.epsilon
    rhs = fp.ip(fp.z_d, q.phi_adj, fp.chi_d)
    diag = LeaderDiagnostics(
        epsilon=prob.epsilon, norm_h=nh, norm_yT=math.sqrt(yy),
        J_eps=0.5 * yy / prob.epsilon + 0.5 * nh**2, outer_iters=iters,
        stationarity=stat, stationarity_rel=stat / nh if nh > 0 else stat,
        identity_lhs=lhs, identity_rhs=rhs,
        identity_residual=abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300) if max(abs(lhs), abs(rhs)) > 0 else 0.0,
        follower_residual=fsol.relative_residual, quartet_iterations=q.fp_iterations,
        J_history=history,
    )
    return LeaderSolution(h=h, follower=fsol, quartet=q, diagnostics=diag)


# ---------------------------------------------------------------------------
# ε sweep and target admissibility
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ("epsilon", "norm_h", "norm_yT_sq", "J_eps", "outer_iters")


@dataclass(frozen=True)
class EpsilonSweep:
    rows: tuple
    C_fit: float                     # ‖y(T)‖² / √ε at the largest ε
    monotone: bool
    sqrt_eps_bound: bool
    h_variation: float               # max ‖h_ε‖ / ‖h_ε‖ at the largest ε
    diagnostics: tuple = field(default=(), repr=False)

    @property
    def h_bounded(self) -> bool:
        return self.h_variation <= 2.0

    @property
    def passed(self) -> bool:
        return self.monotone and self.sqrt_eps_bound and self.h_bounded

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(SWEEP_COLUMNS)
            for row in self.rows:
                wr.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in SWEEP_COLUMNS])

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps({
            "rows": list(self.rows), "C_fit": self.C_fit, "monotone": self.monotone,
            "sqrt_eps_bound": self.sqrt_eps_bound, "h_variation": self.h_variation,
        }, indent=2, sort_keys=True))


def epsilon_sweep(prob: LeaderProblem, eps_list, tol: float = 1e-9, max_iter: int = 300,
                  slack: float = 0.05) -> EpsilonSweep:
    """Solve for each ε (decreasing) and test the decay of ‖y(T)‖²."""
    eps_list = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be positive and strictly decreasing")
    diags = [solve_null_control(prob.with_epsilon(e), tol=tol, max_iter=max_iter).diagnostics
             for e in eps_list]
    rows = tuple({"epsilon": d.epsilon, "norm_h": d.norm_h, "norm_yT_sq": d.norm_yT_sq,
                  "J_eps": d.J_eps, "outer_iters": d.outer_iters} for d in diags)
    y2 = [r["norm_yT_sq"] for r in rows]
    C = y2[0] / math.sqrt(eps_list[0])
    monotone = all(b <= a * (1.0 + slack) for a, b in zip(y2, y2[1:]))
    bound = all(r["norm_yT_sq"] <= C * math.sqrt(r["epsilon"]) * (1.0 + 1e-12) for r in rows)
    nh = [r["norm_h"] for r in rows]
    variation = (max(nh) / nh[0]) if nh[0] > 0 else (1.0 if max(nh) == 0 else math.inf)
    return EpsilonSweep(rows=rows, C_fit=C, monotone=monotone, sqrt_eps_bound=bound,
                        h_variation=variation, diagnostics=tuple(diags))


def log_kappa_weighted_norm(z_d: Field, weights: WeightSet, quad_weights: np.ndarray) -> float:
    """log ‖z_d / κ‖_{L²(Q)}; +inf where κ vanishes under a nonzero z_d, -inf for z_d = 0."""
    vals = z_d.slabs()
    log_k = slabs_1d(weights.s * weights.phi_hat, z_d.orientation)
    nz = (vals != 0.0) & (quad_weights > 0)[None, :]
    if np.any(nz & ~np.isfinite(log_k)[:, None]):
        return math.inf
    if not nz.any():
        return -math.inf
    rows, cols = np.nonzero(nz)
    logs = (2.0 * np.log(np.abs(vals[rows, cols])) - 2.0 * log_k[rows]
            + np.log(quad_weights[cols]) + math.log(z_d.grid.dt))
    m = float(np.max(logs))
    return 0.5 * (m + math.log(float(np.sum(np.exp(logs - m)))))


def kappa_weighted_norm(z_d: Field, weights: WeightSet, quad_weights: np.ndarray) -> float:
    """‖z_d / κ‖_{L²(Q)}; inf when κ vanishes under z_d or the value overflows."""
    ln = log_kappa_weighted_norm(z_d, weights, quad_weights)
    return math.exp(ln) if ln < 709.0 else math.inf


def slabs_1d(v: np.ndarray, orientation: str) -> np.ndarray:
    return v[1:] if orientation == FORWARD else v[:-1]


def check_kappa_admissibility(z_d: Field, weights: WeightSet, quad_weights: np.ndarray,
                              limit: float = 1e150) -> float:
    """Return log ‖z_d / κ‖ and warn when the norm is infinite or above ``limit``."""
    val = log_kappa_weighted_norm(z_d, weights, quad_weights)
    if not val < math.log(limit):
        shown = "inf" if math.isinf(val) else f"exp({val:.1f})"
        warnings.warn(f"target not admissible: ||z_d / kappa|| = {shown}; "
                      "z_d should vanish fast enough as t -> T", AdmissibilityWarning, stacklevel=2)
    return val
