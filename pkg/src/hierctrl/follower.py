"""Low-regret follower control for a fixed leader h.

The follower minimises

    J^γ(v) = ‖(y - z_d) χ_d‖²_Q + μ ‖v‖²_{O_T} - ‖z_d‖²_{O_d^T} + (1/γ) ‖S(0)‖²

where y solves the state equation with source v χ_O + h χ_ω and zero initial
data, and S is the backward sensitivity driven by y χ_d. J^γ is a coercive
quadratic, so it is minimised by conjugate gradients with the matrix-free
gradient 2 (μ v + q) χ_O, q coming from the sequential chain y → S → p → q.

Controls are forward-oriented fields; only their slab values matter. All
products use the operator's quadrature weights, which is the product in which
the backward solver is the exact adjoint of the forward one.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .domain import Regions
from .pde_core import (
    FORWARD,
    Field,
    ParabolicOperator,
    SolverError,
    from_slabs,
    inner_q,
    inner_x,
    solve_backward,
    solve_forward,
)

FieldLike = Union[Field, np.ndarray, None]


class NonConvergenceError(SolverError):
    """An iterative solver stopped at ``max_iter`` above tolerance."""

    def __init__(self, message: str, residual: float, iterations: int, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.diagnostics = diagnostics or {}


def as_field(v: FieldLike, op: ParabolicOperator) -> Field:
    """Forward-oriented field from a Field, a full array or None (zero)."""
    g = op.grid
    if v is None:
        return Field(g.zeros(), g, FORWARD)
    if isinstance(v, Field):
        return v
    return Field(np.array(v, dtype=float), g, FORWARD)


@dataclass(frozen=True)
class FollowerProblem:
    """Data for the follower: operator, masks, leader control and target.

    ``gamma = inf`` switches the low-regret coupling off (classical tracking).
    """

    op: ParabolicOperator = field(repr=False)
    regions: Regions = field(repr=False)
    h: Field = field(repr=False)
    z_d: Field = field(repr=False)
    gamma: float
    mu: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if np.any(self.z_d.values[:, ~self.regions.O_d.indicator] != 0.0):
            raise ValueError("z_d must vanish outside O_d")
        if np.any(self.h.values[:, ~self.regions.omega.indicator] != 0.0):
            raise ValueError("h must vanish outside omega")

    @property
    def grid(self):
        return self.op.grid

    @property
    def inv_sqrt_gamma(self) -> float:
        return 0.0 if math.isinf(self.gamma) else 1.0 / math.sqrt(self.gamma)

    @property
    def chi_O(self) -> np.ndarray:
        return self.regions.O.as_float()

    @property
    def chi_d(self) -> np.ndarray:
        return self.regions.O_d.as_float()

    @property
    def chi_omega(self) -> np.ndarray:
        return self.regions.omega.as_float()

    def ip(self, a: Field, b: Field, mask=None) -> float:
        return inner_q(a, b, mask, self.op.quad_weights)

    def norm(self, a: Field, mask=None) -> float:
        return math.sqrt(max(self.ip(a, a, mask), 0.0))

    @property
    def norm_h(self) -> float:
        return self.norm(self.h, self.chi_omega)

    @property
    def norm_z_d(self) -> float:
        return self.norm(self.z_d, self.chi_d)

    def with_h(self, h: FieldLike) -> "FollowerProblem":
        return replace(self, h=as_field(h, self.op))

    def with_gamma(self, gamma: float) -> "FollowerProblem":
        return replace(self, gamma=gamma)


def make_follower_problem(op: ParabolicOperator, regions: Regions, h: FieldLike = None,
                          z_d: FieldLike = None, gamma: float = 1.0, mu: float = 1.0) -> FollowerProblem:
    """Build a problem, masking h to ω and z_d to O_d."""
    h_f = as_field(h, op)
    z_f = as_field(z_d, op)
    h_f = Field(h_f.values * regions.omega.as_float(), op.grid, FORWARD)
    z_f = Field(z_f.values * regions.O_d.as_float(), op.grid, FORWARD)
    return FollowerProblem(op=op, regions=regions, h=h_f, z_d=z_f, gamma=float(gamma), mu=float(mu))


@dataclass(frozen=True)
class Chain:
    y: Field
    S: Field
    p: Field
    q: Field


def _chain(prob: FollowerProblem, v: Field, h: Field, z_d: Optional[Field]) -> Chain:
    op = prob.op
    src = Field(v.values * prob.chi_O + h.values * prob.chi_omega, prob.grid, FORWARD)
    y = solve_forward(op, None, src)
    S = solve_backward(op, None, Field(y.values * prob.chi_d, prob.grid, FORWARD))
    c = prob.inv_sqrt_gamma
    p = solve_forward(op, c * S.initial, None)
    track = y.values - (z_d.values if z_d is not None else 0.0) + c * p.values
    q = solve_backward(op, None, Field(track * prob.chi_d, prob.grid, FORWARD))
    return Chain(y, S, p, q)


def chain_solve(v: FieldLike, prob: FollowerProblem) -> tuple[Field, Field, Field, Field]:
    """Sequential evaluation of (y, S, p, q) for a given follower control."""
    c = _chain(prob, as_field(v, prob.op), prob.h, prob.z_d)
    return c.y, c.S, c.p, c.q


def _J_from_chain(prob: FollowerProblem, v: Field, c: Chain) -> float:
    err = c.y - prob.z_d
    s0 = c.S.initial
    pen = 0.0 if math.isinf(prob.gamma) else inner_x(s0, s0, prob.op.quad_weights) / prob.gamma
    return (prob.ip(err, err, prob.chi_d) + prob.mu * prob.ip(v, v, prob.chi_O)
            - prob.norm_z_d**2 + pen)


def eval_J_gamma(v: FieldLike, prob: FollowerProblem) -> float:
    v = as_field(v, prob.op)
    return _J_from_chain(prob, v, _chain(prob, v, prob.h, prob.z_d))


def _control_from_adjoint(q: Field, mask: np.ndarray) -> Field:
    """Carry backward slab values of q onto a forward control field, masked."""
    return from_slabs(q.slabs() * mask, q.grid, FORWARD)


def grad_J_gamma(v: FieldLike, prob: FollowerProblem) -> Field:
    """2 (μ v + q) χ_O as a forward-oriented field."""
    v = as_field(v, prob.op)
    c = _chain(prob, v, prob.h, prob.z_d)
    qv = _control_from_adjoint(c.q, prob.chi_O)
    return from_slabs(2.0 * (prob.mu * v.slabs() * prob.chi_O + qv.slabs()), prob.grid, FORWARD)


# ---------------------------------------------------------------------------
# conjugate gradients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FollowerSolution:
    v: Field = field(repr=False)
    y: Field = field(repr=False)
    S: Field = field(repr=False)
    p: Field = field(repr=False)
    q: Field = field(repr=False)
    J_gamma_value: float
    residual: float                 # ‖μv + q‖ / max(1, ‖q‖) on O_T
    relative_residual: float        # ‖μv + q‖ / ‖q‖ (0 when q ≡ 0)
    iterations: int
    J_history: tuple = field(default=(), repr=False)
    gamma: float = 1.0
    mu: float = 1.0
    norm_v: float = 0.0
    norm_h: float = 0.0
    norm_z_d: float = 0.0
    norm_S0: float = 0.0

    @property
    def empirical_C(self) -> float:
        """‖v‖ / (‖z_d‖ + ‖h‖), the observed constant of the γ-uniform bound."""
        return self.norm_v / max(self.norm_z_d + self.norm_h, 1e-300)

    @property
    def interb_bound(self) -> float:
        return self.norm_z_d / math.sqrt(self.mu) + self.norm_h

    def interb_holds(self, rtol: float = 1e-10) -> bool:
        return self.norm_v <= self.interb_bound * (1.0 + rtol) + 1e-300

    def to_record(self) -> dict:
        return {
            "gamma": self.gamma, "mu": self.mu, "residual": self.residual,
            "relative_residual": self.relative_residual, "iterations": self.iterations,
            "J_gamma": self.J_gamma_value, "norm_v": self.norm_v, "norm_h": self.norm_h,
            "norm_z_d": self.norm_z_d, "norm_S0": self.norm_S0,
            "S0_over_sqrt_gamma": (self.norm_S0 * (0.0 if math.isinf(self.gamma) else 1.0 / math.sqrt(self.gamma))),
            "empirical_C": self.empirical_C, "interb_bound": self.interb_bound,
            "interb_holds": self.interb_holds(),
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_record(), indent=2, sort_keys=True))

    def write_fields(self, directory, prefix: str = "follower") -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name in ("v", "y", "S", "p", "q"):
            getattr(self, name).to_csv(d / f"{prefix}_{name}.csv")


def solve_lowregret(prob: FollowerProblem, tol: float = 1e-8, max_iter: int = 500,
                    v0: FieldLike = None) -> FollowerSolution:
    """Minimise J^γ by conjugate gradients in the weighted L²(O_T) product.

    Stops when ‖μ v + q‖ ≤ tol ‖q‖ on O_T. Each iteration costs one linear
    chain (four parabolic solves).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    grid = prob.grid
    chi = prob.chi_O
    mu = prob.mu

    def ip(a, b):
        return prob.ip(from_slabs(a, grid), from_slabs(b, grid), chi)

    zero = Field(grid.zeros(), grid, FORWARD)

    def hess(d):  # μ d + q_lin(d) on O
        c = _chain(prob, from_slabs(d, grid), zero, None)
        return (mu * d + c.q.slabs()) * chi

    v = as_field(v0, prob.op).slabs() * chi if v0 is not None else np.zeros((grid.n_t, grid.n_x + 2))
    c0 = _chain(prob, from_slabs(v, grid), prob.h, prob.z_d)
    q = c0.q.slabs() * chi
    r = -(mu * v + q)
    J = _J_from_chain(prob, from_slabs(v, grid), c0)
    history = [J]

    def converged(r, v):
        nr = math.sqrt(max(ip(r, r), 0.0))
        nq = math.sqrt(max(ip(mu * v + r, mu * v + r), 0.0))  # q = -(μv + r)
        return nr <= tol * nq or nr == 0.0

    it = 0
    d = r.copy()
    rr = ip(r, r)
    while not converged(r, v):
        if it >= max_iter:
            res = math.sqrt(rr) / max(math.sqrt(ip(mu * v + r, mu * v + r)), 1e-300)
            raise NonConvergenceError(
                f"follower CG did not reach tol={tol} in {max_iter} iterations (relative residual {res:.3e})",
                residual=res, iterations=it)
        Ad = hess(d)
        curv = ip(d, Ad)
        step = rr / curv
        v = v + step * d
        r = r - step * Ad
        # J(v + s d) = J(v) - 2 s <r, d> + s² <Ad, d>
        J = J - 2.0 * step * ip(r + step * Ad, d) + step**2 * curv
        history.append(J)
        rr_new = ip(r, r)
        d = r + (rr_new / rr) * d
        rr = rr_new
        it += 1

    v_f = from_slabs(v, grid)
    c = _chain(prob, v_f, prob.h, prob.z_d)
    qs = c.q.slabs() * chi
    res_vec = from_slabs(mu * v + qs, grid)
    nres = prob.norm(res_vec, chi)
    nq = prob.norm(from_slabs(qs, grid), chi)
    return FollowerSolution(
        v=v_f, y=c.y, S=c.S, p=c.p, q=c.q,
        J_gamma_value=_J_from_chain(prob, v_f, c),
        residual=nres / max(1.0, nq),
        relative_residual=nres / nq if nq > 0 else 0.0,
        iterations=it, J_history=tuple(history), gamma=prob.gamma, mu=mu,
        norm_v=prob.norm(v_f, chi), norm_h=prob.norm_h, norm_z_d=prob.norm_z_d,
        norm_S0=math.sqrt(inner_x(c.S.initial, c.S.initial, prob.op.quad_weights)),
    )


# ---------------------------------------------------------------------------
# decomposition of the regret functional
# ---------------------------------------------------------------------------

def tracking_cost(prob: FollowerProblem, h: Field, v: Field, g) -> float:
    """J(h; v, g) = ‖(y - z_d) χ_d‖²_Q + μ ‖v‖²_{O_T} from a direct state solve."""
    src = Field(v.values * prob.chi_O + h.values * prob.chi_omega, prob.grid, FORWARD)
    y = solve_forward(prob.op, g, src)
    err = y - prob.z_d
    return prob.ip(err, err, prob.chi_d) + prob.mu * prob.ip(v, v, prob.chi_O)


def decomposition_check(g, v: FieldLike, prob: FollowerProblem) -> float:
    """Relative residual of J(h;v,g) = J(0;0,g) + J(h;v,0) - ‖z_d‖² + 2 <g, S(0)>."""
    v = as_field(v, prob.op)
    g = np.zeros(prob.grid.n_x + 2) if g is None else np.asarray(g, dtype=float)
    zero = as_field(None, prob.op)
    lhs = tracking_cost(prob, prob.h, v, g)
    t_g = tracking_cost(prob, zero, zero, g)
    t_hv = tracking_cost(prob, prob.h, v, None)
    S = _chain(prob, v, prob.h, prob.z_d).S
    cross = 2.0 * inner_x(g, S.initial, prob.op.quad_weights)
    zz = prob.norm_z_d**2
    rhs = t_g + t_hv - zz + cross
    scale = max(abs(lhs), abs(t_g), abs(t_hv), zz, abs(cross), 1e-300)
    return abs(lhs - rhs) / scale


# ---------------------------------------------------------------------------
# γ sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GammaSweep:
    rows: tuple
    C_fit: float                      # ‖S(0)‖ / (√γ (‖h‖ + ‖z_d‖)) at the first γ
    S0_decreasing: bool
    sqrt_gamma_bound: bool
    v_variation: float                # max ‖v‖ / min ‖v‖
    explicit_bound: bool = True       # ‖S(0)‖ ≤ √γ (‖z_d‖ + √μ ‖h‖) at every γ
    solutions: tuple = field(default=(), repr=False)

    @property
    def v_bounded(self) -> bool:
        return self.v_variation <= 2.0

    @property
    def passed(self) -> bool:
        return self.S0_decreasing and self.sqrt_gamma_bound and self.v_bounded

    def to_csv(self, path) -> None:
        keys = list(self.rows[0].keys())
        with open(Path(path), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for row in self.rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def gamma_sweep(prob: FollowerProblem, gammas, tol: float = 1e-10, max_iter: int = 2000,
                rtol: float = 1e-9) -> GammaSweep:
    """Solve the follower for each γ (decreasing) and test the √γ decay of ‖S(0)‖."""
    gammas = [float(g) for g in gammas]
    if any(g <= 0 for g in gammas) or any(b >= a for a, b in zip(gammas, gammas[1:])):
        raise ValueError("gammas must be positive and strictly decreasing")
    data = prob.norm_h + prob.norm_z_d
    sols = [solve_lowregret(prob.with_gamma(g), tol=tol, max_iter=max_iter) for g in gammas]
    rows = []
    for g, s in zip(gammas, sols):
        rows.append({
            "gamma": g, "norm_v": s.norm_v, "norm_S0": s.norm_S0,
            "S0_over_sqrt_gamma": s.norm_S0 / math.sqrt(g),
            "iterations": s.iterations, "residual": s.relative_residual, "J_gamma": s.J_gamma_value,
        })
    C_fit = rows[0]["norm_S0"] / (math.sqrt(gammas[0]) * max(data, 1e-300))
    s0 = [r["norm_S0"] for r in rows]
    decreasing = all(b <= a * (1.0 + rtol) for a, b in zip(s0, s0[1:]))
    bound = all(r["norm_S0"] <= math.sqrt(r["gamma"]) * C_fit * data * (1.0 + rtol) for r in rows)
    nv = [r["norm_v"] for r in rows]
    variation = max(nv) / min(nv) if min(nv) > 0 else (1.0 if max(nv) == 0 else math.inf)
    c_explicit = prob.norm_z_d + math.sqrt(prob.mu) * prob.norm_h
    explicit = all(r["norm_S0"] <= math.sqrt(r["gamma"]) * c_explicit * (1.0 + rtol) for r in rows)
    return GammaSweep(rows=tuple(rows), C_fit=C_fit, S0_decreasing=decreasing,
                      sqrt_gamma_bound=bound, v_variation=variation, explicit_bound=explicit,
                      solutions=tuple(sols))
