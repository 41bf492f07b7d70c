"""Empirical checks of the functional inequalities behind the controllability proof.

Ratios are estimated by Monte-Carlo over random data. Carleman weights vanish
super-exponentially at t = 0 and t = T, so every weighted integral is
accumulated in log space and only exponentiated as a ratio.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .domain import (
    ConsistencyError,
    DiffusionCoefficient,
    Grid,
    RegionMask,
    Regions,
    WeightSet,
    hardy_poincare_ratio,
)
from .leader import AdjointQuartet, LeaderProblem, adjoint_quartet_solve
from .pde_core import ParabolicOperator


@dataclass
class InequalityReport:
    name: str
    samples: int
    max_ratio: float
    ratios: list = field(repr=False)
    bound: Optional[float] = None
    passed: bool = True
    skipped: int = 0
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.bound is not None:
            self.passed = bool(self.passed and self.max_ratio <= self.bound)

    def to_record(self) -> dict:
        d = asdict(self)
        d.pop("ratios")
        return d

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_record(), indent=2, sort_keys=True, default=float))

    def ratios_to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "ratio"])
            for i, r in enumerate(self.ratios):
                w.writerow([i, repr(float(r))])


def _report(name, ratios, bound=None, skipped=0, passed=True, **details) -> InequalityReport:
    ratios = [float(r) for r in ratios]
    mx = max(ratios) if ratios else 0.0
    ok = passed and all(math.isfinite(r) for r in ratios)
    return InequalityReport(name=name, samples=len(ratios), max_ratio=mx, ratios=ratios, bound=bound,
                            passed=ok, skipped=skipped, details=details)


# ---------------------------------------------------------------------------
# Hardy–Poincaré
# ---------------------------------------------------------------------------

def random_hardy_profile(rng: np.random.Generator, x: np.ndarray, max_degree: int = 6) -> np.ndarray:
    """x times a random polynomial, so z(0) = 0."""
    deg = int(rng.integers(0, max_degree + 1))
    coeffs = rng.standard_normal(deg + 1)
    return x * np.polynomial.polynomial.polyval(x, coeffs)


def check_hardy(k: DiffusionCoefficient, n_samples: int = 100, n_nodes: int = 2001,
                seed: int = 0) -> InequalityReport:
    """Ratios ∫(k/x²) z² / ∫ k z_x² over random admissible z, bound 4/(1-θ)² with θ = α."""
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, n_nodes)
    ratios, skipped = [], 0
    for _ in range(n_samples):
        z = random_hardy_profile(rng, x)
        try:
            ratios.append(hardy_poincare_ratio(z, k))
        except ValueError:
            skipped += 1
    return _report("hardy", ratios, bound=4.0 / (1.0 - k.alpha) ** 2, skipped=skipped, theta=k.alpha)


# ---------------------------------------------------------------------------
# Monte-Carlo adjoint data
# ---------------------------------------------------------------------------

SMOOTHING_STEPS = 2
SMOOTHING_DURATION = 0.05


def sample_terminal_data(op: ParabolicOperator, rng: np.random.Generator, n: int) -> list[np.ndarray]:
    """Gaussian node values smoothed by two implicit diffusion steps, boundary zeroed.

    The smoothing steps have fixed physical length, so the sample law converges
    under grid refinement.
    """
    from scipy.linalg import solve_banded

    nx = op.grid.n_x
    tau = SMOOTHING_DURATION
    ab = np.zeros((3, nx))
    kd = (op.k_faces[:-1] + op.k_faces[1:]) / op.grid.dx**2
    ab[1] = op.mass + tau * kd
    ab[0, 1:] = tau * op.off
    ab[2, :-1] = tau * op.off
    out = []
    for _ in range(n):
        u = rng.standard_normal(nx)
        for _ in range(SMOOTHING_STEPS):
            u = solve_banded((1, 1), ab, op.mass * u)
        full = np.zeros(nx + 2)
        full[1:-1] = u
        out.append(full)
    return out


def sample_quartets(prob: LeaderProblem, n: int, seed: int = 0) -> list[tuple[np.ndarray, AdjointQuartet]]:
    rng = np.random.default_rng(seed)
    return [(rT, adjoint_quartet_solve(rT, prob)) for rT in sample_terminal_data(prob.op, rng, n)]


# ---------------------------------------------------------------------------
# weighted space-time integrals
# ---------------------------------------------------------------------------

def _log_integral(log_w: np.ndarray, values_sq: np.ndarray, cell: np.ndarray) -> float:
    """log Σ w v² c over entries with w > 0 and v² > 0."""
    with np.errstate(divide="ignore"):
        terms = log_w + np.log(values_sq) + np.log(cell)
    terms = terms[np.isfinite(terms)]
    return float(logsumexp(terms)) if terms.size else -math.inf


def _interior_levels(grid: Grid) -> np.ndarray:
    return np.arange(1, grid.n_t)


def _node_cells(op: ParabolicOperator, mask: np.ndarray) -> np.ndarray:
    """dt * spatial weight on masked nodes, broadcast over time levels."""
    w = op.quad_weights * np.asarray(mask, dtype=float)
    return op.grid.dt * np.broadcast_to(w, (op.grid.n_t + 1, w.size))


def _face_mask(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    return m[:-1] & m[1:]


def caccioppoli_ratio(q: AdjointQuartet, weights: WeightSet, op: ParabolicOperator,
                      inner: np.ndarray, outer: np.ndarray) -> float:
    """∫∫_{ω'} (ρ_x² + ϱ_x²) e^{2sφ} / ∫∫_{ω₁} s²Θ² (ρ² + ϱ²) e^{2sφ}."""
    g = op.grid
    lv = _interior_levels(g)
    rho, vr = q.rho.values[lv], q.varrho.values[lv]
    s = weights.s
    logw = weights.log_weight(0.0)[lv]
    # faces: gradient between adjacent nodes, weight at the face from the mean exponent
    grad_sq = (np.diff(rho, axis=1) ** 2 + np.diff(vr, axis=1) ** 2) / g.dx**2
    logw_f = 0.5 * (logw[:, :-1] + logw[:, 1:])
    fm = _face_mask(inner)
    cell_f = np.where(fm, g.dt * g.dx, 0.0)[None, :] * np.ones((lv.size, 1))
    num = _log_integral(logw_f, grad_sq, cell_f)
    logw2 = weights.log_weight(2.0)[lv] + 2.0 * math.log(s)
    den = _log_integral(logw2, rho**2 + vr**2, _node_cells(op, outer)[lv])
    return _ratio(num, den)


def observability_ratio(q: AdjointQuartet, weights: WeightSet, op: ParabolicOperator,
                        omega: np.ndarray) -> float:
    """[∫ κ² φ² + ∫ η̂^{-2} ρ²] / ∫_{ω_T} ρ², all over Q."""
    g = op.grid
    lv = _interior_levels(g)
    ones = np.ones(g.n_x + 2)
    cells = _node_cells(op, ones)[lv]
    log_k2 = np.broadcast_to(weights.log_kappa_sq[lv][:, None], cells.shape)
    t1 = _log_integral(log_k2, q.phi_adj.values[lv] ** 2, cells)
    t2 = _log_integral(weights.log_eta_hat_inv_sq[lv], q.rho.values[lv] ** 2, cells)
    num = float(np.logaddexp(t1, t2))
    den = _log_integral(np.zeros(cells.shape), q.rho.values[lv] ** 2, _node_cells(op, omega)[lv])
    if den == -math.inf and num > -math.inf:
        raise ConsistencyError("observability: zero observation with nonzero left-hand side")
    return _ratio(num, den)


def _ratio(log_num: float, log_den: float) -> float:
    if log_den == -math.inf:
        return math.nan
    if log_num == -math.inf:
        return 0.0
    return math.exp(log_num - log_den)


def _collect(name, samples, fn) -> InequalityReport:
    ratios, skipped = [], 0
    for item in samples:
        q = item[1] if isinstance(item, tuple) else item
        r = fn(q)
        if math.isnan(r):
            skipped += 1
        else:
            ratios.append(r)
    return _report(name, ratios, skipped=skipped)


def check_caccioppoli(quartet_samples: Sequence, weights: WeightSet, op: ParabolicOperator,
                      regions: Regions, inner: Optional[RegionMask] = None) -> InequalityReport:
    """Empirical constant of the Caccioppoli inequality; ω' = ω₀ ⋐ ω₁ by default."""
    inner_m = (inner or regions.omega_0).indicator
    outer_m = regions.omega_1.indicator
    rep = _collect("caccioppoli", quartet_samples,
                   lambda q: caccioppoli_ratio(q, weights, op, inner_m, outer_m))
    rep.details.update(s=weights.s)
    return rep


def check_observability(quartet_samples: Sequence, weights: WeightSet, op: ParabolicOperator,
                        omega: RegionMask) -> InequalityReport:
    rep = _collect("observability", quartet_samples,
                   lambda q: observability_ratio(q, weights, op, omega.indicator))
    rep.details.update(s=weights.s)
    return rep


# ---------------------------------------------------------------------------
# weight orderings
# ---------------------------------------------------------------------------

def check_weight_orderings(weights: WeightSet, k: DiffusionCoefficient, alpha_cut: float = 0.5,
                           rtol: float = 1e-12) -> InequalityReport:
    """Pointwise scan of (4/3)Φ ≤ φ ≤ Φ and 2Φ ≤ φ on Q, plus the constants on [alpha_cut, 1].

    On x ≥ alpha_cut the constants C in (x²/k) e^{2sφ} ≤ C e^{2sΦ} and
    k e^{2sφ} ≤ C e^{2sΦ} are reported as maxima of the pointwise quotients.
    """
    g = weights.grid
    lv = _interior_levels(g)
    phi, Phi = weights.phi_w[lv], weights.Phi[lv]
    tol = rtol * np.abs(Phi)
    checks = {
        "four_thirds_Phi_le_phi": (4.0 / 3.0) * Phi - phi,
        "phi_le_Phi": phi - Phi,
        "two_Phi_le_phi": 2.0 * Phi - phi,
    }
    failures = {}
    for name, gap in checks.items():
        bad = gap > tol
        if bad.any():
            n, i = np.unravel_index(np.argmax(np.where(bad, gap, -np.inf)), gap.shape)
            failures[name] = {"t": float(g.t[lv[n]]), "x": float(g.x[i]), "gap": float(gap[n, i])}
    x = g.x
    sel = (x >= alpha_cut) & (x > 0)
    s = weights.s
    expo = 2.0 * s * (phi[:, sel] - Phi[:, sel])
    if np.any(expo > tol[:, sel] * 2.0 * s):
        failures.setdefault("exp_phi_le_exp_Phi", {"max_exponent": float(expo.max())})
    kx = k.k(x[sel])
    c_x2k = float(np.exp(np.max(np.log(x[sel] ** 2 / kx)[None, :] + expo)))
    c_k = float(np.exp(np.max(np.log(kx)[None, :] + expo)))
    ratios = [float(np.max(checks[n] / np.abs(Phi))) + 1.0 for n in checks]
    rep = _report("weight_orderings", ratios, passed=not failures,
                  failures=failures, C_x2_over_k=c_x2k, C_k=c_k, alpha_cut=alpha_cut)
    rep.passed = not failures
    return rep


# ---------------------------------------------------------------------------
# stability studies
# ---------------------------------------------------------------------------

def relative_spread(a: float, b: float) -> float:
    """|a - b| / a, the change of an empirical constant under refinement."""
    return abs(a - b) / abs(a) if a != 0 else (0.0 if b == 0 else math.inf)
