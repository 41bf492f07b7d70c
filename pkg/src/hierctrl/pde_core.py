"""Implicit solvers for z_t ± [-(k z_x)_x + a_0 z] = f with homogeneous Dirichlet data.

Time-level convention
---------------------
Every field carries an ``orientation``. Implicit Euler run forward in time
stores the slab (t_{j-1}, t_j] at its right end (level j); run backward, it
stores that slab at its left end (level j-1). Space-time integrals pair fields
slab by slab through :func:`slabs`. With this pairing the backward solver is the
exact transpose of the forward one, so the duality identity

    <z(T), w_T> - <z(0), w(0)> = <f, w>_Q - <z, F>_Q

holds to round-off. Optimisation gradients rely on that.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from numba import njit

from .domain import DiffusionCoefficient, Grid

FORWARD = "forward"
BACKWARD = "backward"


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class Field:
    values: np.ndarray = field(repr=False)
    grid: Grid = field(repr=False)
    orientation: str = FORWARD

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} != grid shape {self.grid.shape}")
        if self.orientation not in (FORWARD, BACKWARD):
            raise ValueError(f"bad orientation {self.orientation!r}")

    @property
    def initial(self) -> np.ndarray:
        return self.values[0]

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def slabs(self) -> np.ndarray:
        return slabs(self.values, self.orientation)

    def __add__(self, other: "Field") -> "Field":
        _same_kind(self, other)
        return Field(self.values + other.values, self.grid, self.orientation)

    def __sub__(self, other: "Field") -> "Field":
        _same_kind(self, other)
        return Field(self.values - other.values, self.grid, self.orientation)

    def __mul__(self, c: float) -> "Field":
        return Field(self.values * c, self.grid, self.orientation)

    __rmul__ = __mul__

    def to_csv(self, path) -> None:
        write_field_csv(path, self.grid, self.values)


def _same_kind(a: Field, b: Field) -> None:
    if a.orientation != b.orientation:
        raise ValueError("cannot combine fields with different orientations")


def slabs(values: np.ndarray, orientation: str) -> np.ndarray:
    """(n_t, n_x+2) array: one value per time slab."""
    return values[1:] if orientation == FORWARD else values[:-1]


def from_slabs(slab_values: np.ndarray, grid: Grid, orientation: str = FORWARD) -> Field:
    out = grid.zeros()
    if orientation == FORWARD:
        out[1:] = slab_values
    else:
        out[:-1] = slab_values
    return Field(out, grid, orientation)


SourceLike = Union[Field, np.ndarray, None]


def _source_slabs(f: SourceLike, grid: Grid, orientation: str) -> np.ndarray:
    if f is None:
        return np.zeros((grid.n_t, grid.n_x + 2))
    if isinstance(f, Field):
        return f.slabs()
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise ValueError(f"source shape {f.shape} != grid shape {grid.shape}")
    # raw arrays are sampled at the implicit level of the solver that consumes them
    return slabs(f, orientation)


# ---------------------------------------------------------------------------
# operator
# ---------------------------------------------------------------------------

FACE_RULES = ("dual", "harmonic", "midpoint")


@dataclass(frozen=True)
class ParabolicOperator:
    """L z = -(k z_x)_x + a_0 z on interior nodes, written M^{-1} K + a_0.

    K is the symmetric flux-form stiffness (k_faces / dx² stencil) and M the
    diagonal of node weights; L is self-adjoint in the inner product weighted
    by ``quad_weights`` = dx * M.
    """

    grid: Grid = field(repr=False)
    k_faces: np.ndarray = field(repr=False)       # face coefficient at x_{i+1/2}, i = 0..n_x
    mass: np.ndarray = field(repr=False)          # node weights m_i (interior), 1 for k ≡ 1
    a0: np.ndarray = field(repr=False)            # (n_t+1, n_x+2)
    a0_sup: float
    face_rule: str = "dual"

    @property
    def quad_weights(self) -> np.ndarray:
        """Spatial quadrature weights on all nodes (zero on the boundary)."""
        w = np.zeros(self.grid.n_x + 2)
        w[1:-1] = self.grid.dx * self.mass
        return w

    @property
    def off(self) -> np.ndarray:
        """Off-diagonal of K, length n_x - 1."""
        return -self.k_faces[1:-1] / self.grid.dx**2

    def stiffness_diag(self) -> np.ndarray:
        kf = self.k_faces
        return (kf[:-1] + kf[1:]) / self.grid.dx**2

    def diag(self, level: int = 0) -> np.ndarray:
        """Diagonal of L = M^{-1} K + a_0."""
        return self.stiffness_diag() / self.mass + self.a0[level, 1:-1]

    @property
    def sub(self) -> np.ndarray:
        return self.off[:] / self.mass[1:]

    @property
    def sup(self) -> np.ndarray:
        return self.off[:] / self.mass[:-1]

    def matrix(self, level: int = 0) -> np.ndarray:
        """Dense L on interior nodes."""
        m = np.diag(self.diag(level))
        if self.grid.n_x > 1:
            m += np.diag(self.sup, 1) + np.diag(self.sub, -1)
        return m

    def stiffness(self, level: int = 0) -> np.ndarray:
        """Dense symmetric K + M a_0 on interior nodes."""
        return np.diag(self.mass) @ self.matrix(level)

    def apply(self, z: np.ndarray, level: int = 0) -> np.ndarray:
        """L z for a node vector z (result zero on the boundary)."""
        z = np.asarray(z, dtype=float)
        kf, dx = self.k_faces, self.grid.dx
        out = np.zeros_like(z)
        flux = kf * np.diff(z) / dx
        out[1:-1] = -(flux[1:] - flux[:-1]) / dx / self.mass + self.a0[level, 1:-1] * z[1:-1]
        return out


def face_coefficients(grid: Grid, k: DiffusionCoefficient, rule: str = "dual"):
    """Face coefficients and node weights for one of the supported rules.

    ``dual``: harmonic faces dx / ∫ 1/k and node weights from the 1/k-weighted
    cell centroids x̄ = ∫ x/k / ∫ 1/k, m_i = (x̄_{i+1/2} - x̄_{i-1/2}) / dx.
    Exact for piecewise linear flux k z_x, including through x = 0.
    ``harmonic``: same faces, unit weights.  ``midpoint``: k(x_{i+1/2}), unit weights.
    """
    if rule not in FACE_RULES:
        raise ValueError(f"unknown face rule {rule!r}; choose from {FACE_RULES}")
    xs = grid.x
    if rule == "midpoint":
        xf = (np.arange(grid.n_x + 1) + 0.5) * grid.dx
        return np.asarray(k.k(xf), dtype=float), np.ones(grid.n_x)
    inv_int = np.diff(k.inv_primitive(xs))
    faces = grid.dx / inv_int
    if rule == "harmonic":
        return faces, np.ones(grid.n_x)
    xbar = np.diff(k.primitive(xs)) / inv_int
    return faces, np.diff(xbar) / grid.dx


class PotentialWarning(UserWarning):
    """a_0 is not bounded below by a positive constant."""


def assemble_operator(grid: Grid, k: DiffusionCoefficient, a0=0.0, face_rule: str = "dual") -> ParabolicOperator:
    k_faces, mass = face_coefficients(grid, k, face_rule)
    a0_arr = np.broadcast_to(np.asarray(a0, dtype=float), grid.shape).copy()
    if a0_arr.min() <= 0.0:
        warnings.warn("a_0 is not bounded below by a positive constant; "
                      "solvability still holds for bounded a_0", PotentialWarning, stacklevel=2)
    return ParabolicOperator(grid=grid, k_faces=k_faces, mass=mass, a0=a0_arr,
                             a0_sup=float(np.abs(a0_arr).max()), face_rule=face_rule)


# ---------------------------------------------------------------------------
# time marching
# ---------------------------------------------------------------------------

@njit(cache=True)
def _march(lhs_diag, lhs_off, mass, init, src, expl_diag, expl_off, cn):
    """Sequential symmetric tridiagonal solves (Thomas).

    Step j: A_j z_j = M z_{j-1} + src_j [- E_j z_{j-1} for CN], where A_j has
    diagonal ``lhs_diag[j]`` and off-diagonal ``lhs_off``.
    """
    n_steps, n = src.shape
    out = np.zeros((n_steps + 1, n))
    out[0] = init
    cp = np.empty(n)
    dp = np.empty(n)
    rhs = np.empty(n)
    for j in range(n_steps):
        prev = out[j]
        for i in range(n):
            rhs[i] = mass[i] * prev[i] + src[j, i]
        if cn:
            for i in range(n):
                ez = expl_diag[j, i] * prev[i]
                if i > 0:
                    ez += expl_off[i - 1] * prev[i - 1]
                if i < n - 1:
                    ez += expl_off[i] * prev[i + 1]
                rhs[i] -= ez
        b = lhs_diag[j, 0]
        if n > 1:
            cp[0] = lhs_off[0] / b
        dp[0] = rhs[0] / b
        for i in range(1, n):
            a = lhs_off[i - 1]
            m = lhs_diag[j, i] - a * cp[i - 1]
            if i < n - 1:
                cp[i] = lhs_off[i] / m
            dp[i] = (rhs[i] - a * dp[i - 1]) / m
        z = out[j + 1]
        z[n - 1] = dp[n - 1]
        for i in range(n - 2, -1, -1):
            z[i] = dp[i] - cp[i] * z[i + 1]
    return out


def _stiff_diag_levels(op: ParabolicOperator) -> np.ndarray:
    """Diagonal of K + M a_0 at every time level, shape (n_t+1, n_x)."""
    return op.stiffness_diag()[None, :] + op.mass[None, :] * op.a0[:, 1:-1]


def _check_slice(v, grid: Grid, name: str) -> np.ndarray:
    if v is None:
        return np.zeros(grid.n_x + 2)
    v = np.asarray(v, dtype=float)
    if v.shape != (grid.n_x + 2,):
        raise ValueError(f"{name} must have shape ({grid.n_x + 2},), got {v.shape}")
    return v


def _run(op, start, src_new, src_old, kd_new, kd_old, scheme):
    """Shared driver; arrays are already ordered in marching direction."""
    dt = op.grid.dt
    m = op.mass
    if scheme == "euler":
        lhs = m[None, :] + dt * kd_new
        rhs_src = dt * m[None, :] * src_new
        expl_d = np.zeros((1, 1))
        expl_o = np.zeros(1)
        c = 1.0
    elif scheme == "cn":
        lhs = m[None, :] + 0.5 * dt * kd_new
        rhs_src = 0.5 * dt * m[None, :] * (src_new + src_old)
        expl_d = np.ascontiguousarray(0.5 * dt * kd_old)
        expl_o = np.ascontiguousarray(0.5 * dt * op.off)
        c = 0.5
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    inner = _march(np.ascontiguousarray(lhs), np.ascontiguousarray(c * dt * op.off),
                   np.ascontiguousarray(m), start[1:-1].copy(), np.ascontiguousarray(rhs_src),
                   expl_d, expl_o, scheme == "cn")
    if not np.all(np.isfinite(inner)):
        raise SolverError("non-finite values in time marching")
    return inner


def solve_forward(op: ParabolicOperator, g=None, f: SourceLike = None, scheme: str = "euler") -> Field:
    """z_t + L z = f, z(0) = g.  Implicit Euler: (M + dt K_j) z^j = M (z^{j-1} + dt f_j)."""
    grid = op.grid
    g = _check_slice(g, grid, "initial data")
    kd = _stiff_diag_levels(op)
    src_new = _source_slabs(f, grid, FORWARD)[:, 1:-1]
    src_old = _source_slabs(f, grid, BACKWARD)[:, 1:-1] if scheme == "cn" else None
    inner = _run(op, g, src_new, src_old, kd[1:], kd[:-1], scheme)
    out = grid.zeros()
    out[:, 1:-1] = inner
    return Field(out, grid, FORWARD)


def solve_backward(op: ParabolicOperator, z_T=None, f: SourceLike = None, scheme: str = "euler") -> Field:
    """-z_t + L z = f, z(T) = z_T.

    Euler step j computes level j-1 from level j with (M + dt K_j): the time
    reversal of :func:`solve_forward` and the exact transpose of its step chain.
    """
    grid = op.grid
    z_T = _check_slice(z_T, grid, "terminal data")
    kd = _stiff_diag_levels(op)
    src_new = _source_slabs(f, grid, BACKWARD)[::-1, 1:-1]
    if scheme == "cn":
        src_old = _source_slabs(f, grid, FORWARD)[::-1, 1:-1]
        kd_new, kd_old = kd[:-1][::-1], kd[1:][::-1]
    else:
        src_old = None
        kd_new, kd_old = kd[1:][::-1], None
    inner = _run(op, z_T, src_new, src_old, kd_new, kd_old, scheme)
    out = grid.zeros()
    out[:, 1:-1] = inner[::-1]
    return Field(out, grid, BACKWARD)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

Weights = Union[float, np.ndarray]


def _spatial(w: Weights, n: int) -> np.ndarray:
    if np.isscalar(w):
        out = np.full(n, float(w))
        out[0] = out[-1] = 0.0
        return out
    return np.asarray(w, dtype=float)


def inner_x(a: np.ndarray, b: np.ndarray, w: Weights, mask=None) -> float:
    """L²(Ω) product with node weights ``w`` (a scalar dx means uniform weights).

    Pass ``op.quad_weights`` to use the product in which the operator is symmetric.
    """
    prod = a * b
    if mask is not None:
        prod = prod * mask
    return float(np.sum(prod * _spatial(w, a.shape[-1])))


def inner_q(a: Field, b: Field, mask=None, w: Weights | None = None) -> float:
    """Slab-wise L²(Q) product consistent with the solver time levels."""
    g = a.grid
    prod = a.slabs() * b.slabs()
    if mask is not None:
        prod = prod * mask
    ws = _spatial(g.dx if w is None else w, g.n_x + 2)
    return float(g.dt * np.sum(prod * ws[None, :]))


def norm_q(a: Field, mask=None, w: Weights | None = None) -> float:
    return math.sqrt(max(inner_q(a, a, mask, w), 0.0))


def duality_check(op: ParabolicOperator, f: SourceLike, w_T) -> tuple[float, float]:
    """Absolute and relative gap |<z_f(T), w_T> - <f, w>_Q|.

    z_f = forward(0, f) and w = backward(w_T, 0), both products weighted by
    ``op.quad_weights``.
    """
    grid = op.grid
    w_T = _check_slice(w_T, grid, "terminal data")
    if not isinstance(f, Field):
        f = Field(np.zeros(grid.shape) if f is None else np.asarray(f, float), grid)
    z = solve_forward(op, None, f)
    w = solve_backward(op, w_T, None)
    qw = op.quad_weights
    lhs = inner_x(z.final, w_T, qw)
    rhs = inner_q(f, w, w=qw)
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return abs(lhs - rhs), abs(lhs - rhs) / scale


@dataclass(frozen=True)
class Norms:
    l2_Q: float
    l2_final: float
    h1k: float


def norms(z, k_faces_or_op=None, grid: Grid | None = None) -> Norms:
    """L²(Q), L²(Ω) at t = T, and L²(0,T; H¹_k) norms (trapezoidal in time).

    ``z`` is a Field or an (n_t+1, n_x+2) array. Boundary columns are forced to
    zero. With an operator the spatial weights are ``op.quad_weights`` and the
    gradient term uses its face coefficients; without one, k ≡ 1 and weights dx.
    """
    if isinstance(z, Field):
        grid = z.grid
        vals = z.values.copy()
    else:
        vals = np.array(z, dtype=float)
        if grid is None:
            raise ValueError("grid required for raw arrays")
    vals[:, 0] = vals[:, -1] = 0.0
    qw = _spatial(grid.dx, grid.n_x + 2)
    if isinstance(k_faces_or_op, ParabolicOperator):
        kf = k_faces_or_op.k_faces
        qw = k_faces_or_op.quad_weights
    elif k_faces_or_op is None:
        kf = np.ones(grid.n_x + 1)
    else:
        kf = np.asarray(k_faces_or_op, dtype=float)
    dx, dt = grid.dx, grid.dt
    wt = np.full(grid.n_t + 1, dt)
    wt[0] = wt[-1] = 0.5 * dt
    l2_sq_t = np.sum(qw[None, :] * vals**2, axis=1)
    grad_sq_t = dx * np.sum(kf[None, :] * (np.diff(vals, axis=1) / dx) ** 2, axis=1)
    return Norms(
        l2_Q=math.sqrt(float(np.sum(wt * l2_sq_t))),
        l2_final=math.sqrt(float(l2_sq_t[-1])),
        h1k=math.sqrt(float(np.sum(wt * (l2_sq_t + grad_sq_t)))),
    )


def energy_constant(op: ParabolicOperator) -> float:
    """e^{(2‖a_0‖∞ + 3) T}, from the shift z = e^{-rt} y with r = ‖a_0‖∞ + 3/2."""
    return math.exp((2.0 * op.a0_sup + 3.0) * op.grid.T)


def write_field_csv(path, grid: Grid, values: np.ndarray) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "value"])
        for n, tn in enumerate(grid.t):
            for i, xi in enumerate(grid.x):
                w.writerow([repr(float(tn)), repr(float(xi)), repr(float(values[n, i]))])
