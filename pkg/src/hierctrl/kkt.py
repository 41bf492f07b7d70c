"""Monolithic space-time assembly of the discrete optimality systems.

Small-grid oracle: every implicit Euler step of every field becomes one block
row of a single sparse matrix, which is solved directly. The matrices are
built from the face coefficients, node weights and potential alone, so the
oracle shares no marching code with the solvers it checks.

A field occupies (n_t + 1) * n_x unknowns (interior nodes at every level).
Forward step j reads (M + dt K_j) z^j - M z^{j-1} = dt M f_j, backward step j
reads (M + dt K_j) z^{j-1} - M z^j = dt M f_j. A source field contributes its
level j value when forward-oriented and its level j-1 value when backward.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .pde_core import BACKWARD, FORWARD, ParabolicOperator


class SpaceTimeSystem:
    """Block sparse builder over named fields."""

    def __init__(self, op: ParabolicOperator, fields: dict[str, str]):
        self.op = op
        g = op.grid
        self.n, self.N, self.dt = g.n_x, g.n_t, g.dt
        self.fields = dict(fields)                       # name -> orientation
        self.size = (self.N + 1) * self.n
        self.offset = {name: i * self.size for i, name in enumerate(self.fields)}
        self.total = self.size * len(self.fields)
        self.rows, self.cols, self.vals = [], [], []
        self.rhs = np.zeros(self.total)
        kf, dx = op.k_faces, g.dx
        self.mass = op.mass
        self.kdiag = (kf[:-1] + kf[1:]) / dx**2
        self.koff = -kf[1:-1] / dx**2

    # -- index helpers ----------------------------------------------------
    def idx(self, name: str, level: int) -> np.ndarray:
        return self.offset[name] + level * self.n + np.arange(self.n)

    def _add(self, r, c, v):
        self.rows.append(np.asarray(r))
        self.cols.append(np.asarray(c))
        self.vals.append(np.broadcast_to(np.asarray(v, dtype=float), np.shape(r)).copy())

    def _B(self, row_name, row_level, col_name, col_level, j):
        """(M + dt K_j) acting from (col_name, col_level) into the row block."""
        r = self.idx(row_name, row_level)
        c = self.idx(col_name, col_level)
        a0 = self.op.a0[j, 1:-1]
        self._add(r, c, self.mass + self.dt * (self.kdiag + self.mass * a0))
        if self.n > 1:
            self._add(r[:-1], c[1:], self.dt * self.koff)
            self._add(r[1:], c[:-1], self.dt * self.koff)

    def _M(self, row_name, row_level, col_name, col_level, coef):
        self._add(self.idx(row_name, row_level), self.idx(col_name, col_level), coef * self.mass)

    # -- equations -----------------------------------------------------------
    def evolution(self, name: str):
        """Step rows of ``name`` (without data rows or sources)."""
        forward = self.fields[name] == FORWARD
        for j in range(1, self.N + 1):
            new, old = (j, j - 1) if forward else (j - 1, j)
            self._B(name, new, name, new, j)
            self._M(name, new, name, old, -1.0)

    def step_row(self, name: str, j: int) -> int:
        return j if self.fields[name] == FORWARD else j - 1

    def source(self, name: str, src: str, mask: np.ndarray, coef: float):
        """Move ``coef * dt * M * mask * src`` to the left-hand side of ``name``'s steps."""
        m = np.asarray(mask, dtype=float)[1:-1]
        if coef == 0.0 or not m.any():
            return
        for j in range(1, self.N + 1):
            lev = j if self.fields[src] == FORWARD else j - 1
            self._add(self.idx(name, self.step_row(name, j)), self.idx(src, lev),
                      -coef * self.dt * self.mass * m)

    def known_source(self, name: str, values: np.ndarray, orientation: str, mask, coef: float = 1.0):
        m = np.asarray(mask, dtype=float)[1:-1]
        for j in range(1, self.N + 1):
            lev = j if orientation == FORWARD else j - 1
            self.rhs[self.idx(name, self.step_row(name, j))] += coef * self.dt * self.mass * m * values[lev, 1:-1]

    def data(self, name: str, value=None, link: tuple | None = None):
        """Initial (forward) or terminal (backward) row: z = value + coef * other(level)."""
        lev = 0 if self.fields[name] == FORWARD else self.N
        r = self.idx(name, lev)
        self._add(r, r, 1.0)
        if value is not None:
            self.rhs[r] += np.asarray(value, dtype=float)[1:-1]
        if link is not None:
            other, other_level, coef = link
            self._add(r, self.idx(other, other_level), -coef)

    def algebraic(self, name: str, rows: list):
        """Rows for a control field: name^j = sum of coef * other^{lev(j)} on a mask.

        ``rows`` holds (other, mask, coef) terms; levels follow the pairing of
        control slab j with level j (forward) or j-1 (backward) of ``other``.
        Level 0 and off-mask nodes of the control are pinned to zero.
        """
        r0 = self.idx(name, 0)
        self._add(r0, r0, 1.0)
        for j in range(1, self.N + 1):
            r = self.idx(name, j)
            self._add(r, r, 1.0)
            for other, mask, coef in rows:
                lev = j if self.fields[other] == FORWARD else j - 1
                m = np.asarray(mask, dtype=float)[1:-1]
                self._add(r, self.idx(other, lev), -coef * m)

    # -- solve ---------------------------------------------------------------
    def solve(self) -> dict[str, np.ndarray]:
        A = sp.csr_matrix((np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
                          shape=(self.total, self.total))
        sol = spsolve(A.tocsc(), self.rhs)
        out = {}
        for name in self.fields:
            full = np.zeros((self.N + 1, self.n + 2))
            full[:, 1:-1] = sol[self.offset[name]: self.offset[name] + self.size].reshape(self.N + 1, self.n)
            out[name] = full
        return out


def _c(gamma: float) -> float:
    return 0.0 if math.isinf(gamma) else 1.0 / math.sqrt(gamma)


def _follower_rows(S: SpaceTimeSystem, fp, h_known: bool):
    c = _c(fp.gamma)
    for f in ("y", "S", "p", "q"):
        S.evolution(f)
    S.data("y")
    S.source("y", "v", fp.chi_O, 1.0)
    if h_known:
        S.known_source("y", fp.h.values, FORWARD, fp.chi_omega)
    else:
        S.source("y", "h", fp.chi_omega, 1.0)
    S.data("S")
    S.source("S", "y", fp.chi_d, 1.0)
    S.data("p", link=("S", 0, c))
    S.data("q")
    S.source("q", "y", fp.chi_d, 1.0)
    S.source("q", "p", fp.chi_d, c)
    S.known_source("q", fp.z_d.values, FORWARD, fp.chi_d, -1.0)


def chain_oracle(v: np.ndarray, fp) -> dict[str, np.ndarray]:
    """y, S, p, q for a given control v by one sparse solve."""
    S = SpaceTimeSystem(fp.op, {"y": FORWARD, "S": BACKWARD, "p": FORWARD, "q": BACKWARD})
    c = _c(fp.gamma)
    for f in ("y", "S", "p", "q"):
        S.evolution(f)
    S.data("y")
    S.known_source("y", np.asarray(v, dtype=float), FORWARD, fp.chi_O)
    S.known_source("y", fp.h.values, FORWARD, fp.chi_omega)
    S.data("S")
    S.source("S", "y", fp.chi_d, 1.0)
    S.data("p", link=("S", 0, c))
    S.data("q")
    S.source("q", "y", fp.chi_d, 1.0)
    S.source("q", "p", fp.chi_d, c)
    S.known_source("q", fp.z_d.values, FORWARD, fp.chi_d, -1.0)
    return S.solve()


def follower_kkt(fp) -> dict[str, np.ndarray]:
    """Coupled system y, S, p, q with v = -q/μ on O_T."""
    S = SpaceTimeSystem(fp.op, {"y": FORWARD, "S": BACKWARD, "p": FORWARD, "q": BACKWARD, "v": FORWARD})
    _follower_rows(S, fp, h_known=True)
    S.algebraic("v", [("q", fp.chi_O, -1.0 / fp.mu)])
    return S.solve()


def _quartet_rows(S: SpaceTimeSystem, fp):
    c = _c(fp.gamma)
    inv_mu = 0.0 if math.isinf(fp.mu) else 1.0 / fp.mu
    for f in ("phi_adj", "zeta", "psi", "rho"):
        S.evolution(f)
    S.data("phi_adj")
    S.source("phi_adj", "rho", fp.chi_O, -inv_mu)
    S.data("zeta")
    S.source("zeta", "phi_adj", fp.chi_d, c)
    S.data("psi", link=("zeta", 0, c))
    S.source("rho", "psi", fp.chi_d, 1.0)
    S.source("rho", "phi_adj", fp.chi_d, 1.0)


def quartet_oracle(rho_T: np.ndarray, fp) -> dict[str, np.ndarray]:
    S = SpaceTimeSystem(fp.op, {"phi_adj": FORWARD, "zeta": BACKWARD, "psi": FORWARD, "rho": BACKWARD})
    _quartet_rows(S, fp)
    S.data("rho", value=rho_T)
    return S.solve()


def leader_kkt(fp, epsilon: float) -> dict[str, np.ndarray]:
    """Full optimality system: follower fields, quartet, h = ρ on ω_T, ρ(T) = -y(T)/ε."""
    S = SpaceTimeSystem(fp.op, {
        "y": FORWARD, "S": BACKWARD, "p": FORWARD, "q": BACKWARD, "v": FORWARD, "h": FORWARD,
        "phi_adj": FORWARD, "zeta": BACKWARD, "psi": FORWARD, "rho": BACKWARD,
    })
    _follower_rows(S, fp, h_known=False)
    S.algebraic("v", [("q", fp.chi_O, -1.0 / fp.mu)])
    S.algebraic("h", [("rho", fp.chi_omega, 1.0)])
    _quartet_rows(S, fp)
    S.data("rho", link=("y", S.N, -1.0 / epsilon))
    return S.solve()
