"""Spectrum of the adjoint-quartet fixed-point map on small grids.

The relaxed Picard iteration for ρ converges iff every eigenvalue of the
linear map ρ ↦ sweep(ρ) lies in the unit disc (for relaxation 1). The map is
assembled column by column on a 12x12 grid and its extreme eigenvalues are
tabulated for several (μ, γ), horizons T and potentials a0.

    python scripts/quartet_spectrum.py [--out quartet_spectrum.csv]
"""
import argparse
import csv
import warnings

import numpy as np

from hierctrl.domain import build_grid, make_power_diffusion, make_regions
from hierctrl.follower import make_follower_problem
from hierctrl.leader import quartet_sweep
from hierctrl.pde_core import BACKWARD, Field, assemble_operator


def picard_matrix(T, a0, mu, gamma, alpha=0.5, n=12):
    g = build_grid(n, n, T)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        op = assemble_operator(g, make_power_diffusion(alpha), a0)
    reg = make_regions(g, (0.3, 0.55), (0.2, 0.7), (0.4, 0.9))
    fp = make_follower_problem(op, reg, None, None, gamma=gamma, mu=mu)
    zero_T = np.zeros(n + 2)
    cols = []
    for j in range(g.n_t):
        for i in range(1, n + 1):
            r = g.zeros()
            r[j, i] = 1.0
            *_, rho = quartet_sweep(Field(r, g, BACKWARD), zero_T, fp)
            cols.append(rho.values[:-1, 1:-1].ravel())
    return np.array(cols).T


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=None, help="optional CSV path")
    args = ap.parse_args()
    rows = []
    for a0 in (1.0, 0.1, 0.0, -1.0, -5.0):
        for T in (1.0, 2.0, 4.0, 8.0):
            for mu, gamma in ((10, 1), (100, 1), (10, 0.1), (0.1, 0.01)):
                ev = np.linalg.eigvals(picard_matrix(T, a0, mu, gamma))
                rows.append({"a0": a0, "T": T, "mu": mu, "gamma": gamma,
                             "min_real": float(ev.real.min()), "max_real": float(ev.real.max()),
                             "spectral_radius": float(np.abs(ev).max())})
                r = rows[-1]
                print(f"a0={a0:5.1f} T={T:3.0f} mu={mu:5g} gamma={gamma:5g}  "
                      f"spectrum in [{r['min_real']:.3e}, {r['max_real']:.3e}]  radius {r['spectral_radius']:.3e}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
