"""Grid and sample stability of the Caccioppoli and observability constants.

    python scripts/refinement_study.py [--samples 50]
"""
import argparse
import time

from hierctrl import verify as V
from hierctrl.domain import build_grid, make_power_diffusion, rasterize_regions, weights_for
from hierctrl.follower import make_follower_problem
from hierctrl.leader import LeaderProblem
from hierctrl.pde_core import assemble_operator

NESTED = ((0.42, 0.58), (0.37, 0.63), (0.33, 0.67))


def constants(n_x, n_t, n_samples, T=4.0, seed=0):
    g = build_grid(n_x, n_t, T)
    k = make_power_diffusion(0.5)
    op = assemble_operator(g, k, 1.0)
    reg = rasterize_regions(g, (0.2, 0.7), (0.1, 0.8), (0.3, 0.9), nested=NESTED)
    W = weights_for(g, k, reg)
    P = LeaderProblem(make_follower_problem(op, reg, None, None, gamma=1.0, mu=10.0))
    qs = V.sample_quartets(P, n_samples, seed)
    return (V.check_caccioppoli(qs, W, op, reg).max_ratio,
            V.check_observability(qs, W, op, reg.omega).max_ratio)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=50)
    args = ap.parse_args()
    print(f"{'n_x':>4s} {'n_t':>5s} {'C_caccioppoli':>14s} {'C_observability':>16s} {'seconds':>8s}")
    for n_x, n_t in ((40, 640), (40, 1280), (40, 2560), (80, 1280), (80, 2560)):
        t0 = time.perf_counter()
        c, o = constants(n_x, n_t, args.samples)
        print(f"{n_x:4d} {n_t:5d} {c:14.5g} {o:16.5g} {time.perf_counter() - t0:8.1f}")


if __name__ == "__main__":
    main()
