"""Shared builders for small problems."""
import warnings

import numpy as np
import pytest

from hierctrl.domain import build_grid, make_power_diffusion, make_regions, rasterize_regions
from hierctrl.follower import make_follower_problem
from hierctrl.leader import LeaderProblem
from hierctrl.pde_core import assemble_operator

SMALL_REGIONS = ((0.3, 0.55), (0.2, 0.7), (0.4, 0.9))


def small_operator(n_x=12, n_t=12, T=1.0, alpha=0.5, a0=1.0):
    g = build_grid(n_x, n_t, T)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        op = assemble_operator(g, make_power_diffusion(alpha), a0)
    return g, op


def random_field(rng, g, mask=None, zero_initial=False):
    v = rng.standard_normal(g.shape)
    v[:, 0] = v[:, -1] = 0.0
    if mask is not None:
        v = v * mask
    if zero_initial:
        v[0] = 0.0
    return v


def random_slice(rng, g):
    w = np.zeros(g.n_x + 2)
    w[1:-1] = rng.standard_normal(g.n_x)
    return w


def small_follower(rng=None, n_x=12, n_t=12, gamma=1.0, mu=10.0, a0=1.0, alpha=0.5, T=1.0,
                   with_h=True, with_z=True, regions=SMALL_REGIONS):
    rng = rng or np.random.default_rng(0)
    g, op = small_operator(n_x, n_t, T, alpha, a0)
    reg = make_regions(g, *regions)
    h = random_field(rng, g) if with_h else None
    z = random_field(rng, g) if with_z else None
    return make_follower_problem(op, reg, h, z, gamma=gamma, mu=mu)


def small_leader(rng=None, epsilon=1e-2, **kw):
    fp = small_follower(rng, with_h=False, **kw)
    return LeaderProblem(fp, epsilon=epsilon, follower_tol=1e-13, quartet_tol=1e-14)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
