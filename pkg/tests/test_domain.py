"""Grid, diffusion coefficient, regions and weight functions."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hierctrl.domain import (
    ConfigurationError,
    RegionError,
    build_grid,
    build_sigma,
    carleman_parameters,
    hardy_poincare_ratio,
    interval_mask,
    lambda_interval,
    make_power_diffusion,
    make_regions,
    rasterize_regions,
    theta,
    weights_for,
)

alphas = st.floats(min_value=0.0, max_value=0.95, allow_nan=False)


# -- grid -----------------------------------------------------------------------

def test_grid_spacing_and_shape():
    g = build_grid(9, 20, 2.0)
    assert g.dx == pytest.approx(0.1)
    assert g.dt == pytest.approx(0.1)
    assert g.shape == (21, 11)
    assert g.x[0] == 0.0 and g.x[-1] == 1.0


@pytest.mark.parametrize("args", [(0, 10, 1.0), (10, 0, 1.0), (10, 10, 0.0), (10, 10, -1.0), (2.5, 10, 1.0)])
def test_grid_rejects_bad_sizes(args):
    with pytest.raises(ConfigurationError):
        build_grid(*args)


# -- diffusion coefficient -------------------------------------------------------

@given(alphas, st.floats(min_value=1e-6, max_value=1.0))
def test_degeneracy_hypothesis_holds(alpha, x):
    k = make_power_diffusion(alpha)
    assert k.hypothesis_gap(np.array([x]))[0] <= 1e-12
    assert k.k(np.array(0.0)) == (1.0 if alpha == 0 else 0.0)


@pytest.mark.parametrize("alpha", [1.0, 1.5, -0.1])
def test_strong_degeneracy_rejected(alpha):
    with pytest.raises(ConfigurationError, match="Neumann"):
        make_power_diffusion(alpha)


@given(st.floats(min_value=0.05, max_value=0.9), st.floats(min_value=0.05, max_value=1.0))
@settings(max_examples=25, deadline=None)
def test_closed_form_primitives_match_quadrature(alpha, x):
    from scipy.integrate import quad

    k = make_power_diffusion(alpha)
    ref = quad(lambda y: y ** (1.0 - alpha), 0.0, x, epsabs=0.0, epsrel=1e-12)[0]
    inv = quad(lambda y: y**-alpha, 0.0, x, epsabs=0.0, epsrel=1e-12)[0]
    assert k.primitive(np.array([x]))[0] == pytest.approx(ref, rel=1e-8)
    assert k.inv_primitive(np.array([x]))[0] == pytest.approx(inv, rel=1e-8)


# -- regions ---------------------------------------------------------------------

def test_interval_mask_excludes_boundary_and_endpoints():
    g = build_grid(9, 4, 1.0)
    m = interval_mask(g, 0.0, 0.3, "omega")
    assert not m.indicator[0]
    assert list(m.indices) == [1, 2]          # 0.3 itself excluded


def test_standard_regions_rasterize_with_nesting():
    g = build_grid(199, 10, 1.0)
    reg = rasterize_regions(g, (0.3, 0.5), (0.25, 0.6), (0.4, 0.8))
    inter = reg.omega.indicator & reg.O_d.indicator
    for inner, outer in ((reg.omega_0, reg.omega_1), (reg.omega_1, reg.omega_2)):
        assert inner.size > 0
        assert np.all(outer.indicator[inner.indicator])
        assert outer.size > inner.size
    assert np.all(inter[reg.omega_2.indicator])


def test_omega_equal_O_is_rejected():
    g = build_grid(99, 10, 1.0)
    with pytest.raises(RegionError, match="strict subset"):
        make_regions(g, (0.3, 0.5), (0.3, 0.5), (0.4, 0.8))


def test_disjoint_omega_and_target_region_rejected():
    g = build_grid(99, 10, 1.0)
    with pytest.raises(RegionError, match="intersect"):
        make_regions(g, (0.1, 0.3), (0.05, 0.4), (0.5, 0.9))


def test_thin_intersection_asks_for_refinement():
    g = build_grid(30, 10, 1.0)
    with pytest.raises(RegionError, match="refine grid or widen regions"):
        rasterize_regions(g, (0.3, 0.5), (0.25, 0.6), (0.45, 0.8))


def test_physical_nested_regions_are_grid_independent():
    nested = ((0.42, 0.58), (0.37, 0.63), (0.33, 0.67))
    for n in (40, 80, 160):
        g = build_grid(n, 4, 1.0)
        reg = rasterize_regions(g, (0.2, 0.7), (0.1, 0.8), (0.3, 0.9), nested=nested)
        x0 = g.x[reg.omega_0.indices]
        assert x0.min() > 0.42 and x0.max() < 0.58


# -- sigma and Carleman parameters -----------------------------------------------

@pytest.mark.parametrize("lo,hi", [(0.2, 0.3), (0.45, 0.55), (0.7, 0.8)])
def test_sigma_critical_point_inside_omega_0(lo, hi):
    g = build_grid(99, 4, 1.0)
    sig = build_sigma(g, interval_mask(g, lo, hi, "omega_0"))
    assert lo < sig.x_crit < hi
    assert sig.values[0] == 0.0 and sig.values[-1] == 0.0
    assert sig.sup >= sig.values.max() - 1e-12
    # sigma has no other critical point: its derivative keeps one sign on each side
    der = sig.derivative
    left = g.x < lo
    right = g.x > hi
    assert np.all(der[left] > 0) and np.all(der[right] < 0)


@given(alphas, st.floats(min_value=0.02, max_value=0.25))
def test_lambda_interval_nonempty_for_default_parameters(alpha, sigma_sup):
    k = make_power_diffusion(alpha)
    p = carleman_parameters(k, sigma_sup)
    lo, hi = p.interval
    assert lo < p.lam < hi
    assert p.r * sigma_sup >= 4.0 * math.log(2.0)
    assert lambda_interval(1.0, k.tau, sigma_sup, p.r, p.d) == pytest.approx((lo, hi))


def test_theta_endpoints_and_symmetry():
    t = np.linspace(0.0, 2.0, 9)
    th = theta(t, 2.0)
    assert np.isinf(th[0]) and np.isinf(th[-1])
    assert np.allclose(th[1:-1], th[1:-1][::-1])
    assert th[4] == pytest.approx(1.0)


# -- weights -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def weights():
    g = build_grid(59, 40, 1.0)
    k = make_power_diffusion(0.5)
    reg = rasterize_regions(g, (0.3, 0.6), (0.2, 0.7), (0.35, 0.9))
    return weights_for(g, k, reg, s=1.0), k


def test_weights_vanish_at_time_endpoints(weights):
    W, _ = weights
    lw = W.log_weight(0.0)
    assert np.all(lw[0] == -np.inf) and np.all(lw[-1] == -np.inf)
    assert np.all(np.isfinite(lw[1:-1]))


def test_psi_negative_at_sigma_max(weights):
    W, _ = weights
    i = int(np.argmax(W.sigma))
    assert W.Psi[i] < 0


def test_tilde_weights_frozen_on_first_half(weights):
    W, _ = weights
    g = W.grid
    half = g.t <= 0.5 * g.T
    assert np.allclose(W.Theta_tilde[half], W.Theta_tilde[half][-1])
    # log kappa = s phi_hat is finite before T and non-increasing on the second half
    log_kappa = W.s * W.phi_hat
    assert np.all(np.isfinite(log_kappa[:-1]))
    late = np.flatnonzero(~half)[:-1]
    assert np.all(np.diff(log_kappa[late]) <= 0.0)


def test_nonpositive_s_rejected():
    g = build_grid(59, 10, 1.0)
    reg = rasterize_regions(g, (0.3, 0.6), (0.2, 0.7), (0.35, 0.9))
    with pytest.raises(ConfigurationError):
        weights_for(g, make_power_diffusion(0.5), reg, s=0.0)


def test_weights_csv(tmp_path, weights):
    W, _ = weights
    W.to_csv(tmp_path / "w.csv")
    head = (tmp_path / "w.csv").read_text().splitlines()[0]
    assert head == "t,x,Theta,phi_w,Phi,kappa,eta_hat_inv_sq"


# -- Hardy-Poincare ratio ------------------------------------------------------------

def test_hardy_ratio_of_linear_profile_is_one():
    x = np.linspace(0.0, 1.0, 4001)
    assert hardy_poincare_ratio(x, make_power_diffusion(0.5)) == pytest.approx(1.0, rel=1e-3)


def test_hardy_ratio_requires_zero_at_origin():
    x = np.linspace(0.0, 1.0, 11)
    with pytest.raises(ConfigurationError):
        hardy_poincare_ratio(x + 1.0, make_power_diffusion(0.5))


@given(alphas, st.lists(st.floats(min_value=-3, max_value=3), min_size=1, max_size=6),
       st.floats(min_value=0.1, max_value=10.0))
@settings(max_examples=50, deadline=None)
def test_hardy_ratio_scale_invariant_and_bounded(alpha, coeffs, c):
    x = np.linspace(0.0, 1.0, 1001)
    z = x * np.polynomial.polynomial.polyval(x, coeffs)
    k = make_power_diffusion(alpha)
    try:
        r = hardy_poincare_ratio(z, k)
    except ValueError:
        return
    assert r == pytest.approx(hardy_poincare_ratio(c * z, k), rel=1e-10)
    assert r <= 4.0 / (1.0 - alpha) ** 2
