"""Discrete domain, degenerate diffusion coefficient, region masks and the
Carleman / observability weight functions.

Weights blow up (``Theta``) or vanish (``exp(2 s phi)``) at t = 0 and t = T.
They are stored in a form that never materialises ``inf * 0``: ``Theta`` and
``phi_w`` hold ``+inf`` / ``-inf`` at the endpoint levels and every weighted
integrand is evaluated through :func:`log_weight` in log space.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize


class ConfigurationError(ValueError):
    """Invalid sizes, parameters or region layout."""


class RegionError(ConfigurationError):
    """A region violates the inclusion or intersection requirements."""


class ConsistencyError(RuntimeError):
    """An internal consistency condition that theory guarantees has failed."""


REGION_LABELS = ("omega", "O", "O_d", "omega_0", "omega_1", "omega_2")


@dataclass(frozen=True)
class Grid:
    n_x: int
    n_t: int
    T: float
    x: np.ndarray = field(repr=False)
    t: np.ndarray = field(repr=False)
    dx: float
    dt: float

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_t + 1, self.n_x + 2)

    @property
    def interior(self) -> slice:
        return slice(1, self.n_x + 1)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)


def build_grid(n_x: int, n_t: int, T: float) -> Grid:
    """Uniform grid on [0, T] x [0, 1] with ``n_x`` interior nodes."""
    if int(n_x) != n_x or int(n_t) != n_t:
        raise ConfigurationError("n_x and n_t must be integers")
    if n_x < 1 or n_t < 1:
        raise ConfigurationError(f"grid sizes must be positive, got n_x={n_x}, n_t={n_t}")
    if not T > 0:
        raise ConfigurationError(f"horizon T must be positive, got {T}")
    n_x, n_t = int(n_x), int(n_t)
    dx = 1.0 / (n_x + 1)
    dt = T / n_t
    x = np.linspace(0.0, 1.0, n_x + 2)
    t = np.linspace(0.0, T, n_t + 1)
    return Grid(n_x=n_x, n_t=n_t, T=float(T), x=x, t=t, dx=dx, dt=dt)


# ---------------------------------------------------------------------------
# diffusion coefficient
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffusionCoefficient:
    """Degenerate coefficient k with k(0) = 0 satisfying x k'(x) <= tau k(x)."""

    alpha: float
    tau: float
    k: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    k_prime: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    # x -> int_0^x y / k(y) dy; closed form when available
    x_over_k_primitive: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    # x -> int_0^x 1 / k(y) dy (finite for weak degeneracy)
    one_over_k_primitive: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)

    def _quad_primitive(self, x, integrand) -> np.ndarray:
        out = np.empty_like(x)
        for idx, xi in np.ndenumerate(x):
            out[idx] = integrate.quad(integrand, 0.0, xi)[0] if xi > 0 else 0.0
        return out

    def primitive(self, x: np.ndarray) -> np.ndarray:
        """int_0^x y / k(y) dy."""
        x = np.asarray(x, dtype=float)
        if self.x_over_k_primitive is not None:
            return self.x_over_k_primitive(x)
        return self._quad_primitive(x, lambda y: y / float(self.k(np.array(y))))

    def inv_primitive(self, x: np.ndarray) -> np.ndarray:
        """int_0^x 1 / k(y) dy."""
        x = np.asarray(x, dtype=float)
        if self.one_over_k_primitive is not None:
            return self.one_over_k_primitive(x)
        return self._quad_primitive(x, lambda y: 1.0 / float(self.k(np.array(y))))

    def hypothesis_gap(self, x: np.ndarray) -> np.ndarray:
        """x k'(x) - tau k(x); non-positive under the degeneracy hypothesis."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0
        out[pos] = x[pos] * self.k_prime(x[pos]) - self.tau * self.k(x[pos])
        return out


def make_power_diffusion(alpha: float) -> DiffusionCoefficient:
    """k(x) = x**alpha, the weakly degenerate family (0 <= alpha < 1)."""
    alpha = float(alpha)
    if not 0.0 <= alpha < 1.0:
        raise ConfigurationError(
            f"alpha={alpha} unsupported: need 0 <= alpha < 1 (alpha >= 1 requires a Neumann condition)"
        )
    if alpha == 0.0:
        return DiffusionCoefficient(
            alpha=0.0,
            tau=0.0,
            k=lambda x: np.ones_like(np.asarray(x, dtype=float)),
            k_prime=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
            x_over_k_primitive=lambda x: 0.5 * np.asarray(x, dtype=float) ** 2,
            one_over_k_primitive=lambda x: np.asarray(x, dtype=float).copy(),
        )

    def k(x):
        return np.asarray(x, dtype=float) ** alpha

    def k_prime(x):
        x = np.asarray(x, dtype=float)
        return alpha * x ** (alpha - 1.0)

    def prim(x):
        return np.asarray(x, dtype=float) ** (2.0 - alpha) / (2.0 - alpha)

    def inv_prim(x):
        return np.asarray(x, dtype=float) ** (1.0 - alpha) / (1.0 - alpha)

    return DiffusionCoefficient(alpha=alpha, tau=alpha, k=k, k_prime=k_prime,
                                x_over_k_primitive=prim, one_over_k_primitive=inv_prim)


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegionMask:
    indicator: np.ndarray = field(repr=False)
    label: str

    def __post_init__(self):
        if self.label not in REGION_LABELS:
            raise ConfigurationError(f"unknown region label {self.label!r}")

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.indicator)

    @property
    def size(self) -> int:
        return int(self.indicator.sum())

    def as_float(self) -> np.ndarray:
        return self.indicator.astype(float)


def interval_mask(grid: Grid, lo: float, hi: float, label: str) -> RegionMask:
    """Nodes strictly inside (lo, hi); boundary nodes are never included."""
    if not 0.0 <= lo < hi <= 1.0:
        raise RegionError(f"region {label}: need 0 <= lo < hi <= 1, got ({lo}, {hi})")
    ind = (grid.x > lo) & (grid.x < hi)
    ind[0] = ind[-1] = False
    if not ind.any():
        raise RegionError(f"region {label}=({lo}, {hi}) contains no grid node")
    return RegionMask(ind, label)


def _shrink(ind: np.ndarray, margin: int) -> np.ndarray:
    idx = np.flatnonzero(ind)
    out = np.zeros_like(ind)
    if idx.size > 2 * margin:
        out[idx[margin: idx.size - margin]] = True
    return out


def strictly_inside(inner: np.ndarray, outer: np.ndarray) -> bool:
    """``inner`` compactly contained in ``outer``: at least one node of margin."""
    idx = np.flatnonzero(inner)
    if idx.size == 0:
        return False
    lo, hi = idx[0], idx[-1]
    if lo - 1 < 0 or hi + 1 >= outer.size:
        return False
    return bool(outer[lo - 1: hi + 2].all())


@dataclass(frozen=True)
class Regions:
    omega: RegionMask
    O: RegionMask
    O_d: RegionMask
    omega_0: Optional[RegionMask] = None
    omega_1: Optional[RegionMask] = None
    omega_2: Optional[RegionMask] = None

    def __post_init__(self):
        w, o = self.omega.indicator, self.O.indicator
        if not (np.all(o[w]) and o.sum() > w.sum()):
            raise RegionError("omega must be a strict subset of O")
        if not (w & self.O_d.indicator).any():
            raise RegionError("omega and O_d must intersect")


def make_regions(grid: Grid, omega, O, O_d) -> Regions:
    """Masks for the control sets only (no Carleman sub-regions)."""
    return Regions(
        omega=interval_mask(grid, *omega, "omega"),
        O=interval_mask(grid, *O, "O"),
        O_d=interval_mask(grid, *O_d, "O_d"),
    )


MIN_INTERSECTION_NODES = 8


def rasterize_regions(grid: Grid, omega, O, O_d, nested=None) -> Regions:
    """Control masks plus omega_0 ⋐ omega_1 ⋐ omega_2 ⋐ O_d ∩ omega.

    By default the nested sets are the intersection shrunk by 3, 2 and 1
    nodes. ``nested`` may instead give three physical intervals for
    (omega_0, omega_1, omega_2); they then stay fixed under grid refinement.
    """
    base = make_regions(grid, omega, O, O_d)
    inter = base.omega.indicator & base.O_d.indicator
    if inter.sum() < MIN_INTERSECTION_NODES:
        raise RegionError(
            f"O_d ∩ omega has {int(inter.sum())} nodes (< {MIN_INTERSECTION_NODES}); "
            "refine grid or widen regions"
        )
    if nested is None:
        w2 = _shrink(inter, 1)
        w1 = _shrink(inter, 2)
        w0 = _shrink(inter, 3)
    else:
        if len(nested) != 3:
            raise RegionError("nested must list intervals for omega_0, omega_1, omega_2")
        w0, w1, w2 = (interval_mask(grid, *iv, lab).indicator
                      for iv, lab in zip(nested, ("omega_0", "omega_1", "omega_2")))
    for inner, outer in ((w0, w1), (w1, w2), (w2, inter)):
        if not strictly_inside(inner, outer):
            raise RegionError("nested regions omega_0 ⋐ omega_1 ⋐ omega_2 could not be built")
    return Regions(
        omega=base.omega, O=base.O, O_d=base.O_d,
        omega_0=RegionMask(w0, "omega_0"),
        omega_1=RegionMask(w1, "omega_1"),
        omega_2=RegionMask(w2, "omega_2"),
    )


# ---------------------------------------------------------------------------
# sigma and Carleman parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sigma:
    """Boundary-vanishing bump x(1-x) exp(-beta (x - x_c)^2) sampled at nodes."""

    values: np.ndarray = field(repr=False)
    derivative: np.ndarray = field(repr=False)
    x_c: float
    beta: float
    x_crit: float
    sup: float


def _sigma_fn(x, x_c, beta):
    return x * (1.0 - x) * np.exp(-beta * (x - x_c) ** 2)


def _sigma_dx(x, x_c, beta):
    return np.exp(-beta * (x - x_c) ** 2) * ((1.0 - 2.0 * x) - 2.0 * beta * (x - x_c) * x * (1.0 - x))


def _critical_point(x_c, beta):
    if abs(x_c - 0.5) < 1e-15:
        return 0.5
    a, b = sorted((x_c, 0.5))
    return optimize.brentq(lambda x: _sigma_dx(x, x_c, beta), a, b, xtol=1e-15)


def build_sigma(grid: Grid, omega_0: RegionMask) -> Sigma:
    """Choose beta so that the single critical point of sigma lies inside omega_0.

    The critical point sits between the bump centre and 1/2 and moves to the
    centre as beta grows, so beta is doubled until it lands in the open hull
    of the omega_0 nodes.
    """
    idx = omega_0.indices
    if idx.size == 0 or idx[0] <= 1 or idx[-1] >= grid.n_x:
        raise RegionError("omega_0 must be strictly interior with at least one node of margin")
    lo, hi = grid.x[idx[0]], grid.x[idx[-1]]
    x_c = 0.5 * (lo + hi)
    beta = 0.0
    x_crit = _critical_point(x_c, beta)
    while not (lo < x_crit < hi):
        beta = 1.0 if beta == 0.0 else 2.0 * beta
        if beta > 1e8:
            raise RegionError("could not place the critical point of sigma inside omega_0")
        x_crit = _critical_point(x_c, beta)
    vals = _sigma_fn(grid.x, x_c, beta)
    vals[0] = vals[-1] = 0.0
    der = _sigma_dx(grid.x, x_c, beta)
    return Sigma(values=vals, derivative=der, x_c=x_c, beta=beta, x_crit=x_crit,
                 sup=float(_sigma_fn(x_crit, x_c, beta)))


@dataclass(frozen=True)
class CarlemanParameters:
    r: float
    d: float
    lam: float
    interval: tuple[float, float]


def lambda_interval(k1: float, tau: float, sigma_sup: float, r: float, d: float) -> tuple[float, float]:
    e1 = math.exp(r * sigma_sup)
    e2 = math.exp(2.0 * r * sigma_sup)
    c = k1 * (2.0 - tau)
    lower = c * (e2 - 1.0) / (d * c - 1.0)
    upper = 4.0 * (e2 - e1) / (3.0 * d)
    return lower, upper


def carleman_parameters(k: DiffusionCoefficient, sigma_sup: float, margin: float = 1.1) -> CarlemanParameters:
    """r, d at ``margin`` times their lower bounds and lambda at the midpoint of I."""
    if not sigma_sup > 0:
        raise ConfigurationError("sup of sigma must be positive")
    k1 = float(k.k(np.array(1.0)))
    r = margin * 4.0 * math.log(2.0) / sigma_sup
    d = margin * 5.0 / (k1 * (2.0 - k.tau))
    lower, upper = lambda_interval(k1, k.tau, sigma_sup, r, d)
    if not lower < upper:
        raise ConsistencyError(f"empty lambda interval: lower={lower!r}, upper={upper!r}")
    return CarlemanParameters(r=r, d=d, lam=0.5 * (lower + upper), interval=(lower, upper))


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------

def theta(t: np.ndarray, T: float) -> np.ndarray:
    """1 / (t (T - t))^4, +inf at the endpoints."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return 1.0 / (t * (T - t)) ** 4


@dataclass(frozen=True)
class WeightSet:
    s: float
    r: float
    d: float
    lam: float
    sigma: np.ndarray = field(repr=False)
    Theta: np.ndarray = field(repr=False)
    delta: np.ndarray = field(repr=False)
    phi_w: np.ndarray = field(repr=False)
    eta: np.ndarray = field(repr=False)
    Psi: np.ndarray = field(repr=False)
    Phi: np.ndarray = field(repr=False)
    Theta_tilde: np.ndarray = field(repr=False)
    phi_w_tilde: np.ndarray = field(repr=False)
    phi_hat: np.ndarray = field(repr=False)
    kappa: np.ndarray = field(repr=False)
    # log of 1/eta_hat^2 = Theta_tilde^3 (x^2/k) exp(2 s phi_w_tilde); -inf where it vanishes
    log_eta_hat_inv_sq: np.ndarray = field(repr=False)
    grid: Grid = field(repr=False)

    @property
    def eta_hat_inv_sq(self) -> np.ndarray:
        return np.exp(self.log_eta_hat_inv_sq)

    @property
    def log_kappa_sq(self) -> np.ndarray:
        return 2.0 * self.s * self.phi_hat

    def log_weight(self, theta_power: float = 0.0, tilde: bool = False) -> np.ndarray:
        """log(Theta^m exp(2 s phi)) on the space-time grid; -inf at t in {0, T}."""
        th = self.Theta_tilde if tilde else self.Theta
        ph = self.phi_w_tilde if tilde else self.phi_w
        with np.errstate(divide="ignore", invalid="ignore"):
            out = theta_power * np.log(th)[:, None] + 2.0 * self.s * ph
        out[~np.isfinite(ph)] = -np.inf
        return out

    def to_csv(self, path) -> None:
        g = self.grid
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "Theta", "phi_w", "Phi", "kappa", "eta_hat_inv_sq"])
            eh = self.eta_hat_inv_sq
            for n, tn in enumerate(g.t):
                for i, xi in enumerate(g.x):
                    w.writerow([repr(float(tn)), repr(float(xi)), repr(float(self.Theta[n])),
                                repr(float(self.phi_w[n, i])), repr(float(self.Phi[n, i])),
                                repr(float(self.kappa[n])), repr(float(eh[n, i]))])


def build_weights(grid: Grid, k: DiffusionCoefficient, sigma: Sigma,
                  params: CarlemanParameters, s: float = 1.0) -> WeightSet:
    if not s > 0:
        raise ConfigurationError(f"Carleman parameter s must be positive, got {s}")
    T, x = grid.T, grid.x
    Th = theta(grid.t, T)
    delta = params.lam * (k.primitive(x) - params.d)
    Psi = np.exp(params.r * sigma.values) - math.exp(2.0 * params.r * sigma.sup)
    interior_t = np.isfinite(Th)
    with np.errstate(invalid="ignore"):
        phi_w = np.where(interior_t[:, None], Th[:, None] * delta[None, :], -np.inf)
        Phi = np.where(interior_t[:, None], Th[:, None] * Psi[None, :], -np.inf)
        eta = np.where(interior_t[:, None], Th[:, None] * np.exp(params.r * sigma.values)[None, :], np.inf)

    half = grid.t <= 0.5 * T
    th_half = theta(np.array(0.5 * T), T)
    Th_t = np.where(half, th_half, Th)
    phi_t = np.where(half[:, None], th_half * delta[None, :], phi_w)
    phi_hat = phi_t.min(axis=1)
    kappa = np.exp(s * phi_hat)

    x_sq_over_k = np.zeros_like(x)
    pos = x > 0
    x_sq_over_k[pos] = x[pos] ** 2 / k.k(x[pos])
    with np.errstate(divide="ignore", invalid="ignore"):
        log_eh = 3.0 * np.log(Th_t)[:, None] + np.log(x_sq_over_k)[None, :] + 2.0 * s * phi_t
    log_eh[~np.isfinite(phi_t)] = -np.inf
    log_eh[:, x_sq_over_k == 0] = -np.inf

    return WeightSet(
        s=float(s), r=params.r, d=params.d, lam=params.lam, sigma=sigma.values, Theta=Th,
        delta=delta, phi_w=phi_w, eta=eta, Psi=Psi, Phi=Phi, Theta_tilde=Th_t,
        phi_w_tilde=phi_t, phi_hat=phi_hat, kappa=kappa, log_eta_hat_inv_sq=log_eh, grid=grid,
    )


def weights_for(grid: Grid, k: DiffusionCoefficient, regions: Regions, s: float = 1.0) -> WeightSet:
    """Convenience: sigma from omega_0, parameters, then the full weight set."""
    if regions.omega_0 is None:
        raise ConfigurationError("regions lack omega_0; build them with rasterize_regions")
    sig = build_sigma(grid, regions.omega_0)
    return build_weights(grid, k, sig, carleman_parameters(k, sig.sup), s)


# ---------------------------------------------------------------------------
# Hardy–Poincaré
# ---------------------------------------------------------------------------

def hardy_poincare_ratio(z: np.ndarray, k: DiffusionCoefficient) -> float:
    """[∫ (k/x²) z²] / [∫ k z_x²] with cell-midpoint sampling (x = 0 never evaluated)."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.size < 3:
        raise ConfigurationError("z must be a node vector including both boundary nodes")
    if abs(z[0]) > 0:
        raise ConfigurationError("z must vanish at x = 0")
    dx = 1.0 / (z.size - 1)
    xm = (np.arange(z.size - 1) + 0.5) * dx
    km = k.k(xm)
    zm = 0.5 * (z[1:] + z[:-1])
    zx = np.diff(z) / dx
    num = dx * np.sum(km / xm**2 * zm**2)
    den = dx * np.sum(km * zx**2)
    if den == 0.0:
        raise ValueError("undefined ratio: ∫ k z_x² vanishes")
    return float(num / den)
