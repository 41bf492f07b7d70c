"""Batch runner: ``hierctrl <subcommand> --config <path> [--out <dir>] [--seed <u64>]``.

The config is JSON with ``//`` and ``/* */`` comments. Every run writes
``run_manifest.json`` (the resolved config plus package versions, which can be
fed back as a config), per-run CSV/JSON artifacts and ``summary.json`` with one
pass/fail entry per check. No timestamps or timings are written, so repeated
runs reproduce every file byte for byte.

Exit codes: 0 all checks pass, 1 some check fails, 2 config error,
3 region invariant violated, 4 solver did not converge.
"""
from __future__ import annotations

import argparse
import json
import math
import platform
import sys
import typing
import warnings
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import __version__
from .domain import (
    ConfigurationError,
    Grid,
    RegionError,
    build_grid,
    make_power_diffusion,
    rasterize_regions,
    weights_for,
)
from .follower import NonConvergenceError, gamma_sweep, make_follower_problem, solve_lowregret
from .leader import LeaderProblem, check_kappa_admissibility, epsilon_sweep, solve_null_control
from .pde_core import (
    FORWARD,
    Field,
    SolverError,
    assemble_operator,
    duality_check,
    energy_constant,
    norms,
    solve_forward,
)
from . import verify as V

SUBCOMMANDS = ("solve", "follower", "leader", "sweep-eps", "sweep-gamma", "verify", "all")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_REGION, EXIT_SOLVER = 0, 1, 2, 3, 4

Interval = tuple[float, float]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class GridConfig:
    n_x: int = 100
    n_t: int = 200
    T: float = 1.0


@dataclass
class DiffusionConfig:
    alpha: float = 0.5


@dataclass
class PotentialConfig:
    """a_0(t, x) by id: ``constant`` (value), ``linear_x`` (value + slope x),
    ``oscillating_t`` (value + slope sin(2πt/T)). A bare number means constant."""

    id: str = "constant"
    value: float = 1.0
    slope: float = 0.0


@dataclass
class RegionsConfig:
    omega: Interval = (0.3, 0.5)
    O: Interval = (0.25, 0.6)
    O_d: Interval = (0.4, 0.8)
    nested: Optional[list[Interval]] = None   # physical (omega_0, omega_1, omega_2)


@dataclass
class ProfileConfig:
    """Built-in space-time profile, masked to its region by the solver.

    ``gaussian``: amplitude·exp(-((x-center)/width)²).
    ``sin``: amplitude·sin(frequency·π·x).
    ``separable``: amplitude·e^{-decay·t}·exp(-((x-center)/width)²).
    ``zero``: identically zero. ``t_cut`` multiplies by 1[t ≤ t_cut].
    """

    kind: str = "zero"
    amplitude: float = 1.0
    center: float = 0.5
    width: float = 0.1
    decay: float = 1.0
    frequency: float = 1.0
    t_cut: Optional[float] = None


@dataclass
class FollowerConfig:
    gamma: float = 1.0
    mu: float = 10.0
    tol: float = 1e-10
    max_iter: int = 2000


@dataclass
class LeaderConfig:
    epsilon: float = 1e-2
    eps_list: list[float] = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    tol: float = 1e-9
    max_iter: int = 300
    follower_tol: Optional[float] = None
    check_tol: float = 1e-6


@dataclass
class WeightsConfig:
    s: float = 1.0
    seed: int = 0


@dataclass
class VerifyConfig:
    n_samples: int = 100
    hardy_samples: int = 100
    hardy_thetas: list[float] = field(default_factory=lambda: [0.0, 0.3, 0.5, 0.9])
    alpha_cut: float = 0.5
    refine: bool = True
    stability_tol: float = 0.2
    grid: Optional[GridConfig] = None
    regions: Optional[RegionsConfig] = None


@dataclass
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    a0: PotentialConfig = field(default_factory=PotentialConfig)
    regions: RegionsConfig = field(default_factory=RegionsConfig)
    follower: FollowerConfig = field(default_factory=FollowerConfig)
    leader: LeaderConfig = field(default_factory=LeaderConfig)
    gamma_list: list[float] = field(default_factory=lambda: [1.0, 1e-1, 1e-2, 1e-3])
    weights: WeightsConfig = field(default_factory=WeightsConfig)
    z_d: ProfileConfig = field(default_factory=ProfileConfig)
    h: ProfileConfig = field(default_factory=ProfileConfig)
    initial: ProfileConfig = field(default_factory=ProfileConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    write_fields: bool = True
    output_dir: str = "out"

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


class ConfigError(ConfigurationError):
    """Malformed config; the message names the line or the field."""


def strip_comments(text: str) -> str:
    """Remove // and /* */ comments outside strings, keeping line breaks."""
    out, i, n = [], 0, len(text)
    in_str = False
    while i < n:
        c = text[i]
        if in_str:
            out.append(c)
            if c == "\\" and i + 1 < n:
                out.append(text[i + 1])
                i += 2
                continue
            if c == '"':
                in_str = False
            i += 1
        elif c == '"':
            in_str = True
            out.append(c)
            i += 1
        elif text.startswith("//", i):
            j = text.find("\n", i)
            i = n if j < 0 else j
        elif text.startswith("/*", i):
            j = text.find("*/", i + 2)
            if j < 0:
                raise ConfigError(f"line {text.count(chr(10), 0, i) + 1}: unterminated block comment")
            out.append("\n" * text.count("\n", i, j))
            i = j + 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def _type_name(v) -> str:
    return "null" if v is None else type(v).__name__


def _convert(tp, value, path: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, path)
    if tp is PotentialConfig and isinstance(value, (int, float)) and not isinstance(value, bool):
        return PotentialConfig(value=float(value))
    if is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"field '{path}': expected object, got {_type_name(value)}")
        return _build(tp, value, path)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"field '{path}': expected number, got {_type_name(value)}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"field '{path}': expected integer, got {_type_name(value)}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"field '{path}': expected true/false, got {_type_name(value)}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"field '{path}': expected string, got {_type_name(value)}")
        return value
    if origin is tuple:
        if not isinstance(value, list) or len(value) != len(args):
            raise ConfigError(f"field '{path}': expected a list of {len(args)} numbers")
        return tuple(_convert(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"field '{path}': expected list, got {_type_name(value)}")
        return [_convert(args[0], v, f"{path}[{i}]") for i, v in enumerate(value)]
    raise TypeError(f"unsupported config type {tp!r}")  # pragma: no cover


def _build(cls, data: dict, path: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(f"unknown field '{where}'")
    kwargs = {k: _convert(hints[k], v, f"{path}.{k}" if path else k) for k, v in data.items()}
    return cls(**kwargs)


def _check(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"field '{path}': {msg}")


def _validate_profile(p: ProfileConfig, path: str) -> None:
    _check(p.kind in ("zero", "gaussian", "sin", "separable"), f"{path}.kind",
           f"unknown profile '{p.kind}' (zero, gaussian, sin, separable)")
    _check(p.width > 0, f"{path}.width", "must be positive")


def _validate_grid(g: GridConfig, path: str) -> None:
    _check(g.n_x > 0, f"{path}.n_x", "must be positive")
    _check(g.n_t > 0, f"{path}.n_t", "must be positive")
    _check(g.T > 0, f"{path}.T", "must be positive")


def validate(cfg: RunConfig) -> RunConfig:
    """Scalar invariants; region geometry is checked later against the grid."""
    _validate_grid(cfg.grid, "grid")
    _check(0.0 <= cfg.diffusion.alpha < 1.0, "diffusion.alpha", "must lie in [0, 1)")
    _check(cfg.a0.id in ("constant", "linear_x", "oscillating_t"), "a0.id", f"unknown potential '{cfg.a0.id}'")
    f, ld = cfg.follower, cfg.leader
    _check(f.gamma > 0, "follower.gamma", "must be positive")
    _check(f.mu > 0, "follower.mu", "must be positive")
    _check(f.tol > 0, "follower.tol", "must be positive")
    _check(f.max_iter > 0, "follower.max_iter", "must be positive")
    _check(ld.epsilon > 0, "leader.epsilon", "must be positive")
    _check(ld.tol > 0, "leader.tol", "must be positive")
    _check(ld.check_tol > 0, "leader.check_tol", "must be positive")
    _check(ld.max_iter > 0, "leader.max_iter", "must be positive")
    _check(ld.follower_tol is None or ld.follower_tol > 0, "leader.follower_tol", "must be positive")
    for name, seq in (("leader.eps_list", ld.eps_list), ("gamma_list", cfg.gamma_list)):
        _check(len(seq) > 0 and all(e > 0 for e in seq), name, "must be a nonempty list of positive numbers")
        _check(all(b < a for a, b in zip(seq, seq[1:])), name, "must be strictly decreasing")
    _check(cfg.weights.s > 0, "weights.s", "must be positive")
    _check(cfg.weights.seed >= 0, "weights.seed", "must be non-negative")
    for name in ("z_d", "h", "initial"):
        _validate_profile(getattr(cfg, name), name)
    v = cfg.verify
    _check(v.n_samples > 0, "verify.n_samples", "must be positive")
    _check(v.hardy_samples > 0, "verify.hardy_samples", "must be positive")
    _check(all(0.0 <= th < 1.0 for th in v.hardy_thetas), "verify.hardy_thetas", "entries must lie in [0, 1)")
    _check(v.stability_tol > 0, "verify.stability_tol", "must be positive")
    if v.grid is not None:
        _validate_grid(v.grid, "verify.grid")
    for path, reg in (("regions", cfg.regions), ("verify.regions", v.regions)):
        if reg is None:
            continue
        for name in ("omega", "O", "O_d"):
            lo, hi = getattr(reg, name)
            _check(0.0 < lo < hi < 1.0, f"{path}.{name}", "must be an interval [lo, hi] inside (0, 1)")
        _check(reg.nested is None or len(reg.nested) == 3, f"{path}.nested", "must list three intervals")
    return cfg


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse commented JSON into a validated RunConfig; a ``manifest`` key is ignored."""
    try:
        data = json.loads(strip_comments(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be an object")
    data.pop("manifest", None)
    try:
        return validate(_build(RunConfig, data))
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, str(p))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def versions() -> dict:
    import numba
    import scipy

    return {"hierctrl": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


# ---------------------------------------------------------------------------
# problem construction
# ---------------------------------------------------------------------------

def potential(cfg: PotentialConfig, grid: Grid) -> np.ndarray:
    X, Tt = np.meshgrid(grid.x, grid.t)
    if cfg.id == "constant":
        return np.full(grid.shape, cfg.value)
    if cfg.id == "linear_x":
        return cfg.value + cfg.slope * X
    return cfg.value + cfg.slope * np.sin(2.0 * math.pi * Tt / grid.T)


def profile(cfg: ProfileConfig, grid: Grid) -> np.ndarray:
    """Node values of a built-in profile on the full space-time grid."""
    X, Tt = np.meshgrid(grid.x, grid.t)
    bump = np.exp(-(((X - cfg.center) / cfg.width) ** 2))
    if cfg.kind == "zero":
        out = np.zeros(grid.shape)
    elif cfg.kind == "gaussian":
        out = cfg.amplitude * bump
    elif cfg.kind == "sin":
        out = cfg.amplitude * np.sin(cfg.frequency * math.pi * X)
    else:
        out = cfg.amplitude * np.exp(-cfg.decay * Tt) * bump
    if cfg.t_cut is not None:
        out = out * (Tt <= cfg.t_cut)
    out[:, 0] = out[:, -1] = 0.0
    return out


@dataclass
class Setup:
    grid: Grid
    k: object
    op: object
    regions: object


def build_setup(grid_cfg: GridConfig, cfg: RunConfig, regions_cfg: RegionsConfig) -> Setup:
    grid = build_grid(grid_cfg.n_x, grid_cfg.n_t, grid_cfg.T)
    k = make_power_diffusion(cfg.diffusion.alpha)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        op = assemble_operator(grid, k, potential(cfg.a0, grid))
    reg = rasterize_regions(grid, regions_cfg.omega, regions_cfg.O, regions_cfg.O_d,
                            nested=regions_cfg.nested)
    return Setup(grid, k, op, reg)


def follower_problem(cfg: RunConfig, st: Setup, gamma: Optional[float] = None):
    return make_follower_problem(st.op, st.regions, profile(cfg.h, st.grid), profile(cfg.z_d, st.grid),
                                 gamma=cfg.follower.gamma if gamma is None else gamma, mu=cfg.follower.mu)


def leader_problem(cfg: RunConfig, st: Setup) -> LeaderProblem:
    fp = make_follower_problem(st.op, st.regions, None, profile(cfg.z_d, st.grid),
                               gamma=cfg.follower.gamma, mu=cfg.follower.mu)
    return LeaderProblem(fp, epsilon=cfg.leader.epsilon, follower_tol=cfg.leader.follower_tol,
                         follower_max_iter=cfg.follower.max_iter)


# ---------------------------------------------------------------------------
# subcommands; each adds entries "<subcommand>.<check>" to ``checks``
# ---------------------------------------------------------------------------

def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def run_solve(cfg: RunConfig, out: Path, checks: dict) -> None:
    st = build_setup(cfg.grid, cfg, cfg.regions)
    g = st.grid
    src = Field(profile(cfg.h, g) * st.regions.omega.as_float(), g, FORWARD)
    y0 = profile(cfg.initial, g)[0]
    y = solve_forward(st.op, y0, src)
    if cfg.write_fields:
        y.to_csv(out / "state_y.csv")
    rng = np.random.default_rng(cfg.weights.seed)
    w_T = np.zeros(g.n_x + 2)
    w_T[1:-1] = rng.standard_normal(g.n_x)
    f_rand = np.zeros(g.shape)
    f_rand[:, 1:-1] = rng.standard_normal((g.n_t + 1, g.n_x))
    _, rel = duality_check(st.op, f_rand, w_T)
    ny = norms(y, st.op)
    nf = norms(src, st.op)
    g_sq = float(np.sum(st.op.quad_weights * y0**2))
    lhs = ny.l2_final**2 + ny.h1k**2
    rhs = energy_constant(st.op) * (nf.l2_Q**2 + g_sq)
    checks["solve.duality"] = {"passed": rel <= 1e-10, "relative_gap": rel, "tol": 1e-10}
    checks["solve.energy"] = {"passed": lhs <= rhs * (1 + 1e-12), "lhs": lhs, "rhs": rhs}


def run_follower(cfg: RunConfig, out: Path, checks: dict) -> None:
    st = build_setup(cfg.grid, cfg, cfg.regions)
    fp = follower_problem(cfg, st)
    sol = solve_lowregret(fp, tol=cfg.follower.tol, max_iter=cfg.follower.max_iter)
    _write_json(out / "follower.json", sol.to_record())
    if cfg.write_fields:
        sol.write_fields(out)
    checks["follower.residual"] = {"passed": sol.relative_residual <= cfg.follower.tol,
                                   "relative_residual": sol.relative_residual, "tol": cfg.follower.tol,
                                   "iterations": sol.iterations}
    checks["follower.interb"] = {"passed": sol.interb_holds(), "norm_v": sol.norm_v,
                                 "bound": sol.interb_bound}


def _leader_checks(prefix: str, diags, tol: float, checks: dict) -> None:
    stat = max(d.stationarity for d in diags)
    ident = max(d.identity_residual for d in diags)
    checks[f"{prefix}.stationarity"] = {"passed": stat <= tol, "max": stat, "tol": tol}
    checks[f"{prefix}.identity"] = {"passed": ident <= tol, "max": ident, "tol": tol}


def run_leader(cfg: RunConfig, out: Path, checks: dict) -> None:
    st = build_setup(cfg.grid, cfg, cfg.regions)
    prob = leader_problem(cfg, st)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        kappa_norm = check_kappa_admissibility(prob.follower.z_d, weights_for(st.grid, st.k, st.regions,
                                                                           cfg.weights.s), st.op.quad_weights)
    sol = solve_null_control(prob, tol=cfg.leader.tol, max_iter=cfg.leader.max_iter)
    rec = sol.diagnostics.to_record()
    rec["log_kappa_weighted_norm_z_d"] = kappa_norm if math.isfinite(kappa_norm) else str(kappa_norm)
    _write_json(out / "leader.json", rec)
    if cfg.write_fields:
        sol.write_fields(out)
    _leader_checks("leader", [sol.diagnostics], cfg.leader.check_tol, checks)


def run_sweep_eps(cfg: RunConfig, out: Path, checks: dict) -> None:
    st = build_setup(cfg.grid, cfg, cfg.regions)
    sw = epsilon_sweep(leader_problem(cfg, st), cfg.leader.eps_list, tol=cfg.leader.tol,
                       max_iter=cfg.leader.max_iter)
    sw.to_csv(out / "sweep_eps.csv")
    sw.to_json(out / "sweep_eps.json")
    checks["sweep-eps.monotone"] = {"passed": sw.monotone, "slack": 0.05}
    checks["sweep-eps.sqrt_eps_bound"] = {"passed": sw.sqrt_eps_bound, "C_fit": sw.C_fit}
    checks["sweep-eps.h_bounded"] = {"passed": sw.h_bounded, "h_variation": sw.h_variation, "limit": 2.0}
    _leader_checks("sweep-eps", sw.diagnostics, cfg.leader.check_tol, checks)


def run_sweep_gamma(cfg: RunConfig, out: Path, checks: dict) -> None:
    st = build_setup(cfg.grid, cfg, cfg.regions)
    sw = gamma_sweep(follower_problem(cfg, st), cfg.gamma_list, tol=cfg.follower.tol,
                     max_iter=cfg.follower.max_iter)
    sw.to_csv(out / "sweep_gamma.csv")
    checks["sweep-gamma.S0_decreasing"] = {"passed": sw.S0_decreasing}
    checks["sweep-gamma.sqrt_gamma_fitted"] = {"passed": sw.sqrt_gamma_bound, "C_fit": sw.C_fit}
    checks["sweep-gamma.sqrt_gamma_explicit"] = {"passed": sw.explicit_bound}
    checks["sweep-gamma.v_bounded"] = {"passed": sw.v_bounded, "v_variation": sw.v_variation, "limit": 2.0}


def _inequality_constants(cfg: RunConfig, grid_cfg: GridConfig, regions_cfg: RegionsConfig,
                          n_samples: int, seed: int):
    st = build_setup(grid_cfg, cfg, regions_cfg)
    W = weights_for(st.grid, st.k, st.regions, cfg.weights.s)
    prob = leader_problem(cfg, st)
    samples = V.sample_quartets(prob, n_samples, seed)
    cac = V.check_caccioppoli(samples, W, st.op, st.regions)
    obs = V.check_observability(samples, W, st.op, st.regions.omega)
    return st, W, prob, samples, cac, obs


def run_verify(cfg: RunConfig, out: Path, checks: dict) -> None:
    vc = cfg.verify
    seed = cfg.weights.seed
    grid_cfg = vc.grid or cfg.grid
    regions_cfg = vc.regions or cfg.regions
    for th in vc.hardy_thetas:
        rep = V.check_hardy(make_power_diffusion(th), n_samples=vc.hardy_samples, seed=seed)
        checks[f"verify.hardy_theta_{th:g}"] = {"passed": rep.passed, "max_ratio": rep.max_ratio,
                                                "bound": rep.bound, "samples": rep.samples}
        rep.to_json(out / f"hardy_theta_{th:g}.json")

    st, W, prob, samples, cac, obs = _inequality_constants(cfg, grid_cfg, regions_cfg, vc.n_samples, seed)
    W.to_csv(out / "weights.csv")
    orders = V.check_weight_orderings(W, st.k, alpha_cut=vc.alpha_cut)
    orders.to_json(out / "weight_orderings.json")
    checks["verify.weight_orderings"] = {"passed": orders.passed, **orders.details}

    for rep in (cac, obs):
        rep.to_json(out / f"{rep.name}.json")
        rep.ratios_to_csv(out / f"{rep.name}_ratios.csv")
        finite = rep.samples > 0 and math.isfinite(rep.max_ratio)
        checks[f"verify.{rep.name}_finite"] = {"passed": finite, "max_ratio": rep.max_ratio,
                                               "samples": rep.samples, "skipped": rep.skipped, "s": W.s}

    # homogeneity: one sample rescaled by 2 gives the same ratios
    rT, q = samples[0]
    q2 = V.adjoint_quartet_solve(2.0 * rT, prob)
    inner, outer = st.regions.omega_0.indicator, st.regions.omega_1.indicator
    scale_gap = max(
        V.relative_spread(V.caccioppoli_ratio(q, W, st.op, inner, outer),
                          V.caccioppoli_ratio(q2, W, st.op, inner, outer)),
        V.relative_spread(V.observability_ratio(q, W, st.op, st.regions.omega.indicator),
                          V.observability_ratio(q2, W, st.op, st.regions.omega.indicator)))
    checks["verify.scale_invariance"] = {"passed": scale_gap <= 1e-8, "relative_gap": scale_gap}

    if vc.refine:
        fine = replace(grid_cfg, n_x=2 * grid_cfg.n_x, n_t=2 * grid_cfg.n_t)
        *_, cac_f, obs_f = _inequality_constants(cfg, fine, regions_cfg, 2 * vc.n_samples, seed)
        for base, ref in ((cac, cac_f), (obs, obs_f)):
            spread = V.relative_spread(base.max_ratio, ref.max_ratio)
            checks[f"verify.{base.name}_stable"] = {
                "passed": bool(spread <= vc.stability_tol), "base": base.max_ratio, "refined": ref.max_ratio,
                "relative_change": spread, "tol": vc.stability_tol}


RUNNERS = {
    "solve": run_solve,
    "follower": run_follower,
    "leader": run_leader,
    "sweep-eps": run_sweep_eps,
    "sweep-gamma": run_sweep_gamma,
    "verify": run_verify,
}


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------

def _error_record(exc: BaseException, kind: str) -> dict:
    rec = {"type": kind, "message": str(exc)}
    if isinstance(exc, NonConvergenceError):
        rec.update(residual=exc.residual, iterations=exc.iterations, diagnostics=exc.diagnostics)
    return rec


def execute(subcommand: str, cfg: RunConfig) -> int:
    """Run a validated config and write all artifacts; returns the exit code."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = cfg.to_dict()
    manifest["manifest"] = {"subcommand": subcommand, "versions": versions()}
    _write_json(out / "run_manifest.json", manifest)

    checks: dict = {}
    error = None
    names = list(RUNNERS) if subcommand == "all" else [subcommand]
    try:
        for name in names:
            RUNNERS[name](cfg, out, checks)
        code = EXIT_OK if all(c["passed"] for c in checks.values()) else EXIT_FAIL
    except RegionError as exc:
        code, error = EXIT_REGION, _error_record(exc, "region")
    except ConfigurationError as exc:
        code, error = EXIT_CONFIG, _error_record(exc, "config")
    except SolverError as exc:
        code, error = EXIT_SOLVER, _error_record(exc, "solver")

    summary = {"subcommand": subcommand, "exit_code": code,
               "passed": code == EXIT_OK, "checks": {k: {kk: checks[k][kk] for kk in sorted(checks[k])}
                                                     for k in sorted(checks)}}
    if error is not None:
        summary["error"] = error
    _write_json(out / "summary.json", summary)
    return code


def run(subcommand: str, config_path, out: Optional[str] = None, seed: Optional[int] = None) -> int:
    """Load, override and execute; config problems yield exit code 2 or 3."""
    if subcommand not in SUBCOMMANDS:
        print(f"error: unknown subcommand '{subcommand}'", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(config_path)
        if out is not None:
            cfg.output_dir = out
        if seed is not None:
            if not 0 <= seed < 2**64:
                raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {seed}")
            cfg.weights.seed = seed
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code = execute(subcommand, cfg)
    summary = Path(cfg.output_dir) / "summary.json"
    if code in (EXIT_CONFIG, EXIT_REGION, EXIT_SOLVER):
        err = json.loads(summary.read_text())["error"]
        print(f"{err['type']} error: {err['message']}", file=sys.stderr)
    print(f"{subcommand}: exit {code}, summary in {summary}")
    return code


def main(argv: Optional[list[str]] = None) -> int:
    ap = argparse.ArgumentParser(prog="hierctrl", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="JSON config (comments allowed)")
    ap.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    ap.add_argument("--seed", type=int, default=None, help="RNG seed (overrides weights.seed)")
    args = ap.parse_args(argv)
    return run(args.subcommand, args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
