"""Line-oriented simulation configuration.

Each non-blank line is ``section.key = value``; ``#`` starts a comment.
Lists are comma separated. Parsing collects every problem with its line
number instead of stopping at the first one.

Example::

    kernel.kappa = 1
    kernel.sigma1 = 0
    kernel.sigma2 = 0
    breakage.type = power_law
    breakage.nu = -0.5
    grid.e1 = 1e-7
    grid.n = 40
    grid.cells = 200
    initial.family = exponential
    initial.A = 1
    initial.x0 = 1
    run.T = 0.5
    run.output_every = 0.05
    run.moments = 0, 1, 2
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError, FragError
from .grid import build_allocation_table, make_geometric
from .kernels import CollisionKernel, PowerLawBreakage, build_no_transfer_beta, constants_power_law

CHECKS = (
    "mass_conservation",
    "nonnegativity",
    "mu0_envelope",
    "mu0_monotone",
    "mu_sigma1_monotone",
    "time_lipschitz",
    "superlinear_inequality",
    "superlinear_envelope",
    "neg_alpha_envelope",
    "mu_sigma1_lower_bound",
    "weak_form",
    "oracle_agreement",
)


@dataclass(frozen=True)
class KernelSection:
    kappa: float = 1.0
    sigma1: float = 0.0
    sigma2: float = 0.0


@dataclass(frozen=True)
class BreakageSection:
    type: str = "power_law"
    nu: float = 0.0
    alpha: float | None = None
    p: float | None = None


@dataclass(frozen=True)
class GridSection:
    e1: float = 1e-7
    n: float = 40.0
    cells: int = 200


@dataclass(frozen=True)
class InitialSection:
    family: str = "exponential"
    A: float | None = None
    x0: float | None = None
    a: float | None = None
    b: float | None = None
    height: float | None = None
    file: str | None = None

    def params(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items() if k != "family" and v is not None}


@dataclass(frozen=True)
class RunSection:
    T: float = 1.0
    output_every: float = 0.1
    moments: tuple = (0.0, 1.0, 2.0)
    rtol: float = 1e-7
    dt_initial: float = 1e-4
    dt_max: float = math.inf
    safety: float = 0.9
    loss_cap: float = 0.5
    positivity_floor: float = 0.0
    probe_blowup: bool = False
    blowup_factor: float = 100.0
    snapshots: bool = False


@dataclass(frozen=True)
class ValidateSection:
    checks: tuple = ()
    m: float = 2.0
    theta: tuple = ("1", "x", "indicator:1:2")
    self_test: bool = False
    tolerances: tuple = ()  # (check, tolerance) pairs

    def tolerance(self, check: str, default: float) -> float:
        return dict(self.tolerances).get(check, default)


@dataclass(frozen=True)
class SimConfig:
    kernel: KernelSection = field(default_factory=KernelSection)
    breakage: BreakageSection = field(default_factory=BreakageSection)
    grid: GridSection = field(default_factory=GridSection)
    initial: InitialSection = field(default_factory=InitialSection)
    run: RunSection = field(default_factory=RunSection)
    validate: ValidateSection = field(default_factory=ValidateSection)

    def replace(self, **sections) -> "SimConfig":
        """Copy with per-section overrides, e.g. ``replace(grid={"cells": 400})``."""
        parts = {name: dataclasses.replace(getattr(self, name), **vals) for name, vals in sections.items()}
        return dataclasses.replace(self, **parts)


_SECTION_TYPES = {
    "kernel": KernelSection,
    "breakage": BreakageSection,
    "grid": GridSection,
    "initial": InitialSection,
    "run": RunSection,
    "validate": ValidateSection,
}
_INT_KEYS = {("grid", "cells")}
_BOOL_KEYS = {("run", "probe_blowup"), ("run", "snapshots"), ("validate", "self_test")}
_STR_KEYS = {("breakage", "type"), ("initial", "family"), ("initial", "file")}
_FLOAT_LIST_KEYS = {("run", "moments")}
_STR_LIST_KEYS = {("validate", "checks"), ("validate", "theta")}


def _to_float(text):
    v = float(text)
    if math.isnan(v):
        raise ValueError("nan")
    return v


def _to_bool(text):
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(text)


def _to_int(text):
    v = float(text)
    if v != int(v):
        raise ValueError(text)
    return int(v)


def _split_list(text):
    return tuple(p.strip() for p in text.split(",") if p.strip())


def parse_config(text: str, probe_blowup: bool = False) -> SimConfig:
    """Parse and validate; raises :class:`ConfigError` listing every problem.

    ``probe_blowup`` forces ``run.probe_blowup`` on, which lifts the horizon
    check on ``run.T``.
    """
    issues: list[tuple[int, str]] = []
    values: dict[str, dict[str, Any]] = {name: {} for name in _SECTION_TYPES}
    lines: dict[tuple[str, str], int] = {}
    tolerances: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            issues.append((lineno, f"expected 'section.key = value', got {raw.strip()!r}"))
            continue
        lhs, rhs = (s.strip() for s in line.split("=", 1))
        if "." not in lhs:
            issues.append((lineno, f"key {lhs!r} has no section"))
            continue
        section, key = lhs.split(".", 1)
        if section not in _SECTION_TYPES:
            issues.append((lineno, f"unknown section {section!r}"))
            continue
        if section == "validate" and key.startswith("tol_"):
            check = key[4:]
            if check not in CHECKS:
                issues.append((lineno, f"unknown check {check!r} in {lhs}"))
                continue
            try:
                tolerances[check] = _to_float(rhs)
            except ValueError:
                issues.append((lineno, f"{lhs}: expected a number, got {rhs!r}"))
            lines[(section, key)] = lineno
            continue
        known = {f.name for f in dataclasses.fields(_SECTION_TYPES[section])} - {"tolerances"}
        if key not in known:
            issues.append((lineno, f"unknown key {lhs!r}"))
            continue
        if (section, key) in lines:
            issues.append((lineno, f"duplicate key {lhs!r} (first set on line {lines[(section, key)]})"))
            continue
        lines[(section, key)] = lineno
        try:
            if (section, key) in _INT_KEYS:
                val = _to_int(rhs)
            elif (section, key) in _BOOL_KEYS:
                val = _to_bool(rhs)
            elif (section, key) in _STR_KEYS:
                val = rhs
            elif (section, key) in _FLOAT_LIST_KEYS:
                val = tuple(_to_float(p) for p in _split_list(rhs))
            elif (section, key) in _STR_LIST_KEYS:
                val = _split_list(rhs)
            else:
                val = _to_float(rhs)
        except ValueError:
            issues.append((lineno, f"{lhs}: cannot read {rhs!r} as the expected type"))
            continue
        values[section][key] = val
    if probe_blowup:
        values["run"]["probe_blowup"] = True
    if tolerances:
        values["validate"]["tolerances"] = tuple(sorted(tolerances.items()))
    try:
        cfg = SimConfig(**{name: cls(**values[name]) for name, cls in _SECTION_TYPES.items()})
    except TypeError as exc:  # pragma: no cover - guarded by the key checks above
        raise ConfigError(issues + [(None, str(exc))]) from None
    issues += _validate(cfg, lambda s, k: lines.get((s, k)))
    if issues:
        raise ConfigError(sorted(issues, key=lambda it: it[0] or 0))
    return cfg


def _validate(cfg: SimConfig, where) -> list[tuple[int, str]]:
    out = []

    def bad(section, key, msg):
        out.append((where(section, key), msg))

    k, b, g, i, r, v = cfg.kernel, cfg.breakage, cfg.grid, cfg.initial, cfg.run, cfg.validate
    if not k.kappa >= 0.0:
        bad("kernel", "kappa", f"kernel.kappa must be nonnegative, got {k.kappa}")
    if not 0.0 <= k.sigma1 <= 1.0:
        bad("kernel", "sigma1", f"kernel.sigma1 must lie in [0, 1], got {k.sigma1}")
    if not 0.0 <= k.sigma2 <= 1.0:
        bad("kernel", "sigma2", f"kernel.sigma2 must lie in [0, 1], got {k.sigma2}")
    if k.sigma1 > k.sigma2:
        bad("kernel", "sigma1", f"σ₁ ≤ σ₂ required (sigma1={k.sigma1} > sigma2={k.sigma2})")
    if k.sigma1 == 1.0:
        bad("kernel", "sigma1", "σ₁ ≠ 1 required")
    if b.type not in ("power_law", "no_transfer"):
        bad("breakage", "type", f"breakage.type must be power_law or no_transfer, got {b.type!r}")
    nu_ok = -1.0 < b.nu <= 0.0
    if not nu_ok:
        bad("breakage", "nu", f"breakage.nu = {b.nu} outside the admissible range (-1, 0]")
    if nu_ok and b.alpha is not None and not (0.0 < b.alpha < min(1.0, b.nu + 1.0)):
        bad("breakage", "alpha", f"breakage.alpha must lie in (0, min(1, nu + 1)), got {b.alpha}")
    if nu_ok and b.p is not None and not b.p > 1.0 / (b.nu + 1.0):
        bad("breakage", "p", f"breakage.p must exceed 1/(nu + 1) = {1.0 / (b.nu + 1.0):g}, got {b.p}")
    if not (0.0 < g.e1 < g.n and math.isfinite(g.n)):
        bad("grid", "e1", f"need 0 < grid.e1 < grid.n, got e1={g.e1}, n={g.n}")
    if g.cells < 8:
        bad("grid", "cells", f"grid.cells must be at least 8, got {g.cells}")
    fam = {"exponential": ("A", "x0"), "pulse": ("a", "b", "height"), "tabulated": ("file",)}
    if i.family not in fam:
        bad("initial", "family", f"initial.family must be one of {sorted(fam)}, got {i.family!r}")
    else:
        for key in fam[i.family]:
            if getattr(i, key) is None:
                bad("initial", "family", f"initial.{key} is required for the {i.family} family")
        for key in ("A", "x0", "height"):
            val = getattr(i, key)
            if key in fam[i.family] and val is not None and not val > 0.0:
                bad("initial", key, f"initial.{key} must be positive, got {val}")
        if i.family == "pulse" and i.a is not None and i.b is not None and not 0.0 <= i.a < i.b:
            bad("initial", "a", f"pulse needs 0 <= a < b, got a={i.a}, b={i.b}")
    if not (r.T > 0.0 and math.isfinite(r.T)):
        bad("run", "T", f"run.T must be positive and finite, got {r.T}")
    if not r.output_every > 0.0:
        bad("run", "output_every", f"run.output_every must be positive, got {r.output_every}")
    for key, ok in (("rtol", r.rtol > 0), ("dt_initial", r.dt_initial > 0), ("dt_max", r.dt_max > 0),
                    ("safety", 0 < r.safety <= 1), ("loss_cap", 0 < r.loss_cap <= 1),
                    ("positivity_floor", r.positivity_floor >= 0), ("blowup_factor", r.blowup_factor > 1)):
        if not ok:
            bad("run", key, f"run.{key} = {getattr(r, key)} is out of range")
    for m in r.moments:
        if nu_ok and not m > -(b.nu + 1.0):
            bad("run", "moments", f"moment order {m} must exceed -(nu + 1) = {-(b.nu + 1.0):g}")
    for check in v.checks:
        if check not in CHECKS:
            bad("validate", "checks", f"unknown check {check!r}; known: {', '.join(CHECKS)}")
    if not v.m > 1.0:
        bad("validate", "m", f"validate.m must exceed 1, got {v.m}")
    for th in v.theta:
        if th not in ("1", "x") and not _is_indicator(th):
            bad("validate", "theta", f"test function {th!r} must be 1, x or indicator:a:b")
    if out:
        return out
    # horizon check needs the discrete initial data
    if not r.probe_blowup:
        try:
            ts = horizon(cfg)
        except FragError as exc:
            bad("initial", "family", f"initial data: {exc}")
            return out
        if r.T >= ts:
            bad("run", "T", f"run.T = {r.T} is not below T_gamma_sigma = {ts:.6g}; set run.probe_blowup = true "
                             "to integrate towards blow-up")
    return out


def _is_indicator(th):
    parts = th.split(":")
    if len(parts) != 3 or parts[0] != "indicator":
        return False
    try:
        return float(parts[1]) < float(parts[2])
    except ValueError:
        return False


def _fmt_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt_value(x) for x in v)
    return str(v)


def emit_config(cfg: SimConfig) -> str:
    """Text form that :func:`parse_config` maps back to ``cfg``."""
    lines = []
    for name, cls in _SECTION_TYPES.items():
        sec = getattr(cfg, name)
        for f in dataclasses.fields(cls):
            val = getattr(sec, f.name)
            if f.name == "tolerances":
                lines += [f"validate.tol_{c} = {_fmt_value(float(t))}" for c, t in val]
                continue
            if val is None or (isinstance(val, tuple) and not val):
                continue
            lines.append(f"{name}.{f.name} = {_fmt_value(val)}")
    return "\n".join(lines) + "\n"


def load_config(path, probe_blowup: bool = False) -> SimConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([(None, f"cannot read {path}: {exc}")]) from exc
    return parse_config(text, probe_blowup)


# -------------------------------------------------------------- assembly


@dataclass
class Problem:
    config: SimConfig
    collision: CollisionKernel
    breakage: Any
    grid: Any
    table: Any
    initial: Any
    settings: Any
    output_times: np.ndarray
    orders: tuple


def build_collision(cfg: SimConfig) -> CollisionKernel:
    return CollisionKernel(cfg.kernel.kappa, cfg.kernel.sigma1, cfg.kernel.sigma2)


def build_breakage(cfg: SimConfig):
    b = cfg.breakage
    if b.type == "no_transfer":
        return build_no_transfer_beta(b.nu)
    return PowerLawBreakage(b.nu, b.alpha, b.p)


def build_grid(cfg: SimConfig):
    return make_geometric(cfg.grid.e1, cfg.grid.n, cfg.grid.cells)


def build_initial(cfg: SimConfig, grid=None):
    from .solver import build_initial_state

    return build_initial_state(cfg.initial.family, cfg.initial.params(), grid or build_grid(cfg))


def horizon(cfg: SimConfig) -> float:
    """``T_{gamma,sigma}`` for the discrete initial data of ``cfg``."""
    from .moments import t_star

    state = build_initial(cfg)
    mu0 = float(state.numbers.sum())
    rho = float(np.dot(state.grid.pivots, state.numbers))
    return t_star(mu0, rho, cfg.kernel.kappa, cfg.kernel.sigma1 + cfg.kernel.sigma2, build_breakage(cfg).gamma)


def output_times(cfg: SimConfig) -> np.ndarray:
    r = cfg.run
    n = int(math.floor(r.T / r.output_every + 1e-9))
    times = r.output_every * np.arange(1, n + 1)
    times = times[times < r.T * (1 - 1e-12)]
    return np.append(times, r.T)


def required_orders(cfg: SimConfig, checks=None) -> tuple:
    """Moment orders to record: the configured ones plus those the checks use."""
    k, v = cfg.kernel, cfg.validate
    s1, s2, m = k.sigma1, k.sigma2, v.m
    orders = set(cfg.run.moments) | {0.0, 1.0}
    needs = {
        "mu_sigma1_monotone": [s1],
        "superlinear_inequality": [m, 1 + s1, m + s2 - 1, 1 + s2, m + s1 - 1, m + s2, s1],
        "superlinear_envelope": [m],
    }
    if cfg.breakage.alpha is not None:
        needs["neg_alpha_envelope"] = [-cfg.breakage.alpha]
        needs["mu_sigma1_lower_bound"] = [-cfg.breakage.alpha, s1]
    for check in v.checks if checks is None else checks:
        orders |= set(needs.get(check, []))
    return tuple(sorted(float(o) for o in orders))


def build_problem(cfg: SimConfig, table=None) -> Problem:
    from .solver import SolverSettings

    collision = build_collision(cfg)
    breakage = build_breakage(cfg)
    grid = build_grid(cfg) if table is None else table.grid
    if table is None:
        table = build_allocation_table(grid, collision, breakage)
    r = cfg.run
    settings = SolverSettings(t_end=r.T, rtol=r.rtol, dt_initial=r.dt_initial, dt_max=r.dt_max, safety=r.safety,
                              loss_cap=r.loss_cap, positivity_floor=r.positivity_floor)
    return Problem(cfg, collision, breakage, grid, table, build_initial(cfg, grid), settings, output_times(cfg),
                   required_orders(cfg))


def constants_for(cfg: SimConfig):
    b = cfg.breakage
    s1 = cfg.kernel.sigma1
    return constants_power_law(b.nu, m=cfg.validate.m, sigma1=s1 if 0.0 < s1 < 1.0 else None,
                               alpha=b.alpha, p=b.p)
