"""Reference solutions independent of the sectional solver.

For a constant collision rate (``sigma1 = sigma2 = 0``, ``Phi = 2 kappa``) and
the power-law breakage kernel the integer moments obey a closed system

    dmu_m/dt = kappa [ (nu+2)/(m+nu+1) sum_j C(m, j) mu_j mu_{m-j} - 2 mu_m mu_0 ],

solved here with an explicit eighth-order Dormand-Prince integrator. For other
kernels the reference is the same scheme on a refined grid.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import comb

from .errors import BudgetError, HorizonExceededError, ParameterError

#: relative tolerance of the hierarchy solve
HIERARCHY_RTOL = 1e-11


@dataclass(frozen=True)
class MomentHierarchy:
    nu: float
    kappa: float
    initial: tuple  # mu_0 .. mu_M
    _coef: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not -1.0 < self.nu <= 0.0:
            raise ParameterError(f"nu must lie in (-1, 0], got {self.nu}")
        if self.kappa < 0.0:
            raise ParameterError("kappa must be nonnegative")
        if len(self.initial) < 2:
            raise ParameterError("the hierarchy needs at least mu_0 and mu_1")
        M = len(self.initial) - 1
        m = np.arange(M + 1)
        object.__setattr__(self, "initial", tuple(float(v) for v in self.initial))
        object.__setattr__(self, "_coef", (self.nu + 2.0) / (m + self.nu + 1.0))

    @property
    def max_order(self) -> int:
        return len(self.initial) - 1

    @property
    def gamma(self) -> float:
        return (self.nu + 2.0) / (self.nu + 1.0)

    def horizon(self) -> float:
        rate = self.kappa * (self.gamma - 2.0) * self.initial[0]
        return math.inf if rate <= 0.0 else 1.0 / rate

    def mu0_exact(self, t):
        """Closed-form number ``mu_0(0) / (1 - kappa (gamma-2) mu_0(0) t)``."""
        m0 = self.initial[0]
        return m0 / (1.0 - self.kappa * (self.gamma - 2.0) * m0 * np.asarray(t, dtype=float))


def moment_ode_rhs(h: MomentHierarchy, moments) -> np.ndarray:
    mu = np.asarray(moments, dtype=float)
    out = np.empty_like(mu)
    for m in range(mu.shape[0]):
        j = np.arange(m + 1)
        conv = float(np.sum(comb(m, j, exact=False) * mu[j] * mu[m - j]))
        out[m] = h.kappa * (h._coef[m] * conv - 2.0 * mu[m] * mu[0])
    return out


def solve_hierarchy(h: MomentHierarchy, t, rtol: float = HIERARCHY_RTOL) -> np.ndarray:
    """Moments at time(s) ``t``; shape ``(M+1,)`` for scalar ``t`` else ``(len(t), M+1)``."""
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ts < 0.0):
        raise ParameterError("times must be nonnegative")
    T = float(ts.max()) if ts.size else 0.0
    if T >= h.horizon():
        raise HorizonExceededError(f"t = {T} is not below the hierarchy horizon {h.horizon():.6g}")
    y0 = np.array(h.initial)
    if T == 0.0:
        out = np.tile(y0, (ts.shape[0], 1))
    else:
        sol = solve_ivp(lambda _t, y: moment_ode_rhs(h, y), (0.0, T), y0, method="DOP853", rtol=rtol,
                        atol=1e-300, dense_output=True)
        if not sol.success:  # pragma: no cover - DOP853 on a smooth polynomial system
            raise HorizonExceededError(sol.message)
        out = np.where(ts[:, None] == 0.0, y0[None, :], sol.sol(ts).T)
    return out[0] if np.ndim(t) == 0 else out


def hierarchy_from_state(state, nu: float, kappa: float, max_order: int = 3) -> MomentHierarchy:
    """Hierarchy started from the discrete moments of a sectional state."""
    g, x = state.numbers, state.grid.pivots
    return MomentHierarchy(nu, kappa, tuple(float(np.dot(x**m, g)) for m in range(max_order + 1)))


# ------------------------------------------------------------ fine grids


#: wall-clock budget for one reference run
REFERENCE_BUDGET_S = 60.0


def fine_reference(config, factor: int = 2, budget_s: float = REFERENCE_BUDGET_S, threads: int = 1):
    """Same scheme with ``factor`` times the cells and a tenth of the tolerance.

    ``factor = 1`` reruns the configuration unchanged. Raises
    :class:`BudgetError` if the table would not fit or the run exceeds the
    time budget.
    """
    from .grid import TABLE_BYTES_LIMIT, _pair_layout, make_geometric
    from .solver import integrate

    if int(factor) != factor or factor < 1:
        raise ParameterError(f"refinement factor must be a positive integer, got {factor}")
    cfg = config
    if factor > 1:
        cfg = config.replace(grid={"cells": config.grid.cells * int(factor)}, run={"rtol": config.run.rtol / 10.0})
    grid = make_geometric(cfg.grid.e1, cfg.grid.n, cfg.grid.cells)
    _, _, offsets, _ = _pair_layout(grid)
    if int(offsets[-1]) * 8 > TABLE_BYTES_LIMIT:
        raise BudgetError(f"{cfg.grid.cells} cells need {offsets[-1] * 8 / 1e9:.2f} GB of allocation table")
    start = time.monotonic()
    traj, series = integrate(cfg, threads=threads, deadline=start + budget_s)
    traj.wall_time = time.monotonic() - start
    return traj


def _relative_moment_error(coarse, fine, orders):
    a = coarse.output_moments(orders)
    b = fine.output_moments(orders)
    if a.times.shape != b.times.shape or np.any(np.abs(a.times - b.times) > 1e-12 * max(1.0, a.times[-1])):
        raise ParameterError("runs do not share output times")
    return max(float(np.max(np.abs(a[m] - b[m]) / np.abs(b[m]))) for m in orders)


@dataclass
class ConvergenceStudy:
    cells: list
    errors: list
    orders: list
    reference_cells: int
    moment_orders: tuple

    @property
    def monotone(self) -> bool:
        return all(b < a for a, b in zip(self.errors, self.errors[1:]))


def convergence_study(config, levels: int = 3, moment_orders=(2.0,), threads: int = 1,
                      budget_s: float = REFERENCE_BUDGET_S) -> ConvergenceStudy:
    """Errors of ``levels`` grids (the configured one and coarsenings by 2)
    against :func:`fine_reference` with factor 2."""
    from .solver import integrate

    base = config.grid.cells
    if base % (2 ** (levels - 1)) or base // 2 ** (levels - 1) < 8:
        raise ParameterError(f"{base} cells cannot be halved {levels - 1} times to at least 8 cells")
    ref = fine_reference(config, 2, budget_s=budget_s, threads=threads)
    cells, errors = [], []
    for k in reversed(range(levels)):
        c = base // 2**k
        traj, _ = integrate(config.replace(grid={"cells": c}), threads=threads)
        cells.append(c)
        errors.append(_relative_moment_error(traj, ref, moment_orders))
    rates = [math.log(errors[k] / errors[k + 1]) / math.log(cells[k + 1] / cells[k])
             for k in range(len(errors) - 1)]
    return ConvergenceStudy(cells, errors, rates, 2 * base, tuple(moment_orders))
