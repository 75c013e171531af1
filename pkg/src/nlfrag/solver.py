"""Right-hand side of the truncated sectional system and its time integration.

The unknowns are cell numbers ``g_k``; densities are ``g_k / width_k``. With
``r_p = c_p Phi_n(x_i, x_j) g_i g_j`` (``c_p = 1/2`` on the diagonal) the
number balance is

    dg_k/dt = sum_p r_p w_{k|p} - g_k sum_j Phi_n(x_k, x_j) g_j.

Time stepping is the three-stage SSP Runge-Kutta scheme in Shu-Osher form
with an embedded second-order estimate, a loss-rate cap on the step and
rejection of any step that would produce a negative number.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import backend
from ._alloc import allocate_cloud
from .errors import BudgetError, HorizonExceededError, InvalidInputError, ParameterError, StiffnessError
from .grid import AllocationTable, Grid, rate_matrix
from .kernels import CollisionKernel, power_cloud
from .moments import MomentSeries, t_star

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class State:
    """Cell-averaged number density at time ``t``."""

    t: float
    density: np.ndarray
    grid: Grid
    numbers: np.ndarray = None
    analytic: dict | None = None

    def __post_init__(self):
        if self.density.shape != self.grid.pivots.shape:
            raise InvalidInputError("density does not match the grid")
        if self.numbers is None:
            object.__setattr__(self, "numbers", self.density * self.grid.widths)

    @classmethod
    def from_numbers(cls, t, numbers, grid, analytic=None) -> "State":
        numbers = np.asarray(numbers, dtype=float)
        return cls(float(t), numbers / grid.widths, grid, numbers, analytic)


@dataclass(frozen=True)
class SolverSettings:
    t_end: float
    rtol: float = 1e-7
    dt_initial: float = 1e-4
    dt_max: float = math.inf
    safety: float = 0.9
    loss_cap: float = 0.5
    positivity_floor: float = 0.0
    dt_min: float = 1e-14
    max_steps: int = 1_000_000

    def __post_init__(self):
        checks = [
            (self.t_end >= 0.0, "t_end must be nonnegative"),
            (self.rtol > 0.0, "rtol must be positive"),
            (self.dt_initial > 0.0, "dt_initial must be positive"),
            (self.dt_max > 0.0, "dt_max must be positive"),
            (0.0 < self.safety <= 1.0, "safety must lie in (0, 1]"),
            (0.0 < self.loss_cap <= 1.0, "loss_cap must lie in (0, 1]"),
            (self.positivity_floor >= 0.0, "positivity_floor must be nonnegative"),
            (self.dt_min > 0.0, "dt_min must be positive"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ParameterError(msg)


class Rhs:
    """Table-driven right-hand side in number form."""

    def __init__(self, table: AllocationTable, threads: int = 1, backend_name: str | None = None):
        self.table = table
        self.grid = table.grid
        self.threads = max(1, int(threads))
        self.impl = backend.get(backend_name)
        self._r = np.empty(table.npairs)

    def evaluate(self, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(dg/dt, collision frequency per cell)``."""
        t = self.table
        if g.shape != (self.grid.size,):
            raise InvalidInputError(f"state has {g.shape} cells, table expects {self.grid.size}")
        self.impl.pair_rates(g, t.pair_i, t.pair_j, t.coef, self._r)
        gain = self.impl.accumulate_gain(self._r, t.offsets, t.data, t.chunks, self.grid.size, self.threads)
        freq = t.rate_matrix @ g
        return gain - g * freq, freq

    def __call__(self, g):
        return self.evaluate(g)[0]


class DirectNoTransferRhs:
    """One-sided gain for kernels where each collider fragments on its own.

    Every particle of size ``x_i`` that collides produces the cloud
    ``bar_beta(., x_i)``, so the gain is ``Wbar^T (g * (Phi_n g))`` with
    ``Wbar[i]`` the pivot allocation of that cloud. No pair table is used.
    """

    def __init__(self, grid: Grid, collision: CollisionKernel, nu: float):
        self.grid = grid
        self.phi = rate_matrix(grid, collision)
        K = grid.size
        self.wbar = np.zeros((K, K))
        for i in range(K):
            allocate_cloud(grid.edges, grid.pivots, power_cloud(nu, float(grid.pivots[i])), self.wbar[i])

    def evaluate(self, g):
        freq = self.phi @ g
        lost = g * freq
        return self.wbar.T @ lost - lost, freq

    def __call__(self, g):
        return self.evaluate(g)[0]


def assemble_rhs(state: State, table: AllocationTable, threads: int = 1) -> np.ndarray:
    """``d density/dt`` for ``state``."""
    if state.grid is not table.grid and not np.array_equal(state.grid.edges, table.grid.edges):
        raise InvalidInputError("state and table live on different grids")
    return Rhs(table, threads)(state.numbers) / state.grid.widths


# ------------------------------------------------------------------ stepping


def _stages(f, g, h, first=None):
    # increment form of the Shu-Osher stages, so a zero rhs returns g exactly
    k1, freq = f(g) if first is None else first
    u1 = g + h * k1
    k2, _ = f(u1)
    u2 = g + (0.25 * h) * (k1 + k2)
    k3, _ = f(u2)
    new = g + (h / 6.0) * (k1 + k2 + 4.0 * k3)
    err = h * (2.0 / 3.0) * (k3 - 0.5 * (k1 + k2))
    return new, err, freq


def _error_norm(err, g, pivots, rtol):
    num = float(np.sum(g))
    mass = float(np.dot(pivots, g))
    e_num = float(np.sum(np.abs(err))) / num if num > 0 else 0.0
    e_mass = float(np.dot(pivots, np.abs(err))) / mass if mass > 0 else 0.0
    return max(e_num, e_mass) / rtol


def _as_pair_fn(f):
    def wrapped(g):
        out = f(g)
        return out if isinstance(out, tuple) else (out, np.zeros_like(g))
    return wrapped


def _rate_cap(freq, g, settings):
    occupied = g > settings.positivity_floor
    if not np.any(occupied):
        return math.inf
    fmax = float(np.max(freq[occupied]))
    return settings.loss_cap / fmax if fmax > 0 else math.inf


@dataclass
class StepResult:
    state: State
    dt: float
    dt_next: float
    rejected: int
    error: float


def step(state: State, settings: SolverSettings, table: AllocationTable | None = None, dt: float | None = None,
         rhs: Callable | None = None, t_stop: float | None = None) -> StepResult:
    """Take one accepted SSP-RK3 step, retrying with smaller ``dt`` as needed.

    ``rhs`` overrides the table-driven right-hand side; it maps numbers to
    ``dg/dt`` or to ``(dg/dt, frequency)``.
    """
    f = _as_pair_fn(rhs if rhs is not None else Rhs(table).evaluate)
    g = state.numbers
    pivots = state.grid.pivots
    h = settings.dt_initial if dt is None else dt
    h = min(h, settings.dt_max)
    if t_stop is not None:
        h = min(h, t_stop - state.t)
    first = f(g)
    h = min(h, _rate_cap(first[1], g, settings))
    rejected = 0
    while True:
        if h < settings.dt_min * max(1.0, abs(state.t)):
            raise StiffnessError(f"step size underflow at t = {state.t!r} (dt = {h:.3e})", state=state, dt=h)
        new, err, _ = _stages(f, g, h, first)
        if not np.all(np.isfinite(new)) or np.min(new) < 0.0:
            rejected += 1
            h *= 0.5
            continue
        e = _error_norm(err, g, pivots, settings.rtol)
        fac = settings.safety * e ** (-1.0 / 3.0) if e > 0 else 5.0
        if e <= 1.0:
            t_new = state.t + h
            if t_stop is not None and abs(t_new - t_stop) <= 1e-15 * max(1.0, abs(t_stop)):
                t_new = t_stop
            h_next = min(h * min(5.0, max(0.2, fac)), settings.dt_max)
            return StepResult(State.from_numbers(t_new, new, state.grid), h, h_next, rejected, e)
        rejected += 1
        h *= max(0.2, min(fac, 0.9))


def replay_step(state: State, h: float, rhs: Callable, t_new: float | None = None) -> State:
    """One SSP-RK3 step of prescribed size, without error control."""
    new, _, _ = _stages(_as_pair_fn(rhs), state.numbers, h)
    return State.from_numbers(state.t + h if t_new is None else t_new, new, state.grid)


# --------------------------------------------------------------- trajectory


@dataclass
class Trajectory:
    """Integration record.

    ``states`` holds the states at the output times that were reached;
    ``step_times``/``step_numbers`` hold every accepted step (including the
    initial state) and ``moments`` the recorded moments at those steps.
    """

    grid: Grid
    output_times: np.ndarray
    states: list
    step_times: np.ndarray
    step_numbers: np.ndarray
    moments: MomentSeries
    stop_reason: str = "end"
    stop_time: float = 0.0
    rejected: int = 0
    message: str = ""

    def output_moments(self, orders: Sequence[float] | None = None) -> MomentSeries:
        """Moments at the output times (from the stored states)."""
        orders = self.moments.orders if orders is None else orders
        g = np.array([s.numbers for s in self.states])
        return MomentSeries.from_numbers([s.t for s in self.states], g, self.grid.pivots, orders)

    def with_orders(self, orders: Sequence[float]) -> MomentSeries:
        """Moments at every accepted step for an arbitrary set of orders."""
        return MomentSeries.from_numbers(self.step_times, self.step_numbers, self.grid.pivots,
                                         set(orders) | set(self.moments.orders))

    @property
    def final(self) -> State:
        return State.from_numbers(self.step_times[-1], self.step_numbers[-1], self.grid)


def integrate_state(state: State, rhs: Callable, settings: SolverSettings, output_times=None,
                    orders: Sequence[float] = (0.0, 1.0, 2.0), step_times=None,
                    blowup_factor: float | None = None, deadline: float | None = None) -> Trajectory:
    """Integrate from ``state`` to ``settings.t_end``.

    With ``step_times`` given, the steps are replayed exactly (no error
    control). With ``blowup_factor`` set, integration stops once ``mu_0``
    exceeds that multiple of its initial value, and a step-size underflow is
    reported in the trajectory instead of raised. ``deadline`` is a
    ``time.monotonic()`` value after which :class:`BudgetError` is raised.
    """
    grid = state.grid
    f = _as_pair_fn(rhs)
    T = float(settings.t_end)
    outs = np.unique(np.append(np.asarray([] if output_times is None else output_times, dtype=float), T))
    outs = outs[(outs > state.t) & (outs <= T)]
    mu0_start = float(state.numbers.sum())
    times = [state.t]
    numbers = [state.numbers.copy()]
    snaps = [state]
    reason, message, rejected = "end", "", 0
    stiff = None

    def record(s):
        times.append(s.t)
        numbers.append(s.numbers.copy())

    cur = state
    if step_times is not None:
        targets = np.asarray(step_times, dtype=float)
        targets = targets[targets > state.t]
        k_out = 0
        for tn in targets:
            cur = replay_step(cur, tn - cur.t, f, tn)
            record(cur)
            while k_out < outs.shape[0] and outs[k_out] <= tn:
                if outs[k_out] == tn:
                    snaps.append(cur)
                k_out += 1
    else:
        h = settings.dt_initial
        nsteps = 0
        for t_out in outs:
            while cur.t < t_out:
                if nsteps >= settings.max_steps:
                    raise StiffnessError(f"step limit {settings.max_steps} reached at t = {cur.t!r}", state=cur)
                try:
                    res = step(cur, settings, dt=h, rhs=f, t_stop=float(t_out))
                except StiffnessError as exc:
                    reason, message = "stiffness", str(exc)
                    if blowup_factor is None:
                        stiff = exc
                    break
                nsteps += 1
                if deadline is not None and time.monotonic() > deadline:
                    raise BudgetError(f"time budget exhausted at t = {res.state.t:.6g} after {nsteps} steps")
                rejected += res.rejected
                cur = res.state
                h = res.dt_next
                record(cur)
                if blowup_factor is not None and cur.numbers.sum() > blowup_factor * mu0_start:
                    reason = "blowup"
                    message = f"mu_0 exceeded {blowup_factor:g} x its initial value at t = {cur.t!r}"
                    break
            if reason != "end":
                break
            snaps.append(cur)
    step_t = np.asarray(times)
    step_g = np.asarray(numbers)
    series = MomentSeries.from_numbers(step_t, step_g, grid.pivots, orders)
    traj = Trajectory(grid, outs, snaps, step_t, step_g, series, reason, float(step_t[-1]), rejected, message)
    if stiff is not None:
        stiff.trajectory = traj
        raise stiff
    if reason != "end":
        logger.info(message)
    return traj


# ------------------------------------------------------------ initial data


def _overlap(edges, a, b):
    return np.clip(np.minimum(edges[1:], b) - np.maximum(edges[:-1], a), 0.0, None)


def _positive(params, *names):
    vals = []
    for name in names:
        if name not in params:
            raise ParameterError(f"missing initial parameter {name!r}")
        v = float(params[name])
        if not (math.isfinite(v) and v > 0.0):
            raise ParameterError(f"initial parameter {name} must be positive, got {v}")
        vals.append(v)
    return vals


def read_table(path) -> tuple[np.ndarray, np.ndarray]:
    """Read ``x,density`` rows (optional header, ``#`` comments)."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(line for line in fh if line.strip() and not line.lstrip().startswith("#"))]
    except OSError as exc:
        raise InvalidInputError(f"cannot read density table {path}: {exc}") from exc
    pts = []
    for k, row in enumerate(rows):
        try:
            pts.append((float(row[0]), float(row[1])))
        except (ValueError, IndexError):
            if k == 0:
                continue  # header
            raise InvalidInputError(f"{path}: malformed row {k + 1}: {row!r}") from None
    if len(pts) < 2:
        raise InvalidInputError(f"{path}: need at least two points")
    x, u = np.array(pts).T
    if np.any(~np.isfinite(x)) or np.any(~np.isfinite(u)):
        raise InvalidInputError(f"{path}: non-finite values")
    if np.any(u < 0.0):
        raise InvalidInputError(f"{path}: density must be nonnegative")
    if x[0] < 0.0 or np.any(np.diff(x) <= 0.0):
        raise InvalidInputError(f"{path}: sizes must be nonnegative and strictly increasing")
    return x, u


def _linear_cumulative(x, u, z):
    """Integral of the piecewise-linear interpolant from ``x[0]`` to ``z``."""
    z = np.clip(z, x[0], x[-1])
    seg = np.cumsum(np.concatenate(([0.0], 0.5 * (u[1:] + u[:-1]) * np.diff(x))))
    k = np.clip(np.searchsorted(x, z, side="right") - 1, 0, x.shape[0] - 2)
    d = z - x[k]
    slope = (u[k + 1] - u[k]) / (x[k + 1] - x[k])
    return seg[k] + d * (u[k] + 0.5 * slope * d)


def _linear_moment(x, u, m):
    a, b = x[:-1], x[1:]
    c1 = (u[1:] - u[:-1]) / (b - a)
    c0 = u[:-1] - c1 * a
    return float(np.sum(c0 * (b ** (m + 1) - a ** (m + 1)) / (m + 1) + c1 * (b ** (m + 2) - a ** (m + 2)) / (m + 2)))


def build_initial_state(family: str, params: dict, grid: Grid) -> State:
    """Cell averages of an initial density restricted to ``[0, n]``.

    ``state.analytic`` holds ``mu_0, mu_1, mu_2`` of the untruncated density.
    """
    e = grid.edges
    if family == "exponential":
        A, x0 = _positive(params, "A", "x0")
        g = A * x0 * np.exp(-e[:-1] / x0) * -np.expm1(-np.diff(e) / x0)
        analytic = {0: A * x0, 1: A * x0**2, 2: 2.0 * A * x0**3}
    elif family == "pulse":
        (h,) = _positive(params, "height")
        a, b = float(params.get("a", math.nan)), float(params.get("b", math.nan))
        if not (math.isfinite(a) and math.isfinite(b) and 0.0 <= a < b):
            raise ParameterError(f"pulse needs 0 <= a < b, got a={a}, b={b}")
        if a >= grid.n:
            raise ParameterError("pulse lies beyond the truncation size")
        g = h * _overlap(e, a, b)
        analytic = {0: h * (b - a), 1: h * (b * b - a * a) / 2.0, 2: h * (b**3 - a**3) / 3.0}
    elif family == "tabulated":
        if "file" not in params:
            raise ParameterError("tabulated initial data needs a file")
        x, u = read_table(params["file"])
        g = np.diff(_linear_cumulative(x, u, e))
        analytic = {m: _linear_moment(x, u, m) for m in (0, 1, 2)}
    else:
        raise ParameterError(f"unknown initial family {family!r}")
    g = np.maximum(g, 0.0)
    if not np.sum(g) > 0.0:
        raise ParameterError("initial density has no mass on the grid")
    return State.from_numbers(0.0, g, grid, analytic)


# ---------------------------------------------------------------- drivers


def horizon_check(state: State, collision: CollisionKernel, gamma: float, t_end: float, probe: bool) -> float:
    mu0 = float(state.numbers.sum())
    rho = float(np.dot(state.grid.pivots, state.numbers))
    ts = t_star(mu0, rho, collision.kappa, collision.sigma, gamma)
    if t_end >= ts and not probe:
        raise HorizonExceededError(f"T = {t_end} is not below the existence horizon {ts:.6g}; "
                                   "use blow-up probing to integrate past it")
    return ts


def integrate(config, threads: int = 1, probe_blowup: bool | None = None, table=None,
              deadline: float | None = None):
    """Run a configured simulation; returns ``(trajectory, moments)``."""
    from .config import build_problem

    prob = build_problem(config, table=table)
    probe = config.run.probe_blowup if probe_blowup is None else probe_blowup
    horizon_check(prob.initial, prob.collision, prob.breakage.gamma, prob.settings.t_end, probe)
    rhs = Rhs(prob.table, threads=threads)
    traj = integrate_state(prob.initial, rhs.evaluate, prob.settings, prob.output_times, prob.orders,
                           blowup_factor=config.run.blowup_factor if probe else None, deadline=deadline)
    traj.problem = prob
    return traj, traj.moments
