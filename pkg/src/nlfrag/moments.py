"""Moments of sectional states and the explicit bounds they must respect.

Moments are evaluated at the pivots, ``mu_m = sum_k x_k**m g_k`` with ``g_k``
the number in cell ``k``. This matches how the solver represents mass and keeps
negative orders finite. Every check returns a :class:`BoundReport`; a check
passes iff its normalised violation does not exceed its tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate

from .errors import HorizonExceededError, InvalidInputError, ParameterError

_ORDER_ATOL = 1e-12


def moment(state, grid=None, m: float = 0.0) -> float:
    """``sum_k x_k**m g_k`` for a state (``grid`` defaults to ``state.grid``)."""
    grid = state.grid if grid is None else grid
    g = state.numbers if hasattr(state, "numbers") else np.asarray(state) * grid.widths
    return float(np.dot(grid.pivots**m, g))


def moments_of_numbers(g: np.ndarray, pivots: np.ndarray, orders: Sequence[float]) -> np.ndarray:
    """Moment matrix for cell numbers ``g`` (rows: samples, columns: orders)."""
    powers = np.stack([pivots**m for m in orders], axis=1)
    return np.atleast_2d(g) @ powers


@dataclass
class MomentSeries:
    """``mu_m(t)`` for a fixed set of orders; ``rho`` is the initial mass."""

    times: np.ndarray
    orders: tuple
    values: np.ndarray
    rho: float = field(init=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float).reshape(self.times.shape[0], len(self.orders))
        idx = self._index(1.0)
        if idx is None:
            raise InvalidInputError("a moment series must record the first moment")
        self.rho = float(self.values[0, idx])
        if not self.rho > 0.0:
            raise InvalidInputError("initial mass must be positive")

    @classmethod
    def from_numbers(cls, times, g, pivots, orders) -> "MomentSeries":
        orders = tuple(sorted({float(m) for m in orders} | {0.0, 1.0}))
        return cls(np.asarray(times), orders, moments_of_numbers(np.asarray(g), pivots, orders))

    def _index(self, m):
        for k, o in enumerate(self.orders):
            if abs(o - m) <= _ORDER_ATOL:
                return k
        return None

    def has(self, m) -> bool:
        return self._index(m) is not None

    def require(self, orders, check=""):
        missing = [m for m in orders if not self.has(m)]
        if missing:
            raise InvalidInputError(f"{check or 'check'} needs moment orders {missing}")

    def __getitem__(self, m) -> np.ndarray:
        idx = self._index(m)
        if idx is None:
            raise InvalidInputError(f"moment order {m} was not recorded")
        return self.values[:, idx]

    def at(self, mask) -> "MomentSeries":
        return MomentSeries(self.times[mask], self.orders, self.values[mask])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
    return v


@dataclass
class BoundReport:
    """Outcome of one bound check.

    ``bound`` and ``observed`` are reported at the worst point; the full
    trajectories, when meaningful, are kept in ``bound_series`` and
    ``observed_series``.
    """

    name: str
    anchor: str
    bound: float
    observed: float
    max_violation: float
    tolerance: float
    bound_series: np.ndarray | None = None
    observed_series: np.ndarray | None = None
    details: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_violation) and self.max_violation <= self.tolerance)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "anchor": self.anchor,
            "bound": _fmt(self.bound),
            "observed": _fmt(self.observed),
            "max_violation": _fmt(self.max_violation),
            "tolerance": _fmt(self.tolerance),
            "verdict": self.verdict,
            **{k: _fmt(v) for k, v in self.details.items()},
        }


def _worst(violation, bound, observed):
    k = int(np.argmax(violation))
    return float(violation[k]), float(np.broadcast_to(bound, violation.shape)[k]), float(
        np.broadcast_to(observed, violation.shape)[k])


# ---------------------------------------------------------------- envelopes


def t_star(mu0_in: float, rho: float, kappa: float, sigma: float, gamma: float) -> float:
    """Existence horizon: finite only for ``sigma < 1`` with ``gamma > 2``."""
    if not 0.0 <= sigma < 2.0:
        raise ParameterError(f"sigma must lie in [0, 2), got {sigma}")
    if gamma < 2.0:
        raise ParameterError(f"gamma must be at least 2, got {gamma}")
    if sigma >= 1.0 or gamma == 2.0 or kappa == 0.0:
        return math.inf
    return mu0_in ** (sigma - 1.0) / (kappa * (1.0 - sigma) * (gamma - 2.0) * rho**sigma)


def mu0_envelope(t, mu0_in: float, rho: float, kappa: float, sigma: float, gamma: float):
    """Upper bound on the particle number at time ``t``.

    Integrates ``y' = kappa (gamma - 2) rho**sigma y**(2 - sigma)`` from
    ``mu0_in``; the ``sigma = 1`` branch is the exponential limit.
    """
    t = np.asarray(t, dtype=float)
    rate = kappa * (gamma - 2.0) * rho**sigma
    if gamma == 2.0 or kappa == 0.0:
        out = np.full_like(t, mu0_in)
    elif sigma == 1.0:
        out = mu0_in * np.exp(rate * t)
    elif sigma < 1.0:
        horizon = t_star(mu0_in, rho, kappa, sigma, gamma)
        if np.any(t >= horizon):
            raise HorizonExceededError(f"t = {float(np.max(t))} is not below the horizon {horizon}")
        q = 1.0 - sigma
        out = (mu0_in ** (-q) - q * rate * t) ** (-1.0 / q)
    else:
        q = sigma - 1.0
        out = (mu0_in**q + q * rate * t) ** (1.0 / q)
    return float(out) if out.ndim == 0 else out


def t_star_line(mu0_in, rho, kappa, sigma, gamma) -> dict:
    ts = t_star(mu0_in, rho, kappa, sigma, gamma)
    if math.isfinite(ts):
        regime = "finite: sigma < 1 and gamma > 2"
    elif gamma == 2.0:
        regime = "infinite: gamma = 2"
    elif kappa == 0.0:
        regime = "infinite: kappa = 0"
    else:
        regime = "infinite: sigma >= 1"
    return {"name": "T_gamma_sigma", "value": _fmt(ts), "regime": regime,
            "anchor": "mu0_in^(sigma-1) / (kappa (1-sigma) (gamma-2) rho^sigma)"}


# ------------------------------------------------------------------- checks


def mass_conservation(series: MomentSeries, tolerance: float = 1e-10) -> BoundReport:
    mu1 = series[1.0]
    drift = np.abs(mu1 - mu1[0]) / mu1[0]
    v, _, obs = _worst(drift, 0.0, drift)
    return BoundReport("mass_conservation", "mu_1(t) = mu_1(0)", 0.0, obs, v, tolerance, observed_series=drift)


def nonnegativity(numbers: np.ndarray, tolerance: float = 0.0) -> BoundReport:
    low = np.min(numbers, axis=1)
    scale = np.maximum(np.sum(np.abs(numbers), axis=1), 1e-300)
    viol = -low / scale
    v, _, _ = _worst(viol, 0.0, low)
    return BoundReport("nonnegativity", "u(t, x) >= 0", 0.0, float(np.min(low)), v, tolerance)


def mu0_envelope_check(series: MomentSeries, kappa, sigma, gamma, tolerance: float = 1e-6) -> BoundReport:
    """``mu_0(t) <= Pi_1(t)``, reported as relative excess over the envelope."""
    t = series.times
    mu0 = series[0.0]
    env = mu0_envelope(t, mu0[0], series.rho, kappa, sigma, gamma)
    viol = (mu0 - env) / env
    v, b, o = _worst(viol, env, mu0)
    if sigma < 1:
        anchor = "(mu0_in^(sigma-1) - kappa (1-sigma)(gamma-2) rho^sigma t)^(-1/(1-sigma))"
    elif sigma == 1:
        anchor = "mu0_in exp(kappa (gamma-2) rho t)"
    else:
        anchor = "(mu0_in^(sigma-1) + kappa (sigma-1)(gamma-2) rho^sigma t)^(1/(sigma-1))"
    return BoundReport("mu0_envelope", anchor, b, o, v, tolerance, env, mu0)


def _monotone(name, anchor, values, tolerance, relative):
    drops = values[:-1] - values[1:]
    if relative:
        drops = drops / np.maximum(np.abs(values[:-1]), 1e-300)
    if drops.size == 0:
        return BoundReport(name, anchor, 0.0, 0.0, 0.0, tolerance)
    v, _, _ = _worst(drops, 0.0, drops)
    return BoundReport(name, anchor, 0.0, v, v, tolerance, observed_series=values)


def mu0_monotone(series: MomentSeries, tolerance: float = 1e-12) -> BoundReport:
    return _monotone("mu0_monotone", "d mu_0/dt >= 0 when N >= 2", series[0.0], tolerance, True)


def mu_sigma1_monotone(series: MomentSeries, sigma1: float, tolerance: float = 1e-8) -> BoundReport:
    series.require([sigma1], "mu_sigma1_monotone")
    return _monotone("mu_sigma1_monotone", "mu_sigma1(t + dt) >= mu_sigma1(t) when l_sigma1 >= 1",
                     series[sigma1], tolerance, False)


def time_lipschitz(times, numbers, kappa, gamma, pi1: float, rho: float, tolerance: float = 0.0) -> BoundReport:
    """``sum_k |g_k(t) - g_k(s)| <= kappa (gamma+2)(Pi_1 + rho)**2 |t - s|`` on consecutive samples."""
    lip = kappa * (gamma + 2.0) * (pi1 + rho) ** 2
    dt = np.diff(times)
    dist = np.sum(np.abs(np.diff(numbers, axis=0)), axis=1)
    keep = dt > 0
    if not np.any(keep):
        return BoundReport("time_lipschitz", "kappa (gamma+2)(Pi_1+rho)^2", lip, 0.0, -1.0, tolerance)
    ratio = dist[keep] / dt[keep]
    if lip == 0.0:
        v = 0.0 if np.all(ratio == 0.0) else math.inf
        return BoundReport("time_lipschitz", "kappa (gamma+2)(Pi_1+rho)^2", lip, float(ratio.max()), v, tolerance)
    viol = ratio / lip - 1.0
    v, _, o = _worst(viol, lip, ratio)
    return BoundReport("time_lipschitz", "kappa (gamma+2)(Pi_1+rho)^2", lip, o, v, tolerance)


def centered_derivative(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Second-order centred differences on a non-uniform mesh (interior points)."""
    h0 = t[1:-1] - t[:-2]
    h1 = t[2:] - t[1:-1]
    return (-(h1 / (h0 * (h0 + h1))) * y[:-2] + ((h1 - h0) / (h0 * h1)) * y[1:-1]
            + (h0 / (h1 * (h0 + h1))) * y[2:])


def superlinear_inequality_check(series: MomentSeries, m: float, kappa: float, sigma1: float, sigma2: float,
                                 kappa_m: float, varsigma_m: float, tolerance: float = 1e-3) -> BoundReport:
    """Check the superlinear moment inequality along a series:

    ``d mu_m/dt <= kappa varsigma_m [mu_{1+s1} mu_{m+s2-1} + mu_{1+s2} mu_{m+s1-1}]
    - kappa kappa_m mu_{m+s2} mu_{s1}``.

    The violation at each interior sample is ``(lhs - rhs) / |rhs|``.
    """
    need = [m, 1 + sigma1, m + sigma2 - 1, 1 + sigma2, m + sigma1 - 1, m + sigma2, sigma1]
    series.require(need, "superlinear_inequality")
    t = series.times
    if t.shape[0] < 3:
        raise InvalidInputError("superlinear_inequality needs at least three samples")
    mu = series.__getitem__
    rhs = (kappa * varsigma_m * (mu(1 + sigma1) * mu(m + sigma2 - 1) + mu(1 + sigma2) * mu(m + sigma1 - 1))
           - kappa * kappa_m * mu(m + sigma2) * mu(sigma1))[1:-1]
    lhs = centered_derivative(t, mu(m))
    excess = lhs - rhs
    scale = np.abs(rhs)
    viol = np.where(scale > 0, excess / np.where(scale > 0, scale, 1.0), np.where(excess > 0, math.inf, 0.0))
    v, b, o = _worst(viol, rhs, lhs)
    return BoundReport(f"superlinear_inequality_m{m:g}",
                       "d mu_m/dt <= kappa varsigma_m [mu_{1+s1} mu_{m+s2-1} + mu_{1+s2} mu_{m+s1-1}]"
                       " - kappa varkappa_m mu_{m+s2} mu_{s1}", b, o, v, tolerance, rhs, lhs)


def superlinear_envelope_shape(series: MomentSeries, m: float, sigma2: float) -> BoundReport:
    """Smallest ``C`` with ``mu_m(t) <= C E(t)`` on ``(0, T]``.

    ``E(t) = ((1 + 1/t) / (1 + 1/T))**((m-1)/sigma2)`` is the envelope shape
    normalised to 1 at the end of the window, so a constant series gives
    ``C = mu_m``. The check passes iff ``C`` is finite.
    """
    if not sigma2 > 0.0:
        raise ParameterError("the envelope shape needs sigma2 > 0")
    series.require([m], "superlinear_envelope")
    t = series.times
    keep = t > 0
    if not np.any(keep):
        raise InvalidInputError("superlinear_envelope needs samples with t > 0")
    tt, mu = t[keep], series[m][keep]
    k = (m - 1.0) / sigma2
    shape = np.exp(k * (np.log1p(1.0 / tt) - math.log1p(1.0 / tt[-1])))
    ratio = mu / shape
    C = float(np.max(ratio))
    ok = math.isfinite(C) and C > 0.0
    return BoundReport(f"superlinear_envelope_m{m:g}", "mu_m(t) <= C (1 + 1/t)^((m-1)/sigma2)", C, C,
                       0.0 if ok else math.inf, 0.0, C * shape, mu,
                       details={"C": C, "mu_m_initial": float(series[m][0]), "mu_m_max": float(np.max(series[m]))})


def pi12(T, alpha, mu_neg_alpha_in, kappa, sigma1, sigma2, L_neg_alpha, pi1, rho) -> float:
    """``[1 + mu_{-alpha}(0)] exp(2 c T / (1 + alpha))`` with the explicit ``c``."""
    c = kappa * L_neg_alpha * max(pi1 ** (1.0 - sigma2) * rho ** (sigma2 + sigma1 / (1.0 + alpha)),
                                  pi1 ** (1.0 - sigma1) * rho ** (sigma1 + sigma2 / (1.0 + alpha)))
    return (1.0 + mu_neg_alpha_in) * math.exp(2.0 * c * T / (1.0 + alpha))


def _pi1(series, kappa, sigma, gamma, T):
    return mu0_envelope(T, series[0.0][0], series.rho, kappa, sigma, gamma)


def neg_alpha_envelope(series: MomentSeries, alpha: float, kappa: float, sigma1: float, sigma2: float,
                       gamma: float, L_neg_alpha: float, T: float | None = None) -> BoundReport:
    """``mu_{-alpha}(t) <= Pi_12(T)`` along the run (strict)."""
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    series.require([-alpha], "neg_alpha_envelope")
    T = float(series.times[-1]) if T is None else T
    p1 = _pi1(series, kappa, sigma1 + sigma2, gamma, T)
    mu = series[-alpha]
    bound = pi12(T, alpha, mu[0], kappa, sigma1, sigma2, L_neg_alpha, p1, series.rho)
    viol = mu / bound - 1.0
    v, b, o = _worst(viol, bound, mu)
    # strict inequality: equality counts as failure
    return BoundReport("neg_alpha_envelope", "[1 + mu_{-alpha}(0)] exp(2 c T/(1+alpha)),"
                       " c = kappa L_{-alpha} max{Pi_1^(1-s2) rho^(s2+s1/(1+alpha)),"
                       " Pi_1^(1-s1) rho^(s1+s2/(1+alpha))}",
                       b, o, v, -1e-300, bound, mu, details={"Pi_1": p1, "T": T})


def mu_sigma1_lower_bound(series: MomentSeries, alpha: float, kappa: float, sigma1: float, sigma2: float,
                          gamma: float, L_neg_alpha: float, T: float | None = None,
                          tolerance: float = 0.0) -> BoundReport:
    """``mu_{s1}(t) >= Pi_12(T)**(-s1/alpha) (mu_0(0)/2)**((alpha+s1)/alpha)``."""
    series.require([-alpha, sigma1], "mu_sigma1_lower_bound")
    T = float(series.times[-1]) if T is None else T
    p1 = _pi1(series, kappa, sigma1 + sigma2, gamma, T)
    p12 = pi12(T, alpha, series[-alpha][0], kappa, sigma1, sigma2, L_neg_alpha, p1, series.rho)
    low = p12 ** (-sigma1 / alpha) * (0.5 * series[0.0][0]) ** ((alpha + sigma1) / alpha)
    mu = series[sigma1]
    viol = 1.0 - mu / low
    v, b, o = _worst(viol, low, mu)
    return BoundReport("mu_sigma1_lower_bound", "Pi_12^(-s1/alpha) (mu_0(0)/2)^((alpha+s1)/alpha)",
                       b, o, v, tolerance, low, mu)


# ------------------------------------------------------- weak-form residual


def upsilon(table, theta: np.ndarray) -> np.ndarray:
    """Per-pair ``sum_k theta_k w_k - theta_i - theta_j``."""
    lengths = np.diff(table.offsets)
    cols = np.arange(table.data.shape[0]) - np.repeat(table.offsets[:-1], lengths)
    owner = np.repeat(np.arange(table.npairs), lengths)
    gained = np.bincount(owner, weights=table.data * theta[cols], minlength=table.npairs)
    return gained - theta[table.pair_i] - theta[table.pair_j]


def theta_values(theta, grid) -> np.ndarray:
    """Tabulate a test function at the pivots; strings ``'1'`` and ``'x'`` and
    ``'indicator:a:b'`` are accepted as shorthands."""
    x = grid.pivots
    if isinstance(theta, str):
        if theta == "1":
            return np.ones_like(x)
        if theta == "x":
            return x.copy()
        if theta.startswith("indicator:"):
            _, a, b = theta.split(":")
            return ((x >= float(a)) & (x <= float(b))).astype(float)
        raise InvalidInputError(f"unknown test function {theta!r}")
    vals = np.asarray(theta(x) if callable(theta) else theta, dtype=float)
    vals = np.broadcast_to(vals, x.shape).astype(float)
    if not np.all(np.isfinite(vals)):
        raise InvalidInputError("test function must be bounded")
    return vals


def weak_form_residual(times, numbers, theta, table) -> BoundReport:
    """Discrete weak-form identity along a trajectory.

    Residual at ``t``: ``sum theta g(t) - sum theta g(0) - int_0^t sum_p c_p Phi_p g_i g_j Upsilon_p``,
    where the time integral is composite Simpson over the recorded samples.
    The report's violation is ``max_t |residual| / (||theta|| scale)`` with
    ``scale = mu_0(0) + (gamma + 2) int_0^T sum_p c_p Phi_p g_i g_j dt``; the
    ``|Upsilon| <= (gamma+2)||theta||`` bound is reported in ``details``.
    """
    grid = table.grid
    th = theta_values(theta, grid)
    norm = float(np.max(np.abs(th)))
    times = np.asarray(times, dtype=float)
    numbers = np.atleast_2d(numbers)
    ups = upsilon(table, th)
    gi = numbers[:, table.pair_i]
    gj = numbers[:, table.pair_j]
    rates = table.coef[None, :] * gi * gj
    integrand = rates @ ups
    total_rate = rates.sum(axis=1)
    lhs = numbers @ th - float(numbers[0] @ th)
    if times.shape[0] > 1:
        acc = integrate.cumulative_simpson(integrand, x=times, initial=0.0)
        collisions = float(integrate.simpson(total_rate, x=times))
    else:
        acc = np.zeros(1)
        collisions = 0.0
    resid = lhs - acc
    gamma = float(table.breakage.gamma)
    scale = float(numbers[0].sum()) + (gamma + 2.0) * collisions
    denom = max(norm * scale, 1e-300)
    rel = np.abs(resid) / denom
    k = int(np.argmax(rel))
    ups_ratio = float(np.max(np.abs(ups))) / ((gamma + 2.0) * norm) if norm > 0 else 0.0
    name = theta if isinstance(theta, str) else "theta"
    return BoundReport(f"weak_form_residual[{name}]",
                       "sum theta u(t) - sum theta u(0) - 1/2 int int int Upsilon_theta Phi u u", 0.0,
                       float(np.abs(resid[k])), float(rel[k]), 1e-6, None, resid,
                       details={"scale": denom, "upsilon_bound_ratio": ups_ratio,
                                "max_abs_residual": float(np.max(np.abs(resid)))})
