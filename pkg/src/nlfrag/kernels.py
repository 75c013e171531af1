"""Collision and breakage kernels and their closed-form constants.

The collision rate is the two-exponent family

    Phi(x, y) = kappa * (x**s1 * y**s2 + y**s1 * x**s2),

optionally truncated to pairs with ``x + y < n``. Breakage kernels describe
the size density of fragments created by one collision. They are exposed to
the sectional scheme as one or more *fragment clouds*: each cloud has an
upper size, a known total mass, and closed-form (or quadrature) number/mass
integrals over arbitrary size intervals. Allocating clouds separately keeps
the discrete scheme linear in the cloud decomposition, which is what makes
the no-mass-transfer kernel reduce exactly to the one-sided gain term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import DivergentIntegralError, InvalidInputError, ParameterError

__all__ = [
    "CollisionKernel",
    "FragmentCloud",
    "PowerLawBreakage",
    "CustomBreakage",
    "KernelConstants",
    "collision_rate",
    "eval_collision",
    "eval_collision_truncated",
    "sandwich_check_gravitational",
    "beta_density",
    "beta_moment",
    "beta_cell_integrals",
    "constants_power_law",
    "build_no_transfer_beta",
    "power_cloud",
]


def _check_sizes(*arrays):
    out = []
    for a in arrays:
        arr = np.asarray(a, dtype=float)
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
            raise InvalidInputError("sizes must be finite and strictly positive")
        out.append(arr)
    return out


def _scalar_or_array(value):
    arr = np.asarray(value)
    return float(arr) if arr.ndim == 0 else arr


def collision_rate(x, y, kappa, sigma1, sigma2):
    """Evaluate ``kappa (x^s1 y^s2 + y^s1 x^s2)`` without parameter checks.

    Powers are taken in the log domain so that sizes spanning many decades do
    not overflow intermediate products.
    """
    x, y = _check_sizes(x, y)
    lx, ly = np.log(x), np.log(y)
    val = kappa * (np.exp(sigma1 * lx + sigma2 * ly) + np.exp(sigma1 * ly + sigma2 * lx))
    return _scalar_or_array(val)


@dataclass(frozen=True)
class CollisionKernel:
    """Collision rate with exponents ``0 <= sigma1 <= sigma2 <= 1``, ``sigma1 != 1``.

    ``kappa = 0`` is accepted as the degenerate collisionless case.
    """

    kappa: float
    sigma1: float
    sigma2: float

    def __post_init__(self):
        k, s1, s2 = self.kappa, self.sigma1, self.sigma2
        if not all(math.isfinite(v) for v in (k, s1, s2)):
            raise ParameterError("collision parameters must be finite")
        if k < 0.0:
            raise ParameterError(f"kappa must be nonnegative, got {k}")
        if not 0.0 <= s1 <= s2 <= 1.0:
            raise ParameterError(f"need 0 <= sigma1 <= sigma2 <= 1, got sigma1={s1}, sigma2={s2}")
        if s1 == 1.0:
            raise ParameterError("sigma1 != 1 required")

    @property
    def sigma(self) -> float:
        return self.sigma1 + self.sigma2

    def __call__(self, x, y):
        return collision_rate(x, y, self.kappa, self.sigma1, self.sigma2)

    def truncated(self, n, x, y):
        if not n > 0:
            raise ParameterError(f"truncation size must be positive, got {n}")
        x, y = _check_sizes(x, y)
        val = np.where(x + y < n, collision_rate(x, y, self.kappa, self.sigma1, self.sigma2), 0.0)
        return _scalar_or_array(val)


def eval_collision(kernel: CollisionKernel, x, y):
    return kernel(x, y)


def eval_collision_truncated(kernel: CollisionKernel, n, x, y):
    return kernel.truncated(n, x, y)


def sandwich_check_gravitational(x, y):
    """Return ``(lower, value, upper)`` for the gravitational kernel.

    value = sqrt(xy) sqrt(x+y) (x^{1/3} + y^{1/3}) is bracketed by
    (Phi1 + Phi2)/sqrt(2) and Phi1 + Phi2 with
    Phi1 = x^{1/2} y^{4/3} + x^{4/3} y^{1/2} and Phi2 = x^{5/6} y + x y^{5/6}.
    """
    x, y = _check_sizes(x, y)
    value = np.sqrt(x * y) * np.sqrt(x + y) * (np.cbrt(x) + np.cbrt(y))
    phi1 = collision_rate(x, y, 1.0, 0.5, 4.0 / 3.0)
    phi2 = collision_rate(x, y, 1.0, 5.0 / 6.0, 1.0)
    upper = np.asarray(phi1) + np.asarray(phi2)
    lower = upper / math.sqrt(2.0)
    return _scalar_or_array(lower), _scalar_or_array(value), _scalar_or_array(upper)


# -- fragment clouds ---------------------------------------------------------


@dataclass(frozen=True)
class FragmentCloud:
    """Fragments supported on ``(0, upper)`` with known totals.

    ``cells(a, b)`` returns arrays ``(number, mass)`` of fragments with sizes
    in ``[a, min(b, upper))``.
    """

    upper: float
    number: float
    mass: float
    cells: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]
    # (kind, parameter, scale) lets the compiled core rebuild the cloud
    closed_form: tuple | None = None


def power_cloud(nu: float, s: float) -> FragmentCloud:
    """Cloud with density ``(nu+2) z^nu / s^(nu+1)`` on ``(0, s)``.

    Covers both the mass-transfer power law (``s = x + y``) and each one-sided
    branch of the no-transfer kernel (``s = x``).
    """
    e1 = nu + 1.0
    e2 = nu + 2.0
    gamma = e2 / e1

    def cells(a, b):
        a = np.minimum(np.asarray(a, dtype=float), s) / s
        b = np.minimum(np.asarray(b, dtype=float), s) / s
        number = gamma * (b**e1 - a**e1)
        mass = s * (b**e2 - a**e2)
        return number, mass

    return FragmentCloud(upper=s, number=gamma, mass=s, cells=cells, closed_form=("power", nu, s))


def _power_moment(nu, m, s):
    if m + nu + 1.0 <= 0.0:
        raise DivergentIntegralError(f"moment of order {m} diverges for nu={nu} (need m + nu + 1 > 0)")
    if m == 1:
        return s
    return (nu + 2.0) * s**m / (m + nu + 1.0)


# -- breakage kernels --------------------------------------------------------


def _check_nu(nu):
    if not (math.isfinite(nu) and -1.0 < nu <= 0.0):
        raise ParameterError(f"nu must lie in (-1, 0], got {nu}")


@dataclass(frozen=True)
class PowerLawBreakage:
    """``beta(z, x, y) = (nu + 2) z^nu / (x + y)^(nu + 1)`` on ``0 < z < x + y``."""

    nu: float
    alpha: float | None = None
    p: float | None = None
    kind: str = field(default="power_law", init=False)

    def __post_init__(self):
        _check_nu(self.nu)
        if self.alpha is not None and not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")

    @property
    def gamma(self) -> float:
        return (self.nu + 2.0) / (self.nu + 1.0)

    def density(self, z, x, y):
        z, x, y = _check_sizes(z, x, y)
        s = x + y
        with np.errstate(over="ignore"):
            val = np.where(z < s, (self.nu + 2.0) * z**self.nu * s ** (-self.nu - 1.0), 0.0)
        return _scalar_or_array(val)

    def moment(self, m, x, y):
        x, y = _check_sizes(x, y)
        return _scalar_or_array(_power_moment(self.nu, m, x + y))

    def clouds(self, x: float, y: float) -> list[FragmentCloud]:
        return [power_cloud(self.nu, x + y)]


class CustomBreakage:
    """User-supplied breakage kernel.

    Parameters
    ----------
    density : callable
        ``density(z, x, y)``; must vanish for ``z > x + y``.
    gamma : float
        Declared upper bound on the daughter count.
    alpha : float, optional
        Declared singularity exponent used by the negative-moment checks.
    clouds : callable, optional
        ``clouds(x, y) -> list[FragmentCloud]``. Defaults to a single cloud on
        ``(0, x + y)`` integrated by adaptive quadrature.
    moment : callable, optional
        Closed-form ``moment(m, x, y)``; defaults to quadrature.
    verify : bool
        Check local mass conservation and ``2 <= N <= gamma`` by quadrature on
        a sample grid at construction.
    """

    kind = "custom"

    def __init__(self, density, gamma, alpha=None, clouds=None, moment=None,
                 verify=True, breakpoints=None, name="custom"):
        if not (math.isfinite(gamma) and gamma >= 2.0):
            raise ParameterError(f"declared gamma must be >= 2, got {gamma}")
        if alpha is not None and not 0.0 < alpha < 1.0:
            raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
        self._density = density
        self.gamma = float(gamma)
        self.alpha = alpha
        self.name = name
        self._clouds = clouds
        self._moment = moment
        self._breakpoints = breakpoints
        if verify:
            self.verify()

    def density(self, z, x, y):
        z, x, y = _check_sizes(z, x, y)
        val = np.vectorize(self._density, otypes=[float])(z, x, y)
        return _scalar_or_array(np.where(z <= x + y, val, 0.0))

    def _points(self, x, y):
        pts = [x, y] if self._breakpoints is None else list(self._breakpoints(x, y))
        return sorted(p for p in pts if 0.0 < p < x + y)

    def _quad(self, f, a, b, x, y):
        pts = [p for p in self._points(x, y) if a < p < b]
        knots = [a, *pts, b]
        total = 0.0
        for lo, hi in zip(knots[:-1], knots[1:]):
            val, _ = integrate.quad(f, lo, hi, limit=200, epsabs=0.0, epsrel=1e-11)
            total += val
        return total

    def moment(self, m, x, y):
        x, y = _check_sizes(x, y)
        if self._moment is not None:
            return _scalar_or_array(self._moment(m, x, y))
        vals = np.vectorize(
            lambda xx, yy: self._quad(lambda z: z**m * self._density(z, xx, yy), 0.0, xx + yy, xx, yy),
            otypes=[float],
        )(x, y)
        return _scalar_or_array(vals)

    def clouds(self, x: float, y: float) -> list[FragmentCloud]:
        if self._clouds is not None:
            return list(self._clouds(x, y))
        s = x + y

        def cells(a, b):
            a = np.atleast_1d(np.asarray(a, dtype=float))
            b = np.atleast_1d(np.asarray(b, dtype=float))
            number = np.zeros(a.shape)
            mass = np.zeros(a.shape)
            for k, (lo, hi) in enumerate(zip(a, b)):
                hi = min(hi, s)
                if hi > lo:
                    number[k] = self._quad(lambda z: self._density(z, x, y), lo, hi, x, y)
                    mass[k] = self._quad(lambda z: z * self._density(z, x, y), lo, hi, x, y)
            return number, mass

        return [FragmentCloud(upper=s, number=float(self.moment(0, x, y)), mass=s, cells=cells)]

    def verify(self, sizes=(1e-2, 0.3, 1.0, 7.0, 1e2), rtol=1e-7):
        """Check declared structure by quadrature on a sample grid."""
        for x in sizes:
            for y in sizes:
                s = x + y
                mass = self._quad(lambda z: z * self._density(z, x, y), 0.0, s, x, y)
                if abs(mass - s) > rtol * s:
                    raise ParameterError(
                        f"{self.name}: local mass conservation fails at (x, y)=({x}, {y}): {mass} != {s}")
                count = self._quad(lambda z: self._density(z, x, y), 0.0, s, x, y)
                if count > self.gamma * (1 + rtol) or count < 2.0 * (1 - rtol):
                    raise ParameterError(
                        f"{self.name}: daughter count {count} at ({x}, {y}) outside [2, gamma={self.gamma}]")


def build_no_transfer_beta(bar_beta_nu: float) -> CustomBreakage:
    """Breakage kernel in which each collider fragments independently.

    ``beta(z, x, y) = bbar(z, x) + bbar(z, y)`` with
    ``bbar(z, x) = (nu + 2) z^nu x^(-nu-1)`` on ``(0, x)``, so no fragment is
    larger than its parent.
    """
    nu = float(bar_beta_nu)
    _check_nu(nu)

    def bar(z, x):
        return (nu + 2.0) * z**nu * x ** (-nu - 1.0) if z < x else 0.0

    def density(z, x, y):
        return bar(z, x) + bar(z, y)

    def moment(m, x, y):
        if m + nu + 1.0 <= 0.0:
            raise DivergentIntegralError(f"moment of order {m} diverges for nu={nu}")
        return (nu + 2.0) / (m + nu + 1.0) * (x**m + y**m)

    kernel = CustomBreakage(
        density,
        gamma=2.0 * (nu + 2.0) / (nu + 1.0),
        clouds=lambda x, y: [power_cloud(nu, x), power_cloud(nu, y)],
        moment=moment,
        name=f"no_transfer(nu={nu})",
    )
    kernel.kind = "no_transfer"
    kernel.nu = nu
    return kernel


def beta_density(kernel, z, x, y):
    return kernel.density(z, x, y)


def beta_moment(kernel, m, x, y):
    return kernel.moment(m, x, y)


def beta_cell_integrals(kernel, a, b, x, y):
    """Number and mass of fragments from an ``(x, y)`` collision landing in ``[a, b)``."""
    if not 0.0 <= a < b:
        raise InvalidInputError(f"need 0 <= a < b, got a={a}, b={b}")
    _check_sizes(x, y)
    number = mass = 0.0
    for cloud in kernel.clouds(float(x), float(y)):
        if a >= cloud.upper:
            continue
        n_, m_ = cloud.cells(np.array([a]), np.array([b]))
        number += float(n_[0])
        mass += float(m_[0])
    return number, mass


# -- constants ---------------------------------------------------------------


@dataclass(frozen=True)
class KernelConstants:
    """Closed-form constants attached to the power-law breakage kernel.

    Fields that need an input the caller did not supply are ``None``.
    """

    nu: float
    gamma: float
    m: float | None = None
    kappa_m: float | None = None
    varsigma_m: float | None = None
    C_m: float | None = None
    sigma1: float | None = None
    l_sigma1: float | None = None
    nu_sigma1: float | None = None
    alpha: float | None = None
    L_neg_alpha: float | None = None
    p: float | None = None
    eta_coefficient: float | None = None
    eta_alpha: float | None = None

    @property
    def varsigma_at_least_one(self) -> bool | None:
        return None if self.varsigma_m is None else self.varsigma_m >= 1.0

    def eta(self, delta):
        if self.eta_coefficient is None:
            raise ParameterError("eta requires p")
        return self.eta_coefficient * np.asarray(delta, dtype=float) ** (1.0 / self.p)


def c_m(m: float) -> float:
    if not m > 1.0:
        raise ParameterError(f"m must exceed 1, got {m}")
    if 2.0 < m < 3.0:
        return m
    return 2.0 ** (m - 1.0) - 1.0


def constants_power_law(nu, m=None, sigma1=None, alpha=None, p=None) -> KernelConstants:
    _check_nu(nu)
    fields = {"nu": float(nu), "gamma": (nu + 2.0) / (nu + 1.0)}
    if m is not None:
        cm = c_m(m)
        fields.update(m=float(m), C_m=cm, kappa_m=(m - 1.0) / (m + nu + 1.0),
                      varsigma_m=cm * (nu + 2.0) / (m + nu + 1.0))
    if sigma1 is not None:
        if not 0.0 < sigma1 < 1.0:
            raise ParameterError(f"sigma1 must lie in (0, 1) for l_sigma1, got {sigma1}")
        fields.update(
            sigma1=float(sigma1),
            l_sigma1=2.0 ** (sigma1 - 1.0) * (nu + 2.0) / (sigma1 + nu + 1.0),
            nu_sigma1=-(1.0 + sigma1 - 2.0**sigma1) / (1.0 - 2.0 ** (sigma1 - 1.0)),
        )
    if alpha is not None:
        if not 0.0 < alpha < nu + 1.0:
            raise ParameterError(f"alpha must lie in (0, nu + 1) = (0, {nu + 1.0}), got {alpha}")
        fields.update(alpha=float(alpha), L_neg_alpha=(nu + 2.0) / (nu + 1.0 - alpha))
    if p is not None:
        if not p > 1.0 / (nu + 1.0):
            raise ParameterError(f"p must exceed 1/(nu + 1) = {1.0 / (nu + 1.0)}, got {p}")
        fields.update(
            p=float(p),
            eta_coefficient=(nu + 2.0) * ((p - 1.0) / (p * (nu + 1.0) - 1.0)) ** ((p - 1.0) / p),
            eta_alpha=1.0 / p,
        )
    return KernelConstants(**fields)


def constant_rows(consts: KernelConstants) -> list[tuple[str, float, str]]:
    """Rows ``(name, value, formula)`` for every populated constant."""
    rows = [("γ", consts.gamma, "(nu+2)/(nu+1)")]
    if consts.m is not None:
        m = f"{consts.m:g}"
        rows += [
            (f"C_{m}", consts.C_m, "2^(m-1)-1 for m in (1,2]u[3,inf); m for m in (2,3)"),
            (f"ϰ_{m}", consts.kappa_m, "(m-1)/(m+nu+1)"),
            (f"ς_{m}", consts.varsigma_m, "C_m (nu+2)/(m+nu+1)"),
        ]
    if consts.sigma1 is not None:
        rows += [
            ("l_σ₁", consts.l_sigma1, "2^(sigma1-1) (nu+2)/(sigma1+nu+1)"),
            ("ν_σ₁", consts.nu_sigma1, "-(1+sigma1-2^sigma1)/(1-2^(sigma1-1))"),
        ]
    if consts.alpha is not None:
        rows.append(("L_−α", consts.L_neg_alpha, "(nu+2)/(nu+1-alpha)"))
    if consts.p is not None:
        rows += [
            ("η_coefficient", consts.eta_coefficient, "(nu+2)((p-1)/(p(nu+1)-1))^((p-1)/p)"),
            ("η_alpha", consts.eta_alpha, "1/p"),
        ]
    return rows


def check_kernel_hypotheses(nu, sigma1=None, alpha=None, m_values: Sequence[float] = (1.5, 2.0, 2.5, 3.0),
                            sizes=None):
    """Evaluate the structural moment inequalities of the power law on a grid.

    Returns a dict ``name -> max relative slack violation`` (<= 0 means holds).
    ``superlinear_m`` uses the computed varsigma_m; ``superlinear_m_floor1``
    repeats it with ``max(varsigma_m, 1)``.
    """
    if sizes is None:
        sizes = np.logspace(-4, 4, 41)
    x, y = np.meshgrid(sizes, sizes, indexing="ij")
    s = x + y
    out = {}
    for m in m_values:
        c = constants_power_law(nu, m=m)
        lhs = (nu + 2.0) * s**m / (m + nu + 1.0)
        cross = x * y ** (m - 1.0) + y * x ** (m - 1.0)
        base = (1.0 - c.kappa_m) * (x**m + y**m)
        out[f"superlinear_{m:g}"] = float(np.max((lhs - base - c.varsigma_m * cross) / lhs))
        out[f"superlinear_{m:g}_floor1"] = float(np.max((lhs - base - max(c.varsigma_m, 1.0) * cross) / lhs))
    if sigma1 is not None:
        c = constants_power_law(nu, sigma1=sigma1)
        lhs = (nu + 2.0) * s**sigma1 / (sigma1 + nu + 1.0)
        rhs = c.l_sigma1 * (x**sigma1 + y**sigma1)
        out["sigma1_lower"] = float(np.max((rhs - lhs) / lhs))
    if alpha is not None:
        c = constants_power_law(nu, alpha=alpha)
        lhs = (nu + 2.0) * s ** (-alpha) / (nu + 1.0 - alpha)
        rhs = 0.5 * c.L_neg_alpha * (x ** (-alpha) + y ** (-alpha))
        out["neg_alpha"] = float(np.max((lhs - rhs) / rhs))
    return out
