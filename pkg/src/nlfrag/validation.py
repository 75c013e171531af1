"""Run the bound checks configured for a simulation.

When no checks are listed the default suite is every check whose hypotheses
hold for the configured kernels. ``self_test`` corrupts the constants (the
positive superlinear coefficient, ``L_{-alpha}`` and ``gamma`` in the number
envelope) so a healthy harness must report failures.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import moments as mom
from .config import constants_for, required_orders
from .kernels import check_kernel_hypotheses
from .oracle import hierarchy_from_state, solve_hierarchy

DEFAULT_TOLERANCES = {
    "mass_conservation": 1e-10,
    "nonnegativity": 0.0,
    "mu0_envelope": 1e-6,
    "mu0_monotone": 1e-12,
    "mu_sigma1_monotone": 1e-8,
    "time_lipschitz": 0.0,
    "superlinear_inequality": 1e-3,
    "weak_form": 1e-6,
    "oracle_agreement": 1e-2,
}


def applicable_checks(cfg) -> list[str]:
    k, b = cfg.kernel, cfg.breakage
    power = b.type == "power_law"
    checks = ["mass_conservation", "nonnegativity", "mu0_envelope", "mu0_monotone", "time_lipschitz", "weak_form"]
    if power and 0.0 < k.sigma1 < 1.0:
        c = constants_for(cfg)
        if c.l_sigma1 >= 1.0:
            checks.append("mu_sigma1_monotone")
    if power:
        viol = check_kernel_hypotheses(b.nu, m_values=(cfg.validate.m,))[f"superlinear_{cfg.validate.m:g}"]
        if viol <= 1e-12:
            checks.append("superlinear_inequality")
    if k.sigma2 > 0.0:
        checks.append("superlinear_envelope")
    if power and b.alpha is not None:
        checks += ["neg_alpha_envelope", "mu_sigma1_lower_bound"]
    if power and k.sigma1 == 0.0 and k.sigma2 == 0.0:
        checks.append("oracle_agreement")
    return checks


def run_checks(cfg, traj, self_test: bool | None = None) -> tuple[list, dict]:
    """Evaluate the enabled checks on ``traj``; returns ``(reports, horizon line)``."""
    prob = traj.problem
    self_test = cfg.validate.self_test if self_test is None else self_test
    checks = list(cfg.validate.checks) or applicable_checks(cfg)
    if self_test and "superlinear_inequality" not in checks and cfg.breakage.type == "power_law":
        checks.append("superlinear_inequality")
    k = cfg.kernel
    kappa, s1, s2 = k.kappa, k.sigma1, k.sigma2
    sigma = s1 + s2
    gamma = float(prob.breakage.gamma)
    consts = constants_for(cfg)
    if self_test:
        consts = dataclasses.replace(consts, varsigma_m=0.0,
                                     L_neg_alpha=0.0 if consts.L_neg_alpha is not None else None)
    gamma_env = 2.0 if self_test else gamma
    orders = required_orders(cfg, checks)
    series = traj.with_orders(orders)
    mu0_in, rho = float(series[0.0][0]), series.rho
    T = float(traj.stop_time)
    line = mom.t_star_line(mu0_in, rho, kappa, sigma, gamma)
    tol = lambda name: cfg.validate.tolerance(name, DEFAULT_TOLERANCES.get(name, 0.0))  # noqa: E731
    reports = []
    for check in checks:
        if check == "mass_conservation":
            reports.append(mom.mass_conservation(series, tol(check)))
        elif check == "nonnegativity":
            reports.append(mom.nonnegativity(traj.step_numbers, tol(check)))
        elif check == "mu0_envelope":
            reports.append(mom.mu0_envelope_check(series, kappa, sigma, gamma_env, tol(check)))
        elif check == "mu0_monotone":
            reports.append(mom.mu0_monotone(series, tol(check)))
        elif check == "mu_sigma1_monotone":
            reports.append(mom.mu_sigma1_monotone(traj.output_moments(orders), s1, tol(check)))
        elif check == "time_lipschitz":
            pi1 = mom.mu0_envelope(T, mu0_in, rho, kappa, sigma, gamma)
            reports.append(mom.time_lipschitz(traj.step_times, traj.step_numbers, kappa, gamma, pi1, rho,
                                              tol(check)))
        elif check == "superlinear_inequality":
            reports.append(mom.superlinear_inequality_check(series, consts.m, kappa, s1, s2, consts.kappa_m,
                                                            consts.varsigma_m, tol(check)))
        elif check == "superlinear_envelope":
            reports.append(mom.superlinear_envelope_shape(series, cfg.validate.m, s2))
        elif check == "neg_alpha_envelope":
            reports.append(mom.neg_alpha_envelope(series, consts.alpha, kappa, s1, s2, gamma, consts.L_neg_alpha, T))
        elif check == "mu_sigma1_lower_bound":
            reports.append(mom.mu_sigma1_lower_bound(series, consts.alpha, kappa, s1, s2, gamma,
                                                     consts.L_neg_alpha, T))
        elif check == "weak_form":
            for theta in cfg.validate.theta:
                rep = mom.weak_form_residual(traj.step_times, traj.step_numbers, theta, prob.table)
                rep.tolerance = tol(check)
                reports.append(rep)
        elif check == "oracle_agreement":
            reports.append(oracle_agreement(traj, cfg, tol(check)))
    return reports, line


def oracle_agreement(traj, cfg, tolerance=1e-2, orders=(0, 1, 2, 3)) -> mom.BoundReport:
    """Solver moments against the closed moment hierarchy at the output times."""
    h = hierarchy_from_state(traj.states[0], cfg.breakage.nu, cfg.kernel.kappa, max(orders))
    om = traj.output_moments([float(m) for m in orders])
    ref = solve_hierarchy(h, om.times)
    rel = np.array([np.abs(om[float(m)] - ref[:, m]) / np.abs(ref[:, m]) for m in orders])
    worst = float(rel.max())
    k = np.unravel_index(int(np.argmax(rel)), rel.shape)
    return mom.BoundReport("oracle_agreement", "closed integer-moment hierarchy, constant collision rate",
                           float(ref[k[1], orders[k[0]]]), float(om[float(orders[k[0]])][k[1]]), worst, tolerance,
                           details={"per_order": ", ".join(f"m={m}: {rel[i].max():.3e}" for i, m in
                                                           enumerate(orders))})


def summarize(reports) -> bool:
    return all(r.passed for r in reports)
