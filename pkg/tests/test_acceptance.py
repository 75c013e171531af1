"""Acceptance criteria, one test per criterion.

Each test prints a single ``[Cn] PASS|FAIL ...`` line (visible without ``-s``)
and then asserts. Runs are shared through module-level caches so every
configuration is integrated once.
"""

import csv
import io
import math
from functools import lru_cache

import numpy as np
import pytest

import oracles
from conftest import config_text, make_config
from nlfrag import moments as mom
from nlfrag.cli import main
from nlfrag.kernels import constants_power_law
from nlfrag.solver import DirectNoTransferRhs, Rhs, SolverSettings, integrate, integrate_state
from nlfrag.validation import oracle_agreement

pytestmark = pytest.mark.acceptance

RUNS = {
    "riccati": dict(breakage__nu=-0.5),
    "horizon": dict(breakage__nu=-0.5, run__T=0.9),
    "gamma2": dict(kernel__sigma1=0.5, kernel__sigma2=0.5, run__T=1),
    "stationary": dict(run__T=1),
    "stationary100": dict(run__T=1, grid__cells=100),
    "stationary400": dict(run__T=1, grid__cells=400),
    "sigma1": dict(kernel__sigma1=0.5, kernel__sigma2=0.5, breakage__nu=-0.4, run__T=1),
    "negalpha": dict(kernel__sigma2=0.5, breakage__alpha=0.5, run__T=1),
    "notransfer": dict(breakage__type="no_transfer", breakage__nu=-0.3, kernel__sigma1=0.2, kernel__sigma2=0.5),
}


@lru_cache(maxsize=None)
def run(name):
    cfg = make_config(**RUNS[name])
    traj, _ = integrate(cfg)
    assert traj.stop_reason == "end"
    return cfg, traj


def report(capsys, tag, ok, detail):
    with capsys.disabled():
        print(f"\n[{tag}] {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def mass_drift(traj):
    m1 = traj.step_numbers @ traj.grid.pivots
    return float(np.max(np.abs(m1 - m1[0])) / m1[0])


def test_c01_mass_conservation(capsys):
    worst = {name: mass_drift(run(name)[1]) for name in RUNS}
    name = max(worst, key=worst.get)
    report(capsys, "C1", worst[name] <= 1e-10, f"max mass drift {worst[name]:.3e} ({name}) <= 1e-10")


def test_c02_riccati(capsys):
    _, traj = run("riccati")
    t, mu0 = traj.moments.times, traj.moments[0.0]
    exact = oracles.riccati_mu0(t, 1.0, 1.0, 3.0)
    err = float(np.max(np.abs(mu0 - exact) / exact))
    ok = err <= 1e-5 and t[-1] == 0.5 and abs(mu0[0] - 1.0) <= 1e-12
    report(capsys, "C2", ok, f"max |mu0 - 1/(1-t)|/(1/(1-t)) on [0, 0.5] = {err:.3e} <= 1e-5")


def test_c03_blowup_horizon(capsys):
    cfg, traj = run("horizon")
    ts = mom.t_star(1.0, 1.0, 1.0, 0.0, 3.0)
    om = traj.output_moments([0.0])
    ratio = float(om[0.0][-1] / om[0.0][0])
    ok = ts == pytest.approx(1.0, rel=1e-12) and om.times[-1] == pytest.approx(0.9 * ts) and abs(ratio / 10 - 1) <= 1e-2
    report(capsys, "C3", ok, f"T* = {ts:.6g}, mu0(0.9 T*)/mu0(0) = {ratio:.6f} (target 10 within 1%)")


def test_c04_gamma_two_constancy(capsys):
    _, traj = run("gamma2")
    mu0 = traj.moments[0.0]
    dev = float(np.max(np.abs(mu0 - mu0[0])) / mu0[0])
    report(capsys, "C4", dev <= 1e-6, f"max |mu0(t) - mu0(0)|/mu0(0) = {dev:.3e} <= 1e-6")


def test_c05_stationary_second_moment(capsys):
    errs = []
    for name in ("stationary100", "stationary", "stationary400"):
        _, traj = run(name)
        mu2 = traj.moments[2.0]
        errs.append(float(np.max(np.abs(mu2 - 2.0)) / 2.0))
    orders = [math.log2(errs[k] / errs[k + 1]) for k in range(2)]
    ok = errs[1] <= 2e-2 and errs[0] > errs[1] > errs[2] and min(orders) >= 1.0
    report(capsys, "C5", ok, "max |mu2 - 2|/2 at 100/200/400 cells = "
           + ", ".join(f"{e:.3e}" for e in errs) + f"; observed orders {orders[0]:.2f}, {orders[1]:.2f} (>= 1)")


def test_c06_oracle_agreement(capsys):
    parts, ok = [], True
    for name, t_end in (("riccati", 0.5), ("stationary", 1.0)):
        cfg, traj = run(name)
        assert traj.output_times[-1] == pytest.approx(t_end)
        r = oracle_agreement(traj, cfg, 1e-2)
        ok &= r.passed
        parts.append(f"nu={cfg.breakage.nu:g}: {r.max_violation:.3e}")
    report(capsys, "C6", ok, "max relative mu_0..3 vs hierarchy " + ", ".join(parts) + " <= 1e-2")


def test_c07_mu_sigma1_monotone(capsys):
    cfg, traj = run("sigma1")
    assert cfg.breakage.nu <= constants_power_law(-0.4, sigma1=0.5).nu_sigma1
    mu = traj.output_moments([0.5])[0.5]
    worst = float(np.min(np.diff(mu)))
    report(capsys, "C7", worst >= -1e-8, f"min mu_1/2(t+dt) - mu_1/2(t) over output times = {worst:.3e} >= -1e-8")


def test_c08_negative_moment_envelope(capsys):
    cfg, traj = run("negalpha")
    c = constants_power_law(0.0, alpha=0.5)
    series = traj.with_orders([-0.5])
    r = mom.neg_alpha_envelope(series, 0.5, 1.0, 0.0, 0.5, c.gamma, c.L_neg_alpha, 1.0)
    ok = r.passed and bool(np.all(series[-0.5] < r.bound))
    report(capsys, "C8", ok, f"max mu_-1/2 = {float(np.max(series[-0.5])):.6g} < Pi_12(1) = {float(r.bound):.6g}")


def test_c09_superlinear_inequality(capsys):
    cfg, traj = run("gamma2")
    c = constants_power_law(0.0, m=2.0)
    series = traj.output_moments([0.5, 1.5, 2.0, 2.5])
    r = mom.superlinear_inequality_check(series, 2.0, 1.0, 0.5, 0.5, c.kappa_m, c.varsigma_m, 1e-3)
    report(capsys, "C9", r.passed, f"max (dmu2/dt - RHS)/|RHS| at interior output times = {r.max_violation:.3e}"
           " <= 1e-3")


def test_c10_no_transfer_equivalence(capsys):
    cfg, traj = run("notransfer")
    prob = traj.problem
    settings = SolverSettings(t_end=float(traj.step_times[-1]))
    steps = traj.step_times
    table = integrate_state(prob.initial, Rhs(prob.table).evaluate, settings, step_times=steps)
    direct = integrate_state(prob.initial, DirectNoTransferRhs(traj.grid, prob.collision, -0.3).evaluate, settings,
                             step_times=steps)
    assert np.array_equal(table.step_times, direct.step_times)
    a, b = table.step_numbers, direct.step_numbers
    scale = np.maximum(np.abs(a), 1e-300)
    live = np.abs(a) > 1e-250
    diff = float(np.max(np.abs(a - b)[live] / scale[live]))
    tail = float(np.max(np.abs(a - b)[~live])) if np.any(~live) else 0.0
    report(capsys, "C10", diff <= 1e-10 and tail <= 1e-250,
           f"table vs direct no-transfer gain over {len(steps) - 1} identical steps: max relative state difference"
           f" {diff:.3e} <= 1e-10")


def test_c11_weak_form(capsys):
    _, traj = run("riccati")
    table = traj.problem.table
    res = {th: mom.weak_form_residual(traj.step_times, traj.step_numbers, th, table)
           for th in ("1", "x", "indicator:1:2")}
    m1 = traj.step_numbers @ traj.grid.pivots
    drift = float(np.max(np.abs(m1 - m1[0])))
    xres = res["x"].details["max_abs_residual"]
    same = xres == pytest.approx(drift, rel=1e-6, abs=1e-15)
    ok = all(r.max_violation <= 1e-6 for r in res.values()) and same
    report(capsys, "C11", ok, "scaled residuals " + ", ".join(f"{k}: {r.max_violation:.3e}" for k, r in res.items())
           + f" <= 1e-6; theta=x residual {xres:.3e} vs mass drift {drift:.3e}")


def test_c12_constants(capsys):
    c0 = constants_power_law(0.0, m=2.0, alpha=0.5)
    nu_half = constants_power_law(-0.4, sigma1=0.5).nu_sigma1
    ok = (c0.gamma == 2.0 and c0.kappa_m == pytest.approx(1 / 3, rel=1e-15) and abs(nu_half + 0.292893) <= 1e-6
          and c0.L_neg_alpha == pytest.approx(4.0, rel=1e-15))
    for args, key, value in ((["--nu", "0", "--m", "2"], "γ", c0.gamma),
                             (["--nu", "0", "--m", "2"], "ϰ_2", c0.kappa_m),
                             (["--nu", "-0.4", "--sigma1", "0.5"], "ν_σ₁", nu_half),
                             (["--nu", "0", "--alpha", "0.5"], "L_−α", c0.L_neg_alpha)):
        assert main(["constants", *args]) == 0
        rows = {r[0]: r[1] for r in csv.reader(io.StringIO(capsys.readouterr().out))}
        ok &= float(rows[key]) == value
    report(capsys, "C12", ok, f"gamma=2, varkappa_2={c0.kappa_m!r}, nu_1/2={nu_half:.6f}, L_-1/2={c0.L_neg_alpha!r};"
           " CLI constants output matches")


def test_c13_determinism(capsys, tmp_path):
    same = []
    for name in ("riccati", "stationary"):
        cfg = tmp_path / f"{name}.cfg"
        cfg.write_text(config_text(**RUNS[name]))
        files = []
        for threads in ("1", "8"):
            out = tmp_path / f"{name}-{threads}"
            assert main(["run", "--config", str(cfg), "--out", str(out), "--threads", threads]) == 0
            files.append((out / "moments.csv").read_bytes())
        same.append(files[0] == files[1])
    capsys.readouterr()
    report(capsys, "C13", all(same), "moments.csv with 1 vs 8 threads byte-identical: "
           f"C2 run {same[0]}, C6 runs {same[1]}")
