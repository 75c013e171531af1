import math

import pytest

from conftest import config_text, make_config
from nlfrag.config import SimConfig, emit_config, horizon, load_config, output_times, parse_config, required_orders
from nlfrag.errors import ConfigError

MINIMAL = """\
kernel.kappa = 1
kernel.sigma1 = 0
kernel.sigma2 = 0
breakage.nu = 0
initial.family = exponential
initial.A = 1
initial.x0 = 1
"""


def test_minimal_config_parses_with_infinite_horizon():
    cfg = parse_config(MINIMAL)
    assert cfg.kernel == SimConfig().kernel
    assert cfg.grid.cells == 200
    assert horizon(cfg) == math.inf


def test_comments_and_scientific_notation():
    cfg = parse_config(MINIMAL + "grid.e1 = 2.5E-6   # smallest edge\n# full line\nrun.rtol=1e-9\n")
    assert cfg.grid.e1 == 2.5e-6
    assert cfg.run.rtol == 1e-9


def test_sigma1_one_rejected():
    with pytest.raises(ConfigError, match="σ₁ ≠ 1 required"):
        parse_config(MINIMAL.replace("kernel.sigma1 = 0", "kernel.sigma1 = 1.0").replace("sigma2 = 0", "sigma2 = 1"))


def test_sigma_order_rejected():
    with pytest.raises(ConfigError, match="σ₁ ≤ σ₂"):
        parse_config(MINIMAL.replace("kernel.sigma1 = 0", "kernel.sigma1 = 0.5"))


def test_nu_out_of_range_reports_range():
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL.replace("breakage.nu = 0", "breakage.nu = -1.2"))
    assert "(-1, 0]" in str(info.value)
    assert "line 4" in str(info.value)


def test_all_errors_collected():
    text = MINIMAL + "grid.cells = 2.5\nkernel.colour = red\nrun.T = -1\nbogus line\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    msg = str(info.value)
    for needle in ("line 8", "line 9", "line 10", "line 11"):
        assert needle in msg
    assert len(info.value.issues) == 4


def test_horizon_violation_reported():
    with pytest.raises(ConfigError, match="T_gamma_sigma"):
        make_config(breakage__nu=-0.5, run__T=1.5)
    cfg = make_config(breakage__nu=-0.5, run__T=1.5, run__probe_blowup="true")
    assert cfg.run.probe_blowup


def test_round_trip():
    cfg = make_config(breakage__alpha=0.25, breakage__p=3, kernel__sigma2=0.5, validate__checks="mass_conservation,"
                      "weak_form", validate__theta="1, indicator:0.5:2", validate__tol_weak_form=1e-7,
                      run__dt_max=0.01, run__snapshots="yes", grid__e1=1.234567890123e-7)
    assert parse_config(emit_config(cfg)) == cfg


def test_default_round_trip():
    cfg = parse_config(MINIMAL)
    assert parse_config(emit_config(cfg)) == cfg


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.cfg")


def test_output_times_end_at_T():
    cfg = make_config(run__T=0.5, run__output_every=0.2)
    assert list(output_times(cfg)) == pytest.approx([0.2, 0.4, 0.5])


def test_required_orders_follow_checks():
    cfg = make_config(kernel__sigma1=0.5, kernel__sigma2=0.5, run__T=1)
    assert 1.5 in required_orders(cfg, ["superlinear_inequality"])
    assert 0.5 not in required_orders(cfg, ["mass_conservation"])


def test_unknown_check_rejected():
    with pytest.raises(ConfigError, match="unknown check"):
        parse_config(config_text(validate__checks="mass, weak_form"))
