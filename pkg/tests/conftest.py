import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nlfrag.config import parse_config  # noqa: E402

BASE = {
    "kernel.kappa": 1,
    "kernel.sigma1": 0,
    "kernel.sigma2": 0,
    "breakage.nu": 0,
    "grid.e1": 1e-7,
    "grid.n": 40,
    "grid.cells": 200,
    "initial.family": "exponential",
    "initial.A": 1,
    "initial.x0": 1,
    "run.T": 0.5,
    "run.output_every": 0.05,
    "run.moments": "0, 1, 2, 3",
    "run.rtol": 1e-8,
}


def config_text(**overrides):
    """Config text from the base case; keys use ``section__key`` spelling."""
    vals = dict(BASE)
    for k, v in overrides.items():
        key = k.replace("__", ".")
        if v is None:
            vals.pop(key, None)
        else:
            vals[key] = v
    return "".join(f"{k} = {v}\n" for k, v in vals.items())


def make_config(**overrides):
    return parse_config(config_text(**overrides))


@pytest.fixture
def cfg_factory():
    return make_config
