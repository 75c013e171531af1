"""Sectional solver and bound checks for collision-induced fragmentation.

Typical use::

    from nlfrag.config import load_config
    from nlfrag.solver import integrate

    traj, moments = integrate(load_config("run.cfg"))
"""

from .backend import NAME as BACKEND
from .errors import (BudgetError, ConfigError, DivergentIntegralError, FragError, HorizonExceededError,
                     InvalidInputError, ParameterError, StiffnessError)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BudgetError",
    "ConfigError",
    "DivergentIntegralError",
    "FragError",
    "HorizonExceededError",
    "InvalidInputError",
    "ParameterError",
    "StiffnessError",
    "__version__",
]
