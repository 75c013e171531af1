"""Select the compiled core or the numpy fallback at import.

Set ``NLFRAG_PURE_PYTHON=1`` to force the fallback. ``get(name)`` returns a
specific backend for benchmarks and parity tests.
"""

from __future__ import annotations

import logging
import os

from . import _fallback

logger = logging.getLogger(__name__)

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

_FORCE_PYTHON = os.environ.get("NLFRAG_PURE_PYTHON", "").lower() in {"1", "true", "yes", "on"}

if _core is not None and not _FORCE_PYTHON:
    impl = _core
    NAME = "compiled"
else:
    impl = _fallback
    NAME = "python"
    if _core is None:
        logger.debug("compiled core unavailable; using numpy fallback")


def available() -> list[str]:
    return ["python"] + (["compiled"] if _core is not None else [])


def get(name: str | None = None):
    if name is None:
        return impl
    if name == "python":
        return _fallback
    if name == "compiled":
        if _core is None:
            raise ImportError("compiled core is not built")
        return _core
    raise ValueError(f"unknown backend {name!r}")
