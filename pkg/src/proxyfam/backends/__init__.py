"""Kernel backend selection.

The two hot numeric loops in the pipeline -- WL label refinement over graph
adjacency and the per-sample SGD epoch -- each have two implementations: a
numba ``@njit`` version and a pure-numpy fallback. The active backend is
chosen from the ``PROXYFAM_BACKEND`` environment variable:

    PROXYFAM_BACKEND=numba   require numba, fail if it cannot be imported
    PROXYFAM_BACKEND=numpy   force the pure-numpy fallback
    PROXYFAM_BACKEND=auto    numba when importable, numpy otherwise (default)

WL label chains are pure uint64 arithmetic and are bit-identical across
backends. SGD updates are float arithmetic with the same operation order in
both backends; within a fixed backend results are fully deterministic.

``benchmarks/bench_backends.py`` at the repository root times one backend
against the other.
"""

from __future__ import annotations

import logging
import os
from types import ModuleType

from ..errors import ConfigError

logger = logging.getLogger(__name__)

_ENV_VAR = "PROXYFAM_BACKEND"
_VALID = ("auto", "numba", "numpy")

_active: ModuleType | None = None
_active_name: str | None = None


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def resolve_backend_name(choice: str) -> str:
    """Map an env-var value to the concrete backend that will run."""
    choice = choice.strip().lower()
    if choice not in _VALID:
        raise ConfigError(
            f"{_ENV_VAR} must be one of {_VALID}, got {choice!r}"
        )
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not _numba_available():
            raise ConfigError(f"{_ENV_VAR}=numba but numba is not importable")
        return "numba"
    return "numba" if _numba_available() else "numpy"


def _load(name: str) -> ModuleType:
    if name == "numba":
        from . import nb_kernels

        return nb_kernels
    from . import np_kernels

    return np_kernels


def get_kernels() -> ModuleType:
    """Return the active kernel module (cached after the first call)."""
    global _active, _active_name
    if _active is None:
        name = resolve_backend_name(os.environ.get(_ENV_VAR, "auto"))
        _active = _load(name)
        _active_name = name
        if name == "numpy":
            logger.info("using pure-numpy kernels (numba disabled or missing)")
    return _active


def active_backend() -> str:
    """Name of the backend get_kernels() resolved to."""
    get_kernels()
    assert _active_name is not None
    return _active_name
