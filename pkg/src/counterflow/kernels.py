"""Kernel selection: compiled extension when available, numpy otherwise.

Set COUNTERFLOW_PURE_PY=1 to force the numpy path (used by the benchmark
and by tests that compare both implementations).
"""

from __future__ import annotations

import os

from . import _velocity_py

if os.environ.get("COUNTERFLOW_PURE_PY") == "1":
    mixture_velocity = _velocity_py.mixture_velocity
    KERNEL_IMPL = "python"
else:
    try:
        from . import _velocity_cy

        mixture_velocity = _velocity_cy.mixture_velocity
        KERNEL_IMPL = "cython"
    except ImportError:
        mixture_velocity = _velocity_py.mixture_velocity
        KERNEL_IMPL = "python"


def available_implementations() -> dict:
    """Name -> kernel function, for benchmarks and parity tests."""
    impls = {"python": _velocity_py.mixture_velocity}
    try:
        from . import _velocity_cy

        impls["cython"] = _velocity_cy.mixture_velocity
    except ImportError:
        pass
    return impls
