"""Kernel backend selection: compiled extension if available, numpy otherwise.

HYPODENS_BACKEND=python forces the numpy kernels; HYPODENS_BACKEND=compiled
fails loudly when the extension is missing; the default (auto) prefers the
extension.  The active backend is recorded in experiment reports.
"""

from __future__ import annotations

import os

from . import _fallback
from ._fallback import PackedTables, pack_model

_MODE = os.environ.get("HYPODENS_BACKEND", "auto").lower()
_kernels = None
if _MODE in ("auto", "compiled"):
    try:
        from . import _kernels  # compiled extension
    except ImportError:
        _kernels = None
        if _MODE == "compiled":
            raise ImportError(
                "HYPODENS_BACKEND=compiled but hypodens._kernels is not built; "
                "run `python setup.py build_ext --inplace` or reinstall")


def backend_name():
    return "compiled" if _kernels is not None else "python"


def sde_endpoints(dw, x0, delta, packed, force=None):
    """Dispatch the endpoint kernel; `force` in {None, 'python', 'compiled'}."""
    use_compiled = _kernels is not None if force is None else force == "compiled"
    if use_compiled:
        if _kernels is None:
            raise RuntimeError("compiled backend requested but unavailable")
        import numpy as np
        return _kernels.sde_endpoints(
            np.ascontiguousarray(dw), np.ascontiguousarray(x0, dtype=float),
            float(delta), packed.coefs, packed.tpows, packed.xpows,
            packed.offsets, packed.n, packed.d)
    return _fallback.sde_endpoints(dw, x0, delta, packed)
