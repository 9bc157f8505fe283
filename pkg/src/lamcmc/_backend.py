"""Backend selection: compiled Cython kernels with a pure NumPy fallback.

The compiled module ``lamcmc._core`` provides the kd-tree point index, the
LAPACK fitting kernel, and the chain drivers.  When it cannot be imported (no
compiler at install time) everything falls back to ``lamcmc._pure`` plus the
Python step loop in ``lamcmc.chain``.  Set LAMCMC_BACKEND=python to force the
fallback, or LAMCMC_BACKEND=compiled to require the extension.
"""

import os

from . import _pure

try:
    from . import _core

    HAVE_CORE = True
except ImportError:  # pragma: no cover - depends on install environment
    _core = None
    HAVE_CORE = False

_env = os.environ.get("LAMCMC_BACKEND", "auto").strip().lower() or "auto"
if _env in ("auto", ""):
    DEFAULT = "compiled" if HAVE_CORE else "python"
elif _env in ("python", "pure"):
    DEFAULT = "python"
elif _env in ("compiled", "core"):
    if not HAVE_CORE:
        raise ImportError(
            "LAMCMC_BACKEND=compiled but the lamcmc._core extension is not built"
        )
    DEFAULT = "compiled"
else:
    raise ValueError(f"unrecognized LAMCMC_BACKEND value: {_env!r}")


def resolve(backend=None):
    """Normalize a backend request to 'compiled' or 'python'."""
    name = (backend or DEFAULT).lower()
    if name == "auto":
        name = "compiled" if HAVE_CORE else "python"
    if name in ("python", "pure"):
        return "python"
    if name in ("compiled", "core"):
        if not HAVE_CORE:
            raise ValueError("compiled backend requested but lamcmc._core is not built")
        return "compiled"
    raise ValueError(f"unrecognized backend: {backend!r}")


def make_point_index(dim, backend=None):
    if resolve(backend) == "compiled":
        return _core.PointIndex(dim)
    return _pure.PointIndex(dim)


# The QR least-squares solve used by localpoly: the SciPy implementation is
# authoritative at the Python level; the compiled drivers carry their own
# LAPACK equivalent internally (cross-checked in the backend parity tests).
solve_weighted_lsq = _pure.solve_weighted_lsq
