"""Local approximation MCMC.

Metropolis-Hastings sampling where expensive log-density evaluations are
replaced by continually refined local polynomial surrogates, with a
rate-optimal refinement schedule and a Lyapunov tail correction for
stability.
"""

from . import basis, chain, diagnostics, localpoly, models, points, schedule
from ._backend import DEFAULT as default_backend
from ._backend import HAVE_CORE as have_compiled_core

__version__ = "0.1.0"


def backend_name():
    """The backend selected at import: 'compiled' or 'python'."""
    return default_backend
