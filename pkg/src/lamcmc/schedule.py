"""Refinement schedule: levels, error thresholds, and the tail correction.

The chain is partitioned into levels of increasing length; each level carries
a piecewise-constant error threshold gamma0 * level^(-gamma1) * V(x), where V
is a Lyapunov-style penalty that relaxes the threshold in the tails.  The
tail correction Q_V perturbs the log-acceptance ratio toward V-decreasing
moves by eta * (gamma(x') + gamma(x)), vanishing as thresholds decay.
"""

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LyapunovSpec",
    "RefinementSchedule",
    "lyapunov_value",
    "level",
    "threshold",
    "tail_correction",
]

# exp argument cap; keeps V(x) finite on extreme tail excursions.
_EXP_CAP = 700.0


@dataclass(frozen=True)
class LyapunovSpec:
    """V(x) = exp(nu0 * ||x - center||^nu1), always >= 1."""

    nu0: float
    nu1: float
    center: np.ndarray

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        object.__setattr__(self, "center", center)
        if self.nu0 <= 0.0:
            raise ValueError(f"nu0 must be positive, got {self.nu0}")
        if not 0.0 < self.nu1 <= 1.0:
            raise ValueError(f"nu1 must lie in (0, 1], got {self.nu1}")


@dataclass(frozen=True)
class RefinementSchedule:
    """Parameters mapping (step, state) to refinement thresholds."""

    gamma0: float
    gamma1: float
    tau0: float
    eta: float
    lyapunov: LyapunovSpec
    # Decay rates below 0.5 make level lengths shrink under one step; the
    # threshold then cannot keep up and the surrogate bias dominates.  Allow
    # them only on explicit request (used to demonstrate the failure mode).
    allow_slow_decay: bool = field(default=False)

    def __post_init__(self):
        if self.gamma0 <= 0.0:
            raise ValueError(f"gamma0 must be positive, got {self.gamma0}")
        if self.gamma1 <= 0.0:
            raise ValueError(f"gamma1 must be positive, got {self.gamma1}")
        if self.gamma1 < 0.5 and not self.allow_slow_decay:
            raise ValueError(
                f"gamma1={self.gamma1} is below the 0.5 bound required for the "
                "level lengths to grow; pass allow_slow_decay=True to override"
            )
        if self.tau0 < 1.0:
            raise ValueError(f"tau0 must be >= 1, got {self.tau0}")
        if self.eta < 0.0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")


def lyapunov_value(x, spec):
    """Evaluate V(x) = exp(nu0 * ||x - center||^nu1)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    r = float(np.linalg.norm(x - spec.center))
    arg = spec.nu0 * r**spec.nu1 if r > 0.0 else 0.0
    return math.exp(min(arg, _EXP_CAP))


def level(t, sched):
    """Level index from the step counter: floor((t / tau0)^(1 / (2 gamma1)))."""
    if t < 0:
        raise ValueError(f"step counter must be >= 0, got {t}")
    if t == 0:
        return 0
    return int(math.floor((t / sched.tau0) ** (1.0 / (2.0 * sched.gamma1))))


def threshold(x, ell, sched):
    """Error threshold gamma_ell(x) = gamma0 * ell^(-gamma1) * V(x).

    Level 0 uses gamma0 * V(x) (the formula is singular there and level 1
    gives the same value, so the threshold is continuous).
    """
    if ell < 0:
        raise ValueError(f"level must be >= 0, got {ell}")
    ell_eff = max(int(ell), 1)
    return sched.gamma0 * float(ell_eff) ** (-sched.gamma1) * lyapunov_value(x, sched.lyapunov)


def tail_correction(x, x_prime, gamma_x, gamma_xp, eta, spec):
    """Signed log-density correction Q_V favoring V-decreasing moves.

    +eta * (gamma(x') + gamma(x)) when V(x') < V(x), the negative of that
    otherwise (ties go to the nonpositive branch).
    """
    if eta == 0.0:
        return 0.0
    magnitude = eta * (gamma_xp + gamma_x)
    if lyapunov_value(x_prime, spec) < lyapunov_value(x, spec):
        return magnitude
    return -magnitude
