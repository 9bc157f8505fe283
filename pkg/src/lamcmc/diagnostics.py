"""Post-processing of completed chains: mixing and error-decay diagnostics."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConstantSeriesError, InsufficientDataError

__all__ = [
    "ErrorCurve",
    "acf",
    "ess",
    "variance_error_curve",
    "loglog_slope",
    "histogram_tv",
    "refinement_curve",
    "log_checkpoints",
]

# Checkpoint density for error curves; matches log-log plotting resolution.
POINTS_PER_DECADE = 20


@dataclass(frozen=True)
class ErrorCurve:
    """|reference - running estimate| sampled at increasing step counts."""

    steps: np.ndarray
    errors: np.ndarray
    reference: float


def acf(series, max_lag):
    """Autocorrelation with biased (1/T) normalization; rho_0 = 1."""
    series = np.asarray(series, dtype=float).reshape(-1)
    n = series.shape[0]
    if n <= max_lag:
        raise ValueError(f"series of length {n} cannot support max_lag={max_lag}")
    centered = series - series.mean()
    var = float(centered @ centered) / n
    if var == 0.0:
        raise ConstantSeriesError("autocorrelation of a constant series is undefined")
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centered, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1] / n
    return acov / acov[0]


def ess(series):
    """Effective sample size T / (1 + 2 sum rho_k).

    The autocorrelation sum is truncated by Geyer's initial positive sequence
    rule on pairwise sums, and the result is capped at 1.5 T to guard against
    truncation pathologies on short series.
    """
    series = np.asarray(series, dtype=float).reshape(-1)
    n = series.shape[0]
    if n < 100:
        raise ValueError(f"ess needs at least 100 samples, got {n}")
    max_lag = n - 1
    rho = acf(series, max_lag)
    tau = 0.0
    m = 0
    while 2 * m + 1 <= max_lag:
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0.0:
            break
        tau += pair
        m += 1
    tau = 2.0 * tau - 1.0
    tau = max(tau, 1.0 / 1.5)
    return float(min(n / tau, 1.5 * n))


def log_checkpoints(t_max, t_min=10):
    """Logarithmically spaced integer step counts, POINTS_PER_DECADE per decade."""
    t_max = int(t_max)
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    t_min = max(1, min(int(t_min), t_max))
    grid = np.logspace(
        math.log10(t_min),
        math.log10(t_max),
        max(2, int(round((math.log10(t_max) - math.log10(t_min)) * POINTS_PER_DECADE)) + 1),
    )
    steps = np.unique(np.round(grid).astype(np.int64))
    steps = steps[(steps >= 1) & (steps <= t_max)]
    if steps.size == 0 or steps[-1] != t_max:
        steps = np.append(steps, t_max)
    return steps


def variance_error_curve(samples, reference, steps=None):
    """|reference - running sample variance| at log-spaced checkpoints.

    ``samples`` is one chain's scalar series (pass one coordinate of a
    multivariate chain).  The running estimate at t uses samples[:t] with the
    unbiased (t-1) normalization.
    """
    samples = np.asarray(samples, dtype=float).reshape(-1)
    if not np.isfinite(reference):
        raise ValueError(f"reference variance must be finite, got {reference}")
    t_total = samples.shape[0]
    if steps is None:
        steps = log_checkpoints(t_total)
    steps = np.asarray(steps, dtype=np.int64)
    csum = np.cumsum(samples)
    csum2 = np.cumsum(samples * samples)
    t = steps.astype(float)
    mean = csum[steps - 1] / t
    with np.errstate(invalid="ignore", divide="ignore"):
        var = (csum2[steps - 1] - t * mean * mean) / np.maximum(t - 1.0, 1.0)
    errors = np.abs(reference - var)
    return ErrorCurve(steps=steps, errors=errors, reference=float(reference))


def loglog_slope(curve, window):
    """Least-squares slope of log(error) vs log(t) inside [t_min, t_max]."""
    t_min, t_max = window
    mask = (curve.steps >= t_min) & (curve.steps <= t_max)
    if int(mask.sum()) < 5:
        raise InsufficientDataError(
            f"need at least 5 checkpoints in [{t_min}, {t_max}], found {int(mask.sum())}"
        )
    x = np.log(curve.steps[mask].astype(float))
    y = np.log(np.maximum(curve.errors[mask], 1e-300))
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def histogram_tv(samples_a, samples_b, bins, value_range):
    """Total-variation distance between binned sample masses, in [0, 1]."""
    samples_a = np.asarray(samples_a, dtype=float).reshape(-1)
    samples_b = np.asarray(samples_b, dtype=float).reshape(-1)
    if samples_a.size == 0 or samples_b.size == 0:
        raise ValueError("both sample sets must be nonempty")
    ha, _ = np.histogram(samples_a, bins=bins, range=value_range)
    hb, _ = np.histogram(samples_b, bins=bins, range=value_range)
    na, nb = ha.sum(), hb.sum()
    pa = ha / na if na > 0 else np.zeros_like(ha, dtype=float)
    pb = hb / nb if nb > 0 else np.zeros_like(hb, dtype=float)
    return float(0.5 * np.abs(pa - pb).sum())


def refinement_curve(trace, steps=None):
    """Cumulative true-model evaluation counts n(t) at checkpoints.

    n(0) equals the bootstrap design size; refinements accumulate on top.
    """
    t_total = trace.n_refine.shape[0]
    if steps is None:
        steps = log_checkpoints(t_total)
    steps = np.asarray(steps, dtype=np.int64)
    counts = trace.bootstrap_evals + trace.n_refine[steps - 1]
    return steps, counts
