import numpy as np
import pytest

from lamcmc.chain import Trace
from lamcmc.diagnostics import (
    ErrorCurve,
    acf,
    ess,
    histogram_tv,
    log_checkpoints,
    loglog_slope,
    refinement_curve,
    variance_error_curve,
)
from lamcmc.errors import ConstantSeriesError, InsufficientDataError


def ar1(rho, n, rng):
    out = np.empty(n)
    out[0] = rng.standard_normal()
    noise = rng.standard_normal(n) * np.sqrt(1 - rho * rho)
    for i in range(1, n):
        out[i] = rho * out[i - 1] + noise[i]
    return out


class TestAcf:
    def test_lag_zero_is_one(self):
        rng = np.random.default_rng(0)
        rho = acf(rng.standard_normal(1000), 10)
        assert rho[0] == pytest.approx(1.0)

    def test_iid_correlations_small(self):
        vals = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            series = rng.standard_normal(4000)
            rho = acf(series, 5)
            vals.append(np.abs(rho[1:]).max())
        assert np.mean(vals) < 4.0 / np.sqrt(4000)

    def test_ar1_lag_one(self):
        rng = np.random.default_rng(42)
        series = ar1(0.9, 10**5, rng)
        rho = acf(series, 3)
        assert 0.88 <= rho[1] <= 0.92

    def test_constant_series_rejected(self):
        with pytest.raises(ConstantSeriesError):
            acf(np.full(500, 2.5), 5)

    def test_short_series_rejected(self):
        with pytest.raises(ValueError):
            acf(np.arange(10.0), 10)

    def test_matches_direct_estimator(self):
        rng = np.random.default_rng(7)
        series = ar1(0.5, 2000, rng)
        rho = acf(series, 4)
        c = series - series.mean()
        n = len(c)
        for lag in range(5):
            direct = float(c[: n - lag] @ c[lag:]) / n
            direct /= float(c @ c) / n
            assert rho[lag] == pytest.approx(direct, abs=1e-10)


class TestEss:
    def test_iid_near_nominal(self):
        rng = np.random.default_rng(1)
        got = ess(rng.standard_normal(10**4))
        assert 0.8 * 10**4 <= got <= 1.2 * 10**4

    def test_repeated_pairs_half(self):
        rng = np.random.default_rng(2)
        base = rng.standard_normal(5000)
        series = np.repeat(base, 2)
        got = ess(series)
        assert abs(got - len(series) / 2) / (len(series) / 2) < 0.2

    def test_ar1_integrated_autocorrelation(self):
        rng = np.random.default_rng(3)
        n = 10**5
        series = ar1(0.9, n, rng)
        expected = n * (1 - 0.9) / (1 + 0.9)
        got = ess(series)
        assert abs(got - expected) / expected < 0.3

    def test_cap(self):
        rng = np.random.default_rng(4)
        # strongly negatively correlated (antithetic) series
        base = rng.standard_normal(5000)
        series = np.empty(10**4)
        series[0::2] = base
        series[1::2] = -base
        assert ess(series) <= 1.5 * 10**4

    def test_minimum_length(self):
        with pytest.raises(ValueError):
            ess(np.arange(50.0))


class TestVarianceErrorCurve:
    def test_constant_samples(self):
        curve = variance_error_curve(np.full(1000, 3.0), reference=2.0)
        np.testing.assert_allclose(curve.errors, 2.0)

    def test_checkpoints_increasing_last_is_t(self):
        curve = variance_error_curve(np.random.default_rng(0).normal(size=12345), 1.0)
        assert (np.diff(curve.steps) > 0).all()
        assert curve.steps[-1] == 12345

    def test_iid_gaussian_clt_decay_rate(self):
        slopes = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            curve = variance_error_curve(rng.standard_normal(10**5), reference=1.0)
            slopes.append(loglog_slope(curve, (10**2, 10**5)))
        assert -0.65 <= np.mean(slopes) <= -0.35

    def test_error_decays_on_average(self):
        # e_{4t} < e_t on average across seeds
        gains = []
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            samples = rng.standard_normal(4000)
            curve = variance_error_curve(samples, 1.0, steps=np.array([1000, 4000]))
            gains.append(curve.errors[1] - curve.errors[0])
        assert np.mean(gains) < 0

    def test_nonfinite_reference_rejected(self):
        with pytest.raises(ValueError):
            variance_error_curve(np.arange(100.0), np.nan)


class TestLoglogSlope:
    def test_exact_inverse_sqrt(self):
        t = np.unique(np.logspace(1, 5, 80).astype(int))
        curve = ErrorCurve(steps=t, errors=2.0 / np.sqrt(t), reference=0.0)
        assert loglog_slope(curve, (10, 10**5)) == pytest.approx(-0.5, abs=1e-6)

    def test_exact_inverse(self):
        t = np.unique(np.logspace(1, 4, 60).astype(int))
        curve = ErrorCurve(steps=t, errors=5.0 / t, reference=0.0)
        assert loglog_slope(curve, (10, 10**4)) == pytest.approx(-1.0, abs=1e-6)

    def test_noisy_power_law(self):
        rng = np.random.default_rng(5)
        t = np.unique(np.logspace(1, 5, 100).astype(int))
        noise = 1.0 + 0.2 * rng.uniform(-1, 1, size=t.shape)
        curve = ErrorCurve(steps=t, errors=3.0 * t**-0.7 * noise, reference=0.0)
        assert loglog_slope(curve, (10, 10**5)) == pytest.approx(-0.7, abs=0.1)

    def test_too_few_points(self):
        curve = ErrorCurve(
            steps=np.array([10, 20, 30, 40]), errors=np.ones(4), reference=0.0
        )
        with pytest.raises(InsufficientDataError):
            loglog_slope(curve, (10, 40))


class TestHistogramTv:
    def test_identical_sets(self):
        x = np.random.default_rng(0).normal(size=1000)
        assert histogram_tv(x, x, 50, (-4, 4)) == 0.0

    def test_disjoint_supports(self):
        a = np.random.default_rng(1).uniform(-1, 0, 500)
        b = np.random.default_rng(2).uniform(0.5, 1.5, 500)
        assert histogram_tv(a, b, 20, (-1, 1.5)) == pytest.approx(1.0)

    def test_same_distribution_small(self):
        vals = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            a = rng.standard_normal(10**6)
            b = rng.standard_normal(10**6)
            vals.append(histogram_tv(a, b, 50, (-4, 4)))
        assert np.mean(vals) < 0.01

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(9)
        a, b = rng.normal(size=300), rng.normal(1.0, 2.0, size=400)
        d1 = histogram_tv(a, b, 30, (-5, 7))
        d2 = histogram_tv(b, a, 30, (-5, 7))
        assert d1 == d2
        assert 0.0 <= d1 <= 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            histogram_tv(np.array([]), np.arange(5.0), 5, (0, 1))


class TestRefinementCurve:
    def make_trace(self, n_refine_per_step, bootstrap):
        n = len(n_refine_per_step)
        tr = Trace.empty(n, bootstrap_evals=bootstrap)
        tr.n_refine[:] = np.cumsum(n_refine_per_step)
        return tr

    def test_monotone_and_bootstrap_offset(self):
        rng = np.random.default_rng(0)
        tr = self.make_trace(rng.integers(0, 2, size=5000), bootstrap=8)
        steps, counts = refinement_curve(tr)
        assert (np.diff(counts) >= 0).all()
        assert counts[0] == 8 + tr.n_refine[steps[0] - 1]
        s1, c1 = refinement_curve(tr, steps=np.array([1]))
        assert c1[0] == 8 + tr.n_refine[0]

    def test_counts_match_trace(self):
        tr = self.make_trace([1, 0, 0, 1, 0, 0, 0, 1, 0, 0], bootstrap=3)
        steps, counts = refinement_curve(tr, steps=np.array([1, 5, 10]))
        np.testing.assert_array_equal(counts, [4, 5, 6])


class TestLogCheckpoints:
    def test_density_and_bounds(self):
        steps = log_checkpoints(10**4)
        assert steps[-1] == 10**4
        assert steps[0] >= 1
        # roughly 20 per decade over three decades
        assert 40 <= len(steps) <= 75

    def test_small_t(self):
        np.testing.assert_array_equal(log_checkpoints(1), [1])
