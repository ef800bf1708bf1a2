"""Detector tests.

The quantile reference values below were generated with mpmath at 60 decimal
digits (bisection on the regularized incomplete gamma function, upper-tail
convention), then frozen here. Regeneration snippet:

    from mpmath import mp, mpf, gammainc
    mp.dps = 60
    a, target = mpf(df)/2, 1 - mpf(alpha)
    f = lambda q: gammainc(a, 0, q/2, regularized=True) - target
    # bisect f on [0, hi] to 200 iterations
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from care_filter.detector import (
    DetectorConfig,
    DetectorState,
    chi2_cdf,
    chi2_quantile,
    chi2_statistic,
    cusum_update,
    detection_statistic,
    false_negative_rate,
)

ALPHAS = (0.001, 0.01, 0.05, 0.1, 0.5)

# rows: df 1..10, columns: ALPHAS (upper-tail quantiles, mpmath oracle)
QUANTILE_TABLE = {
    1: (10.827566170662732, 6.6348966010212151, 3.841458820694126, 2.7055434540954146, 0.45493642311957275),
    2: (13.815510557964274, 9.2103403719761827, 5.991464547107982, 4.6051701859880914, 1.3862943611198906),
    3: (16.266236196238131, 11.344866730144372, 7.81472790325118, 6.2513886311703232, 2.3659738843753383),
    4: (18.466826952903171, 13.276704135987625, 9.4877290367811568, 7.7794403397348581, 3.3566939800333213),
    5: (20.515005652432878, 15.08627246938899, 11.070497693516354, 9.2363568997811185, 4.3514601910955273),
    6: (22.457744484825325, 16.811893829770931, 12.591587243743979, 10.64464067566842, 5.3481206274471206),
    7: (24.321886347856855, 18.475306906582364, 14.067140449340169, 12.017036623780529, 6.3458111955215175),
    8: (26.124481558376141, 20.090235029663233, 15.507313055865454, 13.361566136511727, 7.3441214977017922),
    9: (27.877164871256573, 21.665994333461926, 16.91897760462045, 14.683656573259838, 8.3428326922529538),
    10: (29.588298445074419, 23.20925115895436, 18.307038053275147, 15.987179172105261, 9.3418177655919674),
}


class TestQuantile:
    def test_headline_values(self):
        assert abs(chi2_quantile(2, 0.01) - 9.2103403719761827) < 1e-8
        assert abs(chi2_quantile(1, 0.05) - 3.8414588206941260) < 1e-8

    def test_against_frozen_oracle_table(self):
        for df, row in QUANTILE_TABLE.items():
            for alpha, expected in zip(ALPHAS, row):
                got = chi2_quantile(df, alpha)
                assert abs(got - expected) < 1e-8, (df, alpha)

    def test_roundtrip_through_cdf(self):
        for df in range(1, 11):
            for alpha in ALPHAS:
                q = chi2_quantile(df, alpha)
                assert abs(chi2_cdf(q, df) - (1.0 - alpha)) < 1e-8

    def test_scipy_crosscheck(self):
        scipy_stats = pytest.importorskip("scipy.stats")
        for df in (1, 2, 4, 7, 10):
            for alpha in ALPHAS:
                ref = scipy_stats.chi2.ppf(1.0 - alpha, df)
                assert chi2_quantile(df, alpha) == pytest.approx(ref, abs=1e-9)

    def test_alpha_near_one_gives_vanishing_quantile(self):
        assert chi2_quantile(2, 1.0 - 1e-12) < 1e-8

    def test_rejects_bad_arguments(self):
        for alpha in (0.0, 1.0, -0.3, 1.5):
            with pytest.raises(ValueError):
                chi2_quantile(2, alpha)
        for df in (0, -1, 2.5):
            with pytest.raises(ValueError):
                chi2_quantile(df, 0.05)


class TestCdf:
    def test_df2_closed_form(self):
        # For two degrees of freedom the CDF is 1 - exp(-x/2) exactly.
        for x in (0.01, 0.5, 1.0, 3.3, 9.2103403719761827, 40.0):
            assert abs(chi2_cdf(x, 2) - (1.0 - math.exp(-0.5 * x))) < 1e-14

    def test_edges_and_monotonicity(self):
        assert chi2_cdf(0.0, 3) == 0.0
        assert chi2_cdf(-1.0, 3) == 0.0
        xs = np.linspace(0.01, 60.0, 200)
        vals = [chi2_cdf(x, 5) for x in xs]
        assert all(b >= a for a, b in zip(vals, vals[1:]))
        assert vals[-1] > 1.0 - 1e-9


class TestStatistic:
    def test_trivial_values(self):
        assert chi2_statistic(np.zeros(3), np.eye(3)) == 0.0
        assert chi2_statistic(np.array([3.0]), np.array([[1.0]])) == pytest.approx(9.0)
        stat = chi2_statistic(np.array([2.0, 1.0]), np.diag([4.0, 1.0]))
        assert stat == pytest.approx(2.0)

    def test_pseudoinverse_on_singular_covariance(self):
        P = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert chi2_statistic(np.array([1.0, 0.5]), P) == pytest.approx(1.0)
        # the null-space component is silently dropped unless strict
        with pytest.raises(ValueError):
            chi2_statistic(np.array([1.0, 0.5]), P, strict=True)
        assert chi2_statistic(np.array([1.0, 1e-12]), P, strict=True) == pytest.approx(1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            chi2_statistic(np.ones(2), np.eye(3))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 5), st.integers(0, 2**31 - 1))
    def test_orthogonal_invariance(self, n, seed):
        rng = np.random.default_rng(seed)
        d = rng.normal(size=n)
        root = rng.normal(size=(n, n))
        P = root @ root.T + 0.1 * np.eye(n)
        U, _ = np.linalg.qr(rng.normal(size=(n, n)))
        s0 = chi2_statistic(d, P)
        s1 = chi2_statistic(U @ d, U @ P @ U.T)
        assert s1 == pytest.approx(s0, rel=1e-8, abs=1e-10)


class TestDetectionStatistic:
    def test_matches_exact_inverse_when_well_conditioned(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            n = rng.integers(1, 5)
            d = rng.normal(size=n)
            root = rng.normal(size=(n, n))
            P = root @ root.T + 0.5 * np.eye(n)
            exact = float(d @ np.linalg.solve(P, d))
            assert detection_statistic(d, P) == pytest.approx(exact, rel=1e-9)

    def test_boundary_pinned_component_counts_as_evidence(self):
        # variance collapsed along the second axis, estimate pinned there
        P = np.array([[1.0, 0.0], [0.0, 0.0]])
        d = np.array([0.0, 1.0])
        assert chi2_statistic(d, P) == 0.0
        floored = detection_statistic(d, P)
        assert np.isfinite(floored)
        assert floored > 1e10

    def test_zero_estimate(self):
        assert detection_statistic(np.zeros(2), np.eye(2)) == 0.0


class TestCusum:
    def test_trivial_steps(self):
        cfg = DetectorConfig.from_parameters(0.01, 2, 0.15)
        state, alarm = cusum_update(DetectorState(), 0.0, cfg)
        assert state.S == 0.0 and not alarm
        state, _ = cusum_update(DetectorState(S=10.0, step=4), 2.0, cfg)
        assert state.S == pytest.approx(3.5)
        assert state.step == 5

    def test_constant_statistic_limit_matches_quantile_threshold(self):
        # S converges to c/(1-phi), so the alarm fires iff c exceeds the quantile
        cfg = DetectorConfig.from_parameters(0.01, 2, 0.15)
        for factor, expect_alarm in ((1.01, True), (0.99, False)):
            c = factor * cfg.quantile
            state = DetectorState()
            alarms = []
            for _ in range(500):
                state, alarm = cusum_update(state, c, cfg)
                alarms.append(alarm)
            assert state.S == pytest.approx(c / (1.0 - cfg.phi), rel=1e-12)
            assert alarms[-1] is expect_alarm

    def test_rejects_negative_statistic(self):
        cfg = DetectorConfig.from_parameters(0.01, 2, 0.15)
        with pytest.raises(ValueError):
            cusum_update(DetectorState(), -0.1, cfg)

    def test_config_invariants(self):
        cfg = DetectorConfig.from_parameters(0.01, 2, 0.15)
        assert cfg.quantile == pytest.approx(9.2103403719761827, abs=1e-8)
        assert cfg.threshold == pytest.approx(cfg.quantile / 0.85, rel=1e-13)
        with pytest.raises(ValueError):
            DetectorConfig(alpha=0.01, df=2, phi=0.15, quantile=9.21, threshold=5.0)
        with pytest.raises(ValueError):
            DetectorConfig.from_parameters(0.01, 2, 1.5)
        with pytest.raises(ValueError):
            DetectorState(S=-1.0)


class TestFalseNegativeRate:
    def test_spec_examples(self):
        truth = [np.array([1.0, 0.0]), np.array([0.5, 0.5]), np.zeros(2)]
        assert false_negative_rate([10.0, 5.0, 0.0], 9.21, truth) == pytest.approx(0.5)
        assert false_negative_rate([10.0, 11.0, 0.0], 9.21, truth) == 0.0
        assert false_negative_rate([1.0, 2.0, 0.0], 9.21, truth) == 1.0

    def test_undefined_without_attacked_steps(self):
        with pytest.raises(ValueError):
            false_negative_rate([1.0, 2.0], 9.21, [np.zeros(2), np.zeros(2)])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            false_negative_rate([1.0], 9.21, [np.ones(2), np.ones(2)])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_monotone_in_statistics(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 30))
        stats = rng.uniform(0.0, 20.0, size=n)
        truth = rng.integers(0, 2, size=(n, 2)).astype(float)
        if not truth.any():
            truth[0, 0] = 1.0
        q = 9.21
        base = false_negative_rate(stats, q, truth)
        bumped = false_negative_rate(stats + rng.uniform(0.0, 5.0, size=n), q, truth)
        assert bumped <= base + 1e-12
