import math

import numpy as np
import pytest
from scipy.special import expit, logit

from predbench.datagen import generate_dataset, make_scenario, sample_coefficients
from predbench.metrics import (
    auc,
    brier,
    calibration,
    compute_metric_set,
    log_score,
    oracle_correct,
    scaled_brier,
    squared_error_variance,
)
from predbench.streams import derive_stream


class TestBrier:
    def test_perfect_prediction(self):
        assert brier([1, 0], [1.0, 0.0]) == 0.0

    def test_constant_half(self):
        y = np.array([1, 0, 1, 1, 0])
        assert brier(y, np.full(5, 0.5)) == pytest.approx(0.25)

    def test_hand_value(self):
        assert brier([1, 0], [0.8, 0.4]) == pytest.approx(0.10)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            brier([1, 0], [0.5])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 2, 50)
        p = rng.random(50)
        perm = rng.permutation(50)
        assert brier(y, p) == pytest.approx(brier(y[perm], p[perm]))
        assert log_score(y, p) == pytest.approx(log_score(y[perm], p[perm]))

    def test_bounds(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            y = rng.integers(0, 2, 30)
            p = rng.random(30)
            assert 0.0 <= brier(y, p) <= 1.0
            assert log_score(y, p) >= 0.0


class TestScaledBrier:
    def test_prevalence_predictor_scores_zero(self):
        y = np.array([1, 0, 0, 0])
        assert scaled_brier(y, np.full(4, 0.25)) == pytest.approx(0.0)

    def test_perfect_prediction_scores_one(self):
        y = np.array([1, 0, 0, 1])
        assert scaled_brier(y, y.astype(float)) == pytest.approx(1.0)

    def test_degenerate_outcome_invalid(self):
        assert math.isnan(scaled_brier([0, 0, 0], [0.1, 0.2, 0.3]))
        ms = compute_metric_set([0, 0, 0], [0.1, 0.2, 0.3])
        assert "bs_scaled" in ms.invalid


class TestLogScore:
    def test_constant_half_is_ln2(self):
        assert log_score([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2))

    def test_hard_zero_clipped_finite(self):
        v = log_score([1], [0.0])
        assert v == pytest.approx(-math.log(1e-15))
        assert math.isfinite(v)

    def test_perfect_prediction_near_zero(self):
        assert log_score([1, 0], [1.0, 0.0]) == pytest.approx(0.0, abs=1e-12)


class TestAuc:
    def test_perfect_separation(self):
        assert auc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0

    def test_constant_predictions(self):
        assert auc([0, 1, 0, 1], [0.3, 0.3, 0.3, 0.3]) == 0.5

    def test_single_class_invalid(self):
        assert math.isnan(auc([1, 1, 1], [0.2, 0.5, 0.7]))

    def test_matches_brute_force_concordance_exactly(self):
        rng = np.random.default_rng(12345)
        for _ in range(100):
            n = int(rng.integers(10, 60))
            y = rng.integers(0, 2, n)
            if y.min() == y.max():
                y[0] = 1 - y[0]
            probs = np.round(rng.random(n), 2)  # rounding forces ties
            cases = probs[y == 1]
            controls = probs[y == 0]
            gt = (cases[:, None] > controls[None, :]).sum()
            eq = (cases[:, None] == controls[None, :]).sum()
            pi = (gt + 0.5 * eq) / (len(cases) * len(controls))
            assert auc(y, probs) == pytest.approx(max(pi, 1 - pi), abs=1e-12)

    def test_invariance_under_increasing_transform(self):
        rng = np.random.default_rng(3)
        y = rng.integers(0, 2, 100)
        y[:2] = [0, 1]
        p = rng.random(100)
        assert auc(y, p) == pytest.approx(auc(y, expit(3 * p - 1)))
        assert auc(y, p) == pytest.approx(auc(y, p**3))


class TestCalibration:
    def test_oracle_probabilities_self_calibrated(self):
        sc = make_scenario(500, 10.0, 0.3, 0.1)
        coefs = sample_coefficients(derive_stream(0, sc.scenario_id, 0, "coefficients"), sc)
        ds = generate_dataset(sc, coefs, derive_stream(0, sc.scenario_id, 0, "test"), 100000, "test")
        cal = calibration(ds.y, ds.oracle_prob)
        assert cal.intercept_valid and cal.slope_valid
        assert abs(cal.intercept) < 0.05
        assert abs(cal.slope - 1.0) < 0.05

    def test_half_logit_scaling_recovers_slope_two(self):
        sc = make_scenario(500, 10.0, 0.3, 0.1)
        coefs = sample_coefficients(derive_stream(1, sc.scenario_id, 0, "coefficients"), sc)
        ds = generate_dataset(sc, coefs, derive_stream(1, sc.scenario_id, 0, "test"), 100000, "test")
        shrunk = expit(0.5 * logit(ds.oracle_prob))
        cal = calibration(ds.y, shrunk)
        assert cal.slope == pytest.approx(2.0, abs=0.1)

    def test_constant_probs_slope_invalid(self):
        y = np.array([0, 1] * 20)
        cal = calibration(y, np.full(40, 0.5))
        assert not cal.slope_valid
        assert cal.intercept_valid  # offset model still estimable
        ms = compute_metric_set(y, np.full(40, 0.5))
        assert "calib_b" in ms.invalid and "calib_a" not in ms.invalid

    def test_single_class_outcome_both_invalid(self):
        cal = calibration(np.ones(20), np.linspace(0.1, 0.9, 20))
        assert not cal.intercept_valid and not cal.slope_valid


class TestOracleCorrection:
    def test_oracle_against_itself_is_zero(self):
        rng = np.random.default_rng(4)
        y = rng.integers(0, 2, 200)
        y[:2] = [0, 1]
        p = np.clip(rng.random(200), 0.01, 0.99)
        ms = compute_metric_set(y, p)
        corrected = oracle_correct(ms, ms)
        for name, value in corrected.corrected.items():
            if name not in corrected.invalid:
                assert value == pytest.approx(0.0, abs=1e-14), name

    def test_simple_subtraction(self):
        a = compute_metric_set([1, 0, 1, 0], [0.9, 0.1, 0.8, 0.2])
        b = compute_metric_set([1, 0, 1, 0], [0.7, 0.3, 0.6, 0.4])
        corrected = oracle_correct(a, b)
        assert corrected.corrected["bs"] == pytest.approx(a.bs - b.bs)

    def test_correction_preserves_method_ordering(self):
        rng = np.random.default_rng(5)
        y = rng.integers(0, 2, 100)
        y[:2] = [0, 1]
        oracle = np.clip(rng.random(100), 0.01, 0.99)
        m1 = compute_metric_set(y, np.clip(oracle + rng.normal(0, 0.05, 100), 0.01, 0.99))
        m2 = compute_metric_set(y, np.clip(oracle + rng.normal(0, 0.2, 100), 0.01, 0.99))
        o = compute_metric_set(y, oracle)
        c1, c2 = oracle_correct(m1, o), oracle_correct(m2, o)
        assert (m1.bs < m2.bs) == (c1.corrected["bs"] < c2.corrected["bs"])

    def test_invalidity_propagates(self):
        valid = compute_metric_set([1, 0], [0.8, 0.2])
        invalid = compute_metric_set([1, 1], [0.8, 0.2])  # auc undefined
        corrected = oracle_correct(valid, invalid)
        assert "auc" in corrected.invalid
        assert math.isnan(corrected.corrected["auc"])


def test_squared_error_variance_hand_value():
    # squared errors 0 and 1 split evenly -> sample variance 1/3 on n=4... use
    # exact: values (0,0,1,1) have ddof=1 variance 1/3
    y = np.array([0.0, 0.0, 1.0, 1.0])
    probs = np.array([0.0, 0.0, 0.0, 0.0])
    assert squared_error_variance(y, probs) == pytest.approx(1.0 / 3.0)
