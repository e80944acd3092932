#!/usr/bin/env python3

"""
Tests for Monte-Carlo softmax, calibration metrics, reliability bands and
Platt scaling
"""

import math
import os
import sys

import numpy as np
import pytest
from scipy.special import expit

# Add the project root to the Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from classifiers.predict_calibrate import (ClassProbabilities, ece, ece_from_bins, error_rate, evaluate, mnll,
                                           platt_apply, platt_fit, reliability_band, reliability_bins,
                                           softmax_expectation)
from gp_models.errors import InputError
from utils.bench_fixtures import mc_softmax_oracle


class _LatentStub:
    """Fixed latent marginals, independent of the query inputs"""

    def __init__(self, means, variances):
        self.means = np.asarray(means, dtype=float)
        self.variances = np.asarray(variances, dtype=float)

    def predict_latent(self, X_star):
        return self.means, self.variances


def test_softmax_symmetric_degenerate():
    probs = softmax_expectation([[0.0, 0.0]], [[0.0, 0.0]], S=10, seed=3).probs
    np.testing.assert_array_equal(probs, [[0.5, 0.5]])


def test_softmax_deterministic_closed_form():
    probs = softmax_expectation([[1.0, 0.0]], [[0.0, 0.0]], S=5).probs
    e = math.e
    np.testing.assert_allclose(probs[0], [e / (1 + e), 1 / (1 + e)], atol=1e-12)
    assert probs[0, 0] == pytest.approx(0.731059, abs=1e-6)


@pytest.mark.slow
def test_softmax_matches_large_sample_oracle():
    probs = softmax_expectation([[1.0, 0.0]], [[1.0, 1.0]], S=10 ** 6, seed=7).probs
    oracle = mc_softmax_oracle([[1.0, 0.0]], [[1.0, 1.0]]).value
    np.testing.assert_allclose(probs, oracle, atol=0.002)


def test_softmax_rows_sum_to_one_and_are_reproducible():
    rng = np.random.default_rng(0)
    means = rng.normal(size=(25, 4)) * 3
    variances = rng.uniform(0, 4, size=(25, 4))
    for S, seed in ((1, 0), (17, 5), (500, 9)):
        first = softmax_expectation(means, variances, S=S, seed=seed).probs
        np.testing.assert_allclose(first.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_array_equal(first, softmax_expectation(means, variances, S=S, seed=seed).probs)


def test_softmax_independent_of_batching():
    rng = np.random.default_rng(1)
    means = rng.normal(size=(6, 3))
    variances = rng.uniform(0, 2, size=(6, 3))
    whole = softmax_expectation(means, variances, S=50, seed=4).probs
    first_point = softmax_expectation(means[:1], variances[:1], S=50, seed=4).probs
    np.testing.assert_array_equal(whole[:1], first_point)


def test_softmax_rejects_bad_inputs():
    with pytest.raises(InputError):
        softmax_expectation([[np.nan, 0.0]], [[1.0, 1.0]])
    with pytest.raises(InputError):
        softmax_expectation([[0.0, 0.0]], [[-1.0, 1.0]])
    with pytest.raises(InputError):
        softmax_expectation([[0.0, 0.0]], [[1.0, 1.0]], S=0)


def test_ece_perfect_confident_classifier():
    probs = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    score, bins = ece(probs, [0, 1, 0])
    assert score == 0.0
    assert bins[-1].count == 3


def test_ece_two_points():
    probs = np.array([[0.1, 0.9], [0.6, 0.4]])
    score, bins = ece(probs, [1, 1], M=10)
    assert score == pytest.approx(0.35, abs=1e-12)
    assert [b.count for b in bins] == [0, 0, 0, 0, 0, 0, 1, 0, 0, 1]


def test_ece_calibrated_by_construction():
    probs = np.tile([0.8, 0.2], (10, 1))
    labels = np.array([0] * 8 + [1] * 2)
    score, _ = ece(probs, labels)
    assert score == pytest.approx(0.0, abs=1e-12)


def test_ece_recomputed_from_bins_and_permutation_invariant():
    rng = np.random.default_rng(2)
    probs = rng.dirichlet([1.0, 1.0, 1.0], size=40)
    labels = rng.integers(0, 3, size=40)
    score, bins = ece(probs, labels, M=7)
    assert ece_from_bins(bins) == score
    assert sum(b.count for b in bins) == 40
    assert all(0.0 <= b.confidence <= 1.0 and 0.0 <= b.accuracy <= 1.0 for b in bins)
    order = rng.permutation(40)
    assert ece(probs[order], labels[order], M=7)[0] == pytest.approx(score, abs=1e-12)


def test_bin_edges_go_up_except_one():
    bins = reliability_bins(np.array([[0.5, 0.5], [0.0, 1.0]]), [0, 1], M=10)
    assert bins[5].count == 1
    assert bins[9].count == 1


def test_ece_rejects_empty_test_set():
    with pytest.raises(InputError):
        ece(np.zeros((0, 2)), [])
    with pytest.raises(InputError):
        reliability_bins(np.array([[0.5, 0.5]]), [0], M=0)


def test_mnll_examples():
    assert mnll(np.array([[1.0, 0.0], [0.0, 1.0]]), [0, 1]) == 0.0
    probs = np.array([[0.5, 0.5], [0.75, 0.25]])
    assert mnll(probs, [0, 1]) == pytest.approx((math.log(2) + math.log(4)) / 2, abs=1e-12)
    assert mnll(probs, [0, 1]) == pytest.approx(1.039721, abs=1e-6)
    assert mnll(np.array([[1.0, 0.0]]), [1]) == pytest.approx(-math.log(1e-12))
    assert mnll(np.array([[1.0, 0.0]]), [1]) == pytest.approx(27.631, abs=1e-3)


def test_mnll_monotone_in_true_class_mass():
    before = mnll(np.array([[0.3, 0.7]]), [0])
    after = mnll(np.array([[0.4, 0.6]]), [0])
    assert after <= before


def test_error_rate_examples():
    probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.7, 0.3], [0.4, 0.6]])
    assert error_rate(probs, [0, 1, 0, 1]) == 0.0
    assert error_rate(probs, [1, 0, 1, 0]) == 1.0
    assert error_rate(probs, [0, 1, 1, 1]) == 0.25
    # ties go to the lowest class index
    assert error_rate(np.array([[0.5, 0.5]]), [0]) == 0.0


def test_evaluate_report():
    probs = ClassProbabilities(np.array([[0.1, 0.9], [0.6, 0.4]]))
    report = evaluate(probs, [1, 1])
    assert report.error_rate == 0.5
    assert report.ece == pytest.approx(0.35)
    assert report.num_bins == 10
    assert len(report.to_dict()["bins"]) == 10


def test_class_probabilities_validation():
    with pytest.raises(InputError):
        ClassProbabilities(np.array([[0.7, 0.7]]))
    with pytest.raises(InputError):
        ClassProbabilities(np.array([0.5, 0.5]))


def test_platt_consistency():
    rng = np.random.default_rng(10)
    scores = rng.normal(0.0, 2.0, size=10 ** 4)
    labels = (rng.uniform(size=scores.size) < expit(scores)).astype(int)
    a, b = platt_fit(scores, labels)
    assert 0.9 <= a <= 1.1
    assert -0.1 <= b <= 0.1


def test_platt_negated_scores():
    rng = np.random.default_rng(11)
    scores = rng.normal(size=200)
    labels = (rng.uniform(size=200) < expit(1.5 * scores - 0.3)).astype(int)
    a, b = platt_fit(scores, labels)
    a_neg, b_neg = platt_fit(-scores, labels)
    assert a_neg == pytest.approx(-a, abs=1e-6)
    assert b_neg == pytest.approx(b, abs=1e-6)


def test_platt_two_point_closed_form():
    a, b = platt_fit([-1.0, 1.0], [0, 1])
    # targets 2/3 and 1/3 are hit exactly
    assert expit(a + b) == pytest.approx(2.0 / 3.0, abs=1e-8)
    assert expit(-a + b) == pytest.approx(1.0 / 3.0, abs=1e-8)
    assert a == pytest.approx(math.log(2.0), abs=1e-6)
    assert b == pytest.approx(0.0, abs=1e-6)


def test_platt_needs_both_classes():
    with pytest.raises(InputError):
        platt_fit([0.1, 0.2], [1, 1])


def test_platt_apply_examples():
    assert platt_apply(0.0, 1.0, 0.0) == 0.5
    np.testing.assert_allclose(platt_apply([-5.0, 0.0, 9.0], 0.0, 0.4), expit(0.4))
    assert platt_apply(1.0, 2.0, -1.0) == pytest.approx(0.731059, abs=1e-6)


def test_platt_keeps_decision_for_positive_slope():
    scores = np.linspace(-3, 3, 13)
    decisions = platt_apply(scores, 2.5, 0.0) > 0.5
    np.testing.assert_array_equal(decisions, scores > 0)


def test_band_collapses_without_variance():
    means = np.array([[1.2, -0.3], [-0.5, 0.4], [2.0, 1.0]])
    band = reliability_band(_LatentStub(means, np.zeros_like(means)), None, [0, 1, 1], S=10)
    for lower, mean, upper in zip(band.lower_bins, band.mean_bins, band.upper_bins):
        assert lower.accuracy == mean.accuracy == upper.accuracy
        assert lower.count == mean.count == upper.count


def test_band_uses_normal_quantile():
    band = reliability_band(_LatentStub(np.zeros((2, 2)), np.ones((2, 2))), None, [0, 1], quantile=0.95, S=10)
    assert band.z == pytest.approx(1.959964, abs=1e-6)
    with pytest.raises(InputError):
        reliability_band(_LatentStub(np.zeros((2, 2)), np.ones((2, 2))), None, [0, 1], quantile=0.4)


def test_band_symmetric_fixture_single_bin():
    band = reliability_band(_LatentStub(np.zeros((8, 2)), np.zeros((8, 2))), None, [0, 1] * 4, S=20)
    occupied = [b for b in band.mean_bins if b.count]
    assert len(occupied) == 1
    assert occupied[0].confidence == pytest.approx(0.5)
    assert band.histogram.sum() == pytest.approx(1.0)
    assert len(band.rows()) == 10


def test_band_multiclass_has_mean_curve_only():
    means = np.array([[1.0, 0.0, -1.0], [0.0, 2.0, 0.0]])
    band = reliability_band(_LatentStub(means, np.ones_like(means)), None, [0, 1], S=50)
    assert band.lower_bins is None and band.upper_bins is None
    rows = band.rows()
    assert all(r["lower_accuracy"] == r["accuracy"] for r in rows)
