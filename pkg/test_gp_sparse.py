#!/usr/bin/env python3

"""
Tests for inducing-point selection and the collapsed sparse GP bound
"""

import math
import os
import sys

import numpy as np
import pytest

# Add the project root to the Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from gp_models.dirichlet_transform import AlphaEpsilon, one_hot, transform
from gp_models.errors import InputError
from gp_models.gp_exact import NoiseModel, fit_exact, log_marginal_likelihood, optimize_hyperparams
from gp_models.gp_sparse import (InducingSet, fit_sparse, kmeans_inducing, optimize_sparse, select_inducing,
                                 sparse_bound, sparse_bound_gradient, uniform_inducing)
from gp_models.kernels import KernelParams, kernel_matrix
from utils.bench_fixtures import random_problem, two_cluster_fixture

LOG_2PI = math.log(2 * math.pi)


def _sorted_rows(Z):
    return Z[np.lexsort(Z.T[::-1])]


def test_kmeans_full_set_returns_points():
    X = np.array([[0.0, 1.0], [2.0, -1.0], [5.0, 5.0], [-3.0, 0.5]])
    Z = kmeans_inducing(X, 4, seed=0).Z
    np.testing.assert_allclose(_sorted_rows(Z), _sorted_rows(X), atol=1e-12)


def test_kmeans_single_centroid_is_mean():
    X = np.random.default_rng(1).normal(size=(20, 2))
    Z = kmeans_inducing(X, 1, seed=0).Z
    np.testing.assert_allclose(Z[0], X.mean(axis=0), atol=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 7])
def test_kmeans_two_clusters(seed):
    Z = kmeans_inducing(np.array([0.0, 1.0, 10.0, 11.0]), 2, seed=seed).Z
    np.testing.assert_allclose(np.sort(Z.ravel()), [0.5, 10.5], atol=1e-12)


@pytest.mark.parametrize("scale", [1.0, 1e4])
def test_kmeans_centroids_are_cluster_means_at_any_feature_scale(scale):
    rng = np.random.default_rng(3)
    centers = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    X = scale * (np.repeat(centers, 30, axis=0) + 0.02 * rng.standard_normal((90, 2)))
    Z = kmeans_inducing(X, 3, seed=0).Z
    labels = np.argmin(np.sum((X[:, None, :] - Z[None, :, :]) ** 2, axis=2), axis=1)
    means = np.array([X[labels == j].mean(axis=0) for j in range(3)])
    np.testing.assert_allclose(Z, means, rtol=0, atol=1e-9 * scale)


def test_kmeans_rejects_bad_m():
    with pytest.raises(InputError):
        kmeans_inducing(np.zeros((3, 1)), 4)
    with pytest.raises(InputError):
        select_inducing(np.zeros((3, 1)), 2, selection="random")


def test_uniform_inducing_separates_duplicates():
    X = np.array([[0.0], [0.0], [1.0]])
    inducing = uniform_inducing(X, 3, seed=0)
    assert inducing.selection == "uniform"
    assert np.unique(inducing.Z, axis=0).shape[0] == 3
    assert np.max(np.abs(_sorted_rows(inducing.Z) - _sorted_rows(X))) < 1e-5


def test_inducing_set_needs_points():
    with pytest.raises(InputError):
        InducingSet(np.zeros((0, 1)))


def _problem(seed, n, num_classes=2):
    p = random_problem(seed=seed, n=n, num_classes=num_classes)
    return p, KernelParams(p["log_variance"], p["log_lengthscale"]), NoiseModel.heteroskedastic(p["noise"])


def test_bound_exact_at_full_inducing_set():
    p, _, _ = _problem(3, 15)
    params = KernelParams.from_values(1.0, 0.8)
    noise = NoiseModel.heteroskedastic(np.full((15, 2), 0.5))
    bound = sparse_bound(p["X"], p["X"], p["Y"], params, noise)
    exact = log_marginal_likelihood(p["X"], p["Y"], noise, params)
    assert abs(bound - exact) < 1e-6


def test_predictions_exact_at_full_inducing_set():
    p, _, noise = _problem(4, 12)
    params = KernelParams.from_values(1.0, 0.8)
    X_star = np.linspace(-3, 3, 25)[:, None]
    sparse = fit_sparse(p["X"], p["X"], p["Y"], params, noise).predict_latent(X_star)
    exact = fit_exact(p["X"], p["Y"], params, noise).predict_latent(X_star)
    np.testing.assert_allclose(sparse[0], exact[0], atol=1e-6)
    np.testing.assert_allclose(sparse[1], exact[1], atol=1e-6)


def test_bound_matches_dense_oracle():
    p, params, noise = _problem(6, 3)
    Z = p["X"][:2] + 0.1
    Knn = kernel_matrix(p["X"], p["X"], params)
    Knm = kernel_matrix(p["X"], Z, params)
    Q = Knm @ np.linalg.inv(kernel_matrix(Z, Z, params)) @ Knm.T
    expected = 0.0
    for c in range(2):
        S = np.diag(p["noise"][:, c])
        cov = Q + S
        y = p["Y"][:, c]
        _, logdet = np.linalg.slogdet(cov)
        expected += (-0.5 * y @ np.linalg.solve(cov, y) - 0.5 * logdet - 1.5 * LOG_2PI
                     - 0.5 * np.trace(np.linalg.solve(S, Knn - Q)))
    assert sparse_bound(p["X"], Z, p["Y"], params, noise) == pytest.approx(expected, abs=1e-6)


def test_bound_with_zero_targets():
    p, params, noise = _problem(8, 5, num_classes=1)
    Z = p["X"][:3]
    Knn = kernel_matrix(p["X"], p["X"], params)
    Knm = kernel_matrix(p["X"], Z, params)
    Q = Knm @ np.linalg.inv(kernel_matrix(Z, Z, params)) @ Knm.T
    S = np.diag(p["noise"][:, 0])
    _, logdet = np.linalg.slogdet(Q + S)
    expected = -0.5 * logdet - 2.5 * LOG_2PI - 0.5 * np.trace(np.linalg.solve(S, Knn - Q))
    assert sparse_bound(p["X"], Z, np.zeros((5, 1)), params, noise) == pytest.approx(expected, abs=1e-6)


def test_bound_never_exceeds_exact():
    rng = np.random.default_rng(0)
    for seed in range(10):
        p, params, noise = _problem(20 + seed, 10)
        Z = rng.uniform(-2, 2, size=(int(rng.integers(1, 8)), 1))
        assert (sparse_bound(p["X"], Z, p["Y"], params, noise)
                <= log_marginal_likelihood(p["X"], p["Y"], noise, params) + 1e-8)


def test_far_inducing_point_gives_prior():
    p, params, noise = _problem(2, 6)
    params = KernelParams.from_values(1.7, 0.5)
    model = fit_sparse(p["X"], np.array([[1e3]]), p["Y"], params, noise)
    mean, var = model.predict_latent(np.linspace(-2, 2, 5))
    np.testing.assert_allclose(mean, 0.0, atol=1e-6)
    np.testing.assert_allclose(var, 1.7, atol=1e-6)


def test_bound_monotone_in_nested_inducing_sets():
    data = two_cluster_fixture().dataset
    targets = transform(one_hot(data.y, 2), AlphaEpsilon(0.01))
    params = KernelParams.from_values(2.0, 0.8)
    small = sparse_bound(data.X, data.X[::5], targets, params)
    full = sparse_bound(data.X, data.X, targets, params)
    assert small <= full + 1e-8


def _finite_difference(func, theta, h=1e-5):
    grad = np.empty_like(theta)
    for j in range(theta.size):
        step = np.zeros_like(theta)
        step[j] = h
        grad[j] = (func(theta + step) - func(theta - step)) / (2 * h)
    return grad


@pytest.mark.parametrize("seed", range(5))
def test_bound_gradient_heteroskedastic(seed):
    p, params, noise = _problem(30 + seed, 6)
    Z = p["X"][:3] + 0.05
    theta = params.as_array()
    analytic = sparse_bound_gradient(p["X"], Z, p["Y"], params, noise)
    numeric = _finite_difference(lambda t: sparse_bound(p["X"], Z, p["Y"], KernelParams.from_array(t), noise), theta)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_bound_gradient_homoskedastic(seed):
    p, params, _ = _problem(40 + seed, 6)
    Z = p["X"][:3] - 0.05
    theta = np.append(params.as_array(), math.log(0.25))

    def value(t):
        return sparse_bound(p["X"], Z, p["Y"], KernelParams.from_array(t), NoiseModel.homoskedastic(math.exp(t[2])))

    analytic = sparse_bound_gradient(p["X"], Z, p["Y"], params, NoiseModel.homoskedastic(0.25))
    np.testing.assert_allclose(analytic, _finite_difference(value, theta), rtol=1e-4, atol=1e-6)


def test_optimize_sparse_never_decreases_bound():
    p, _, noise = _problem(12, 20)
    Z = kmeans_inducing(p["X"], 5, seed=0)
    init = KernelParams(0.0, 0.0)
    fit = optimize_sparse(p["X"], Z, p["Y"], noise, init=init, restarts=2, seed=1)
    assert fit.objective >= sparse_bound(p["X"], Z, p["Y"], init, noise) - 1e-9


def test_optimize_sparse_matches_exact_at_full_set():
    data = two_cluster_fixture().dataset
    targets = transform(one_hot(data.y, 2), AlphaEpsilon(0.01))
    exact = optimize_hyperparams(data.X, targets, restarts=2, seed=0)
    sparse = optimize_sparse(data.X, data.X, targets, restarts=2, seed=0)
    assert sparse.objective == pytest.approx(exact.objective, abs=1e-3)
