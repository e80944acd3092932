"""
Benchmark Fixtures and Oracles
Reference computations for the test suite that avoid the code paths they check:
dense Gaussian elimination for GP regression, grid quadrature for the Laplace
classifier, large-sample Monte Carlo for the softmax expectation, and the pinned
one-dimensional two-cluster fixture
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from gp_models.errors import InputError, NumericalError

from .data_io import Dataset, load_csv

TEST_DATA_DIR = Path(__file__).resolve().parent.parent / "test_data"
TWO_CLUSTER_FIXTURE = TEST_DATA_DIR / "two_clusters.csv"

MAX_DENSE_POINTS = 20
QUADRATURE_POINTS = 4001
QUADRATURE_RANGE = 8.0


@dataclass
class OracleResult:
    """Reference value(s) with a description of how they were obtained"""

    value: Any
    method: str
    cost: int


def _rbf(x: Sequence[float], x_prime: Sequence[float], variance: float, lengthscale: float) -> float:
    sq = 0.0
    for a, b in zip(x, x_prime):
        sq += (a - b) * (a - b)
    return variance * math.exp(-0.5 * sq / (lengthscale * lengthscale))


def _eliminate(A: List[List[float]], rhs: List[List[float]]) -> Tuple[List[List[float]], float, int]:
    """
    Solve A X = rhs by Gauss-Jordan elimination with partial pivoting

    Returns:
        (X, log|det A|, operation count)
    """
    n = len(A)
    A = [row[:] for row in A]
    B = [row[:] for row in rhs]
    scale = max((abs(v) for row in A for v in row), default=0.0)
    log_det = 0.0
    ops = 0
    for col in range(n):
        pivot = max(range(col, n), key=lambda r: abs(A[r][col]))
        if abs(A[pivot][col]) <= 1e-13 * max(scale, 1e-300):
            raise NumericalError(f"Singular matrix in dense oracle (pivot {A[pivot][col]:.3e} at column {col})")
        A[col], A[pivot] = A[pivot], A[col]
        B[col], B[pivot] = B[pivot], B[col]
        p = A[col][col]
        log_det += math.log(abs(p))
        for r in range(n):
            if r == col:
                continue
            factor = A[r][col] / p
            if factor == 0.0:
                continue
            for k in range(col, n):
                A[r][k] -= factor * A[col][k]
            for k in range(len(B[r])):
                B[r][k] -= factor * B[col][k]
            ops += n - col + len(B[r])
    X = [[v / A[i][i] for v in B[i]] for i in range(n)]
    return X, log_det, ops


def dense_gp_oracle(X, y, noise, params) -> Tuple[Callable, Callable, OracleResult]:
    """
    Single-output GP regression by explicit inversion of K + diag(noise)

    Args:
        X: n x d inputs, n <= 20
        y: n targets
        noise: scalar or n per-point noise variances
        params: object with .variance and .lengthscale

    Returns:
        (mean_fn, var_fn, log marginal likelihood as an OracleResult)
    """
    X = [list(map(float, np.atleast_1d(row))) for row in np.asarray(X, dtype=float).reshape(len(y), -1)]
    y = [float(v) for v in np.asarray(y, dtype=float).ravel()]
    n = len(y)
    if n > MAX_DENSE_POINTS:
        raise InputError(f"Dense oracle is limited to {MAX_DENSE_POINTS} points, got {n}")
    noise = [float(v) for v in np.broadcast_to(np.asarray(noise, dtype=float), (n,))]
    variance, lengthscale = float(params.variance), float(params.lengthscale)

    A = [[_rbf(X[i], X[j], variance, lengthscale) + (noise[i] if i == j else 0.0) for j in range(n)]
         for i in range(n)]
    identity = [[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)]
    inverse, log_det, ops = _eliminate(A, identity)
    alpha = [sum(inverse[i][j] * y[j] for j in range(n)) for i in range(n)]
    quad = sum(y[i] * alpha[i] for i in range(n))
    lml = -0.5 * quad - 0.5 * log_det - 0.5 * n * math.log(2.0 * math.pi)

    def mean_fn(X_star) -> np.ndarray:
        rows = np.asarray(X_star, dtype=float).reshape(-1, len(X[0]) if X else 1)
        return np.array([sum(_rbf(x, X[i], variance, lengthscale) * alpha[i] for i in range(n)) for x in rows])

    def var_fn(X_star) -> np.ndarray:
        rows = np.asarray(X_star, dtype=float).reshape(-1, len(X[0]) if X else 1)
        out = []
        for x in rows:
            k = [_rbf(x, X[i], variance, lengthscale) for i in range(n)]
            reduction = sum(k[i] * inverse[i][j] * k[j] for i in range(n) for j in range(n))
            out.append(_rbf(x, x, variance, lengthscale) - reduction)
        return np.array(out)

    return mean_fn, var_fn, OracleResult(value=lml, method="Gauss-Jordan inverse with partial pivoting", cost=ops)


def random_problem(seed: int, n: int, d: int = 1, num_classes: int = 2) -> dict:
    """Small random regression problem with positive per-point, per-class noise"""
    rng = np.random.default_rng(seed)
    return {
        "X": rng.uniform(-2.0, 2.0, size=(n, d)),
        "Y": rng.normal(size=(n, num_classes)),
        "noise": rng.uniform(0.2, 1.0, size=(n, num_classes)),
        "log_variance": rng.uniform(math.log(0.3), math.log(3.0)),
        "log_lengthscale": rng.uniform(math.log(0.3), math.log(2.0)),
    }


def _log_sigmoid(f: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -f)


def laplace_quadrature_oracle(x_train: float, y_train: int, x_star: float, variance: float = 1.0,
                              lengthscale: float = 1.0) -> OracleResult:
    """
    Exact single-observation GP classification by grid quadrature

    Integrates the logistic likelihood against the joint Gaussian prior of
    (f, f*) on a 4001 x 4001 grid over [-8, 8]; the grid scales with the
    prior standard deviation.

    Returns:
        OracleResult with value = (p(y*=1 | y), log evidence)
    """
    sd = math.sqrt(variance)
    grid = np.linspace(-QUADRATURE_RANGE, QUADRATURE_RANGE, QUADRATURE_POINTS) * max(sd, 1.0)
    k_train = variance
    k_cross = variance * math.exp(-0.5 * (x_train - x_star) ** 2 / lengthscale ** 2)
    k_star = variance

    sign = 1.0 if y_train == 1 else -1.0
    prior = np.exp(-0.5 * grid ** 2 / k_train) / math.sqrt(2.0 * math.pi * k_train)
    likelihood = np.exp(_log_sigmoid(sign * grid))
    joint = likelihood * prior
    evidence = trapezoid(joint, grid)

    cond_var = k_star - k_cross ** 2 / k_train
    cond_mean = (k_cross / k_train) * grid
    if cond_var <= 1e-12 * variance:
        inner = 1.0 / (1.0 + np.exp(-cond_mean))
        cost = QUADRATURE_POINTS
    else:
        inner = np.empty(QUADRATURE_POINTS)
        star_grid = np.linspace(-QUADRATURE_RANGE, QUADRATURE_RANGE, QUADRATURE_POINTS) * max(math.sqrt(k_star), 1.0)
        sig_star = 1.0 / (1.0 + np.exp(-star_grid))
        for start in range(0, QUADRATURE_POINTS, 250):
            mu = cond_mean[start:start + 250, None]
            density = np.exp(-0.5 * (star_grid[None, :] - mu) ** 2 / cond_var) / math.sqrt(2.0 * math.pi * cond_var)
            inner[start:start + 250] = trapezoid(density * sig_star[None, :], star_grid, axis=1)
        cost = QUADRATURE_POINTS * QUADRATURE_POINTS
    predictive = trapezoid(joint * inner, grid) / evidence
    return OracleResult(value=(float(predictive), float(math.log(evidence))),
                        method="trapezoid grid quadrature of the exact posterior", cost=cost)


def mc_softmax_oracle(means, variances, samples: int = 10 ** 7, seed: int = 12345,
                      chunk: int = 10 ** 6) -> OracleResult:
    """E[softmax(f)] with a separate legacy RandomState stream and many more samples"""
    means = np.atleast_2d(np.asarray(means, dtype=float))
    sd = np.sqrt(np.atleast_2d(np.asarray(variances, dtype=float)))
    rs = np.random.RandomState(seed)
    out = np.zeros_like(means)
    for i in range(means.shape[0]):
        total = np.zeros(means.shape[1])
        remaining = samples
        while remaining:
            size = min(chunk, remaining)
            f = means[i] + sd[i] * rs.randn(size, means.shape[1])
            f -= f.max(axis=1, keepdims=True)
            e = np.exp(f)
            total += (e / e.sum(axis=1, keepdims=True)).sum(axis=0)
            remaining -= size
        out[i] = total / samples
    return OracleResult(value=out, method="RandomState Monte Carlo", cost=samples * means.shape[0])


@dataclass
class TwoClusterFixture:
    """Two-cluster 1D binary dataset with label noise and a 200-point query grid"""

    dataset: Dataset
    query: np.ndarray = field(default_factory=lambda: np.linspace(-4.0, 4.0, 200)[:, None])


def two_cluster_fixture(path: Optional[Path] = None) -> TwoClusterFixture:
    """
    Load the pinned fixture (50 points, clusters around -2 and 2, 5 flipped labels)

    The CSV in test_data/ is the source of truth; it is not regenerated.
    """
    return TwoClusterFixture(dataset=load_csv(path or TWO_CLUSTER_FIXTURE))


def latent_mirror_residual(means: np.ndarray) -> float:
    """max |m0 + m1 - 2c| for the least-squares constant c; zero iff the latents mirror"""
    total = np.asarray(means, dtype=float)[:, 0] + np.asarray(means, dtype=float)[:, 1]
    offset = total.mean() / 2.0
    return float(np.max(np.abs(total - 2.0 * offset)))


def probability_mirror_gap(probs: np.ndarray) -> float:
    """max |p0 + p1 - 1|"""
    probs = np.asarray(probs, dtype=float)
    return float(np.max(np.abs(probs[:, 0] + probs[:, 1] - 1.0)))
