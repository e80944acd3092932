"""
RBF Kernel
Isotropic squared-exponential covariance, kernel matrices and analytic
gradients with respect to the log-hyperparameters
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import InputError

# Relative diagonal jitter added to the Laplace prior covariance
KERNEL_JITTER = 1e-8


@dataclass(frozen=True)
class KernelParams:
    """Marginal variance a² and length-scale l, stored in log space"""

    log_variance: float = 0.0
    log_lengthscale: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.log_variance) and math.isfinite(self.log_lengthscale)):
            raise InputError(
                f"Kernel parameters must be finite, got log_variance={self.log_variance}, "
                f"log_lengthscale={self.log_lengthscale}"
            )

    @classmethod
    def from_values(cls, variance: float, lengthscale: float) -> "KernelParams":
        if variance <= 0 or lengthscale <= 0:
            raise InputError("Kernel variance and length-scale must be positive")
        return cls(math.log(variance), math.log(lengthscale))

    @classmethod
    def from_array(cls, theta: np.ndarray) -> "KernelParams":
        return cls(float(theta[0]), float(theta[1]))

    @property
    def variance(self) -> float:
        return math.exp(self.log_variance)

    @property
    def lengthscale(self) -> float:
        return math.exp(self.log_lengthscale)

    def as_array(self) -> np.ndarray:
        return np.array([self.log_variance, self.log_lengthscale])

    def to_dict(self) -> dict:
        return {"variance": self.variance, "lengthscale": self.lengthscale}


def as_matrix(X, name: str = "X") -> np.ndarray:
    """Coerce inputs to a 2-D float array (a 1-D array is read as n scalar inputs)"""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InputError(f"{name} must be a matrix, got array with {X.ndim} dimensions")
    return X


def rbf(x, x_prime, params: KernelParams) -> float:
    """k(x, x') = a² exp(-||x - x'||² / (2 l²))"""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != x_prime.shape or x.ndim != 1:
        raise InputError(f"Dimension mismatch: {x.shape} vs {x_prime.shape}")
    sq_dist = float(np.sum((x - x_prime) ** 2))
    return params.variance * math.exp(-0.5 * sq_dist / params.lengthscale ** 2)


def squared_distances(X: np.ndarray, X_prime: np.ndarray) -> np.ndarray:
    X = as_matrix(X)
    X_prime = as_matrix(X_prime, "X_prime")
    if X.shape[1] != X_prime.shape[1]:
        raise InputError(f"Dimension mismatch: {X.shape[1]} vs {X_prime.shape[1]} columns")
    if X.shape[0] == 0 or X_prime.shape[0] == 0:
        return np.zeros((X.shape[0], X_prime.shape[0]))
    return cdist(X, X_prime, "sqeuclidean")


def kernel_matrix(X, X_prime, params: KernelParams) -> np.ndarray:
    """
    Evaluate the kernel between all rows of X and X_prime

    Each entry depends only on its own pair of rows, so the result does not
    depend on how rows are scheduled.

    Returns:
        n x m kernel matrix
    """
    sq = squared_distances(X, X_prime)
    return params.variance * np.exp(-0.5 * sq / params.lengthscale ** 2)


def kernel_diag(X, params: KernelParams) -> np.ndarray:
    return np.full(as_matrix(X).shape[0], params.variance)


def kernel_gradients(X, params: KernelParams) -> Tuple[np.ndarray, np.ndarray]:
    """
    Derivatives of K(X, X) with respect to log a² and log l

    Returns:
        (dK/dlog_variance, dK/dlog_lengthscale)
    """
    X = as_matrix(X)
    if X.shape[0] < 1:
        raise InputError("kernel_gradients needs at least one input")
    sq = squared_distances(X, X)
    K = params.variance * np.exp(-0.5 * sq / params.lengthscale ** 2)
    return K, K * sq / params.lengthscale ** 2


def cross_kernel_gradients(X, X_prime, params: KernelParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rectangular version of kernel_gradients; also returns K itself"""
    sq = squared_distances(X, X_prime)
    K = params.variance * np.exp(-0.5 * sq / params.lengthscale ** 2)
    return K, K, K * sq / params.lengthscale ** 2


def median_heuristic(X, max_points: int = 1000, seed: int = 0) -> float:
    """Median pairwise Euclidean distance (1.0 when degenerate)"""
    X = as_matrix(X)
    if X.shape[0] > max_points:
        rng = np.random.default_rng(seed)
        X = X[rng.choice(X.shape[0], max_points, replace=False)]
    if X.shape[0] < 2:
        return 1.0
    distances = pdist(X)
    distances = distances[distances > 0]
    if distances.size == 0:
        return 1.0
    return float(np.median(distances))
