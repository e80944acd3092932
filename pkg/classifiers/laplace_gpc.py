"""
Laplace GP Classification
Binary GP classifier with a logistic likelihood: damped Newton mode finding,
Laplace evidence with its analytic gradient, and a Gauss-Hermite predictive
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import expit, log_expit

from gp_models.errors import InputError, ModelError
from gp_models.gp_exact import HyperparameterFit, default_init, jittered_cholesky
from gp_models.kernels import KERNEL_JITTER, KernelParams, as_matrix, kernel_gradients, kernel_matrix, median_heuristic
from gp_models.optimization import (LOG_LENGTHSCALE_BOUNDS, LOG_VARIANCE_BOUNDS, maximize_with_restarts,
                                    random_starts)
from utils.data_io import Dataset

from .base_classifier import BaseClassifier, ProgressCallback
from .predict_calibrate import ClassProbabilities

logger = logging.getLogger(__name__)

MAX_NEWTON_ITERATIONS = 100
NEWTON_TOL = 1e-6
HERMITE_POINTS = 201

_NODES, _WEIGHTS = hermgauss(HERMITE_POINTS)


def log_likelihood(f: np.ndarray, y: np.ndarray) -> float:
    """Σ log σ(±f) for labels in {0, 1}"""
    return float(np.sum(log_expit(np.where(y == 1, f, -f))))


@dataclass
class LaplaceState:
    """Posterior mode and the quantities reused by prediction and evidence"""

    mode: np.ndarray
    a: np.ndarray
    grad_log_lik: np.ndarray
    W_sqrt: np.ndarray
    L: np.ndarray
    newton_iters: int
    converged: bool
    objective_trace: List[float] = field(default_factory=list)

    def objective(self, y: np.ndarray) -> float:
        """log p(y|f̂) - ½ f̂ᵀK⁻¹f̂"""
        return log_likelihood(self.mode, y) - 0.5 * float(self.a @ self.mode)


def _laplace_terms(K: np.ndarray, f: np.ndarray, y: np.ndarray):
    pi = expit(f)
    grad = y - pi
    W = pi * (1.0 - pi)
    sW = np.sqrt(W)
    B = np.eye(f.size) + sW[:, None] * K * sW[None, :]
    L, _ = jittered_cholesky(B, 1.0)
    return grad, W, sW, L


def laplace_mode(K: np.ndarray, y: np.ndarray, max_iter: int = MAX_NEWTON_ITERATIONS,
                 tol: float = NEWTON_TOL) -> LaplaceState:
    """
    Newton iterations for the mode of p(f|y) with step halving

    Steps are taken in the a = K⁻¹f parameterization and halved until the
    objective log p(y|f) - ½ aᵀf does not decrease. Stops when the objective
    gradient ∇log p(y|f) - a falls below tol.
    """
    n = y.size
    f = np.zeros(n)
    a = np.zeros(n)
    psi = 0.0 if n == 0 else log_likelihood(f, y)
    trace = [psi]
    converged = False
    iteration = 0
    for iteration in range(max_iter):
        grad, W, sW, L = _laplace_terms(K, f, y)
        if np.linalg.norm(grad - a) < tol:
            converged = True
            break
        b = W * f + grad
        a_new = b - sW * cho_solve((L, True), sW * (K @ b))
        step = a_new - a
        size = 1.0
        while True:
            a_try = a + size * step
            f_try = K @ a_try
            psi_try = log_likelihood(f_try, y) - 0.5 * float(a_try @ f_try)
            if psi_try >= psi or size < 1e-10:
                break
            size *= 0.5
        if psi_try < psi:
            # no ascent direction left at machine precision
            converged = bool(np.linalg.norm(grad - a) < math.sqrt(tol))
            break
        a, f, psi = a_try, f_try, psi_try
        trace.append(psi)
    else:
        iteration = max_iter

    grad, W, sW, L = _laplace_terms(K, f, y)
    if not converged:
        converged = bool(np.linalg.norm(grad - a) < tol)
        if not converged:
            logger.warning(f"Laplace mode not converged after {iteration} Newton iterations "
                           f"(gradient norm {np.linalg.norm(grad - a):.3e})")
    return LaplaceState(mode=f, a=a, grad_log_lik=grad, W_sqrt=sW, L=L,
                        newton_iters=iteration, converged=converged, objective_trace=trace)


def _check_binary(X, y) -> Tuple[np.ndarray, np.ndarray]:
    X = as_matrix(X)
    y = np.asarray(y).astype(int).ravel()
    if X.shape[0] != y.size:
        raise InputError(f"{X.shape[0]} inputs but {y.size} labels")
    if y.size and (y.min() < 0 or y.max() > 1):
        raise InputError("Laplace GP classification is binary: labels must be 0 or 1")
    return X, y


def _prior_covariance(X: np.ndarray, params: KernelParams) -> np.ndarray:
    return kernel_matrix(X, X, params) + KERNEL_JITTER * params.variance * np.eye(X.shape[0])


@dataclass
class LaplacePredictor:
    """Fitted Laplace approximation ready for prediction"""

    train_inputs: np.ndarray
    labels: np.ndarray
    params: KernelParams
    state: LaplaceState

    def predict_latent(self, X_star) -> Tuple[np.ndarray, np.ndarray]:
        """Latent predictive means and variances, each of length m"""
        X_star = as_matrix(X_star, "X_star")
        prior_var = self.params.variance
        if self.train_inputs.shape[0] == 0:
            return np.zeros(X_star.shape[0]), np.full(X_star.shape[0], prior_var)
        K_star = kernel_matrix(self.train_inputs, X_star, self.params)
        means = K_star.T @ self.state.grad_log_lik
        v = solve_triangular(self.state.L, self.state.W_sqrt[:, None] * K_star, lower=True)
        variances = prior_var - np.sum(v * v, axis=0)
        return means, np.clip(variances, 1e-12 * prior_var, prior_var)

    def predict_proba(self, X_star) -> np.ndarray:
        """p(y=1|x*) by 201-point Gauss-Hermite quadrature over the latent predictive"""
        means, variances = self.predict_latent(X_star)
        return gauss_hermite_sigmoid(means, variances)


def gauss_hermite_sigmoid(means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """∫ σ(f) N(f; μ, s²) df for each (μ, s²)"""
    f = means[:, None] + np.sqrt(2.0 * variances)[:, None] * _NODES[None, :]
    return expit(f) @ _WEIGHTS / math.sqrt(math.pi)


def laplace_gpc_fit(train: Dataset, params: KernelParams,
                    max_newton_iter: int = MAX_NEWTON_ITERATIONS) -> LaplacePredictor:
    """
    Find the posterior mode for fixed kernel parameters

    Raises:
        ModelError: Newton iteration did not reach the mode within max_newton_iter steps
    """
    X, y = _check_binary(train.X, train.y)
    if X.shape[0] == 0:
        empty = np.zeros(0)
        state = LaplaceState(mode=empty, a=empty, grad_log_lik=empty, W_sqrt=empty,
                             L=np.zeros((0, 0)), newton_iters=0, converged=True)
        return LaplacePredictor(X, y, params, state)
    state = laplace_mode(_prior_covariance(X, params), y, max_iter=max_newton_iter)
    if not state.converged:
        raise ModelError(f"Laplace mode finding did not converge in {state.newton_iters} Newton iterations "
                         f"(a²={params.variance:.4g}, l={params.lengthscale:.4g})")
    return LaplacePredictor(train_inputs=X, labels=y, params=params, state=state)


def laplace_marginal_likelihood(predictor: LaplacePredictor) -> float:
    """Approximate log evidence: log p(y|f̂) - ½ aᵀf̂ - Σ log diag L"""
    state = predictor.state
    return state.objective(predictor.labels) - float(np.sum(np.log(np.diag(state.L))))


def laplace_evidence_and_gradient(X, y, params: KernelParams) -> Tuple[float, np.ndarray]:
    """
    Laplace evidence and its gradient over (log a², log l)

    Includes the implicit dependence of the mode on the hyperparameters
    through the third derivative of the log-likelihood.
    """
    X, y = _check_binary(X, y)
    if X.shape[0] == 0:
        return 0.0, np.zeros(2)
    K_plain, dK_len = kernel_gradients(X, params)
    K = K_plain + KERNEL_JITTER * params.variance * np.eye(X.shape[0])
    state = laplace_mode(K, y)
    value = state.objective(y) - float(np.sum(np.log(np.diag(state.L))))

    pi = expit(state.mode)
    W = pi * (1.0 - pi)
    d3 = -W * (1.0 - 2.0 * pi)
    sW = state.W_sqrt
    R = sW[:, None] * cho_solve((state.L, True), np.diag(sW))
    C = solve_triangular(state.L, sW[:, None] * K, lower=True)
    s2 = 0.5 * (np.diag(K) - np.sum(C * C, axis=0)) * d3

    grad = np.empty(2)
    for j, dK in enumerate((K, dK_len)):
        s1 = 0.5 * float(state.a @ dK @ state.a) - 0.5 * float(np.sum(R * dK))
        b = dK @ state.grad_log_lik
        s3 = b - K @ (R @ b)
        grad[j] = s1 + float(s2 @ s3)
    return value, grad


def laplace_evidence_gradient(X, y, params: KernelParams) -> np.ndarray:
    _, grad = laplace_evidence_and_gradient(X, y, params)
    return grad


def optimize_laplace_hyperparams(X, y, init: Optional[KernelParams] = None, restarts: int = 3,
                                 seed: int = 0, max_iter: int = 200, gtol: float = 1e-5,
                                 n_jobs: int = 1) -> HyperparameterFit:
    """Maximize the Laplace evidence with the same restart protocol as the regression models"""
    if restarts < 1:
        raise InputError("restarts must be >= 1")
    X, y = _check_binary(X, y)
    init = init or default_init(X)
    bounds = [LOG_VARIANCE_BOUNDS, LOG_LENGTHSCALE_BOUNDS]

    def objective(theta):
        return laplace_evidence_and_gradient(X, y, KernelParams.from_array(theta))

    starts = random_starts(init.as_array(), median_heuristic(X, seed=seed), restarts, seed)
    outcome = maximize_with_restarts(objective, starts, bounds, max_iter=max_iter, gtol=gtol,
                                     n_jobs=n_jobs, label="Laplace evidence")
    params = KernelParams.from_array(outcome.theta)
    logger.info(f"Laplace GPC hyperparameters: a²={params.variance:.4g}, l={params.lengthscale:.4g} "
                f"(evidence {outcome.objective:.4f})")
    return HyperparameterFit(params=params, noise=None, objective=outcome.objective,
                             restart=outcome.restart, converged=outcome.converged)


class LaplaceGPClassifier(BaseClassifier):
    """Binary GP classifier with the Laplace approximation"""

    name = "laplace_gpc"

    def __init__(self, restarts: int = 3, seed: int = 0, n_jobs: int = 1, max_iter: int = 200):
        super().__init__(restarts=restarts, seed=seed, n_jobs=n_jobs)
        self.max_iter = max_iter
        self.predictor: Optional[LaplacePredictor] = None
        self.hyperparameter_fit: Optional[HyperparameterFit] = None

    def _fit(self, train: Dataset, calibration: Optional[Dataset],
             progress_callback: Optional[ProgressCallback]):
        if train.num_classes != 2:
            raise InputError(f"laplace_gpc supports binary problems only (got {train.num_classes} classes)")
        self._progress(progress_callback, 0, 1, "Maximizing the Laplace evidence...")
        self.hyperparameter_fit = optimize_laplace_hyperparams(
            train.X, train.y, restarts=self.restarts, seed=self.seed, max_iter=self.max_iter,
            n_jobs=self.n_jobs)
        self.predictor = laplace_gpc_fit(train, self.hyperparameter_fit.params)
        self._progress(progress_callback, 1, 1, "Done")

    def predict_latent(self, X) -> Tuple[np.ndarray, np.ndarray]:
        self._check_fitted()
        return self.predictor.predict_latent(X)

    def predict_proba(self, X) -> ClassProbabilities:
        self._check_fitted()
        p1 = np.clip(self.predictor.predict_proba(X), 0.0, 1.0)
        return ClassProbabilities(probs=np.column_stack([1.0 - p1, p1]))

    def quantile_probabilities(self, X, z: float):
        means, variances = self.predict_latent(X)
        sd = np.sqrt(variances)
        lower = expit(means - z * sd)
        upper = expit(means + z * sd)
        return np.column_stack([1.0 - lower, lower]), np.column_stack([1.0 - upper, upper])

    def hyperparameters(self) -> Dict[str, Any]:
        info: Dict[str, Any] = {}
        if self.hyperparameter_fit is not None:
            info.update(self.hyperparameter_fit.to_dict())
        if self.predictor is not None:
            info["newton_iterations"] = self.predictor.state.newton_iters
        return info
