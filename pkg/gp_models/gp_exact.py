"""
Exact GP Regression
Per-class posterior factorization, latent prediction, log marginal likelihood,
its gradient, and hyperparameter optimization. Handles both the heteroskedastic
noise of the Dirichlet transform and a learned homoskedastic noise.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from .dirichlet_transform import TransformedTargets
from .errors import InputError, NumericalError
from .kernels import KernelParams, as_matrix, kernel_gradients, kernel_matrix, median_heuristic
from .optimization import (LOG_LENGTHSCALE_BOUNDS, LOG_NOISE_BOUNDS, LOG_VARIANCE_BOUNDS,
                           maximize_with_restarts, random_starts)

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
JITTER_LADDER = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


@dataclass
class NoiseModel:
    """Gaussian observation noise: fixed per-point variances or one learned variance"""

    kind: str
    variances: Optional[np.ndarray] = None
    log_noise_variance: Optional[float] = None

    def __post_init__(self):
        if self.kind == "heteroskedastic":
            v = np.asarray(self.variances, dtype=float)
            if v.ndim == 1:
                v = v[:, None]
            if v.size and (not np.all(np.isfinite(v)) or np.any(v <= 0)):
                raise InputError("Heteroskedastic noise variances must be positive and finite")
            self.variances = v
        elif self.kind == "homoskedastic":
            if self.log_noise_variance is None or not math.isfinite(self.log_noise_variance):
                raise InputError("Homoskedastic noise needs a finite log_noise_variance")
        else:
            raise InputError(f"Unknown noise kind: {self.kind}")

    @classmethod
    def heteroskedastic(cls, variances) -> "NoiseModel":
        return cls(kind="heteroskedastic", variances=variances)

    @classmethod
    def homoskedastic(cls, noise_variance: float) -> "NoiseModel":
        if noise_variance <= 0:
            raise InputError("Noise variance must be positive")
        return cls(kind="homoskedastic", log_noise_variance=math.log(noise_variance))

    @property
    def is_homoskedastic(self) -> bool:
        return self.kind == "homoskedastic"

    @property
    def noise_variance(self) -> float:
        return math.exp(self.log_noise_variance)

    def column(self, c: int, n: int) -> np.ndarray:
        """Noise variances of class c's latent process"""
        if self.is_homoskedastic:
            return np.full(n, self.noise_variance)
        if self.variances.shape[0] != n:
            raise InputError(f"Noise has {self.variances.shape[0]} rows, expected {n}")
        return self.variances[:, c if self.variances.shape[1] > 1 else 0]

    def with_log_noise(self, log_noise_variance: float) -> "NoiseModel":
        return NoiseModel(kind="homoskedastic", log_noise_variance=float(log_noise_variance))

    def to_dict(self) -> dict:
        if self.is_homoskedastic:
            return {"kind": self.kind, "noise_variance": self.noise_variance}
        return {"kind": self.kind, "distinct_variances": sorted(set(np.round(self.variances.ravel(), 12)))}


@dataclass
class HyperparameterFit:
    """Outcome of marginal-likelihood (or bound) maximization"""

    params: KernelParams
    noise: Optional[NoiseModel]
    objective: float
    restart: int
    converged: bool

    def to_dict(self) -> dict:
        info = self.params.to_dict()
        if self.noise is not None and self.noise.is_homoskedastic:
            info["noise_variance"] = self.noise.noise_variance
        info["objective"] = self.objective
        return info


def jittered_cholesky(A: np.ndarray, scale: float, base_jitter: float = 0.0) -> Tuple[np.ndarray, float]:
    """
    Lower Cholesky factor, escalating diagonal jitter on failure

    Tries base_jitter first, then 1e-8 .. 1e-4 times scale in decade steps.

    Raises:
        NumericalError: factorization failed at every jitter level
    """
    n = A.shape[0]
    ladder = [base_jitter] + [j * scale for j in JITTER_LADDER if j * scale > base_jitter]
    for jitter in ladder:
        try:
            L = cholesky(A + jitter * np.eye(n), lower=True)
        except (LinAlgError, ValueError):
            continue
        if jitter > base_jitter:
            logger.warning(f"Cholesky needed jitter {jitter:.1e} on a {n}x{n} matrix")
        return L, jitter
    try:
        condition = float(np.linalg.cond(A))
    except LinAlgError:
        condition = float("inf")
    raise NumericalError(f"Cholesky factorization of a {n}x{n} matrix failed",
                         condition=condition, jitter=ladder[-1])


class PosteriorModel(ABC):
    """Fitted per-class GP posterior supporting latent prediction"""

    params: KernelParams
    num_classes: int

    @abstractmethod
    def predict_latent(self, X_star) -> Tuple[np.ndarray, np.ndarray]:
        """Posterior marginal means and variances, each m x C"""
        pass


@dataclass
class ExactPosterior(PosteriorModel):
    """Exact GP posterior with one Cholesky factor per distinct noise column"""

    train_inputs: np.ndarray
    params: KernelParams
    noise: NoiseModel
    chol: List[np.ndarray]
    alpha_solve: np.ndarray
    num_classes: int
    jitter: List[float] = field(default_factory=list)

    def predict_latent(self, X_star) -> Tuple[np.ndarray, np.ndarray]:
        X_star = as_matrix(X_star, "X_star")
        m, C = X_star.shape[0], self.num_classes
        prior_var = self.params.variance
        if self.train_inputs.shape[0] == 0:
            return np.zeros((m, C)), np.full((m, C), prior_var)
        if X_star.shape[1] != self.train_inputs.shape[1]:
            raise InputError(f"Expected {self.train_inputs.shape[1]} features, got {X_star.shape[1]}")

        K_star = kernel_matrix(X_star, self.train_inputs, self.params)
        means = K_star @ self.alpha_solve
        variances = np.empty((m, C))
        reduction = {}
        for c in range(C):
            key = id(self.chol[c])
            if key not in reduction:
                v = solve_triangular(self.chol[c], K_star.T, lower=True)
                reduction[key] = np.sum(v * v, axis=0)
            variances[:, c] = prior_var - reduction[key]
        return means, np.clip(variances, 1e-12 * prior_var, prior_var)


def resolve_targets(targets: Union[TransformedTargets, np.ndarray],
                    noise: Optional[NoiseModel]) -> Tuple[np.ndarray, NoiseModel]:
    """Split targets into an n x C matrix and the matching noise model"""
    if isinstance(targets, TransformedTargets):
        return targets.y_tilde, noise or NoiseModel.heteroskedastic(targets.sigma2_tilde)
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if noise is None:
        raise InputError("Real-valued targets need an explicit NoiseModel")
    return Y, noise


def _factorize(K: np.ndarray, Y: np.ndarray, noise: NoiseModel, params: KernelParams):
    n, C = Y.shape
    chols, jitters = [], []
    alpha = np.empty((n, C))
    if noise.is_homoskedastic:
        L, jitter = jittered_cholesky(K + noise.noise_variance * np.eye(n), params.variance)
        chols, jitters = [L] * C, [jitter] * C
        alpha[:] = cho_solve((L, True), Y)
        return chols, jitters, alpha
    for c in range(C):
        L, jitter = jittered_cholesky(K + np.diag(noise.column(c, n)), params.variance)
        chols.append(L)
        jitters.append(jitter)
        alpha[:, c] = cho_solve((L, True), Y[:, c])
    return chols, jitters, alpha


def _validate(X, Y: np.ndarray) -> np.ndarray:
    X = as_matrix(X)
    if X.shape[0] != Y.shape[0]:
        raise InputError(f"{X.shape[0]} inputs but {Y.shape[0]} targets")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise InputError("Inputs and targets must be finite")
    return X


def fit_exact(X, targets, params: KernelParams, noise: Optional[NoiseModel] = None) -> ExactPosterior:
    """
    Factorize K + diag(noise_c) for every class and solve against its targets

    Args:
        X: n x d training inputs (n = 0 gives the prior)
        targets: TransformedTargets, or an n x C matrix together with noise
        params: Kernel hyperparameters shared by all classes
        noise: Required for plain targets; overrides the transform's noise otherwise
    """
    Y, noise = resolve_targets(targets, noise)
    X = _validate(X, Y)
    C = Y.shape[1]
    if X.shape[0] == 0:
        return ExactPosterior(X, params, noise, [], np.zeros((0, C)), C)
    K = kernel_matrix(X, X, params)
    chols, jitters, alpha = _factorize(K, Y, noise, params)
    return ExactPosterior(train_inputs=X, params=params, noise=noise, chol=chols,
                          alpha_solve=alpha, num_classes=C, jitter=jitters)


def predict_latent(model: PosteriorModel, X_star) -> Tuple[np.ndarray, np.ndarray]:
    return model.predict_latent(X_star)


def lml_and_gradient(X, Y: np.ndarray, noise: NoiseModel, params: KernelParams,
                     with_gradient: bool = True) -> Tuple[float, Optional[np.ndarray]]:
    """
    Summed log marginal likelihood over classes and its gradient

    The gradient is over (log a², log l) plus log σ_n² for homoskedastic noise.
    """
    X = _validate(X, Y)
    n, C = Y.shape
    dK_var, dK_len = kernel_gradients(X, params)
    K = dK_var
    chols, _, alpha = _factorize(K, Y, noise, params)

    value = 0.0
    for c in range(C):
        value += (-0.5 * float(Y[:, c] @ alpha[:, c])
                  - float(np.sum(np.log(np.diag(chols[c]))))
                  - 0.5 * n * LOG_2PI)
    if not with_gradient:
        return value, None

    grad = np.zeros(3 if noise.is_homoskedastic else 2)
    inverses = {}
    for c in range(C):
        key = id(chols[c])
        if key not in inverses:
            inverses[key] = cho_solve((chols[c], True), np.eye(n))
        W = np.outer(alpha[:, c], alpha[:, c]) - inverses[key]
        grad[0] += 0.5 * np.sum(W * dK_var)
        grad[1] += 0.5 * np.sum(W * dK_len)
        if noise.is_homoskedastic:
            grad[2] += 0.5 * noise.noise_variance * np.trace(W)
    return value, grad


def log_marginal_likelihood(X, targets, noise: Optional[NoiseModel], params: KernelParams) -> float:
    Y, noise = resolve_targets(targets, noise)
    value, _ = lml_and_gradient(X, Y, noise, params, with_gradient=False)
    return value


def lml_gradient(X, targets, noise: Optional[NoiseModel], params: KernelParams) -> np.ndarray:
    Y, noise = resolve_targets(targets, noise)
    _, grad = lml_and_gradient(X, Y, noise, params)
    return grad


def theta_layout(params: KernelParams, noise: NoiseModel):
    """Optimizer vector and bounds for the given parameterization"""
    theta = list(params.as_array())
    bounds = [LOG_VARIANCE_BOUNDS, LOG_LENGTHSCALE_BOUNDS]
    if noise.is_homoskedastic:
        theta.append(noise.log_noise_variance)
        bounds.append(LOG_NOISE_BOUNDS)
    return np.array(theta), bounds


def unpack_theta(theta: np.ndarray, noise: NoiseModel) -> Tuple[KernelParams, NoiseModel]:
    params = KernelParams.from_array(theta)
    if noise.is_homoskedastic:
        noise = noise.with_log_noise(theta[2])
    return params, noise


def default_init(X) -> KernelParams:
    """Unit variance with the median-heuristic length-scale"""
    return KernelParams(0.0, math.log(median_heuristic(X)))


def optimize_hyperparams(X, targets, noise: Optional[NoiseModel] = None,
                         init: Optional[KernelParams] = None, restarts: int = 3, seed: int = 0,
                         max_iter: int = 200, gtol: float = 1e-5, n_jobs: int = 1) -> HyperparameterFit:
    """
    Maximize the summed log marginal likelihood over shared kernel parameters

    Args:
        X: n x d training inputs
        targets: TransformedTargets or an n x C matrix
        noise: Noise model; a homoskedastic variance is optimized jointly
        init: First starting point (median heuristic when omitted)
        restarts: Number of starts, the first being init
        seed: Seed for the log-uniform restart draws

    Returns:
        HyperparameterFit with the best parameters over all restarts
    """
    if restarts < 1:
        raise InputError("restarts must be >= 1")
    Y, noise = resolve_targets(targets, noise)
    X = _validate(X, Y)
    init = init or default_init(X)
    theta0, bounds = theta_layout(init, noise)

    def objective(theta):
        params, trial_noise = unpack_theta(theta, noise)
        return lml_and_gradient(X, Y, trial_noise, params)

    starts = random_starts(theta0, median_heuristic(X, seed=seed), restarts, seed)
    outcome = maximize_with_restarts(objective, starts, bounds, max_iter=max_iter, gtol=gtol,
                                     n_jobs=n_jobs, label="exact LML")
    params, noise = unpack_theta(outcome.theta, noise)
    logger.info(f"Exact GP hyperparameters: a²={params.variance:.4g}, l={params.lengthscale:.4g}"
                + (f", σ_n²={noise.noise_variance:.4g}" if noise.is_homoskedastic else "")
                + f" (LML {outcome.objective:.4f}, restart {outcome.restart})")
    return HyperparameterFit(params=params, noise=noise, objective=outcome.objective,
                             restart=outcome.restart, converged=outcome.converged)
