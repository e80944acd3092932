"""
Sparse GP Regression
Collapsed variational bound with diagonal (per-point) noise, the matching
optimal q(u) posterior, and inducing-point selection by k-means or uniform
sampling. Inducing locations stay fixed once selected.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from sklearn.cluster import KMeans

from .errors import InputError
from .gp_exact import (LOG_2PI, HyperparameterFit, NoiseModel, PosteriorModel, default_init,
                       jittered_cholesky, resolve_targets, theta_layout, unpack_theta)
from .kernels import (KernelParams, as_matrix, cross_kernel_gradients, kernel_matrix,
                      median_heuristic)
from .optimization import maximize_with_restarts, random_starts

logger = logging.getLogger(__name__)

KMEANS_MAX_ITER = 50
KMEANS_TOL = 1e-6


@dataclass
class InducingSet:
    """Inducing inputs Z and how they were chosen"""

    Z: np.ndarray
    selection: str = "explicit"
    seed: Optional[int] = None

    def __post_init__(self):
        self.Z = as_matrix(self.Z, "Z")
        if self.Z.shape[0] < 1:
            raise InputError("At least one inducing point is required")
        if self.selection not in ("kmeans", "uniform", "explicit"):
            raise InputError(f"Unknown inducing selection: {self.selection}")

    @property
    def size(self) -> int:
        return self.Z.shape[0]


def _separate_duplicates(Z: np.ndarray, X: np.ndarray, seed: int) -> np.ndarray:
    """Perturb repeated rows by 1e-6 times the per-feature scale"""
    _, first = np.unique(Z, axis=0, return_index=True)
    if first.size == Z.shape[0]:
        return Z
    scale = np.std(X, axis=0)
    scale[scale == 0] = 1.0
    rng = np.random.default_rng([seed, 1])
    duplicate = np.ones(Z.shape[0], dtype=bool)
    duplicate[first] = False
    Z = Z.copy()
    Z[duplicate] += 1e-6 * scale * rng.standard_normal((int(duplicate.sum()), Z.shape[1]))
    logger.warning(f"Perturbed {int(duplicate.sum())} duplicate inducing points")
    return Z


def kmeans_inducing(X, m: int, seed: int = 0) -> InducingSet:
    """
    k-means++ seeded Lloyd iterations on the training inputs

    Empty clusters are relocated to far-away points by scikit-learn's
    Lloyd implementation. KMEANS_TOL is handed to scikit-learn as is, which
    multiplies it by the mean per-feature variance of X and compares it with
    the squared Frobenius norm of the centroid shift; it is not an absolute
    bound on how far any centroid moves.
    """
    X = as_matrix(X)
    n = X.shape[0]
    if not 1 <= m <= n:
        raise InputError(f"Need 1 <= m <= n, got m={m}, n={n}")
    km = KMeans(n_clusters=m, init="k-means++", n_init=1, max_iter=KMEANS_MAX_ITER,
                tol=KMEANS_TOL, random_state=seed)
    km.fit(X)
    Z = _separate_duplicates(np.asarray(km.cluster_centers_, dtype=float), X, seed)
    return InducingSet(Z=Z, selection="kmeans", seed=seed)


def uniform_inducing(X, m: int, seed: int = 0) -> InducingSet:
    """Training inputs sampled uniformly without replacement"""
    X = as_matrix(X)
    n = X.shape[0]
    if not 1 <= m <= n:
        raise InputError(f"Need 1 <= m <= n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    Z = X[np.sort(rng.choice(n, m, replace=False))]
    return InducingSet(Z=_separate_duplicates(Z, X, seed), selection="uniform", seed=seed)


def select_inducing(X, m: int, selection: str = "kmeans", seed: int = 0) -> InducingSet:
    if selection == "kmeans":
        return kmeans_inducing(X, m, seed)
    if selection == "uniform":
        return uniform_inducing(X, m, seed)
    raise InputError(f"Unknown inducing selection: {selection}")


def _inducing_inputs(Z) -> np.ndarray:
    return Z.Z if isinstance(Z, InducingSet) else as_matrix(Z, "Z")


@dataclass
class _SharedTerms:
    """Kernel quantities common to every class"""

    Luu: np.ndarray
    A: np.ndarray
    kdiag: np.ndarray
    Kuf: np.ndarray
    Kuu: np.ndarray
    dKuf_len: np.ndarray
    dKuu_len: np.ndarray


def _shared_terms(X: np.ndarray, Z: np.ndarray, params: KernelParams) -> _SharedTerms:
    Kuu, _, dKuu_len = cross_kernel_gradients(Z, Z, params)
    Kuf, _, dKuf_len = cross_kernel_gradients(Z, X, params)
    # jitter is only added when the plain factorization fails; it scales with a²
    Luu, jitter = jittered_cholesky(Kuu, params.variance)
    Kuu = Kuu + jitter * np.eye(Z.shape[0])
    A = solve_triangular(Luu, Kuf, lower=True)
    return _SharedTerms(Luu=Luu, A=A, kdiag=np.full(X.shape[0], params.variance),
                        Kuf=Kuf, Kuu=Kuu, dKuf_len=dKuf_len, dKuu_len=dKuu_len)


def _class_terms(shared: _SharedTerms, y: np.ndarray, s: np.ndarray, params: KernelParams):
    """Bound for one latent process with noise variances s, plus reusable pieces"""
    n = y.shape[0]
    m = shared.A.shape[0]
    inv_s = 1.0 / s
    A_s = shared.A * inv_s
    B = np.eye(m) + A_s @ shared.A.T
    LB, _ = jittered_cholesky(B, 1.0)
    Ay = A_s @ y
    c = solve_triangular(LB, Ay, lower=True)
    q_diag = np.sum(shared.A ** 2, axis=0)
    bound = (-0.5 * n * LOG_2PI
             - 0.5 * float(np.sum(np.log(s)))
             - float(np.sum(np.log(np.diag(LB))))
             - 0.5 * float(y @ (inv_s * y) - c @ c)
             - 0.5 * float(np.sum(inv_s * (shared.kdiag - q_diag))))
    return bound, LB, c, inv_s, A_s, B, q_diag


def sparse_bound_and_gradient(X, Z, Y: np.ndarray, noise: NoiseModel, params: KernelParams,
                              with_gradient: bool = True) -> Tuple[float, Optional[np.ndarray]]:
    """
    Collapsed lower bound summed over classes, and its gradient

    Per class: log N(y | 0, Q + Σ) - tr(Σ⁻¹(K - Q)) / 2 with Q = K_fu K_uu⁻¹ K_uf.
    The gradient covers (log a², log l) and log σ_n² for homoskedastic noise.
    """
    X = as_matrix(X)
    Z = _inducing_inputs(Z)
    if X.shape[1] != Z.shape[1]:
        raise InputError(f"X has {X.shape[1]} features but Z has {Z.shape[1]}")
    if X.shape[0] != Y.shape[0]:
        raise InputError(f"{X.shape[0]} inputs but {Y.shape[0]} targets")
    n, C = Y.shape
    m = Z.shape[0]
    shared = _shared_terms(X, Z, params)
    grad = np.zeros(3 if noise.is_homoskedastic else 2)
    total = 0.0

    for k in range(C):
        s = noise.column(k, n)
        y = Y[:, k]
        bound, LB, c, inv_s, A_s, B, q_diag = _class_terms(shared, y, s, params)
        total += bound
        if not with_gradient:
            continue

        B_inv = cho_solve((LB, True), np.eye(m))
        # g = (Q + Σ)⁻¹ y via Woodbury
        g = inv_s * (y - shared.A.T @ solve_triangular(LB, c, lower=True, trans="T"))
        Ag = shared.A @ g

        # dF/dK_uf and dF/dK_uu
        inner_u = np.outer(Ag, g) + (np.eye(m) - B_inv) @ A_s
        dF_dKuf = solve_triangular(shared.Luu, inner_u, lower=True, trans="T")
        inner_uu = np.outer(Ag, Ag) + B - 2.0 * np.eye(m) + B_inv
        left = solve_triangular(shared.Luu, inner_uu, lower=True, trans="T")
        dF_dKuu = -0.5 * solve_triangular(shared.Luu, left.T, lower=True, trans="T").T

        grad[0] += (np.sum(dF_dKuf * shared.Kuf) + np.sum(dF_dKuu * shared.Kuu)
                    - 0.5 * np.sum(inv_s * shared.kdiag))
        grad[1] += np.sum(dF_dKuf * shared.dKuf_len) + np.sum(dF_dKuu * shared.dKuu_len)

        if noise.is_homoskedastic:
            G_diag = inv_s - inv_s ** 2 * np.sum(shared.A * (B_inv @ shared.A), axis=0)
            dF_ds = 0.5 * (g ** 2 - G_diag + (shared.kdiag - q_diag) * inv_s ** 2)
            grad[2] += noise.noise_variance * np.sum(dF_ds)

    return total, (grad if with_gradient else None)


def sparse_bound(X, Z, targets, params: KernelParams, noise: Optional[NoiseModel] = None) -> float:
    Y, noise = resolve_targets(targets, noise)
    value, _ = sparse_bound_and_gradient(X, Z, Y, noise, params, with_gradient=False)
    return value


def sparse_bound_gradient(X, Z, targets, params: KernelParams, noise: Optional[NoiseModel] = None) -> np.ndarray:
    Y, noise = resolve_targets(targets, noise)
    _, grad = sparse_bound_and_gradient(X, Z, Y, noise, params)
    return grad


@dataclass
class SparsePosterior(PosteriorModel):
    """Optimal variational posterior over inducing outputs, one per class"""

    inducing: np.ndarray
    params: KernelParams
    noise: NoiseModel
    Luu: np.ndarray
    LB: List[np.ndarray]
    c: List[np.ndarray]
    q_mu: np.ndarray
    q_cov: List[np.ndarray]
    num_classes: int
    bound: float = field(default=float("nan"))

    def predict_latent(self, X_star) -> Tuple[np.ndarray, np.ndarray]:
        X_star = as_matrix(X_star, "X_star")
        if X_star.shape[1] != self.inducing.shape[1]:
            raise InputError(f"Expected {self.inducing.shape[1]} features, got {X_star.shape[1]}")
        prior_var = self.params.variance
        K_us = kernel_matrix(self.inducing, X_star, self.params)
        tmp1 = solve_triangular(self.Luu, K_us, lower=True)
        base = prior_var - np.sum(tmp1 ** 2, axis=0)
        m_star = X_star.shape[0]
        means = np.empty((m_star, self.num_classes))
        variances = np.empty((m_star, self.num_classes))
        for k in range(self.num_classes):
            tmp2 = solve_triangular(self.LB[k], tmp1, lower=True)
            means[:, k] = tmp2.T @ self.c[k]
            variances[:, k] = base + np.sum(tmp2 ** 2, axis=0)
        return means, np.clip(variances, 1e-12 * prior_var, prior_var)


def fit_sparse(X, Z, targets, params: KernelParams, noise: Optional[NoiseModel] = None) -> SparsePosterior:
    """
    Closed-form optimal q(u) = N(q_mu, q_cov) for every class

    q_mu = K_uu R⁻¹ K_uf Σ⁻¹ y and q_cov = K_uu R⁻¹ K_uu with
    R = K_uu + K_uf Σ⁻¹ K_fu.
    """
    Y, noise = resolve_targets(targets, noise)
    X = as_matrix(X)
    Zm = _inducing_inputs(Z)
    if X.shape[0] != Y.shape[0]:
        raise InputError(f"{X.shape[0]} inputs but {Y.shape[0]} targets")
    if X.shape[1] != Zm.shape[1]:
        raise InputError(f"X has {X.shape[1]} features but Z has {Zm.shape[1]}")
    n, C = Y.shape
    shared = _shared_terms(X, Zm, params)
    LB_list, c_list, q_cov = [], [], []
    q_mu = np.empty((Zm.shape[0], C))
    total = 0.0
    for k in range(C):
        bound, LB, c, _, _, _, _ = _class_terms(shared, Y[:, k], noise.column(k, n), params)
        total += bound
        LB_list.append(LB)
        c_list.append(c)
        # K_uu R⁻¹ K_uu = Luu B⁻¹ Luuᵀ
        W = solve_triangular(LB, shared.Luu.T, lower=True)
        q_cov.append(W.T @ W)
        q_mu[:, k] = shared.Luu @ solve_triangular(LB, c, lower=True, trans="T")
    return SparsePosterior(inducing=Zm, params=params, noise=noise, Luu=shared.Luu, LB=LB_list,
                           c=c_list, q_mu=q_mu, q_cov=q_cov, num_classes=C, bound=total)


def optimize_sparse(X, Z, targets, noise: Optional[NoiseModel] = None,
                    init: Optional[KernelParams] = None, restarts: int = 3, seed: int = 0,
                    max_iter: int = 200, gtol: float = 1e-5, n_jobs: int = 1) -> HyperparameterFit:
    """Same protocol as optimize_hyperparams, maximizing the collapsed bound with Z fixed"""
    if restarts < 1:
        raise InputError("restarts must be >= 1")
    Y, noise = resolve_targets(targets, noise)
    X = as_matrix(X)
    Zm = _inducing_inputs(Z)
    init = init or default_init(X)
    theta0, bounds = theta_layout(init, noise)

    def objective(theta):
        params, trial_noise = unpack_theta(theta, noise)
        return sparse_bound_and_gradient(X, Zm, Y, trial_noise, params)

    starts = random_starts(theta0, median_heuristic(X, seed=seed), restarts, seed)
    outcome = maximize_with_restarts(objective, starts, bounds, max_iter=max_iter, gtol=gtol,
                                     n_jobs=n_jobs, label="sparse bound")
    params, noise = unpack_theta(outcome.theta, noise)
    logger.info(f"Sparse GP hyperparameters (m={Zm.shape[0]}): a²={params.variance:.4g}, "
                f"l={params.lengthscale:.4g} (bound {outcome.objective:.4f})")
    return HyperparameterFit(params=params, noise=noise, objective=outcome.objective,
                             restart=outcome.restart, converged=outcome.converged)
