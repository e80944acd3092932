"""
Dirichlet-based GP Classifier
Regression on Dirichlet-transformed labels with heteroskedastic noise, exact
or with inducing points, and Monte-Carlo softmax class probabilities
"""

from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from gp_models.dirichlet_transform import (DEFAULT_ALPHA_GRID, AlphaEpsilon, one_hot,
                                           select_alpha_eps, transform)
from gp_models.errors import InputError
from gp_models.gp_exact import HyperparameterFit, PosteriorModel, fit_exact, optimize_hyperparams
from gp_models.gp_sparse import fit_sparse, optimize_sparse, select_inducing
from utils.data_io import Dataset

from .base_classifier import BaseClassifier, ProgressCallback
from .predict_calibrate import (DEFAULT_MC_SAMPLES, ClassProbabilities, latent_quantile_probabilities,
                                mnll, softmax_expectation)


def _as_alpha(value: Union[float, AlphaEpsilon]) -> AlphaEpsilon:
    return value if isinstance(value, AlphaEpsilon) else AlphaEpsilon(float(value))


class DirichletGPClassifier(BaseClassifier):
    """GP classification through Dirichlet label transformation"""

    name = "gpd"

    def __init__(self, alpha_eps: Union[float, str, AlphaEpsilon] = "auto",
                 alpha_grid: Optional[Sequence[float]] = None,
                 inducing: Optional[int] = None, inducing_selection: str = "kmeans",
                 restarts: int = 3, seed: int = 0, mc_samples: int = DEFAULT_MC_SAMPLES,
                 n_jobs: int = 1, mc_seed: Optional[int] = None):
        super().__init__(restarts=restarts, seed=seed, mc_samples=mc_samples, n_jobs=n_jobs)
        if isinstance(alpha_eps, str) and alpha_eps != "auto":
            raise InputError(f"alpha_eps must be a number or 'auto', got '{alpha_eps}'")
        self.auto_alpha = alpha_eps == "auto"
        self.alpha_eps: Optional[AlphaEpsilon] = None if self.auto_alpha else _as_alpha(alpha_eps)
        self.alpha_grid = [AlphaEpsilon(v) for v in (alpha_grid or DEFAULT_ALPHA_GRID)]
        if inducing is not None and inducing < 1:
            raise InputError("inducing must be a positive integer or None for the exact GP")
        self.inducing = inducing
        self.inducing_selection = inducing_selection
        self.mc_seed = seed if mc_seed is None else mc_seed
        self.posterior: Optional[PosteriorModel] = None
        self.hyperparameter_fit: Optional[HyperparameterFit] = None
        self.alpha_scores: Dict[float, float] = {}

    def _fit(self, train: Dataset, calibration: Optional[Dataset],
             progress_callback: Optional[ProgressCallback]):
        if train.num_classes < 2:
            raise InputError("Dirichlet classification needs at least two classes")
        if self.auto_alpha:
            self._progress(progress_callback, 0, 2, "Selecting alpha_eps by training MNLL...")
            self.alpha_eps = self.select_alpha(train)
        self._progress(progress_callback, 1, 2, f"Fitting GP regression (alpha_eps={self.alpha_eps.value:g})...")
        self._fit_fixed(train, self.alpha_eps)
        self._progress(progress_callback, 2, 2, "Done")

    def _fit_fixed(self, train: Dataset, alpha: AlphaEpsilon):
        self.num_classes = train.num_classes
        targets = transform(one_hot(train.y, train.num_classes), alpha)
        if self.inducing is None:
            self.hyperparameter_fit = optimize_hyperparams(train.X, targets, restarts=self.restarts,
                                                           seed=self.seed, n_jobs=self.n_jobs)
            self.posterior = fit_exact(train.X, targets, self.hyperparameter_fit.params)
        else:
            m = min(self.inducing, train.num_points)
            Z = select_inducing(train.X, m, self.inducing_selection, self.seed)
            self.hyperparameter_fit = optimize_sparse(train.X, Z, targets, restarts=self.restarts,
                                                      seed=self.seed, n_jobs=self.n_jobs)
            self.posterior = fit_sparse(train.X, Z, targets, self.hyperparameter_fit.params)

    def select_alpha(self, train: Dataset) -> AlphaEpsilon:
        """Full refit per grid value; keeps the lowest training MNLL"""
        def fit_and_score(data: Dataset, alpha: AlphaEpsilon, index: int) -> float:
            candidate = DirichletGPClassifier(
                alpha_eps=alpha, inducing=self.inducing, inducing_selection=self.inducing_selection,
                restarts=self.restarts, seed=self.seed, mc_samples=self.mc_samples,
                mc_seed=int(np.random.SeedSequence([self.mc_seed, index]).generate_state(1)[0]))
            candidate._fit_fixed(data, alpha)
            score = mnll(candidate.predict_proba(data.X), data.y)
            self.alpha_scores[alpha.value] = score
            return score

        return select_alpha_eps(train, self.alpha_grid, fit_and_score, n_jobs=self.n_jobs)

    def predict_latent(self, X) -> Tuple[np.ndarray, np.ndarray]:
        self._check_fitted()
        return self.posterior.predict_latent(X)

    def predict_proba(self, X) -> ClassProbabilities:
        means, variances = self.predict_latent(X)
        return softmax_expectation(means, variances, self.mc_samples, self.mc_seed)

    def quantile_probabilities(self, X, z: float):
        if self.num_classes != 2:
            return None
        means, variances = self.predict_latent(X)
        return latent_quantile_probabilities(means, variances, z)

    def hyperparameters(self) -> Dict[str, Any]:
        info: Dict[str, Any] = {}
        if self.hyperparameter_fit is not None:
            info.update(self.hyperparameter_fit.to_dict())
        info["alpha_eps"] = None if self.alpha_eps is None else self.alpha_eps.value
        info["inducing"] = self.inducing
        return info
