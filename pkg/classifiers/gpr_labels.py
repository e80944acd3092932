"""
GP Regression on Labels
Least-squares baseline: one-hot targets, one learned homoskedastic noise
variance, and class probabilities from the clipped latent means or from
one-vs-rest Platt scaling fitted on a held-out calibration set
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from gp_models.dirichlet_transform import one_hot
from gp_models.errors import InputError
from gp_models.gp_exact import (HyperparameterFit, NoiseModel, PosteriorModel, fit_exact,
                                optimize_hyperparams)
from gp_models.gp_sparse import fit_sparse, optimize_sparse, select_inducing
from utils.data_io import Dataset

from .base_classifier import BaseClassifier, ProgressCallback
from .predict_calibrate import PROBABILITY_FLOOR, ClassProbabilities, platt_apply, platt_fit

INITIAL_NOISE_VARIANCE = 0.1

PlattParams = List[Tuple[float, float]]


@dataclass
class ConstantMeanPosterior(PosteriorModel):
    """Regression posterior on centered targets with the constant prior mean added back"""

    base: PosteriorModel
    offset: float

    @property
    def params(self):
        return self.base.params

    @property
    def num_classes(self) -> int:
        return self.base.num_classes

    def predict_latent(self, X_star) -> Tuple[np.ndarray, np.ndarray]:
        means, variances = self.base.predict_latent(X_star)
        return means + self.offset, variances


def gpr_labels_fit(train: Dataset, inducing: Optional[int] = None, inducing_selection: str = "kmeans",
                   restarts: int = 3, seed: int = 0, n_jobs: int = 1,
                   init_noise: float = INITIAL_NOISE_VARIANCE) -> Tuple[PosteriorModel, HyperparameterFit]:
    """
    Regress the one-hot labels with a shared learned noise variance

    Targets are centered on the constant prior mean 1/C, so far from the data
    every class reverts to 1/C and binary latents satisfy f_0 = 1 - f_1.
    Kernel parameters and the noise variance are optimized jointly on the
    summed marginal likelihood (or the collapsed bound when inducing is set).
    """
    offset = 1.0 / train.num_classes
    Y = one_hot(train.y, train.num_classes) - offset
    noise = NoiseModel.homoskedastic(init_noise)
    if inducing is None:
        fit = optimize_hyperparams(train.X, Y, noise, restarts=restarts, seed=seed, n_jobs=n_jobs)
        return ConstantMeanPosterior(fit_exact(train.X, Y, fit.params, fit.noise), offset), fit
    Z = select_inducing(train.X, min(inducing, train.num_points), inducing_selection, seed)
    fit = optimize_sparse(train.X, Z, Y, noise, restarts=restarts, seed=seed, n_jobs=n_jobs)
    return ConstantMeanPosterior(fit_sparse(train.X, Z, Y, fit.params, fit.noise), offset), fit


def platt_calibrate(model: PosteriorModel, calibration: Dataset) -> PlattParams:
    """One-vs-rest (a, b) per class on the calibration set's latent means"""
    if calibration is None or calibration.num_points == 0:
        raise InputError("Platt scaling needs a non-empty calibration set")
    means, _ = model.predict_latent(calibration.X)
    return [platt_fit(means[:, c], (calibration.y == c).astype(int)) for c in range(means.shape[1])]


def gpr_labels_predict(model: PosteriorModel, X_star, platt: Optional[PlattParams] = None) -> ClassProbabilities:
    """
    Class probabilities from latent means

    Without Platt parameters the means are clipped to [1e-12, 1 - 1e-12]
    and renormalized; with them every class gets σ(a·mean + b), renormalized.
    """
    means, _ = model.predict_latent(X_star)
    if platt is None:
        scores = np.clip(means, PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
    else:
        if len(platt) != means.shape[1]:
            raise InputError(f"{len(platt)} Platt maps for {means.shape[1]} classes")
        scores = np.column_stack([platt_apply(means[:, c], a, b) for c, (a, b) in enumerate(platt)])
        scores = np.maximum(scores, PROBABILITY_FLOOR)
    return ClassProbabilities(probs=scores / scores.sum(axis=1, keepdims=True))


class LeastSquaresGPClassifier(BaseClassifier):
    """GP regression on one-hot labels, optionally Platt-calibrated"""

    def __init__(self, platt: bool = False, inducing: Optional[int] = None,
                 inducing_selection: str = "kmeans", restarts: int = 3, seed: int = 0,
                 n_jobs: int = 1, init_noise: float = INITIAL_NOISE_VARIANCE):
        super().__init__(restarts=restarts, seed=seed, n_jobs=n_jobs)
        self.platt = platt
        self.name = "gpr_platt" if platt else "gpr"
        if inducing is not None and inducing < 1:
            raise InputError("inducing must be a positive integer or None for the exact GP")
        self.inducing = inducing
        self.inducing_selection = inducing_selection
        self.init_noise = init_noise
        self.posterior: Optional[PosteriorModel] = None
        self.hyperparameter_fit: Optional[HyperparameterFit] = None
        self.platt_params: Optional[PlattParams] = None

    def _fit(self, train: Dataset, calibration: Optional[Dataset],
             progress_callback: Optional[ProgressCallback]):
        if self.platt and (calibration is None or calibration.num_points == 0):
            raise InputError("gpr_platt needs a calibration set (calibration_fraction > 0)")
        total = 2 if self.platt else 1
        self._progress(progress_callback, 0, total, "Fitting GP regression on one-hot labels...")
        self.posterior, self.hyperparameter_fit = gpr_labels_fit(
            train, self.inducing, self.inducing_selection, self.restarts, self.seed, self.n_jobs,
            self.init_noise)
        if self.platt:
            self._progress(progress_callback, 1, total, "Platt scaling on the calibration set...")
            self.platt_params = platt_calibrate(self.posterior, calibration)
        self._progress(progress_callback, total, total, "Done")

    def predict_latent(self, X) -> Tuple[np.ndarray, np.ndarray]:
        self._check_fitted()
        return self.posterior.predict_latent(X)

    def predict_proba(self, X) -> ClassProbabilities:
        self._check_fitted()
        return gpr_labels_predict(self.posterior, X, self.platt_params)

    def hyperparameters(self) -> Dict[str, Any]:
        info: Dict[str, Any] = {}
        if self.hyperparameter_fit is not None:
            info.update(self.hyperparameter_fit.to_dict())
        if self.platt_params is not None:
            info["platt"] = [{"a": a, "b": b} for a, b in self.platt_params]
        info["inducing"] = self.inducing
        return info
