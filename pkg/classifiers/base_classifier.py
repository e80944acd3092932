"""
Base Classifier Class
Common interface and timing for all GP-based classifiers
"""

import logging
import time
from abc import ABC, abstractmethod
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from gp_models.errors import InputError
from utils.data_io import Dataset

from .predict_calibrate import (DEFAULT_MC_SAMPLES, DEFAULT_NUM_BINS, CalibrationReport,
                                ClassProbabilities, evaluate)

ProgressCallback = Callable[[int, int, str], None]


class BaseClassifier(ABC):
    """Base class for all classifiers compared in the experiments"""

    name = "base"

    def __init__(self, restarts: int = 3, seed: int = 0, mc_samples: int = DEFAULT_MC_SAMPLES,
                 n_jobs: int = 1):
        if restarts < 1:
            raise InputError("restarts must be >= 1")
        if mc_samples < 1:
            raise InputError("mc_samples must be >= 1")
        self.restarts = restarts
        self.seed = seed
        self.mc_samples = mc_samples
        self.n_jobs = n_jobs
        self.num_classes: Optional[int] = None
        self.fit_seconds: Optional[float] = None
        self.logger = logging.getLogger(f"{__name__}.{type(self).__name__}")

    def fit(self, train: Dataset, calibration: Optional[Dataset] = None,
            progress_callback: Optional[ProgressCallback] = None) -> "BaseClassifier":
        """
        Fit on the training set; fit_seconds records the wall-clock time spent

        Args:
            train: Training dataset (standardized by the caller)
            calibration: Held-out set for post-hoc calibration, if the method uses one
            progress_callback: Optional callback(step, total_steps, status)
        """
        if train.num_points == 0:
            raise InputError("Cannot fit on an empty training set")
        self.num_classes = None
        start = time.perf_counter()
        self._fit(train, calibration, progress_callback)
        self.num_classes = train.num_classes
        self.fit_seconds = time.perf_counter() - start
        self.logger.info(f"{self.name} fitted on {train.num_points} points in {self.fit_seconds:.3f}s")
        return self

    @abstractmethod
    def _fit(self, train: Dataset, calibration: Optional[Dataset],
             progress_callback: Optional[ProgressCallback]):
        """Method-specific fitting - must be implemented by subclasses"""
        pass

    @abstractmethod
    def predict_proba(self, X) -> ClassProbabilities:
        """Class probabilities at the query inputs - must be implemented by subclasses"""
        pass

    def quantile_probabilities(self, X, z: float) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """Probabilities of the lower/upper latent-quantile classifiers (None if undefined)"""
        return None

    def hyperparameters(self) -> Dict[str, Any]:
        return {}

    def evaluate(self, test: Dataset, num_bins: int = DEFAULT_NUM_BINS) -> CalibrationReport:
        return evaluate(self.predict_proba(test.X), test.y, num_bins)

    def _check_fitted(self):
        if self.num_classes is None:
            raise InputError(f"{self.name} classifier has not been fitted")

    @staticmethod
    def _progress(callback: Optional[ProgressCallback], step: int, total: int, status: str):
        if callback:
            callback(step, total, status)
