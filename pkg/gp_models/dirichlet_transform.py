"""
Dirichlet Label Transform
Turns one-hot labels into log-normal regression targets with heteroskedastic
noise by moment matching Gamma(α, 1) marginals of a Dirichlet
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, List, Optional, Sequence

import numpy as np

from .errors import InputError, ModelError

logger = logging.getLogger(__name__)

DEFAULT_ALPHA_GRID = (0.1, 0.01, 0.001)


@dataclass(frozen=True)
class AlphaEpsilon:
    """Dirichlet pseudo-count added to every class count (0 < value < 1)"""

    value: float

    def __post_init__(self):
        if not (0.0 < self.value < 1.0) or not math.isfinite(self.value):
            raise InputError(f"alpha_eps must lie in (0, 1), got {self.value}")


@dataclass
class TransformedTargets:
    """Latent log-space targets and per-observation noise variances, one column per class"""

    y_tilde: np.ndarray
    sigma2_tilde: np.ndarray
    alpha_eps: AlphaEpsilon
    num_classes: int

    @property
    def num_points(self) -> int:
        return self.y_tilde.shape[0]


def one_hot(labels, num_classes: int) -> np.ndarray:
    """Binary n x C indicator matrix"""
    labels = np.asarray(labels).ravel()
    if num_classes < 1:
        raise InputError("num_classes must be positive")
    if labels.size and not np.all(np.mod(labels, 1) == 0):
        raise InputError("Labels must be integers")
    labels = labels.astype(int)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InputError(f"Labels must lie in 0..{num_classes - 1}")
    Y = np.zeros((labels.size, num_classes))
    Y[np.arange(labels.size), labels] = 1.0
    return Y


def lognormal_parameters(alpha: np.ndarray):
    """Moment-matched (mean, variance) of log x for x ~ Gamma(alpha, 1)"""
    sigma2 = np.log(1.0 / alpha + 1.0)
    return np.log(alpha) - 0.5 * sigma2, sigma2


def transform(one_hot_labels, alpha_eps: AlphaEpsilon) -> TransformedTargets:
    """
    Map one-hot rows to (ỹ, σ̃²)

    The observed class gets concentration 1 + α_ε, every other class α_ε.
    """
    Y = np.asarray(one_hot_labels, dtype=float)
    if Y.ndim != 2 or Y.shape[1] < 2:
        raise InputError("one_hot must be an n x C matrix with C >= 2")
    if Y.size and (not np.all((Y == 0) | (Y == 1)) or not np.all(Y.sum(axis=1) == 1)):
        bad = np.flatnonzero(~(((Y == 0) | (Y == 1)).all(axis=1) & (Y.sum(axis=1) == 1)))
        raise InputError(f"Row {int(bad[0])} is not a one-hot vector")
    alpha = Y + alpha_eps.value
    y_tilde, sigma2_tilde = lognormal_parameters(alpha)
    return TransformedTargets(y_tilde=y_tilde, sigma2_tilde=sigma2_tilde,
                              alpha_eps=alpha_eps, num_classes=Y.shape[1])


def select_alpha_eps(train: Any,
                     grid: Optional[Sequence[AlphaEpsilon]],
                     fit_and_score: Callable[[Any, AlphaEpsilon, int], float],
                     n_jobs: int = 1) -> AlphaEpsilon:
    """
    Pick the pseudo-count with the lowest training MNLL

    Args:
        train: Training dataset handed to fit_and_score unchanged
        grid: Candidate values (defaults to 0.1, 0.01, 0.001)
        fit_and_score: Fits a full model for one grid value and returns its
            MNLL on the training set; called as fit_and_score(train, alpha, index)
        n_jobs: Grid points evaluated concurrently

    Returns:
        Winning AlphaEpsilon; ties go to the larger value
    """
    if grid is None:
        grid = [AlphaEpsilon(v) for v in DEFAULT_ALPHA_GRID]
    grid = list(grid)
    if not grid:
        raise InputError("alpha_eps grid must not be empty")
    if len(grid) == 1:
        return grid[0]

    def evaluate(index: int) -> Optional[float]:
        try:
            score = float(fit_and_score(train, grid[index], index))
        except Exception as e:
            logger.warning(f"alpha_eps={grid[index].value:g} failed: {e}")
            return None
        if not math.isfinite(score):
            logger.warning(f"alpha_eps={grid[index].value:g} gave non-finite training MNLL")
            return None
        logger.info(f"alpha_eps={grid[index].value:g}: training MNLL {score:.6f}")
        return score

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as executor:
            scores: List[Optional[float]] = list(executor.map(evaluate, range(len(grid))))
    else:
        scores = [evaluate(i) for i in range(len(grid))]

    candidates = [(score, -grid[i].value, i) for i, score in enumerate(scores) if score is not None]
    if not candidates:
        raise ModelError("Training failed for every alpha_eps grid point")
    _, _, best = min(candidates)
    logger.info(f"Selected alpha_eps={grid[best].value:g}")
    return grid[best]
