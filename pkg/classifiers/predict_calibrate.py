"""
Prediction and Calibration
Monte-Carlo softmax over latent GP marginals, calibration metrics (ECE, MNLL,
error rate), reliability-diagram bins with quantile bands, and Platt scaling
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit, softmax
from scipy.stats import norm

from gp_models.errors import InputError, ModelError

logger = logging.getLogger(__name__)

DEFAULT_MC_SAMPLES = 1000
DEFAULT_NUM_BINS = 10
PROBABILITY_FLOOR = 1e-12


@dataclass
class ClassProbabilities:
    """Predicted class probabilities, one row per test point"""

    probs: np.ndarray
    mc_samples: int = 0
    seed: int = 0

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 2:
            raise InputError("Class probabilities must be an m x C matrix")
        if self.probs.size:
            if np.any(self.probs < -1e-12) or np.any(self.probs > 1 + 1e-12):
                raise InputError("Class probabilities must lie in [0, 1]")
            self.probs = np.clip(self.probs, 0.0, 1.0)
            if np.max(np.abs(self.probs.sum(axis=1) - 1.0)) > 1e-9:
                raise InputError("Class probability rows must sum to 1")

    @property
    def num_points(self) -> int:
        return self.probs.shape[0]

    def predictions(self) -> np.ndarray:
        """Arg-max class, ties to the lowest index"""
        return np.argmax(self.probs, axis=1)

    def confidences(self) -> np.ndarray:
        return np.max(self.probs, axis=1)


@dataclass
class ReliabilityBin:
    """One equal-width confidence bin"""

    lo: float
    hi: float
    count: int
    confidence: float
    accuracy: float


@dataclass
class CalibrationReport:
    """Error rate, MNLL, ECE and reliability bins of one classifier on one test set"""

    error_rate: float
    mnll: float
    ece: float
    bins: List[ReliabilityBin]
    num_bins: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error_rate": self.error_rate,
            "mnll": self.mnll,
            "ece": self.ece,
            "num_bins": self.num_bins,
            "bins": [vars(b).copy() for b in self.bins],
        }


@dataclass
class ReliabilityBand:
    """Mean reliability curve plus the curves of the latent-quantile classifiers"""

    mean_bins: List[ReliabilityBin]
    lower_bins: Optional[List[ReliabilityBin]]
    upper_bins: Optional[List[ReliabilityBin]]
    histogram: np.ndarray
    z: float
    ece: float = field(default=float("nan"))

    def rows(self) -> List[Dict[str, Any]]:
        """Rows of the reliability CSV: bin_lo, bin_hi, count, confidence, accuracy, lower/upper accuracy"""
        rows = []
        for i, b in enumerate(self.mean_bins):
            lower = self.lower_bins[i].accuracy if self.lower_bins else b.accuracy
            upper = self.upper_bins[i].accuracy if self.upper_bins else b.accuracy
            rows.append({"bin_lo": b.lo, "bin_hi": b.hi, "count": b.count,
                         "confidence": b.confidence, "accuracy": b.accuracy,
                         "lower_accuracy": lower, "upper_accuracy": upper})
        return rows


def _as_probs(probs) -> np.ndarray:
    return probs.probs if isinstance(probs, ClassProbabilities) else np.asarray(probs, dtype=float)


def _validate_labels(P: np.ndarray, labels) -> np.ndarray:
    labels = np.asarray(labels).astype(int).ravel()
    if P.shape[0] == 0:
        raise InputError("Empty test set")
    if labels.shape[0] != P.shape[0]:
        raise InputError(f"{P.shape[0]} predictions but {labels.shape[0]} labels")
    if labels.min() < 0 or labels.max() >= P.shape[1]:
        raise InputError("Labels out of range for the probability matrix")
    return labels


def softmax_expectation(means, variances, S: int = DEFAULT_MC_SAMPLES, seed: int = 0) -> ClassProbabilities:
    """
    E[softmax(f)] under independent Gaussian class marginals, by Monte Carlo

    Point i draws from its own stream default_rng([seed, i]), so results do not
    depend on batching or evaluation order.
    """
    means = np.atleast_2d(np.asarray(means, dtype=float))
    variances = np.atleast_2d(np.asarray(variances, dtype=float))
    if S < 1:
        raise InputError("S must be >= 1")
    if means.shape != variances.shape:
        raise InputError(f"means {means.shape} and variances {variances.shape} differ in shape")
    if not (np.all(np.isfinite(means)) and np.all(np.isfinite(variances))):
        raise InputError("Latent means and variances must be finite")
    if np.any(variances < 0):
        raise InputError("Latent variances must be non-negative")

    m, C = means.shape
    sd = np.sqrt(variances)
    probs = np.empty((m, C))
    for i in range(m):
        rng = np.random.default_rng([seed, i])
        f = means[i] + sd[i] * rng.standard_normal((S, C))
        probs[i] = softmax(f, axis=1).mean(axis=0)
    probs /= probs.sum(axis=1, keepdims=True)
    return ClassProbabilities(probs=probs, mc_samples=S, seed=seed)


def reliability_bins(probs, labels, M: int = DEFAULT_NUM_BINS) -> List[ReliabilityBin]:
    """
    Equal-width confidence bins over [0, 1]

    A confidence on a bin edge goes to the upper bin; 1.0 goes to the last bin.
    Empty bins report count 0 with confidence and accuracy 0.
    """
    if M < 1:
        raise InputError("M must be >= 1")
    P = _as_probs(probs)
    labels = _validate_labels(P, labels)
    confidence = np.max(P, axis=1)
    correct = (np.argmax(P, axis=1) == labels).astype(float)
    index = np.minimum(np.floor(confidence * M).astype(int), M - 1)

    bins = []
    for b in range(M):
        members = index == b
        count = int(members.sum())
        if count:
            conf = float(np.clip(confidence[members].mean(), 0.0, 1.0))
            acc = float(correct[members].mean())
        else:
            conf = acc = 0.0
        bins.append(ReliabilityBin(lo=b / M, hi=(b + 1) / M, count=count, confidence=conf, accuracy=acc))
    return bins


def ece_from_bins(bins: List[ReliabilityBin]) -> float:
    """Count-weighted mean absolute accuracy/confidence gap"""
    n = sum(b.count for b in bins)
    total = 0.0
    for b in bins:
        total += (b.count / n) * abs(b.accuracy - b.confidence)
    return total


def ece(probs, labels, M: int = DEFAULT_NUM_BINS) -> Tuple[float, List[ReliabilityBin]]:
    bins = reliability_bins(probs, labels, M)
    return ece_from_bins(bins), bins


def mnll(probs, labels) -> float:
    """Mean negative log-probability of the true class (floored at 1e-12)"""
    P = _as_probs(probs)
    labels = _validate_labels(P, labels)
    true_class = np.maximum(P[np.arange(labels.size), labels], PROBABILITY_FLOOR)
    return float(-np.mean(np.log(true_class)))


def error_rate(probs, labels) -> float:
    P = _as_probs(probs)
    labels = _validate_labels(P, labels)
    return float(np.mean(np.argmax(P, axis=1) != labels))


def evaluate(probs, labels, M: int = DEFAULT_NUM_BINS) -> CalibrationReport:
    score, bins = ece(probs, labels, M)
    return CalibrationReport(error_rate=error_rate(probs, labels), mnll=mnll(probs, labels),
                             ece=score, bins=bins, num_bins=M)


def platt_fit(scores, labels, max_iter: int = 100, tol: float = 1e-8) -> Tuple[float, float]:
    """
    Fit p = σ(a·score + b) by Newton's method on Platt's regularized targets

    Targets are (N₊+1)/(N₊+2) for positives and 1/(N₋+2) for negatives.
    Each Newton step is backtracked until the negative log-likelihood decreases.

    Raises:
        InputError: a class is missing
        ModelError: no convergence within max_iter iterations
    """
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).astype(int).ravel()
    if s.shape != y.shape:
        raise InputError("scores and labels must have the same length")
    if not np.all(np.isfinite(s)):
        raise InputError("Platt scores must be finite")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0 or n_pos + n_neg != y.size:
        raise InputError("Platt scaling needs binary labels with both classes present")

    t = np.where(y == 1, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    def nll(a, b):
        z = a * s + b
        return float(np.sum(np.logaddexp(0.0, z) - t * z))

    a, b = 0.0, math.log((n_pos + 1.0) / (n_neg + 1.0))
    value = nll(a, b)
    grad_norm = float("inf")
    for iteration in range(max_iter):
        p = expit(a * s + b)
        r = p - t
        grad = np.array([np.sum(r * s), np.sum(r)])
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < tol:
            return a, b
        w = p * (1.0 - p)
        H = np.array([[np.sum(w * s * s), np.sum(w * s)],
                      [np.sum(w * s), np.sum(w)]]) + 1e-12 * np.eye(2)
        step = -np.linalg.solve(H, grad)
        decrease = float(grad @ step)
        size = 1.0
        while size >= 1e-10:
            a_new, b_new = a + size * step[0], b + size * step[1]
            new_value = nll(a_new, b_new)
            if new_value <= value + 1e-4 * size * decrease:
                break
            size *= 0.5
        else:
            # line search cannot improve: accept if the gradient is already tiny
            if grad_norm < 1e-5 * max(1, s.size):
                return a, b
            raise ModelError(f"Platt scaling line search failed at iteration {iteration} "
                             f"(gradient norm {grad_norm:.3e}, a={a:.4g}, b={b:.4g})")
        a, b, value = a_new, b_new, new_value
        logger.debug(f"Platt iteration {iteration}: nll={value:.8f}")

    p = expit(a * s + b)
    grad_norm = float(np.linalg.norm([np.sum((p - t) * s), np.sum(p - t)]))
    if grad_norm < 1e-5 * max(1, s.size):
        return a, b
    raise ModelError(f"Platt scaling did not converge in {max_iter} iterations "
                     f"(gradient norm {grad_norm:.3e}, a={a:.4g}, b={b:.4g})")


def platt_apply(scores, a: float, b: float) -> np.ndarray:
    return expit(a * np.asarray(scores, dtype=float) + b)


def latent_quantile_probabilities(means, variances, z: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Binary classifiers at the ±z latent quantile surfaces, through softmax

    The lower classifier pushes class 1 down and class 0 up by z standard
    deviations; the upper classifier does the opposite.
    """
    means = np.asarray(means, dtype=float)
    sd = np.sqrt(np.asarray(variances, dtype=float))
    if means.shape[1] != 2:
        raise InputError("Quantile bands are defined for binary problems only")
    shift = z * sd * np.array([1.0, -1.0])
    return softmax(means + shift, axis=1), softmax(means - shift, axis=1)


def reliability_band(model, X_test, labels, quantile: float = 0.95, S: int = DEFAULT_MC_SAMPLES,
                     seed: int = 0, M: int = DEFAULT_NUM_BINS) -> ReliabilityBand:
    """
    Reliability curve of the mean classifier with lower/upper quantile curves

    Args:
        model: A fitted classifier (predict_proba / quantile_probabilities) or
            a PosteriorModel whose latent marginals go through softmax
        quantile: Probability mass between the lower and upper latent quantiles,
            in (0.5, 1); 0.95 gives z ≈ 1.959964

    Returns:
        ReliabilityBand; lower/upper curves are None for multiclass problems
        or models without a latent predictive distribution
    """
    if not 0.5 < quantile < 1.0:
        raise InputError("quantile must lie in (0.5, 1)")
    z = float(norm.ppf(0.5 + quantile / 2.0))

    if hasattr(model, "predict_proba"):
        probs = model.predict_proba(X_test)
        band = model.quantile_probabilities(X_test, z)
    else:
        means, variances = model.predict_latent(X_test)
        probs = softmax_expectation(means, variances, S, seed)
        band = latent_quantile_probabilities(means, variances, z) if means.shape[1] == 2 else None

    mean_bins = reliability_bins(probs, labels, M)
    n = sum(b.count for b in mean_bins)
    histogram = np.array([b.count / n for b in mean_bins])
    lower_bins = upper_bins = None
    if band is not None:
        lower_bins = reliability_bins(band[0], labels, M)
        upper_bins = reliability_bins(band[1], labels, M)
    return ReliabilityBand(mean_bins=mean_bins, lower_bins=lower_bins, upper_bins=upper_bins,
                           histogram=histogram, z=z, ece=ece_from_bins(mean_bins))
