"""
Hyperparameter Optimization
Multi-start quasi-Newton maximization shared by the exact, sparse and Laplace models
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from .errors import GPDError, ModelError

logger = logging.getLogger(__name__)

# Returned to the line search in place of non-finite objective values
REJECTED_STEP = 1e20

LOG_VARIANCE_BOUNDS = (-12.0, 12.0)
LOG_LENGTHSCALE_BOUNDS = (-10.0, 10.0)
LOG_NOISE_BOUNDS = (-16.0, 10.0)

Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]


@dataclass
class OptimizationOutcome:
    """Best point found over all restarts"""

    theta: np.ndarray
    objective: float
    restart: int
    converged: bool


def random_starts(init: np.ndarray, lengthscale_reference: float, restarts: int, seed: int) -> List[np.ndarray]:
    """
    Starting points: the given init first, then log-uniform draws

    a² is drawn from [0.1, 10] and l from [0.1, 10] times the reference
    length-scale; any remaining entries (noise) are copied from init.
    """
    starts = [np.array(init, dtype=float)]
    for r in range(1, restarts):
        rng = np.random.default_rng([seed, r])
        theta = np.array(init, dtype=float)
        theta[0] = rng.uniform(math.log(0.1), math.log(10.0))
        theta[1] = math.log(lengthscale_reference) + rng.uniform(math.log(0.1), math.log(10.0))
        starts.append(theta)
    return starts


def _safe_negated(objective: Objective) -> Objective:
    def wrapped(theta):
        try:
            value, grad = objective(theta)
        except GPDError as e:
            logger.debug(f"Rejected step at {theta}: {e}")
            return REJECTED_STEP, np.zeros_like(theta)
        if not (math.isfinite(value) and np.all(np.isfinite(grad))):
            return REJECTED_STEP, np.zeros_like(theta)
        return -value, -np.asarray(grad, dtype=float)
    return wrapped


def maximize_with_restarts(objective: Objective,
                           starts: Sequence[np.ndarray],
                           bounds: Sequence[Tuple[float, float]],
                           max_iter: int = 200,
                           gtol: float = 1e-5,
                           n_jobs: int = 1,
                           label: str = "objective") -> OptimizationOutcome:
    """
    Run L-BFGS-B from every start and keep the best point

    The first start is also scored as-is, so the result never falls below
    the objective at the initial point. Ties go to the lowest restart index
    (the unmodified initial point counts as index -1).

    Raises:
        ModelError: every start failed numerically
    """
    negated = _safe_negated(objective)

    def run(index: int) -> Optional[Tuple[float, int, np.ndarray, bool]]:
        theta0 = np.clip(starts[index], [b[0] for b in bounds], [b[1] for b in bounds])
        try:
            result = minimize(negated, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                              options={"maxiter": max_iter, "gtol": gtol})
            value, _ = objective(result.x)
        except GPDError as e:
            logger.warning(f"{label}: restart {index} failed: {e}")
            return None
        if not math.isfinite(value):
            logger.warning(f"{label}: restart {index} ended at a non-finite value")
            return None
        logger.debug(f"{label}: restart {index} -> {value:.6f} after {result.nit} iterations")
        return value, index, np.asarray(result.x, dtype=float), bool(result.success)

    if n_jobs > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as executor:
            outcomes = list(executor.map(run, range(len(starts))))
    else:
        outcomes = [run(i) for i in range(len(starts))]

    candidates = [o for o in outcomes if o is not None]
    try:
        init_value, _ = objective(np.asarray(starts[0], dtype=float))
        if math.isfinite(init_value):
            candidates.append((init_value, -1, np.asarray(starts[0], dtype=float), False))
    except GPDError:
        pass

    if not candidates:
        raise ModelError(f"{label}: every restart failed numerically")

    best_value, best_index, best_theta, converged = max(candidates, key=lambda c: (c[0], -c[1]))
    if best_index == -1:
        converged = any(o is not None and o[1] == 0 and o[3] for o in outcomes)
    return OptimizationOutcome(theta=best_theta, objective=best_value, restart=best_index, converged=converged)
