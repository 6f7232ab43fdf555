"""Marginal screening: rank predictors by absolute correlation, refit OLS.

Scores are |rc' y| on unit-norm columns (columns arrive unit-sd from the
panel pipeline, but the op re-normalizes for safety on degenerate data).
The top-k predictors by score are refit by OLS restricted to the selected
set; everything else is zero.
"""

from __future__ import annotations

import logging

import numpy as np

from .portfolio import CoefficientVector, RegressionSample
from .solvers import FitResult, PenaltySpec, objective_value

logger = logging.getLogger(__name__)


def marginal_screen(sample: RegressionSample, k: int) -> FitResult:
    """Keep the k predictors most correlated with the benchmark, refit OLS.

    Ties in the score resolve to the lower index.  If the selected columns
    are collinear, later-indexed offenders are dropped (with a warning)
    until the restricted design has full rank, so the kept set may end up
    smaller than k.
    """
    T, K = sample.n_obs, sample.n_predictors
    if not 1 <= k < T - 1:
        raise ValueError(f"screening size k={k} must satisfy 1 <= k < T-1 = {T - 1}")
    k = min(k, K)

    y = sample.centered_benchmark
    A = -sample.centered_predictors
    norms = np.sqrt(np.einsum("tk,tk->k", A, A))
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(norms > 0, np.abs(A.T @ y) / norms, -np.inf)
    order = np.lexsort((np.arange(K), -score))  # descending score, ties by index
    chosen = [int(j) for j in order[:k] if np.isfinite(score[j])]

    kept = []
    for j in chosen:
        trial = kept + [j]
        if np.linalg.matrix_rank(A[:, trial]) == len(trial):
            kept.append(j)
        else:
            logger.warning("screening: dropping collinear predictor %d", j)

    theta = np.zeros(K)
    if kept:
        sub = A[:, kept]
        coef, *_ = np.linalg.lstsq(sub, y, rcond=None)
        theta[kept] = coef
    selected = np.zeros(K, dtype=bool)
    selected[kept] = True
    coefv = CoefficientVector(values=theta, selected=selected, solver="screen",
                              hyperparameters={"k": float(k), "kept": float(len(kept))})
    return FitResult(theta=coefv,
                     objective_trace=(objective_value(sample, PenaltySpec("ols"), theta),))
