"""Parametric-policy algebra for minimum-variance portfolios.

Weights are the benchmark plus a linear tilt in standardized firm
characteristics, w = w_b + X theta / N; the portfolio return decomposes
as r_p = r_b + theta' r_c with r_c = X' r / N the vector of long-short
predictor returns.  Minimizing the sample variance of r_p over theta is
a time-series regression of the centered benchmark return on the negated
centered predictor returns, which is the form all solvers consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .panel import CharacteristicsPanel, PanelError, PredictorMatrix, PredictorSpec
from .panel import standardize_and_impute


@dataclass(frozen=True)
class BenchmarkKind:
    """Benchmark portfolio: equally weighted or value-weighted by a size column."""

    variant: str = "ew"
    size_column: Optional[str] = None

    def __post_init__(self):
        if self.variant not in ("ew", "vw"):
            raise ValueError(f"unknown benchmark variant {self.variant!r}")
        if self.variant == "vw" and not self.size_column:
            raise ValueError("value-weighted benchmark needs a size column")


@dataclass(frozen=True)
class PolicyWeights:
    """Portfolio weights for one month, aligned with that month's firm order."""

    month: int
    firm_ids: tuple
    weights: np.ndarray

    def __post_init__(self):
        if len(self.firm_ids) != self.weights.shape[0]:
            raise ValueError("firm ids and weights disagree in length")


@dataclass(frozen=True)
class CoefficientVector:
    """Policy coefficients with selection flags and fit provenance."""

    values: np.ndarray
    selected: np.ndarray
    solver: str = ""
    hyperparameters: dict = field(default_factory=dict)
    window_end: Optional[int] = None

    def __post_init__(self):
        if self.values.shape != self.selected.shape:
            raise ValueError("selection mask length must match coefficient length")

    @property
    def n_selected(self) -> int:
        return int(self.selected.sum())


class RegressionSample:
    """Time series of benchmark and predictor returns over one window.

    Stores the raw series; centered versions (window means removed) are
    computed lazily.  Rows pair month-t characteristics with month-t+1
    returns.
    """

    def __init__(self, benchmark_returns: np.ndarray, predictor_returns: np.ndarray,
                 months: Sequence = ()):
        rb = np.asarray(benchmark_returns, dtype=np.float64)
        rc = np.asarray(predictor_returns, dtype=np.float64)
        if rb.ndim != 1 or rc.ndim != 2 or rc.shape[0] != rb.shape[0]:
            raise ValueError("benchmark returns must be (T,), predictor returns (T, K)")
        if rb.shape[0] < 2:
            raise ValueError("need at least 2 observations")
        if rc.shape[1] < 1:
            raise ValueError("need at least 1 predictor")
        if not np.isfinite(rb).all() or not np.isfinite(rc).all():
            raise ValueError("non-finite entries in regression sample")
        self.benchmark_returns = rb
        self.predictor_returns = rc
        self.months = tuple(months)

    @property
    def n_obs(self) -> int:
        return self.benchmark_returns.shape[0]

    @property
    def n_predictors(self) -> int:
        return self.predictor_returns.shape[1]

    @cached_property
    def centered_benchmark(self) -> np.ndarray:
        return self.benchmark_returns - self.benchmark_returns.mean()

    @cached_property
    def centered_predictors(self) -> np.ndarray:
        return self.predictor_returns - self.predictor_returns.mean(axis=0)

    @cached_property
    def predictor_covariance(self) -> np.ndarray:
        """Sample covariance of the predictor returns (n-1 denominator)."""
        rc = self.centered_predictors
        return rc.T @ rc / (self.n_obs - 1)

    @cached_property
    def benchmark_covariance(self) -> np.ndarray:
        """Sample covariances between benchmark and predictor returns."""
        return self.centered_predictors.T @ self.centered_benchmark / (self.n_obs - 1)

    def portfolio_variance(self, theta: np.ndarray) -> float:
        """Sample variance (n-1) of r_b + theta' r_c over the window."""
        series = self.centered_benchmark + self.centered_predictors @ theta
        return float(series @ series / (self.n_obs - 1))

    def subsample(self, rows: np.ndarray) -> "RegressionSample":
        months = tuple(self.months[i] for i in np.flatnonzero(rows)) if self.months else ()
        return RegressionSample(
            self.benchmark_returns[rows], self.predictor_returns[rows], months
        )


def benchmark_weights(month: int, kind: BenchmarkKind,
                      panel: CharacteristicsPanel) -> PolicyWeights:
    """Equally weighted or value-weighted benchmark weights for one month.

    Value weights use the month's raw size-column values; missing sizes
    count as zero and an all-zero cross-section is an error.
    """
    block = panel.blocks.get(month)
    if block is None:
        raise PanelError(f"month {month} not in panel")
    n = len(block.firm_ids)
    if n == 0:
        raise PanelError(f"month {month} has no firms")
    if kind.variant == "ew":
        w = np.full(n, 1.0 / n)
    else:
        sizes = block.values[:, panel.char_index(kind.size_column)].copy()
        sizes[~np.isfinite(sizes)] = 0.0
        if (sizes < 0).any():
            raise ValueError(f"negative size values in {kind.size_column!r} at {month}")
        total = sizes.sum()
        if total <= 0:
            raise ValueError(f"all-zero sizes in {kind.size_column!r} at {month}")
        w = sizes / total
    return PolicyWeights(month=month, firm_ids=block.firm_ids, weights=w)


def policy_weights(theta: np.ndarray, X: PredictorMatrix,
                   wb: PolicyWeights) -> PolicyWeights:
    """Tilt the benchmark: w = w_b + X theta / N.

    Columns of X are cross-sectionally mean-zero, so the tilt sums to zero
    and the weights stay fully invested.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape[0] != X.n_predictors:
        raise ValueError(f"theta has {theta.shape[0]} entries, X has {X.n_predictors} columns")
    if wb.firm_ids != X.firm_ids:
        raise ValueError("benchmark weights and predictor matrix disagree on firms")
    w = wb.weights + X.values @ theta / X.n_firms
    return PolicyWeights(month=X.month, firm_ids=X.firm_ids, weights=w)


def predictor_returns(X: PredictorMatrix, r_next: np.ndarray) -> np.ndarray:
    """Long-short predictor returns r_c = X' r / N for one month."""
    r_next = np.asarray(r_next, dtype=np.float64)
    if r_next.shape[0] != X.n_firms:
        raise ValueError(f"{r_next.shape[0]} returns for {X.n_firms} firms")
    return X.values.T @ r_next / X.n_firms


def portfolio_return(theta: np.ndarray, r_b: float, r_c: np.ndarray) -> float:
    """Parametric portfolio return r_p = r_b + theta' r_c."""
    theta = np.asarray(theta, dtype=np.float64)
    r_c = np.asarray(r_c, dtype=np.float64)
    if theta.shape != r_c.shape:
        raise ValueError("theta and predictor returns disagree in length")
    return float(r_b + theta @ r_c)


def build_regression_sample(panel: CharacteristicsPanel, months: Sequence,
                            spec: PredictorSpec, kind: BenchmarkKind,
                            matrices: Optional[dict] = None) -> RegressionSample:
    """Assemble the estimation window's (r_b, r_c) series.

    Row t pairs month-t weights/characteristics with month-t's stored
    next-month return.  ``matrices`` can carry precomputed standardized
    matrices keyed by month to avoid repeating the panel pipeline.
    """
    months = list(months)
    if len(months) < 2:
        raise ValueError("estimation window must cover at least 2 months")
    rb = np.empty(len(months))
    rc_rows = []
    for i, month in enumerate(months):
        X = matrices[month] if matrices is not None else standardize_and_impute(panel, month, spec)
        wb = benchmark_weights(month, kind, panel)
        r_next = panel.blocks[month].ret_fwd
        rb[i] = float(wb.weights @ r_next)
        rc_rows.append(predictor_returns(X, r_next))
    return RegressionSample(rb, np.vstack(rc_rows), months=months)
