"""Predictor importance, return attribution, and portfolio statistics.

The importance of a predictor is its marginal contribution to the
minimum-variance objective at the fitted coefficients: the gradient
Sigma_c theta + sigma_bc, split additively into an own-variance part
diag(Sigma_c) theta, a cross-covariance part (Sigma_c - diag) theta, and
the benchmark-covariance part sigma_bc.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .backtest import BacktestLedger
from .panel import CharacteristicsPanel, PredictorSpec, classify_predictor
from .panel import standardize_and_impute
from .portfolio import CoefficientVector, RegressionSample

logger = logging.getLogger(__name__)

PREDICTOR_CLASSES = ("main", "square", "interaction")


@dataclass(frozen=True)
class ImportanceBreakdown:
    """Additive decomposition of each predictor's marginal contribution."""

    own_variance: np.ndarray
    cross_covariance: np.ndarray
    benchmark_covariance: np.ndarray
    total: np.ndarray
    coefficient_sign: np.ndarray

    def ranking(self, component: str) -> np.ndarray:
        """Ordered predictor indices for one component's display.

        Own-variance ranks ascending; cross- and benchmark-covariance rank
        descending (lower covariance contributes more).  Ties keep index
        order (stable sort).
        """
        if component == "own_variance":
            return np.argsort(self.own_variance, kind="stable")
        if component == "cross_covariance":
            return np.argsort(-self.cross_covariance, kind="stable")
        if component == "benchmark_covariance":
            return np.argsort(-self.benchmark_covariance, kind="stable")
        raise ValueError(f"unknown component {component!r}")


@dataclass(frozen=True)
class SelectionStats:
    """Mean selected counts and class shares versus the predictor pool."""

    mean_selected: float
    class_share: dict
    pool_share: dict
    deviation: dict
    empty_windows: int = 0


@dataclass(frozen=True)
class WeightStats:
    """Time-averaged min/max weight and short proportion."""

    min_weight: float
    max_weight: float
    short_proportion: float


def importance(theta: CoefficientVector, sample: RegressionSample) -> ImportanceBreakdown:
    """Marginal objective contributions at theta, split into three terms.

    total = Sigma_c theta + sigma_bc exactly; at the OLS solution the total
    vanishes (first-order condition).
    """
    values = theta.values
    if values.shape[0] != sample.n_predictors:
        raise ValueError("coefficient length does not match sample predictors")
    # matvec form of Sigma_c theta; never materializes the K x K covariance
    rc = sample.centered_predictors
    scale = 1.0 / (sample.n_obs - 1)
    diag = np.einsum("tk,tk->k", rc, rc) * scale
    own = diag * values
    total_cov = rc.T @ (rc @ values) * scale
    cross = total_cov - own
    bench = sample.benchmark_covariance
    return ImportanceBreakdown(
        own_variance=own,
        cross_covariance=cross,
        benchmark_covariance=bench,
        total=total_cov + bench,
        coefficient_sign=np.sign(values),
    )


def mean_importance(breakdowns: Sequence) -> ImportanceBreakdown:
    """Average importance across estimation windows (per-component means)."""
    if not breakdowns:
        raise ValueError("no breakdowns to average")
    stack = lambda name: np.mean([getattr(b, name) for b in breakdowns], axis=0)
    return ImportanceBreakdown(
        own_variance=stack("own_variance"),
        cross_covariance=stack("cross_covariance"),
        benchmark_covariance=stack("benchmark_covariance"),
        total=stack("total"),
        coefficient_sign=np.sign(stack("coefficient_sign")),
    )


def predictor_return_attribution(ledger: BacktestLedger):
    """Mean realized contribution theta_k * r_ck per predictor, plus the total.

    The aggregate equals the mean out-of-sample gap between portfolio and
    benchmark returns by the return identity.
    """
    contrib = np.vstack([
        t.values * rc for t, rc in zip(ledger.thetas, ledger.realized_predictor_returns)
    ])
    per_predictor = contrib.mean(axis=0)
    aggregate = float(contrib.sum(axis=1).mean())
    return per_predictor, aggregate


def selection_stats(thetas: Sequence, spec: PredictorSpec) -> SelectionStats:
    """Average selection counts and class shares across windows.

    Shares are within-window percentages averaged over windows; windows
    with empty selections contribute zero shares and are counted.
    Deviations subtract each class's share of the predictor pool, so they
    sum to zero when every window selects something.
    """
    names = spec.expanded_names
    classes = np.array([classify_predictor(n) for n in names])
    pool_share = {c: float((classes == c).mean()) for c in PREDICTOR_CLASSES}

    counts = []
    shares = {c: [] for c in PREDICTOR_CLASSES}
    empty = 0
    for theta in thetas:
        mask = theta.selected
        if mask.shape[0] != len(names):
            raise ValueError("selection mask length does not match the predictor spec")
        n_sel = int(mask.sum())
        counts.append(n_sel)
        if n_sel == 0:
            empty += 1
            for c in PREDICTOR_CLASSES:
                shares[c].append(0.0)
            continue
        for c in PREDICTOR_CLASSES:
            shares[c].append(float(mask[classes == c].sum()) / n_sel)
    if empty:
        logger.warning("%d windows selected no predictors; shares reported as 0", empty)
    class_share = {c: float(np.mean(shares[c])) for c in PREDICTOR_CLASSES}
    deviation = {c: class_share[c] - pool_share[c] for c in PREDICTOR_CLASSES}
    return SelectionStats(
        mean_selected=float(np.mean(counts)),
        class_share=class_share,
        pool_share=pool_share,
        deviation=deviation,
        empty_windows=empty,
    )


def weight_stats(ledger: BacktestLedger) -> WeightStats:
    """Per-month min/max/short-fraction of weights, averaged over time."""
    if len(ledger) == 0:
        raise ValueError("empty ledger")
    mins, maxs, shorts = [], [], []
    for w in ledger.weights:
        mins.append(float(w.weights.min()))
        maxs.append(float(w.weights.max()))
        shorts.append(float((w.weights < 0).mean()))
    return WeightStats(
        min_weight=float(np.mean(mins)),
        max_weight=float(np.mean(maxs)),
        short_proportion=float(np.mean(shorts)),
    )


def weight_by_characteristic_profile(ledger: BacktestLedger,
                                     panel: CharacteristicsPanel,
                                     spec: PredictorSpec,
                                     char_a: str, char_b: str,
                                     bins: int = 25, quantile_bins: int = 5,
                                     clip: float = 3.0) -> np.ndarray:
    """Mean policy weight bucketed by char_a value and char_b quintile.

    char_a standardized values are clipped to [-clip, clip] and split into
    equal-width bins; char_b is split into within-month quantile groups.
    Returns a (bins, quantile_bins) grid of mean weights with NaN for empty
    cells.
    """
    if char_a not in spec.base_names or char_b not in spec.base_names:
        raise ValueError("both characteristics must be in the predictor spec")
    ia = list(spec.base_names).index(char_a)
    ib = list(spec.base_names).index(char_b)
    edges = np.linspace(-clip, clip, bins + 1)
    sums = np.zeros((bins, quantile_bins))
    counts = np.zeros((bins, quantile_bins))
    for w in ledger.weights:
        X = standardize_and_impute(panel, w.month, spec)
        a_vals = np.clip(X.values[:, ia], -clip, clip)
        b_vals = X.values[:, ib]
        a_bin = np.clip(np.searchsorted(edges, a_vals, side="right") - 1, 0, bins - 1)
        q_edges = np.quantile(b_vals, np.linspace(0, 1, quantile_bins + 1)[1:-1])
        b_bin = np.searchsorted(q_edges, b_vals, side="right")
        for wt, r, c in zip(w.weights, a_bin, b_bin):
            sums[r, c] += wt
            counts[r, c] += 1
    with np.errstate(invalid="ignore"):
        grid = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return grid


def write_importance_csv(path, names: Sequence, breakdown: ImportanceBreakdown) -> None:
    """Plot-data export: one row per predictor with the three components."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("predictor,own_variance,cross_covariance,benchmark_covariance,total,sign\n")
        for i, name in enumerate(names):
            fh.write(f"{name},{breakdown.own_variance[i]:.12g},"
                     f"{breakdown.cross_covariance[i]:.12g},"
                     f"{breakdown.benchmark_covariance[i]:.12g},"
                     f"{breakdown.total[i]:.12g},{int(breakdown.coefficient_sign[i])}\n")


def write_attribution_csv(path, names: Sequence, per_predictor: np.ndarray,
                          aggregate: float) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("predictor,mean_contribution\n")
        fh.write(f"__aggregate__,{aggregate:.12g}\n")
        for name, val in zip(names, per_predictor):
            fh.write(f"{name},{val:.12g}\n")


def write_selection_csv(path, stats: SelectionStats) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("metric," + ",".join(PREDICTOR_CLASSES) + "\n")
        fh.write("class_share," + ",".join(f"{stats.class_share[c]:.6f}"
                                           for c in PREDICTOR_CLASSES) + "\n")
        fh.write("pool_share," + ",".join(f"{stats.pool_share[c]:.6f}"
                                          for c in PREDICTOR_CLASSES) + "\n")
        fh.write("deviation," + ",".join(f"{stats.deviation[c]:.6f}"
                                         for c in PREDICTOR_CLASSES) + "\n")
        fh.write(f"mean_selected,{stats.mean_selected:.6f},,\n")


def write_profile_csv(path, grid: np.ndarray) -> None:
    """Grid export: rows are char_a bins, columns char_b quantile groups."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin," + ",".join(f"q{j + 1}" for j in range(grid.shape[1])) + "\n")
        for i in range(grid.shape[0]):
            cells = ",".join("" if np.isnan(v) else f"{v:.12g}" for v in grid[i])
            fh.write(f"{i},{cells}\n")
