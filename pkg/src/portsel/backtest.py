"""Rolling out-of-sample backtest with drift, turnover, and net-of-cost returns.

Each out-of-sample month t refits the configured solver on the trailing
window of months, tilts the benchmark into policy weights, realizes the
next month's return, and charges proportional costs on the L1 distance
between the new weights and the drifted prior weights.  Prior weights
drift by the literal element-wise rule w ∘ (1 + r) without renormalization
(a renormalized variant sits behind a config flag).  The first trade's
turnover is the full weight size ||w||_1 (all-cash start) and is included
in turnover averages.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .boosting import fit_boosting
from .horseshoe import HorseshoeConfig, fit_horseshoe
from .panel import CharacteristicsPanel, PredictorSpec, standardize_and_impute
from .portfolio import (BenchmarkKind, CoefficientVector, PolicyWeights,
                        RegressionSample, benchmark_weights, build_regression_sample,
                        policy_weights, predictor_returns)
from .screening import marginal_screen
from .solvers import SolverConfig, SolverError, cross_validate, fit_ols, fit_ridge

logger = logging.getLogger(__name__)

METHODS = ("none", "ols", "ridge", "lasso", "adalasso", "enet", "scad",
           "boosting", "horseshoe", "screen")


@dataclass(frozen=True)
class BacktestConfig:
    """Window length, cost levels, benchmark, and solver selection.

    Windows shorter than 24 months are allowed (toy ledgers use tiny ones)
    but logged as below the intended production floor.
    """

    window: int = 120
    cost_levels: tuple = (0.0, 0.0010)
    benchmark: BenchmarkKind = field(default_factory=BenchmarkKind)
    method: str = "none"
    method_params: dict = field(default_factory=dict)
    solver_config: SolverConfig = field(default_factory=SolverConfig)
    refit_every: int = 1
    renormalize_drift: bool = False
    seed: Optional[int] = None

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must cover at least 2 months")
        if self.window < 24:
            logger.warning("window=%d months is below the 24-month floor", self.window)
        if any(c < 0 for c in self.cost_levels):
            raise ValueError("cost levels must be nonnegative")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.refit_every < 1:
            raise ValueError("refit_every must be at least 1")


@dataclass
class BacktestLedger:
    """Per-month out-of-sample record of one strategy run."""

    months: list
    gross: np.ndarray
    benchmark_gross: np.ndarray
    net: dict
    turnover: np.ndarray
    weights: list
    thetas: list
    realized_predictor_returns: np.ndarray
    predictor_names: tuple
    cost_levels: tuple
    window: int
    method: str
    fallback_months: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.months)


@dataclass(frozen=True)
class PerformanceReport:
    """Annualized risk/return metrics, one block per cost level."""

    by_cost: dict
    mean_turnover: float
    n_months: int
    risk_free_used: bool


def drift_weights(w_prev: PolicyWeights, r_t: np.ndarray,
                  renormalize: bool = False) -> np.ndarray:
    """Element-wise drift w ∘ (1 + r) of last month's weights.

    The literal rule does not renormalize, so drifted weights need not sum
    to one; renormalize=True divides by the portfolio gross growth.
    """
    r_t = np.asarray(r_t, dtype=np.float64)
    if r_t.shape[0] != w_prev.weights.shape[0]:
        raise ValueError("returns misaligned with prior weights")
    drifted = w_prev.weights * (1.0 + r_t)
    if renormalize:
        total = float(drifted.sum())
        if total != 0.0:
            drifted = drifted / total
    return drifted


def _derive_seed(base: Optional[int], window_index: int) -> int:
    if base is None:
        raise SolverError("horseshoe in a backtest needs config.seed")
    return int(np.random.SeedSequence([int(base), window_index]).generate_state(1)[0])


def fit_window(sample: RegressionSample, config: BacktestConfig,
               window_index: int, window_end: int) -> CoefficientVector:
    """Fit one estimation window with the configured method."""
    method = config.method
    params = config.method_params
    scfg = config.solver_config
    if method == "none":
        zeros = np.zeros(sample.n_predictors)
        theta = CoefficientVector(values=zeros, selected=zeros != 0.0, solver="none")
    elif method == "ols":
        theta = fit_ols(sample).theta
    elif method == "ridge" and "lambda" in params:
        theta = fit_ridge(sample, float(params["lambda"])).theta
    elif method in ("ridge", "lasso", "adalasso", "enet", "scad"):
        _, fit = cross_validate(sample, method, scfg)
        theta = fit.theta
    elif method == "boosting":
        theta = fit_boosting(sample, step=float(params.get("step", 0.10)),
                             max_iter=int(params.get("max_iter", 1000))).theta
    elif method == "horseshoe":
        hs_cfg = HorseshoeConfig(
            burn_in=int(params.get("burn_in", 2000)),
            samples=int(params.get("samples", 5000)),
            seed=_derive_seed(config.seed, window_index),
            selection_credibility=float(params.get("credibility", 0.90)),
        )
        fit, _ = fit_horseshoe(sample, hs_cfg)
        theta = fit.theta
    else:
        theta = marginal_screen(sample, int(params.get("k", 10))).theta
    return CoefficientVector(values=theta.values, selected=theta.selected,
                             solver=theta.solver, hyperparameters=theta.hyperparameters,
                             window_end=window_end)


def _fit_task(args):
    sample, config, window_index, window_end = args
    try:
        return fit_window(sample, config, window_index, window_end)
    except (SolverError, ValueError) as exc:
        logger.warning("window ending %s: %s; falling back to benchmark", window_end, exc)
        return None


def run_backtest(panel: CharacteristicsPanel, spec: PredictorSpec,
                 config: BacktestConfig, matrices: Optional[dict] = None,
                 workers: int = 1) -> BacktestLedger:
    """Roll the estimation window through the panel month by month.

    Produces one ledger row per out-of-sample month (len(months) - window
    rows).  Solver failures fall back to benchmark weights for that window
    and are recorded, not fatal.
    """
    months = panel.months
    T = config.window
    if len(months) < T + 1:
        raise ValueError(f"panel spans {len(months)} months; need at least {T + 1}")
    if matrices is None:
        matrices = {m: standardize_and_impute(panel, m, spec) for m in months}

    oos = list(range(T, len(months)))
    refit_rows = [i for i in oos if (i - T) % config.refit_every == 0]
    samples = {
        i: build_regression_sample(panel, months[i - T: i], spec, config.benchmark,
                                   matrices=matrices)
        for i in refit_rows
    }
    tasks = [(samples[i], config, i - T, months[i - 1]) for i in refit_rows]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            fitted = list(pool.map(_fit_task, tasks))
    else:
        fitted = [_fit_task(t) for t in tasks]
    theta_by_row = dict(zip(refit_rows, fitted))

    n_oos = len(oos)
    gross = np.empty(n_oos)
    bench_gross = np.empty(n_oos)
    turnover = np.empty(n_oos)
    rc_realized = None
    weights_list = []
    theta_list = []
    fallback_months = []

    current = None
    prev_w = None
    for j, i in enumerate(oos):
        month = months[i]
        if i in theta_by_row:
            current = theta_by_row[i]
            if current is None:
                fallback_months.append(month)
                zeros = np.zeros(len(matrices[month].predictor_names))
                current = CoefficientVector(values=zeros, selected=zeros != 0.0,
                                            solver="fallback", window_end=months[i - 1])
        X = matrices[month]
        wb = benchmark_weights(month, config.benchmark, panel)
        w = policy_weights(current.values, X, wb)
        r_next = panel.blocks[month].ret_fwd
        gross[j] = float(w.weights @ r_next)
        bench_gross[j] = float(wb.weights @ r_next)
        rc = predictor_returns(X, r_next)
        if rc_realized is None:
            rc_realized = np.empty((n_oos, rc.shape[0]))
        rc_realized[j] = rc

        if prev_w is None:
            turnover[j] = float(np.abs(w.weights).sum())
        else:
            r_drift = panel.blocks[prev_w.month].ret_fwd
            drifted = drift_weights(prev_w, r_drift, renormalize=config.renormalize_drift)
            held = dict(zip(prev_w.firm_ids, drifted))
            t = 0.0
            for firm, wt in zip(w.firm_ids, w.weights):
                t += abs(wt - held.pop(firm, 0.0))
            t += sum(abs(v) for v in held.values())  # forced liquidations
            turnover[j] = t
        weights_list.append(w)
        theta_list.append(current)
        prev_w = w

    net = {c: gross - c * turnover for c in config.cost_levels}
    return BacktestLedger(
        months=[months[i] for i in oos],
        gross=gross,
        benchmark_gross=bench_gross,
        net=net,
        turnover=turnover,
        weights=weights_list,
        thetas=theta_list,
        realized_predictor_returns=rc_realized,
        predictor_names=matrices[months[oos[0]]].predictor_names,
        cost_levels=tuple(config.cost_levels),
        window=T,
        method=config.method,
        fallback_months=fallback_months,
    )


def annualized_sigma(returns: np.ndarray) -> float:
    """sqrt((12/M) * sum((r - rbar)^2)) with rbar the monthly mean."""
    r = np.asarray(returns, dtype=np.float64)
    dev = r - r.mean()
    return float(math.sqrt(12.0 / r.shape[0] * float(dev @ dev)))


def annualized_mean(returns: np.ndarray) -> float:
    """(12/M) * sum(r): the annualized mean monthly return."""
    r = np.asarray(returns, dtype=np.float64)
    return float(12.0 / r.shape[0] * r.sum())


def sharpe_ratio(returns: np.ndarray, mean_rf: float = 0.0) -> float:
    """(annualized mean - 12 * mean monthly risk-free) / annualized sigma."""
    sigma = annualized_sigma(returns)
    if sigma == 0.0:
        return math.nan
    return (annualized_mean(returns) - 12.0 * mean_rf) / sigma


def max_drawdown(returns: np.ndarray) -> float:
    """Largest peak-to-trough fraction of the compounded return path."""
    path = np.cumprod(1.0 + np.asarray(returns, dtype=np.float64))
    peaks = np.maximum.accumulate(np.concatenate(([1.0], path)))[1:]
    return float(np.max(1.0 - path / peaks))


def historical_var(returns: np.ndarray, level: float = 0.99) -> float:
    """Historical-simulation VaR: the ceil((1-level)*M)-th worst month, sign-flipped."""
    r = np.asarray(returns, dtype=np.float64)
    k = max(1, math.ceil((1.0 - level) * r.shape[0]))
    return float(-np.partition(r, k - 1)[k - 1])


def performance_metrics(ledger: BacktestLedger,
                        risk_free: Optional[dict] = None) -> PerformanceReport:
    """Annualized sigma/SR plus drawdown and VaR per cost level.

    risk_free maps month -> monthly rate; when absent the SR is computed on
    raw returns and flagged.
    """
    if len(ledger) == 0:
        raise ValueError("empty ledger")
    if risk_free is not None:
        missing = [m for m in ledger.months if m not in risk_free]
        if missing:
            raise ValueError(f"risk-free series missing months {missing[:3]}...")
        mean_rf = float(np.mean([risk_free[m] for m in ledger.months]))
        rf_used = True
    else:
        mean_rf = 0.0
        rf_used = False
        logger.info("no risk-free series; Sharpe ratios computed on raw returns")
    by_cost = {}
    for cost, series in ledger.net.items():
        by_cost[cost] = {
            "sigma": annualized_sigma(series),
            "sharpe": sharpe_ratio(series, mean_rf),
            "mean_annualized": annualized_mean(series),
            "max_drawdown": max_drawdown(series),
            "var_99": historical_var(series),
        }
    return PerformanceReport(
        by_cost=by_cost,
        mean_turnover=float(ledger.turnover.mean()),
        n_months=len(ledger),
        risk_free_used=rf_used,
    )


LEDGER_COLUMNS = ("month", "gross", "net", "turnover", "n_firms")


def write_ledger_csv(ledger: BacktestLedger, path, cost: float) -> None:
    """One CSV per (method, cost level); columns in LEDGER_COLUMNS order."""
    net = ledger.net[cost]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(LEDGER_COLUMNS) + "\n")
        for j, month in enumerate(ledger.months):
            fh.write(f"{month},{ledger.gross[j]:.12g},{net[j]:.12g},"
                     f"{ledger.turnover[j]:.12g},{len(ledger.weights[j].firm_ids)}\n")


def write_report_json(report: PerformanceReport, path, method: str, cost: float) -> None:
    block = report.by_cost[cost]
    payload = {
        "method": method,
        "cost_per_turnover": cost,
        "n_months": report.n_months,
        "mean_turnover": report.mean_turnover,
        "risk_free_used": report.risk_free_used,
        **{k: (None if isinstance(v, float) and math.isnan(v) else v)
           for k, v in block.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
