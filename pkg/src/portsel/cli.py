"""Batch front-end: data prep, single fits, backtests, synthetic panels.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every command is deterministic given its config file and seed; backtest
output directories carry a manifest JSON listing the sha256 of each file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import analytics
from .backtest import (BacktestConfig, METHODS, fit_window, performance_metrics,
                       run_backtest, write_ledger_csv, write_report_json)
from .cache import read_matrix_cache, write_matrix_cache
from .config import ConfigError, RunConfig, default_config_text, load_config
from .panel import (CharacteristicsPanel, PanelError, PredictorSpec, load_panel,
                    standardize_months, winsorize_cross_section)
from .portfolio import build_regression_sample
from .solvers import SolverError
from .synth import SCENARIOS, ScenarioParams, generate_panel_files

logger = logging.getLogger(__name__)

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, files) -> Path:
    manifest = {"files": {p.name: _sha256(p) for p in sorted(files)}}
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_prepared(cfg: RunConfig):
    """Panel (winsorized), spec, and cached standardized matrices."""
    panel = load_panel(cfg.csv_path, metadata_path=cfg.metadata_path)
    panel = winsorize_cross_section(panel, cfg.winsor_lower, cfg.winsor_upper)
    spec = PredictorSpec.from_panel(panel, cfg.include_squares, cfg.include_interactions)
    if not cfg.cache_path.exists():
        raise ConfigError(f"cache {cfg.cache_path} not found; run 'portsel prepare' first")
    matrices = read_matrix_cache(cfg.cache_path)
    missing = [m for m in panel.months if m not in matrices]
    if missing:
        raise ConfigError(f"cache is stale: months {missing[:3]}... not cached")
    return panel, spec, matrices


def _load_risk_free(cfg: RunConfig):
    if cfg.risk_free_path is None:
        return None
    df = pd.read_csv(cfg.risk_free_path)
    return {int(r["date"]): float(r["rf"]) for _, r in df.iterrows()}


def cmd_prepare(args) -> int:
    cfg = load_config(args.config)
    panel = load_panel(cfg.csv_path, metadata_path=cfg.metadata_path)
    panel = winsorize_cross_section(panel, cfg.winsor_lower, cfg.winsor_upper)
    spec = PredictorSpec.from_panel(panel, cfg.include_squares, cfg.include_interactions)
    matrices = standardize_months(panel, spec)
    cfg.cache_path.parent.mkdir(parents=True, exist_ok=True)
    write_matrix_cache(cfg.cache_path, matrices)
    firm_counts = [panel.n_firms(m) for m in panel.months]
    degenerate = int(sum(int(matrices[m].degenerate.sum()) for m in panel.months))
    print(f"months: {len(panel.months)} ({panel.months[0]}..{panel.months[-1]})")
    print(f"firms per month: {min(firm_counts)}..{max(firm_counts)}")
    print(f"predictors: {len(matrices[panel.months[0]].predictor_names)}")
    print(f"degenerate columns (month-level total): {degenerate}")
    print(f"dropped rows (missing return): {panel.dropped_rows}")
    print(f"cache: {cfg.cache_path}")
    return 0


def _backtest_config(cfg: RunConfig, args) -> BacktestConfig:
    method = getattr(args, "method", None) or cfg.method
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    if method == "horseshoe" and getattr(args, "seed", None) is None:
        raise ConfigError("method horseshoe requires --seed")
    costs = cfg.costs
    if getattr(args, "cost_bp", None) is not None:
        costs = tuple(c / 1e4 for c in args.cost_bp)
    window = getattr(args, "window", None) or cfg.window
    cfg2 = RunConfig(**{**cfg.__dict__, "method": method})
    return BacktestConfig(
        window=window,
        cost_levels=costs,
        benchmark=cfg.benchmark,
        method=method,
        method_params=cfg2.method_params(),
        solver_config=cfg.solver,
        refit_every=cfg.refit_every,
        seed=getattr(args, "seed", None),
    )


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    bt_cfg = _backtest_config(cfg, args)
    panel, spec, matrices = _load_prepared(cfg)
    months = panel.months
    T = bt_cfg.window
    if args.window_end is not None:
        if args.window_end not in months:
            raise ConfigError(f"window end {args.window_end} not in panel")
        end_idx = months.index(args.window_end)
    else:
        end_idx = len(months) - 1
    if end_idx + 1 < T:
        raise ConfigError(f"window of {T} months does not fit before {months[end_idx]}")
    window_months = months[end_idx - T + 1: end_idx + 1]
    sample = build_regression_sample(panel, window_months, spec, cfg.benchmark,
                                     matrices=matrices)
    theta = fit_window(sample, bt_cfg, window_index=0, window_end=months[end_idx])

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = matrices[months[end_idx]].predictor_names
    coef_path = out_dir / f"coefficients_{bt_cfg.method}.csv"
    with open(coef_path, "w", encoding="utf-8") as fh:
        fh.write("predictor,theta,selected\n")
        for name, val, sel in zip(names, theta.values, theta.selected):
            fh.write(f"{name},{val:.12g},{int(sel)}\n")
    breakdown = analytics.importance(theta, sample)
    imp_path = out_dir / f"importance_{bt_cfg.method}.csv"
    analytics.write_importance_csv(imp_path, names, breakdown)
    summary_path = out_dir / f"fit_{bt_cfg.method}.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump({
            "method": bt_cfg.method,
            "window_end": months[end_idx],
            "window": T,
            "n_selected": theta.n_selected,
            "hyperparameters": theta.hyperparameters,
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"fit {bt_cfg.method}: {theta.n_selected} selected of {len(names)}")
    print(f"coefficients: {coef_path}")
    return 0


def cmd_backtest(args) -> int:
    cfg = load_config(args.config)
    bt_cfg = _backtest_config(cfg, args)
    panel, spec, matrices = _load_prepared(cfg)
    if len(panel.months) < bt_cfg.window + 1:
        raise ConfigError(
            f"panel spans {len(panel.months)} months; window {bt_cfg.window} needs more"
        )
    workers = args.workers if args.workers else (os.cpu_count() or 1)
    ledger = run_backtest(panel, spec, bt_cfg, matrices=matrices, workers=workers)
    report = performance_metrics(ledger, risk_free=_load_risk_free(cfg))

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    method = bt_cfg.method
    for cost in bt_cfg.cost_levels:
        bp = int(round(cost * 1e4))
        ledger_path = out_dir / f"ledger_{method}_{bp}bp.csv"
        write_ledger_csv(ledger, ledger_path, cost)
        report_path = out_dir / f"report_{method}_{bp}bp.json"
        write_report_json(report, report_path, method, cost)
        written += [ledger_path, report_path]

    refit_rows = range(bt_cfg.window, len(panel.months), bt_cfg.refit_every)
    breakdowns = []
    seen = set()
    for j, i in enumerate(range(bt_cfg.window, len(panel.months))):
        if i not in refit_rows or id(ledger.thetas[j]) in seen:
            continue
        seen.add(id(ledger.thetas[j]))
        window_months = panel.months[i - bt_cfg.window: i]
        sample = build_regression_sample(panel, window_months, spec, cfg.benchmark,
                                         matrices=matrices)
        breakdowns.append(analytics.importance(ledger.thetas[j], sample))
    names = ledger.predictor_names
    imp_path = out_dir / f"importance_{method}.csv"
    analytics.write_importance_csv(imp_path, names, analytics.mean_importance(breakdowns))
    per_pred, aggregate = analytics.predictor_return_attribution(ledger)
    attr_path = out_dir / f"attribution_{method}.csv"
    analytics.write_attribution_csv(attr_path, names, per_pred, aggregate)
    sel_path = out_dir / f"selection_{method}.csv"
    analytics.write_selection_csv(sel_path, analytics.selection_stats(ledger.thetas, spec))
    wstats = analytics.weight_stats(ledger)
    weights_path = out_dir / f"weights_{method}.json"
    with open(weights_path, "w", encoding="utf-8") as fh:
        json.dump({"min_weight": wstats.min_weight, "max_weight": wstats.max_weight,
                   "short_proportion": wstats.short_proportion},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    written += [imp_path, attr_path, sel_path, weights_path]
    if len(spec.base_names) >= 2:
        a, b = spec.base_names[0], spec.base_names[1]
        grid = analytics.weight_by_characteristic_profile(ledger, panel, spec, a, b)
        profile_path = out_dir / f"weight_profile_{a}_{b}.csv"
        analytics.write_profile_csv(profile_path, grid)
        written.append(profile_path)
    manifest = _write_manifest(out_dir, written)
    print(f"ledger months: {len(ledger)}; fallbacks: {len(ledger.fallback_months)}")
    for cost in bt_cfg.cost_levels:
        stats = report.by_cost[cost]
        print(f"cost {int(round(cost * 1e4))}bp: sigma={stats['sigma']:.4f} "
              f"sharpe={stats['sharpe']:.3f} mdd={stats['max_drawdown']:.3f} "
              f"var99={stats['var_99']:.4f}")
    print(f"manifest: {manifest}")
    return 0


def cmd_synth(args) -> int:
    if args.scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {args.scenario!r}; choose from {SCENARIOS}")
    params = ScenarioParams()
    if args.config:
        cfg = load_config(args.config)
        params = ScenarioParams(months=cfg.synth_months, firms=cfg.synth_firms,
                                chars=cfg.synth_chars,
                                missing_rate=cfg.synth_missing_rate)
    paths = generate_panel_files(args.scenario, args.seed, args.out_dir, params=params)
    print(f"scenario {args.scenario} (seed {args.seed})")
    for key in ("csv", "metadata", "theta", "scenario"):
        print(f"{key}: {paths[key]}")
    return 0


def cmd_write_config(args) -> int:
    text = default_config_text()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="portsel",
        description="Minimum-variance characteristics-based portfolios with "
                    "high-dimensional predictor selection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="clean the panel and cache standardized matrices")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("fit", help="fit one estimation window")
    p.add_argument("--config", required=True)
    p.add_argument("--method", default=None, choices=METHODS)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--window", type=int, default=None, help="window length override")
    p.add_argument("--window-end", type=int, default=None, help="last month (YYYYMM)")
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("backtest", help="rolling out-of-sample evaluation")
    p.add_argument("--config", required=True)
    p.add_argument("--method", default=None, choices=METHODS)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None,
                   help="parallel window fits (default: machine parallelism)")
    p.add_argument("--window", type=int, default=None, help="window length override")
    p.add_argument("--cost-bp", type=float, nargs="*", default=None)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("synth", help="generate a synthetic panel CSV")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("config", help="print or write the default config")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_write_config)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except (ConfigError, PanelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (SolverError, OSError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
