"""Run configuration: a single INI file drives every CLI command.

The shipped default config states every production default explicitly
(window 120, boosting step 0.10, SCAD a 3.7, costs 0 and 10 bp, winsor
limits 1%/99%, 5 CV folds) so deviations show up as visible diffs.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .portfolio import BenchmarkKind
from .solvers import SolverConfig


class ConfigError(ValueError):
    """Bad or missing configuration."""


DEFAULT_CONFIG = """\
# portsel run configuration (INI).  Values below are the production defaults.

[data]
csv = panel.csv
metadata = panel_meta.txt
cache = panel_cache.bin

[panel]
winsor_lower = 0.01
winsor_upper = 0.99
include_squares = true
include_interactions = true

[policy]
benchmark = ew
size_column =

[backtest]
window = 120
costs_bp = 0, 10
refit_every = 1
risk_free =

[solver]
method = lasso
tolerance = 1e-7
max_sweeps = 10000
lambda_count = 100
lambda_ratio = 1e-4
cv_folds = 5
scad_a = 3.7
enet_mixes = 0.1, 0.3, 0.5, 0.7, 0.9

[boosting]
step = 0.10
max_iter = 1000

[horseshoe]
burn_in = 2000
samples = 5000
credibility = 0.90

[screening]
k = 10

[synth]
scenario = planted-sparse
months = 160
firms = 60
chars = 12
missing_rate = 0.02
"""


@dataclass
class RunConfig:
    """Parsed configuration with paths resolved relative to the config file."""

    csv_path: Path
    metadata_path: Optional[Path]
    cache_path: Path
    winsor_lower: float = 0.01
    winsor_upper: float = 0.99
    include_squares: bool = True
    include_interactions: bool = True
    benchmark: BenchmarkKind = field(default_factory=BenchmarkKind)
    window: int = 120
    costs: tuple = (0.0, 0.0010)
    refit_every: int = 1
    risk_free_path: Optional[Path] = None
    method: str = "lasso"
    solver: SolverConfig = field(default_factory=SolverConfig)
    boost_step: float = 0.10
    boost_max_iter: int = 1000
    horseshoe_burn_in: int = 2000
    horseshoe_samples: int = 5000
    horseshoe_credibility: float = 0.90
    screen_k: int = 10
    ridge_lambda: Optional[float] = None
    synth_scenario: str = "planted-sparse"
    synth_months: int = 160
    synth_firms: int = 60
    synth_chars: int = 12
    synth_missing_rate: float = 0.02

    def method_params(self) -> dict:
        if self.method == "boosting":
            return {"step": self.boost_step, "max_iter": self.boost_max_iter}
        if self.method == "horseshoe":
            return {"burn_in": self.horseshoe_burn_in, "samples": self.horseshoe_samples,
                    "credibility": self.horseshoe_credibility}
        if self.method == "screen":
            return {"k": self.screen_k}
        if self.method == "ridge" and self.ridge_lambda is not None:
            return {"lambda": self.ridge_lambda}
        return {}


def default_config_text() -> str:
    return DEFAULT_CONFIG


def _floats(text: str) -> tuple:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def load_config(path) -> RunConfig:
    """Parse and validate the INI file; unknown sections are an error."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    known = {"data", "panel", "policy", "backtest", "solver", "boosting",
             "horseshoe", "screening", "synth"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    base = path.parent

    def resolve(section, key, fallback=None):
        raw = parser.get(section, key, fallback=fallback)
        if raw is None or not str(raw).strip():
            return None
        return base / str(raw).strip()

    try:
        csv_path = resolve("data", "csv", fallback="panel.csv")
        cache_path = resolve("data", "cache", fallback="panel_cache.bin")
        metadata_path = resolve("data", "metadata")
        variant = parser.get("policy", "benchmark", fallback="ew").strip().lower()
        size_column = parser.get("policy", "size_column", fallback="").strip() or None
        benchmark = BenchmarkKind(variant=variant, size_column=size_column)
        solver = SolverConfig(
            tolerance=parser.getfloat("solver", "tolerance", fallback=1e-7),
            max_sweeps=parser.getint("solver", "max_sweeps", fallback=10_000),
            lambda_count=parser.getint("solver", "lambda_count", fallback=100),
            lambda_ratio=parser.getfloat("solver", "lambda_ratio", fallback=1e-4),
            cv_folds=parser.getint("solver", "cv_folds", fallback=5),
            enet_mixes=_floats(parser.get("solver", "enet_mixes",
                                          fallback="0.1, 0.3, 0.5, 0.7, 0.9")),
            scad_a=parser.getfloat("solver", "scad_a", fallback=3.7),
        )
        costs_bp = _floats(parser.get("backtest", "costs_bp", fallback="0, 10"))
        ridge_lambda = parser.get("solver", "ridge_lambda", fallback="").strip()
        cfg = RunConfig(
            csv_path=csv_path,
            metadata_path=metadata_path,
            cache_path=cache_path,
            winsor_lower=parser.getfloat("panel", "winsor_lower", fallback=0.01),
            winsor_upper=parser.getfloat("panel", "winsor_upper", fallback=0.99),
            include_squares=parser.getboolean("panel", "include_squares", fallback=True),
            include_interactions=parser.getboolean("panel", "include_interactions",
                                                   fallback=True),
            benchmark=benchmark,
            window=parser.getint("backtest", "window", fallback=120),
            costs=tuple(c / 1e4 for c in costs_bp),
            refit_every=parser.getint("backtest", "refit_every", fallback=1),
            risk_free_path=resolve("backtest", "risk_free"),
            method=parser.get("solver", "method", fallback="lasso").strip(),
            solver=solver,
            boost_step=parser.getfloat("boosting", "step", fallback=0.10),
            boost_max_iter=parser.getint("boosting", "max_iter", fallback=1000),
            horseshoe_burn_in=parser.getint("horseshoe", "burn_in", fallback=2000),
            horseshoe_samples=parser.getint("horseshoe", "samples", fallback=5000),
            horseshoe_credibility=parser.getfloat("horseshoe", "credibility",
                                                  fallback=0.90),
            screen_k=parser.getint("screening", "k", fallback=10),
            ridge_lambda=float(ridge_lambda) if ridge_lambda else None,
            synth_scenario=parser.get("synth", "scenario",
                                      fallback="planted-sparse").strip(),
            synth_months=parser.getint("synth", "months", fallback=160),
            synth_firms=parser.getint("synth", "firms", fallback=60),
            synth_chars=parser.getint("synth", "chars", fallback=12),
            synth_missing_rate=parser.getfloat("synth", "missing_rate", fallback=0.02),
        )
    except (configparser.Error, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not 0.0 <= cfg.winsor_lower < cfg.winsor_upper <= 1.0:
        raise ConfigError(f"{path}: invalid winsorization limits")
    return cfg
