"""Minimum-variance characteristics-based portfolios with predictor selection.

A library (plus a batch CLI) that tilts a benchmark portfolio by a linear
function of standardized firm characteristics, fits the tilt coefficients
by penalized regression over a high-dimensional predictor space, and
evaluates the resulting policies in a rolling out-of-sample backtest.
"""

from .panel import (CharacteristicsPanel, PredictorMatrix, PredictorSpec,
                    classify_predictor, expand_predictors, load_panel,
                    standardize_and_impute, standardize_months,
                    winsorize_cross_section)
from .portfolio import (BenchmarkKind, CoefficientVector, PolicyWeights,
                        RegressionSample, benchmark_weights,
                        build_regression_sample, policy_weights,
                        portfolio_return, predictor_returns)
from .solvers import (FitResult, PenaltySpec, SolverConfig, SolverError,
                      adaptive_weights, cross_validate, fit_coordinate_descent,
                      fit_ols, fit_ridge, objective_value, regularization_path,
                      soft_threshold)
from .boosting import BoostState, boost_step, corrected_aic, fit_boosting, init_boost_state
from .horseshoe import HorseshoeConfig, PosteriorSummary, effective_sample_size, fit_horseshoe
from .screening import marginal_screen
from .backtest import (BacktestConfig, BacktestLedger, PerformanceReport,
                       drift_weights, performance_metrics, run_backtest)
from .analytics import (ImportanceBreakdown, SelectionStats, WeightStats,
                        importance, mean_importance, predictor_return_attribution,
                        selection_stats, weight_by_characteristic_profile,
                        weight_stats)
from .synth import (ScenarioParams, generate_panel_files, make_noise_sample,
                    make_orthonormal_columns, make_planted_sample)

__version__ = "0.1.0"
