"""Penalized solvers for the minimum-variance policy regression.

All methods minimize, over theta,

    (1 / (2 (T-1))) * sum_t (rb_t + theta' rc_t)^2 + penalty(theta)

with rb, rc the centered benchmark and predictor returns.  The data-fit
term is equivalent to regressing the centered benchmark on the negated
centered predictor returns without an intercept, so OLS solves
theta = -Sigma_c^{-1} sigma_bc.  Penalties are added unscaled, which makes
the ridge closed form -(Sigma_c + 2*lambda*I)^{-1} sigma_bc exact.

The elastic net follows the lambda*mix*|theta|_1 + lambda*(1-mix)*|theta|_2^2
parameterization (not the alpha/(1-alpha)/2 convention common elsewhere).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _cd_kernels as _k
from .portfolio import CoefficientVector, RegressionSample

logger = logging.getLogger(__name__)

_PENALTY_CODES = {"lasso": _k.PEN_LASSO, "adalasso": _k.PEN_ADALASSO,
                  "enet": _k.PEN_ENET, "ridge": _k.PEN_RIDGE, "scad": _k.PEN_SCAD}

PENALTY_KINDS = ("ols", "ridge", "lasso", "adalasso", "enet", "scad")

#: columns with squared norm below this (relative) count as degenerate
_DEGENERATE_EPS = 1e-300

#: Gram (covariance-update) sweeps are used up to this many predictors
_GRAM_LIMIT = 8000


class SolverError(RuntimeError):
    """A fit could not be produced (ill-posed problem, bad state)."""


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty kind plus hyperparameters.

    strength is lambda (ridge, enet, scad) or rho (lasso, adalasso); mix is
    the elastic-net L1 share in [0, 1]; weights are the adalasso per-
    coefficient factors; a is the SCAD shape (> 2).
    """

    kind: str
    strength: float = 0.0
    mix: float = 1.0
    a: float = 3.7
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if self.strength < 0:
            raise ValueError("penalty strength must be nonnegative")
        if self.kind == "enet" and not 0.0 <= self.mix <= 1.0:
            raise ValueError("elastic-net mix must lie in [0, 1]")
        if self.kind == "scad" and self.a <= 2.0:
            raise ValueError("SCAD shape parameter must exceed 2")
        if self.kind == "adalasso" and self.weights is None:
            raise ValueError("adalasso needs a weight vector")


@dataclass(frozen=True)
class SolverConfig:
    """Shared knobs for coordinate descent, paths, and cross-validation.

    Convergence is declared when a full cyclic sweep changes no coefficient
    by more than tolerance relative to the largest coefficient magnitude.
    Cross-validation folds are contiguous time blocks, deterministic.
    """

    tolerance: float = 1e-7
    max_sweeps: int = 10_000
    lambda_count: int = 100
    lambda_ratio: float = 1e-4
    cv_folds: int = 5
    enet_mixes: tuple = (0.1, 0.3, 0.5, 0.7, 0.9)
    scad_a: float = 3.7
    ridge_scale: float = 100.0

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.lambda_count < 2:
            raise ValueError("lambda grid needs at least 2 points")


@dataclass(frozen=True)
class FitResult:
    """A fitted coefficient vector plus convergence diagnostics."""

    theta: CoefficientVector
    objective_trace: tuple = ()
    converged: bool = True
    sweeps_used: int = 0


def soft_threshold(z: float, cut: float) -> float:
    """sign(z) * max(|z| - cut, 0), the lasso update kernel."""
    if z > cut:
        return z - cut
    if z < -cut:
        return z + cut
    return 0.0


def scad_penalty(t: np.ndarray, lam: float, a: float) -> np.ndarray:
    """SCAD penalty value at |theta| = t: linear, then quadratic, then flat."""
    t = np.abs(t)
    inner = lam * t
    middle = (2.0 * a * lam * t - t * t - lam * lam) / (2.0 * (a - 1.0))
    outer = lam * lam * (a + 1.0) / 2.0
    return np.where(t <= lam, inner, np.where(t <= a * lam, middle, outer))


def penalty_value(penalty: PenaltySpec, theta: np.ndarray) -> float:
    """Penalty term of the objective at theta."""
    if penalty.kind == "ols":
        return 0.0
    if penalty.kind == "ridge":
        return penalty.strength * float(theta @ theta)
    if penalty.kind == "lasso":
        return penalty.strength * float(np.abs(theta).sum())
    if penalty.kind == "adalasso":
        return penalty.strength * float(penalty.weights @ np.abs(theta))
    if penalty.kind == "enet":
        lam, mix = penalty.strength, penalty.mix
        return lam * mix * float(np.abs(theta).sum()) + lam * (1.0 - mix) * float(theta @ theta)
    return float(scad_penalty(theta, penalty.strength, penalty.a).sum())


def objective_value(sample: RegressionSample, penalty: PenaltySpec,
                    theta: np.ndarray) -> float:
    """Full penalized objective: half the sample portfolio variance plus penalty."""
    return 0.5 * sample.portfolio_variance(theta) + penalty_value(penalty, theta)


def _scad_update(z: float, v: float, lam: float, a: float) -> float:
    """Exact minimizer of 0.5*v*t^2 - z*t + scad(|t|) in one coordinate.

    Uses the three-branch firm-threshold rule; when v*(a-1) <= 1 the middle
    region loses convexity and the minimum is found by candidate evaluation.
    """
    if lam == 0.0:
        return z / v
    az = abs(z)
    if v * (a - 1.0) > 1.0:
        if az <= lam * (1.0 + v):
            return soft_threshold(z, lam) / v
        if az <= a * lam * v:
            return soft_threshold(z, a * lam / (a - 1.0)) / (v - 1.0 / (a - 1.0))
        return z / v

    sign = 1.0 if z >= 0 else -1.0
    candidates = [
        min(max(soft_threshold(az, lam) / v, 0.0), lam),
        lam,
        a * lam,
        max(az / v, a * lam),
    ]
    denom = v - 1.0 / (a - 1.0)
    if denom > 0:
        t2 = (az - a * lam / (a - 1.0)) / denom
        candidates.append(min(max(t2, lam), a * lam))

    def g(t):
        return 0.5 * v * t * t - az * t + float(scad_penalty(np.float64(t), lam, a))

    best = min(candidates, key=g)
    return sign * best


def _coordinate_update(penalty: PenaltySpec, k: int, z: float, v: float) -> float:
    if penalty.kind == "lasso":
        return soft_threshold(z, penalty.strength) / v
    if penalty.kind == "adalasso":
        return soft_threshold(z, penalty.strength * penalty.weights[k]) / v
    if penalty.kind == "enet":
        lam, mix = penalty.strength, penalty.mix
        return soft_threshold(z, lam * mix) / (v + 2.0 * lam * (1.0 - mix))
    if penalty.kind == "ridge":
        return z / (v + 2.0 * penalty.strength)
    return _scad_update(z, v, penalty.strength, penalty.a)


class CoordinateDescentRunner:
    """Cyclic coordinate descent over one sample, reusable across a grid.

    Caches the Gram matrix (covariance updates, O(1) per idle coordinate)
    when the predictor count permits, falling back to residual updates
    otherwise.  Sweeps visit coordinates in ascending index order; between
    full sweeps the active (nonzero) set is cycled to convergence.
    """

    def __init__(self, sample: RegressionSample, config: SolverConfig):
        self.config = config
        self.n_obs = sample.n_obs
        self.K = sample.n_predictors
        scale = 1.0 / (self.n_obs - 1)
        y = sample.centered_benchmark
        A = -sample.centered_predictors
        self.corr = A.T @ y * scale
        self.v = np.einsum("tk,tk->k", A, A) * scale
        self.const = 0.5 * float(y @ y) * scale
        self.use_gram = self.K <= _GRAM_LIMIT
        if self.use_gram:
            self.G = (A.T @ A) * scale
            self.A = None
            self.y = None
        else:
            self.G = None
            self.A = np.ascontiguousarray(A.T)  # row-major per-coordinate access
            self.y = y
        self.scale = scale

    def lambda_max(self, penalty_kind: str, weights: Optional[np.ndarray] = None,
                   mix: float = 1.0, a: float = 3.7) -> float:
        """Smallest penalty strength with an all-zero solution (L1 family).

        For SCAD the non-convex escape branch also has to be priced: zero is
        the global univariate minimum only when |z| <= lambda AND
        z^2 <= v * lambda^2 * (a + 1), so small-variance columns push the
        threshold up by 1/sqrt(v (a + 1)).
        """
        score = np.abs(self.corr)
        if penalty_kind == "adalasso":
            with np.errstate(divide="ignore"):
                score = np.where(weights > 0, score / weights, np.inf)
            score = score[np.isfinite(score)]
        elif penalty_kind == "scad":
            with np.errstate(divide="ignore", invalid="ignore"):
                factor = np.maximum(1.0, 1.0 / np.sqrt(self.v * (a + 1.0)))
            score = np.where(self.v > _DEGENERATE_EPS, score * factor, 0.0)
        top = float(score.max()) if score.size else 0.0
        if penalty_kind == "enet":
            top /= max(mix, 1e-3)
        if top <= 0.0:
            top = 1e-8  # response orthogonal to every predictor; any grid works
        return top

    def fit(self, penalty: PenaltySpec, warm: Optional[np.ndarray] = None) -> FitResult:
        cfg = self.config
        theta = np.zeros(self.K) if warm is None else warm.astype(np.float64).copy()
        v = self.v
        ok = v > _DEGENERATE_EPS
        theta[~ok] = 0.0

        if self.use_gram:
            s = self.G @ theta
            resid = None
        else:
            s = None
            resid = self.y - self.A.T @ theta

        def obj():
            if self.use_gram:
                quad = 0.5 * float(theta @ s) - float(self.corr @ theta) + self.const
            else:
                quad = 0.5 * float(resid @ resid) * self.scale
            return quad + penalty_value(penalty, theta)

        def sweep(indices) -> float:
            nonlocal s, resid
            biggest = 0.0
            for k in indices:
                if not ok[k]:
                    continue
                old = theta[k]
                if self.use_gram:
                    z = self.corr[k] - s[k] + v[k] * old
                else:
                    z = float(self.A[k] @ resid) * self.scale + v[k] * old
                new = _coordinate_update(penalty, k, z, v[k])
                if new != old:
                    theta[k] = new
                    delta = new - old
                    if self.use_gram:
                        s += delta * self.G[:, k]
                    else:
                        resid -= delta * self.A[k]
                    step = abs(delta)
                    if step > biggest:
                        biggest = step
            return biggest

        trace = [obj()]
        sweeps = 0
        converged = False
        all_idx = range(self.K)
        while sweeps < cfg.max_sweeps:
            change = sweep(all_idx)
            sweeps += 1
            trace.append(obj())
            if change <= cfg.tolerance * max(float(np.abs(theta).max()), 1e-12):
                converged = True
                break
            active = np.flatnonzero(theta)
            while sweeps < cfg.max_sweeps:
                change = sweep(active)
                sweeps += 1
                trace.append(obj())
                if change <= cfg.tolerance * max(float(np.abs(theta).max()), 1e-12):
                    break
        if not converged:
            logger.warning("coordinate descent hit max_sweeps=%d without converging",
                           cfg.max_sweeps)
        hyper = {"strength": penalty.strength}
        if penalty.kind == "enet":
            hyper["mix"] = penalty.mix
        if penalty.kind == "scad":
            hyper["a"] = penalty.a
        coef = CoefficientVector(values=theta, selected=theta != 0.0,
                                 solver=penalty.kind, hyperparameters=hyper)
        return FitResult(theta=coef, objective_trace=tuple(trace),
                         converged=converged, sweeps_used=sweeps)


def fit_ols(sample: RegressionSample) -> FitResult:
    """Closed-form minimum-variance coefficients -Sigma_c^{-1} sigma_bc.

    Requires K < T and a well-conditioned predictor covariance; beyond that
    the sample covariance is no longer positive definite and the problem
    needs regularization.
    """
    K, T = sample.n_predictors, sample.n_obs
    if K >= T:
        raise SolverError(
            f"OLS needs K < T but K={K}, T={T}: sample covariance is singular"
        )
    cov = sample.predictor_covariance
    cond = np.linalg.cond(cov)
    if not np.isfinite(cond) or cond > 1e12:
        raise SolverError(
            f"predictor covariance ill-conditioned (cond={cond:.2e}) with K={K}, T={T}"
        )
    theta = -np.linalg.solve(cov, sample.benchmark_covariance)
    coef = CoefficientVector(values=theta, selected=theta != 0.0, solver="ols")
    return FitResult(theta=coef,
                     objective_trace=(objective_value(sample, PenaltySpec("ols"), theta),))


class _RidgeSolver:
    """Thin-SVD ridge machinery, reusable across a lambda grid.

    Exploits K >> T: sigma_bc lies in the predictor-return row space, so
    -(Sigma_c + 2*lambda*I)^{-1} sigma_bc needs only the nonzero spectrum.
    """

    def __init__(self, sample: RegressionSample):
        self.scale = 1.0 / (sample.n_obs - 1)
        U, s, Vt = np.linalg.svd(sample.centered_predictors, full_matrices=False)
        self.s = s
        self.Vt = Vt
        self.g = U.T @ sample.centered_benchmark
        self.live = s > (s.max() * 1e-13 if s.size and s.max() > 0 else np.inf)

    def solve(self, lam: float) -> np.ndarray:
        if lam < 0:
            raise ValueError("ridge lambda must be nonnegative")
        s, g = self.s, self.g
        if lam == 0.0:  # minimum-norm OLS limit
            coef_spec = np.divide(g, s, out=np.zeros_like(g), where=self.live)
        else:
            coef_spec = s * g * self.scale / (s * s * self.scale + 2.0 * lam)
        return -(self.Vt.T @ coef_spec)


def fit_ridge(sample: RegressionSample, lam: float) -> FitResult:
    """Ridge closed form -(Sigma_c + 2*lambda*I)^{-1} sigma_bc via thin SVD.

    lambda = 0 returns the minimum-norm OLS solution (equal to OLS when
    K < T and the covariance is nonsingular).
    """
    theta = _RidgeSolver(sample).solve(lam)
    coef = CoefficientVector(values=theta, selected=theta != 0.0, solver="ridge",
                             hyperparameters={"lambda": lam})
    pen = PenaltySpec("ridge", strength=lam)
    return FitResult(theta=coef, objective_trace=(objective_value(sample, pen, theta),))


def fit_coordinate_descent(sample: RegressionSample, penalty: PenaltySpec,
                           config: Optional[SolverConfig] = None,
                           warm: Optional[np.ndarray] = None) -> FitResult:
    """Cyclic coordinate descent for lasso, adalasso, elastic net, ridge, SCAD."""
    if penalty.kind == "ols":
        return fit_ols(sample)
    if penalty.kind == "adalasso" and penalty.weights.shape[0] != sample.n_predictors:
        raise ValueError("adalasso weight vector length must match predictor count")
    runner = CoordinateDescentRunner(sample, config or SolverConfig())
    return runner.fit(penalty, warm=warm)


def adaptive_weights(sample: RegressionSample, lam_ridge: float,
                     eps: float = 1e-8) -> np.ndarray:
    """Adalasso weights: inverse absolute ridge coefficients, eps-guarded."""
    ridge = fit_ridge(sample, lam_ridge)
    return 1.0 / (np.abs(ridge.theta.values) + eps)


def _lambda_grid(top: float, config: SolverConfig) -> np.ndarray:
    return np.geomspace(top, top * config.lambda_ratio, config.lambda_count)


def _grid_specs(runner: CoordinateDescentRunner, kind: str, config: SolverConfig,
                weights: Optional[np.ndarray]) -> list:
    """Descending-strength penalty grid for one method."""
    if kind == "enet":
        specs = []
        for mix in config.enet_mixes:
            top = runner.lambda_max("enet", mix=mix)
            specs.extend(PenaltySpec("enet", strength=lam, mix=mix)
                         for lam in _lambda_grid(top, config))
        return specs
    if kind == "ridge":
        top = runner.lambda_max("lasso") * config.ridge_scale
        return [PenaltySpec("ridge", strength=lam) for lam in _lambda_grid(top, config)]
    top = runner.lambda_max(kind, weights=weights, a=config.scad_a)
    if kind == "adalasso":
        return [PenaltySpec("adalasso", strength=lam, weights=weights)
                for lam in _lambda_grid(top, config)]
    if kind == "scad":
        return [PenaltySpec("scad", strength=lam, a=config.scad_a)
                for lam in _lambda_grid(top, config)]
    return [PenaltySpec("lasso", strength=lam) for lam in _lambda_grid(top, config)]


def regularization_path(sample: RegressionSample, kind: str,
                        config: Optional[SolverConfig] = None,
                        weights: Optional[np.ndarray] = None) -> list:
    """Warm-started fits along the descending penalty grid.

    Returns [(hyperparameter dict, FitResult), ...].  For the elastic net
    the grid crosses the mix values with the lambda grid; warm starts reset
    at each mix.
    """
    config = config or SolverConfig()
    if kind == "adalasso" and weights is None:
        raise ValueError("adalasso path needs adaptive weights")
    runner = CoordinateDescentRunner(sample, config)
    out = []
    warm = None
    last_mix = None
    for spec in _grid_specs(runner, kind, config, weights):
        if kind == "enet" and spec.mix != last_mix:
            warm = None
            last_mix = spec.mix
        if kind == "ridge":
            fit = fit_ridge(sample, spec.strength)
        else:
            fit = runner.fit(spec, warm=warm)
            warm = fit.theta.values
        hyper = {"strength": spec.strength}
        if kind == "enet":
            hyper["mix"] = spec.mix
        out.append((hyper, fit))
    return out


def _fold_blocks(n_obs: int, folds: int) -> list:
    """Contiguous, deterministic time blocks covering all rows exactly once."""
    return [idx for idx in np.array_split(np.arange(n_obs), folds)]


def _heldout_error(train: RegressionSample, test_rb: np.ndarray, test_rc: np.ndarray,
                   theta: np.ndarray) -> float:
    """Half mean squared portfolio return on held-out rows.

    Centering statistics come from the training rows only.
    """
    rb = test_rb - train.benchmark_returns.mean()
    rc = test_rc - train.predictor_returns.mean(axis=0)
    resid = rb + rc @ theta
    return 0.5 * float(resid @ resid) / resid.shape[0]


def cross_validate(sample: RegressionSample, kind: str,
                   config: Optional[SolverConfig] = None,
                   weights: Optional[np.ndarray] = None):
    """Five-fold CV over the penalty grid, then a full-window refit.

    The folds are contiguous time blocks; the grid is built once from the
    full window and shared across folds.  Ties in mean CV error resolve to
    the strongest penalty.  For adalasso, weights default to the inverse
    ridge coefficients at the ridge CV choice on the same window.

    Returns (chosen PenaltySpec, FitResult from the full-window refit).
    """
    config = config or SolverConfig()
    folds = config.cv_folds
    if sample.n_obs < folds * 2:
        raise ValueError(f"need at least {folds * 2} observations for {folds}-fold CV")
    if kind == "ols":
        fit = fit_ols(sample)
        return PenaltySpec("ols"), fit
    if kind == "adalasso" and weights is None:
        ridge_spec, _ = cross_validate(sample, "ridge", config)
        weights = adaptive_weights(sample, ridge_spec.strength)

    full_runner = CoordinateDescentRunner(sample, config)
    specs = _grid_specs(full_runner, kind, config, weights)
    errors = np.zeros(len(specs))

    blocks = _fold_blocks(sample.n_obs, folds)
    mask = np.ones(sample.n_obs, dtype=bool)
    for block in blocks:
        mask[:] = True
        mask[block] = False
        train = sample.subsample(mask)
        test_rb = sample.benchmark_returns[block]
        test_rc = sample.predictor_returns[block]
        if kind == "ridge":
            solver = _RidgeSolver(train)
            for i, spec in enumerate(specs):
                theta = solver.solve(spec.strength)
                errors[i] += _heldout_error(train, test_rb, test_rc, theta)
        else:
            runner = CoordinateDescentRunner(train, config)
            warm = None
            last_mix = None
            for i, spec in enumerate(specs):
                if kind == "enet" and spec.mix != last_mix:
                    warm = None
                    last_mix = spec.mix
                fit = runner.fit(spec, warm=warm)
                warm = fit.theta.values
                errors[i] += _heldout_error(train, test_rb, test_rc, fit.theta.values)
    errors /= folds

    if not np.isfinite(errors).any():
        logger.warning("all CV fits degenerate; falling back to theta = 0")
        zero = np.zeros(sample.n_predictors)
        coef = CoefficientVector(values=zero, selected=zero != 0.0, solver=kind,
                                 hyperparameters={"fallback": 1.0})
        return specs[0], FitResult(theta=coef)

    best = int(np.nanargmin(errors))
    chosen = specs[best]
    if kind == "ridge":
        refit = fit_ridge(sample, chosen.strength)
    else:
        path_warm = None
        refit = None
        last_mix = None
        for i, spec in enumerate(specs):
            if kind == "enet" and spec.mix != last_mix:
                path_warm = None
                last_mix = spec.mix
            if spec.mix != chosen.mix and kind == "enet":
                continue
            fit = full_runner.fit(spec, warm=path_warm)
            path_warm = fit.theta.values
            if i == best:
                refit = fit
                break
    refit = replace(refit, theta=replace(refit.theta,
                                         hyperparameters={**refit.theta.hyperparameters,
                                                          "cv_error": float(errors[best])}))
    return chosen, refit
