import numpy as np
import pytest

from portsel.portfolio import RegressionSample
from portsel.solvers import (CoordinateDescentRunner, FitResult, PenaltySpec,
                             SolverConfig, SolverError, _scad_update,
                             adaptive_weights, cross_validate,
                             fit_coordinate_descent, fit_ols, fit_ridge,
                             objective_value, penalty_value, regularization_path,
                             soft_threshold, _fold_blocks)
from portsel.synth import make_noise_sample, make_orthonormal_columns, make_planted_sample

from oracles import (brute_force_minimum, ols_closed_form, penalized_objective,
                     scad_penalty_ref)

TIGHT = SolverConfig(tolerance=1e-12)


def random_sample(rng, T=50, K=3, scale=0.02):
    rb = rng.standard_normal(T) * scale
    rc = rng.standard_normal((T, K)) * scale
    return RegressionSample(rb, rc)


def orthonormal_sample(rng, T=60, K=8):
    """Columns with unit sample sd and exactly diagonal Gram/(T-1)."""
    rc = make_orthonormal_columns(T, K, rng)
    rb = rng.standard_normal(T)
    return RegressionSample(rb, rc)


class TestOLS:
    def test_scalar_formula(self):
        rng = np.random.default_rng(0)
        s = random_sample(rng, T=40, K=1)
        fit = fit_ols(s)
        rb = s.centered_benchmark
        rc = s.centered_predictors[:, 0]
        expected = -float(rb @ rc) / float(rc @ rc)
        assert fit.theta.values[0] == pytest.approx(expected, rel=1e-12)

    def test_matches_brute_force_minimizer(self):
        rng = np.random.default_rng(1)
        for seed in range(5):
            s = random_sample(np.random.default_rng(seed), T=50, K=3)
            fit = fit_ols(s)
            theta_bf, val_bf = brute_force_minimum(
                s.benchmark_returns, s.predictor_returns, lambda th: 0.0)
            ours = objective_value(s, PenaltySpec("ols"), fit.theta.values)
            assert ours <= val_bf + 1e-6
            np.testing.assert_allclose(fit.theta.values, theta_bf, atol=1e-4)

    def test_k_at_least_t_is_error(self):
        rng = np.random.default_rng(2)
        s = random_sample(rng, T=10, K=10)
        with pytest.raises(SolverError, match="K"):
            fit_ols(s)

    def test_ill_conditioned_is_error(self):
        rng = np.random.default_rng(3)
        base = rng.standard_normal(50)
        rc = np.column_stack([base, base * (1 + 1e-14), rng.standard_normal(50)])
        s = RegressionSample(rng.standard_normal(50), rc)
        with pytest.raises(SolverError, match="cond"):
            fit_ols(s)


class TestRidge:
    def test_huge_lambda_shrinks_to_benchmark(self):
        rng = np.random.default_rng(4)
        s = random_sample(rng, T=60, K=10)
        fit = fit_ridge(s, 1e12)
        assert np.abs(fit.theta.values).max() < 1e-6

    def test_zero_lambda_equals_ols(self):
        rng = np.random.default_rng(5)
        s = random_sample(rng, T=50, K=4)
        np.testing.assert_allclose(fit_ridge(s, 0.0).theta.values,
                                   fit_ols(s).theta.values, atol=1e-10)

    def test_orthogonal_design_coordinatewise(self):
        rng = np.random.default_rng(6)
        s = orthonormal_sample(rng, T=40, K=2)
        lam = 0.3
        fit = fit_ridge(s, lam)
        sigma_bc = s.benchmark_covariance
        diag = np.diag(s.predictor_covariance)
        expected = -sigma_bc / (diag + 2 * lam)
        np.testing.assert_allclose(fit.theta.values, expected, atol=1e-10)

    def test_matches_direct_solve(self):
        # independent algebra path: form the K x K system explicitly
        rng = np.random.default_rng(7)
        for seed in range(10):
            s = random_sample(np.random.default_rng(100 + seed), T=30, K=6)
            lam = 10.0 ** rng.uniform(-4, 2)
            direct = -np.linalg.solve(
                s.predictor_covariance + 2 * lam * np.eye(6), s.benchmark_covariance)
            np.testing.assert_allclose(fit_ridge(s, lam).theta.values, direct,
                                       atol=1e-8)

    def test_wide_problem_supported(self):
        rng = np.random.default_rng(8)
        s = random_sample(rng, T=20, K=50)
        fit = fit_ridge(s, 0.01)
        assert np.isfinite(fit.theta.values).all()


class TestSoftThreshold:
    def test_kernel(self):
        assert soft_threshold(3.0, 1.0) == 2.0
        assert soft_threshold(-3.0, 1.0) == -2.0
        assert soft_threshold(0.5, 1.0) == 0.0


class TestScadUpdate:
    def test_against_grid_search(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            z = rng.uniform(-5, 5)
            v = rng.uniform(0.2, 3.0)
            lam = rng.uniform(0.01, 2.0)
            a = 3.7
            t_hat = _scad_update(z, v, lam, a)
            grid = np.linspace(-10, 10, 200001)
            vals = 0.5 * v * grid ** 2 - z * grid + scad_penalty_ref(grid, lam, a)
            t_grid = grid[np.argmin(vals)]
            obj = lambda t: 0.5 * v * t * t - z * t + scad_penalty_ref(t, lam, a)
            assert obj(t_hat) <= obj(t_grid) + 1e-10


class TestCoordinateDescent:
    def test_lasso_orthonormal_equals_soft_thresholded_ols(self):
        rng = np.random.default_rng(10)
        for seed in range(10):
            s = orthonormal_sample(np.random.default_rng(300 + seed), T=50, K=6)
            ols = fit_ols(s).theta.values
            rho = float(np.median(np.abs(ols)))
            fit = fit_coordinate_descent(s, PenaltySpec("lasso", strength=rho), TIGHT)
            expected = np.array([soft_threshold(t, rho) for t in ols])
            np.testing.assert_allclose(fit.theta.values, expected, atol=1e-8)

    def test_rho_max_gives_exact_zero(self):
        rng = np.random.default_rng(11)
        s = random_sample(rng, T=50, K=8)
        runner = CoordinateDescentRunner(s, TIGHT)
        rho_max = runner.lambda_max("lasso")
        fit = fit_coordinate_descent(s, PenaltySpec("lasso", strength=rho_max), TIGHT)
        np.testing.assert_array_equal(fit.theta.values, 0.0)
        fit2 = fit_coordinate_descent(
            s, PenaltySpec("lasso", strength=0.99 * rho_max), TIGHT)
        assert np.abs(fit2.theta.values).max() > 0.0

    def test_scad_keeps_large_coefficients_unshrunk(self):
        rng = np.random.default_rng(12)
        for seed in range(10):
            s = orthonormal_sample(np.random.default_rng(500 + seed), T=50, K=6)
            ols = fit_ols(s).theta.values
            lam = 0.9 * np.abs(ols).max() / 3.7
            fit = fit_coordinate_descent(
                s, PenaltySpec("scad", strength=lam, a=3.7), TIGHT)
            big = np.abs(ols) > 3.7 * lam
            assert big.any()
            np.testing.assert_allclose(fit.theta.values[big], ols[big], atol=1e-8)

    def test_adalasso_reweights_coordinates(self):
        rng = np.random.default_rng(13)
        s = orthonormal_sample(rng, T=50, K=4)
        ols = fit_ols(s).theta.values
        weights = np.full(4, 2.0)
        rho = float(np.median(np.abs(ols))) / 2.0
        fit = fit_coordinate_descent(
            s, PenaltySpec("adalasso", strength=rho, weights=weights), TIGHT)
        expected = np.array([soft_threshold(t, rho * 2.0) for t in ols])
        np.testing.assert_allclose(fit.theta.values, expected, atol=1e-8)

    def test_degenerate_column_pinned_at_zero(self):
        rng = np.random.default_rng(14)
        rc = rng.standard_normal((40, 3))
        rc[:, 1] = 0.0
        s = RegressionSample(rng.standard_normal(40), rc)
        fit = fit_coordinate_descent(s, PenaltySpec("lasso", strength=1e-6), TIGHT)
        assert fit.theta.values[1] == 0.0

    def test_objective_trace_monotone_for_convex_penalties(self):
        rng = np.random.default_rng(15)
        for kind, spec in [
            ("lasso", PenaltySpec("lasso", strength=0.005)),
            ("enet", PenaltySpec("enet", strength=0.005, mix=0.5)),
            ("ridge", PenaltySpec("ridge", strength=0.01)),
        ]:
            s = random_sample(np.random.default_rng(700), T=60, K=12)
            fit = fit_coordinate_descent(s, spec, TIGHT)
            trace = np.asarray(fit.objective_trace)
            assert (np.diff(trace) <= 1e-12).all(), kind

    def test_nesting_identities(self):
        rng = np.random.default_rng(16)
        s = random_sample(rng, T=50, K=5)
        lam = 0.004
        lasso = fit_coordinate_descent(s, PenaltySpec("lasso", strength=lam), TIGHT)
        enet1 = fit_coordinate_descent(s, PenaltySpec("enet", strength=lam, mix=1.0),
                                       TIGHT)
        np.testing.assert_allclose(lasso.theta.values, enet1.theta.values, atol=1e-12)
        enet0 = fit_coordinate_descent(s, PenaltySpec("enet", strength=lam, mix=0.0),
                                       TIGHT)
        ridge = fit_ridge(s, lam)
        np.testing.assert_allclose(enet0.theta.values, ridge.theta.values, atol=1e-6)

    def test_zero_penalty_equals_ols(self):
        rng = np.random.default_rng(17)
        s = random_sample(rng, T=50, K=3)
        ols = fit_ols(s).theta.values
        for spec in [PenaltySpec("lasso", strength=0.0),
                     PenaltySpec("enet", strength=0.0, mix=0.5),
                     PenaltySpec("scad", strength=0.0)]:
            fit = fit_coordinate_descent(s, spec, TIGHT)
            np.testing.assert_allclose(fit.theta.values, ols, atol=1e-8)

    @pytest.mark.parametrize("kind,make_spec", [
        ("lasso", lambda lam: PenaltySpec("lasso", strength=lam)),
        ("ridge", lambda lam: PenaltySpec("ridge", strength=lam)),
        ("enet", lambda lam: PenaltySpec("enet", strength=lam, mix=0.5)),
        ("scad", lambda lam: PenaltySpec("scad", strength=lam)),
        ("adalasso", None),
    ])
    def test_brute_force_equivalence(self, kind, make_spec):
        # K <= 3: solver objective within 1e-4 of an independent minimizer
        for seed in range(10):
            rng = np.random.default_rng(900 + seed)
            s = random_sample(rng, T=50, K=3, scale=1.0)
            lam = 10.0 ** rng.uniform(-3, -0.5)
            if kind == "adalasso":
                weights = rng.uniform(0.5, 2.0, size=3)
                spec = PenaltySpec("adalasso", strength=lam, weights=weights)
                pen_fn = lambda th: lam * float(weights @ np.abs(th))
            else:
                spec = make_spec(lam)
                pen_fn = lambda th: penalty_value(spec, np.asarray(th))
            if kind == "ridge":
                fit = fit_ridge(s, lam)
            else:
                fit = fit_coordinate_descent(s, spec, TIGHT)
            ours = objective_value(s, spec, fit.theta.values)
            _, val_bf = brute_force_minimum(s.benchmark_returns, s.predictor_returns,
                                            pen_fn)
            assert ours <= val_bf + 1e-4, (kind, seed)


class TestAdaptiveWeights:
    def test_eps_guard_on_zero_coefficient(self):
        rng = np.random.default_rng(18)
        rc = rng.standard_normal((40, 2))
        rb = rng.standard_normal(40)
        s = RegressionSample(rb, rc)
        w = adaptive_weights(s, 1e15)  # ridge wipes out everything
        assert (w > 1e7).all()

    def test_inverse_magnitudes(self):
        # engineered ridge coefficients (1, 0.1) give weights (~1, ~10)
        rng = np.random.default_rng(19)
        rc = make_orthonormal_columns(50, 2, rng)
        target = np.array([1.0, 0.1])
        rb = -rc @ target  # noiseless: OLS recovers target exactly
        s = RegressionSample(rb, rc)
        w = adaptive_weights(s, 0.0)
        np.testing.assert_allclose(w, [1.0, 10.0], rtol=1e-6)

    def test_constant_ridge_coefficients_scale_lasso(self):
        rng = np.random.default_rng(20)
        s = orthonormal_sample(rng, T=40, K=3)
        phi = np.full(3, 2.5)
        rho = 0.1
        ada = fit_coordinate_descent(
            s, PenaltySpec("adalasso", strength=rho, weights=phi), TIGHT)
        lasso = fit_coordinate_descent(
            s, PenaltySpec("lasso", strength=rho * 2.5), TIGHT)
        np.testing.assert_allclose(ada.theta.values, lasso.theta.values, atol=1e-12)


class TestRegularizationPath:
    def test_grid_shape_and_zero_start(self):
        rng = np.random.default_rng(21)
        s = random_sample(rng, T=60, K=10)
        cfg = SolverConfig(lambda_count=25)
        for kind in ("lasso", "scad"):
            path = regularization_path(s, kind, cfg)
            assert len(path) == 25
            first = path[0][1]
            np.testing.assert_array_equal(first.theta.values, 0.0)

    def test_enet_grid_crosses_mixes(self):
        rng = np.random.default_rng(22)
        s = random_sample(rng, T=60, K=6)
        cfg = SolverConfig(lambda_count=10, enet_mixes=(0.1, 0.5, 0.9))
        path = regularization_path(s, "enet", cfg)
        assert len(path) == 30
        mixes = {h["mix"] for h, _ in path}
        assert mixes == {0.1, 0.5, 0.9}
        for h, fit in path:
            if h["strength"] == max(p[0]["strength"] for p in path
                                    if p[0]["mix"] == h["mix"]):
                np.testing.assert_array_equal(fit.theta.values, 0.0)

    def test_each_point_beats_zero_vector(self):
        rng = np.random.default_rng(23)
        s = random_sample(rng, T=60, K=8)
        cfg = SolverConfig(lambda_count=15)
        for h, fit in regularization_path(s, "lasso", cfg):
            spec = PenaltySpec("lasso", strength=h["strength"])
            at_fit = objective_value(s, spec, fit.theta.values)
            at_zero = objective_value(s, spec, np.zeros(8))
            assert at_fit <= at_zero + 1e-12


class TestCrossValidate:
    def test_fold_partition(self):
        blocks = _fold_blocks(53, 5)
        assert len(blocks) == 5
        flat = np.concatenate(blocks)
        np.testing.assert_array_equal(flat, np.arange(53))
        for b in blocks:  # contiguity
            np.testing.assert_array_equal(b, np.arange(b[0], b[-1] + 1))

    def test_needs_enough_observations(self):
        rng = np.random.default_rng(24)
        s = random_sample(rng, T=8, K=2)
        with pytest.raises(ValueError):
            cross_validate(s, "lasso", SolverConfig())

    def test_planted_model_recovery(self):
        # support always recovered; false positives stay low on average
        cfg = SolverConfig(lambda_count=40)
        support = [3, 11, 27]
        fp_counts = []
        hits = 0
        for seed in range(20):
            sample, theta_star = make_planted_sample(
                K=50, T=100, support=support, magnitudes=[1.0, -0.8, 0.6],
                seed=seed, snr=10.0)
            _, fit = cross_validate(sample, "lasso", cfg)
            selected = set(np.flatnonzero(fit.theta.selected))
            if set(support) <= selected:
                hits += 1
            fp_counts.append(len(selected - set(support)))
        assert hits == 20
        assert np.mean(fp_counts) <= 5.0

    def test_null_model_selects_almost_nothing(self):
        cfg = SolverConfig(lambda_count=40)
        counts = []
        for seed in range(20):
            sample = make_noise_sample(K=50, T=100, seed=1000 + seed)
            _, fit = cross_validate(sample, "lasso", cfg)
            counts.append(fit.theta.n_selected)
        assert np.mean(counts) <= 2.0

    def test_returns_chosen_spec_and_refit(self):
        rng = np.random.default_rng(25)
        s = random_sample(rng, T=60, K=5)
        spec, fit = cross_validate(s, "ridge", SolverConfig(lambda_count=12))
        assert spec.kind == "ridge"
        assert isinstance(fit, FitResult)
        assert "cv_error" in fit.theta.hyperparameters

    def test_adalasso_cv_builds_weights_internally(self):
        sample, _ = make_planted_sample(K=20, T=80, support=[2, 9],
                                        magnitudes=[1.0, -1.0], seed=7, snr=10.0)
        spec, fit = cross_validate(sample, "adalasso", SolverConfig(lambda_count=25))
        assert spec.kind == "adalasso"
        selected = set(np.flatnonzero(fit.theta.selected))
        assert {2, 9} <= selected
