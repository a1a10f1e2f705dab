"""
Tests for offline identification: MA value iteration and instrumental variables.
"""

import numpy as np
import pytest
from scipy import signal

from armaxlab.errors import ConfigError, DimensionError, ExcitationError, InvalidModelError
from armaxlab.ident_offline import (
    arma_instrument_gram,
    armax_identify_offline,
    iv_estimate_arx,
    ma_coefficient_update,
    ma_identify_offline,
    orthogonality_statistics,
    plr_bootstrap,
    residual_series,
    solve_rho_system,
)
from armaxlab.model_core import ArmaxParams, DelayPolynomial, Trajectory, make_rng, theoretical_autocovariance


class TestMaValueIteration:
    """Test cases for the offline MA value iteration."""

    def test_first_iterates(self):
        trace = ma_identify_offline([1.25, 0.5], p=1, iterations=3)
        np.testing.assert_allclose([c[0] for c in trace.c_estimates], [0.0, 0.4, 0.476190], atol=1e-6)
        np.testing.assert_allclose(trace.eps2, [1.25, 1.05, 1.011905], atol=1e-6)
        assert not trace.converged

    @pytest.mark.parametrize("c", [[0.5], [0.5, -0.3]])
    def test_converges_on_exact_statistics(self, c):
        params = ArmaxParams(c=c, sigma2=1.0)
        trace = ma_identify_offline(theoretical_autocovariance(params, len(c)), len(c), iterations=500)
        assert trace.converged
        np.testing.assert_allclose(trace.c, c, atol=1e-6)
        assert trace.sigma2 == pytest.approx(1.0, abs=1e-6)

    def test_zero_statistics_give_zero_model(self):
        trace = ma_identify_offline([0.0, 0.0], p=1, iterations=10)
        np.testing.assert_array_equal(trace.c, [0.0])
        assert trace.sigma2 == 0.0

    def test_order_zero(self):
        trace = ma_identify_offline([2.0], p=0, iterations=5)
        assert trace.sigma2 == 2.0
        assert trace.c.size == 0

    def test_invalid_arguments(self):
        with pytest.raises(ConfigError):
            ma_identify_offline([1.0, 0.5], p=1, iterations=0)
        with pytest.raises(DimensionError):
            ma_identify_offline([1.0], p=1, iterations=10)
        with pytest.raises(InvalidModelError):
            ma_identify_offline([-1.0, 0.5], p=1, iterations=10)

    def test_to_records(self):
        trace = ma_identify_offline([1.25, 0.5], p=1, iterations=2)
        records = trace.to_records()
        assert records[1]["iteration"] == 1
        assert records[1]["c"] == pytest.approx([0.4])


class TestRhoSystem:
    """Test cases for the triangular rho solve and the coefficient update."""

    def test_back_substitution(self):
        rho = solve_rho_system([[0.4, 0.0]], [0.5, 0.2])
        np.testing.assert_allclose(rho, [0.42, 0.2])

    def test_missing_history_is_zero(self):
        np.testing.assert_allclose(solve_rho_system([], [0.5, 0.2]), [0.5, 0.2])

    def test_zero_branch(self):
        c, eps2 = ma_coefficient_update(np.array([0.5]), np.array([0.0]), 1.25)
        np.testing.assert_array_equal(c, [0.0])
        assert eps2 == 1.25

    def test_eps2_clamped_at_zero(self):
        c, eps2 = ma_coefficient_update(np.array([2.0]), np.array([1.0]), 1.0)
        assert c[0] == 2.0
        assert eps2 == 0.0


class TestInstrumentalVariables:
    """Test cases for the IV estimate of a and b."""

    def test_consistent_on_reference_model(self, reference_params, make_trajectory):
        traj = make_trajectory(reference_params, 100_000, seed=11, burn_in=20)
        iv = iv_estimate_arx(traj, 2, 1, 1)
        np.testing.assert_allclose(iv.theta_tilde, [-1.1, 0.3, 1.0], atol=0.05)
        assert iv.samples == 100_000 - 3
        assert np.isfinite(iv.condition)

    def test_filtered_instruments(self, reference_params, make_trajectory):
        traj = make_trajectory(reference_params, 100_000, seed=12, burn_in=20)
        iv = iv_estimate_arx(traj, 2, 1, 1, filter=DelayPolynomial((0.4,)))
        np.testing.assert_allclose(iv.theta_tilde, [-1.1, 0.3, 1.0], atol=0.05)

    def test_zero_input_is_not_exciting(self):
        y = make_rng(0).standard_normal(500)
        traj = Trajectory(u=np.zeros(500), y=y)
        with pytest.raises(ExcitationError):
            iv_estimate_arx(traj, 1, 1, 1)

    @pytest.mark.parametrize("p", [0, 1])
    def test_noise_free_first_order_is_exact(self, make_trajectory, p):
        params = ArmaxParams(a=[-0.5], b=[1.0], c=[0.0] * p, sigma2=0.0)
        traj = make_trajectory(params, 2000, seed=3)
        iv = iv_estimate_arx(traj, 1, 1, p)
        np.testing.assert_allclose(iv.theta_tilde, [-0.5, 1.0], atol=1e-8)

    def test_zero_output_is_not_exciting(self):
        u = make_rng(0, 1).standard_normal(500)
        with pytest.raises(ExcitationError):
            iv_estimate_arx(Trajectory(u=u, y=np.zeros(500)), 1, 1, 1)

    def test_error_shrinks_with_record_length(self, reference_params, make_trajectory):
        def median_error(horizon):
            errors = []
            for seed in range(10):
                traj = make_trajectory(reference_params, horizon, seed=seed, burn_in=20)
                iv = iv_estimate_arx(traj, 2, 1, 1)
                errors.append(np.linalg.norm(iv.theta_tilde - reference_params.theta[:3]))
            return np.median(errors)

        # sixteen times the samples, roughly a quarter of the error
        short, long = median_error(4_000), median_error(64_000)
        assert long < 0.5 * short
        assert long > 0.05 * short

    def test_record_too_short(self):
        traj = Trajectory(u=np.ones(3), y=np.ones(3))
        with pytest.raises(DimensionError):
            iv_estimate_arx(traj, 2, 1, 1)

    def test_empty_regression(self):
        traj = Trajectory(u=np.ones(5), y=np.ones(5))
        assert iv_estimate_arx(traj, 0, 0, 1).theta_tilde.size == 0

    def test_residual_series_recovers_ma_noise(self, reference_params, make_trajectory):
        traj = make_trajectory(reference_params, 1000, seed=4, with_truth=True)
        ytilde = residual_series(traj, [-1.1, 0.3, 1.0], 2)
        np.testing.assert_allclose(ytilde, signal.lfilter([1.0, 0.4], [1.0], traj.w), atol=1e-9)

    def test_arma_instrument_gram(self):
        R, nonsingular = arma_instrument_gram([3.0, 2.0, 1.0, 0.5], n=2, p=1)
        np.testing.assert_array_equal(R, [[2.0, 3.0], [1.0, 2.0]])
        assert nonsingular
        with pytest.raises(DimensionError):
            arma_instrument_gram([3.0, 2.0], n=2, p=1)


class TestOfflinePipeline:
    """Test cases for the full offline identification."""

    def test_recovers_reference_model(self, reference_params, make_trajectory):
        traj = make_trajectory(reference_params, 100_000, seed=21, burn_in=20)
        result = armax_identify_offline(traj, 2, 1, 1)
        np.testing.assert_allclose(result.params.theta, reference_params.theta, atol=0.1)
        assert result.params.sigma2 == pytest.approx(1.0, abs=0.1)

        report = result.to_report()
        assert set(report) == {"theta_tilde", "c", "sigma2", "condition", "trace"}
        assert len(report["theta_tilde"]) == 3

    def test_pure_ma_record(self, ma1_params, make_trajectory):
        traj = make_trajectory(ma1_params, 50_000, seed=5)
        result = armax_identify_offline(traj, 0, 0, 1)
        assert result.iv is None
        assert result.params.c[0] == pytest.approx(0.5, abs=0.05)
        assert result.params.sigma2 == pytest.approx(1.0, abs=0.05)

    def test_plr_baseline(self, reference_params, make_trajectory):
        traj = make_trajectory(reference_params, 50_000, seed=8, burn_in=20)
        theta = plr_bootstrap(traj, 2, 1, 1, sweeps=5)
        np.testing.assert_allclose(theta, reference_params.theta, atol=0.1)

    def test_plr_first_order_armax(self, make_trajectory):
        params = ArmaxParams(a=[-0.5], b=[1.0], c=[0.3], sigma2=1.0)
        traj = make_trajectory(params, 20_000, seed=4, burn_in=20)
        theta = plr_bootstrap(traj, 1, 1, 1, sweeps=10)
        np.testing.assert_allclose(theta, [-0.5, 1.0, 0.3], atol=0.05)

    def test_plr_without_noise_dynamics_is_least_squares(self, make_trajectory):
        params = ArmaxParams(a=[-0.5], b=[1.0], sigma2=1.0)
        traj = make_trajectory(params, 5_000, seed=6)
        phi = np.column_stack([-traj.y[:-1], traj.u[:-1]])
        expected, *_ = np.linalg.lstsq(phi, traj.y[1:], rcond=None)
        np.testing.assert_allclose(plr_bootstrap(traj, 1, 1, 0, sweeps=3), expected, atol=1e-10)

    def test_plr_needs_a_sweep(self, reference_params, make_trajectory):
        with pytest.raises(ConfigError):
            plr_bootstrap(make_trajectory(reference_params, 100), 2, 1, 1, sweeps=0)


class TestOrthogonality:
    """Test cases for the innovation whiteness statistics."""

    def test_correct_model_is_white(self):
        w = make_rng(9).standard_normal(20_000)
        y = signal.lfilter([1.0, 0.9], [1.0], w)
        stats = orthogonality_statistics(y, [0.9], 2)
        assert stats.bound == pytest.approx(3.0 / np.sqrt(20_000))
        assert stats.correlations.shape == (2,)
        assert np.all(stats.correlations < 4.0 / np.sqrt(20_000))

    def test_wrong_model_is_not_white(self):
        w = make_rng(9).standard_normal(20_000)
        y = signal.lfilter([1.0, 0.9], [1.0], w)
        stats = orthogonality_statistics(y, [0.0], 2)
        assert stats.correlations[0] > 0.4
        assert not stats.passed
