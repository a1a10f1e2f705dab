"""
Tests for state estimation: the filtering Riccati solver, the canonical
observer, the realization pitfall and the model-free estimator.
"""

import numpy as np
import pytest

from armaxlab.errors import DimensionError, InvalidModelError
from armaxlab.estimation import (
    EstimatorState,
    NoiseCovariance,
    canonical_observer_gain,
    error_cov_step,
    pitfall_realizations,
    kalman_step,
    model_free_estimator_step,
    pitfall_demo,
    run_kalman_filter,
    run_model_free_estimation,
    simulate_state_space,
    solve_estimation_are,
)
from armaxlab.ident_online import OnlineIdentifier
from armaxlab.model_core import ArmaxParams, StateSpaceModel, to_observable_canonical

GOLDEN_SIGMA = 0.5 * (np.sqrt(5.0) - 1.0)


class TestNoiseCovariance:
    """Test cases for the joint noise covariance."""

    def test_joint_block(self):
        noise = NoiseCovariance(Q=[[1.0]], R=[[2.0]], S=[[1.0]])
        np.testing.assert_array_equal(noise.joint, [[1.0, 1.0], [1.0, 2.0]])

    def test_rejects_indefinite(self):
        with pytest.raises(InvalidModelError):
            NoiseCovariance(Q=[[1.0]], R=[[1.0]], S=[[2.0]])

    def test_armax_covariance(self):
        noise = NoiseCovariance.armax(0.5)
        assert noise.Q[0, 0] == noise.R[0, 0] == noise.S[0, 0] == 0.5


class TestEstimationAre:
    """Test cases for the steady-state filtering Riccati equation."""

    def test_direct_realization_golden_values(self):
        direct, _ = pitfall_realizations()
        solution = solve_estimation_are(direct.model, direct.noise)
        assert solution.Sigma[0, 0] == pytest.approx(GOLDEN_SIGMA, abs=1e-6)
        assert solution.L[0, 0] == pytest.approx(GOLDEN_SIGMA, abs=1e-6)

    def test_spectral_realization_golden_values(self):
        _, spectral = pitfall_realizations()
        solution = solve_estimation_are(spectral.model, spectral.noise)
        assert solution.Sigma[0, 0] == pytest.approx(0.0, abs=1e-8)
        assert solution.L[0, 0] == pytest.approx(1.0, abs=1e-8)

    def test_canonical_realization_gain_is_b2(self, reference_params):
        model = to_observable_canonical(reference_params)
        solution = solve_estimation_are(model, NoiseCovariance.armax(reference_params.sigma2))
        np.testing.assert_allclose(solution.L, model.B2, atol=1e-6)
        np.testing.assert_allclose(solution.Sigma, np.zeros((2, 2)), atol=1e-8)

    def test_residual_reproduces_sigma(self):
        direct, _ = pitfall_realizations()
        solution = solve_estimation_are(direct.model, direct.noise)
        S = solution.Sigma[0, 0]
        # Sigma = Sigma - (Sigma + 1)^2 / (Sigma + 2) + 1
        assert S - (S + 1.0) ** 2 / (S + 2.0) + 1.0 == pytest.approx(S, abs=1e-9)

    def test_dimension_mismatch(self):
        model = StateSpaceModel(A=[[0.5]], B1=[[0.0]], B2=[[1.0]], C=[[1.0]])
        noise = NoiseCovariance(Q=np.eye(2), R=[[1.0]], S=[[0.0], [0.0]])
        with pytest.raises(DimensionError):
            solve_estimation_are(model, noise)


class TestKnownModelFilter:
    """Test cases for the model-based filter and the canonical observer."""

    def test_kalman_step(self):
        model = StateSpaceModel(A=[[1.0]], B1=[[0.0]], B2=[[1.0]], C=[[1.0]])
        state = kalman_step(EstimatorState(x_hat=np.zeros(1)), model, np.array([[GOLDEN_SIGMA]]), 0.0, 1.0)
        assert state.x_hat[0] == pytest.approx(0.618034, abs=1e-6)
        assert state.k == 1

    def test_observer_error_contracts(self, reference_params):
        model = to_observable_canonical(reference_params)
        Sigma = np.eye(2)
        for _ in range(50):
            Sigma = error_cov_step(Sigma, model)
        assert np.linalg.norm(Sigma) < 1e-6

    def test_canonical_gain_needs_stable_c(self):
        with pytest.raises(InvalidModelError):
            canonical_observer_gain(ArmaxParams(a=[0.5], c=[1.5]))

    def test_canonical_observer_converges_to_state(self, reference_params, make_trajectory):
        traj = make_trajectory(reference_params, 300, seed=6, with_truth=True, burn_in=20)
        model = to_observable_canonical(reference_params)
        x_hat = run_kalman_filter(model, canonical_observer_gain(reference_params), traj)
        error = np.sum((traj.x - x_hat) ** 2, axis=1)
        assert error[0] > 1e-6
        assert error[-1] < 1e-20

    def test_model_free_estimator_with_frozen_truth_matches_observer(self, reference_params, make_trajectory):
        traj = make_trajectory(reference_params, 200, seed=7, with_truth=True)
        model = to_observable_canonical(reference_params)
        expected = run_kalman_filter(model, model.B2, traj)

        ident = OnlineIdentifier(2, 1, 1)
        ident.step(0.0, 0.0)
        ident.iv.theta_tilde = reference_params.theta[:3].copy()
        ident.ma.c = np.array(reference_params.c)
        state = EstimatorState.start(2, 1, 1)
        for k in range(len(traj)):
            np.testing.assert_allclose(state.x_hat, expected[k], atol=1e-9)
            _, e_k, _ = model_free_estimator_step(ident, state, traj.u[k], traj.y[k])
            assert e_k == pytest.approx(traj.w[k], abs=1e-9)


class TestModelFreeEstimation:
    """Test cases for the estimator driven by the online identifier."""

    def test_zero_signals_keep_zero_state(self):
        ident = OnlineIdentifier(2, 1, 1)
        state = EstimatorState.start(2, 1, 1)
        for _ in range(10):
            ident.step(0.0, 0.0)
            _, e_k, y_hat = model_free_estimator_step(ident, state, 0.0, 0.0)
            assert e_k == 0.0
            assert y_hat == 0.0
        np.testing.assert_array_equal(state.x_hat, np.zeros(2))

    def test_state_is_driven_by_prediction_error(self, reference_params):
        ident = OnlineIdentifier(2, 1, 1)
        ident.step(0.0, 0.0)
        ident.iv.theta_tilde = reference_params.theta[:3].copy()
        ident.ma.c = np.array(reference_params.c)
        state = EstimatorState.start(2, 1, 1)
        state.x_hat = np.array([1.0, 2.0])

        # empty lag rings: y_hat = 0, so e = y while y - C x_hat = -1
        _, e_k, y_hat = model_free_estimator_step(ident, state, 0.5, 1.0)
        assert y_hat == 0.0
        assert e_k == 1.0
        np.testing.assert_allclose(state.x_hat, [-0.9, 5.2], atol=1e-12)

    def test_order_guard(self):
        with pytest.raises(DimensionError):
            model_free_estimator_step(OnlineIdentifier(1, 1, 2), EstimatorState.start(1, 1, 2), 0.0, 0.0)

    def test_state_error_becomes_small(self, reference_params, make_trajectory):
        traj = make_trajectory(reference_params, 30_000, seed=8, with_truth=True, burn_in=20)
        table = run_model_free_estimation(traj, 2, 1, 1)
        assert list(table.columns) == ["k", "e", "y_hat", "x_hat1", "x_hat2", "err_sq"]

        window = 5_000
        error = table["err_sq"].to_numpy()[-window:].mean()
        power = np.sum(traj.x[-window:] ** 2, axis=1).mean()
        assert error / power < 0.05

    def test_windowed_state_error_decays(self, reference_params, make_trajectory):
        traj = make_trajectory(reference_params, 40_000, seed=13, with_truth=True, burn_in=20)
        error = run_model_free_estimation(traj, 2, 1, 1)["err_sq"].to_numpy()
        means = error.reshape(4, 10_000).mean(axis=1)
        assert means[-1] < means[0]
        for earlier, later in zip(means[1:], means[2:]):
            assert later <= 1.25 * earlier

    def test_without_truth_has_no_error_column(self, reference_params, make_trajectory):
        traj = make_trajectory(reference_params, 100, seed=8)
        table = run_model_free_estimation(traj, 2, 1, 1)
        assert "err_sq" not in table.columns


class TestPitfall:
    """Test cases for the two realizations with equal output statistics."""

    def test_simulate_state_space_shapes(self):
        direct, _ = pitfall_realizations()
        traj = simulate_state_space(direct.generator, direct.noise, np.zeros(100), 100, seed=1)
        assert len(traj) == 100
        assert traj.x.shape == (100, 1)
        np.testing.assert_allclose(traj.x[1:, 0], traj.w[:-1])

    def test_outputs_are_indistinguishable_while_sigma_differs(self):
        horizon = 100_000
        result = pitfall_demo(horizon, seed=0)
        direct, spectral = result["realizations"]

        assert direct["sigma"] == pytest.approx(GOLDEN_SIGMA, abs=1e-6)
        assert spectral["sigma"] == pytest.approx(0.0, abs=1e-8)
        for realization in (direct, spectral):
            assert realization["r0"] == pytest.approx(3.0, rel=0.05)
            assert realization["r1"] == pytest.approx(1.0, abs=0.1)
            assert abs(realization["rho1"] - 1.0 / 3.0) < result["bound"]
