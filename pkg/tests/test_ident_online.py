"""
Tests for online identification: recursive IV, online MA value iteration and
the combined identifier.
"""

import numpy as np
import pytest

from armaxlab.errors import DegeneracyError, DimensionError
from armaxlab.ident_online import (
    OnlineIdentifier,
    OnlineMaState,
    RecursiveIvState,
    discounted_prediction_cost,
    estimate_columns,
    online_ma_step,
    riv_step,
)
from armaxlab.model_core import make_rng


class TestRecursiveIv:
    """Test cases for the recursive IV update."""

    def test_scalar_step(self):
        state = RecursiveIvState(theta_tilde=np.zeros(1), P=100.0 * np.eye(1))
        riv_step(state, [2.0], [1.0], 0.5)
        assert state.k == 1
        assert state.theta_tilde[0] == pytest.approx(100.0 / 201.0, abs=1e-12)
        assert state.P[0, 0] == pytest.approx(200.0 / 201.0, abs=1e-12)

    def test_matches_direct_solution_every_step(self):
        rng = make_rng(0, 5)
        d, p0 = 3, 100.0
        state = RecursiveIvState(theta_tilde=np.zeros(d), P=p0 * np.eye(d))
        R = np.eye(d) / p0
        r = np.zeros(d)
        for k in range(1, 51):
            zeta = rng.standard_normal(d)
            phi = zeta + 0.5 * rng.standard_normal(d)
            y = float(rng.standard_normal())
            riv_step(state, zeta, phi, y)
            R = (k * R + np.outer(zeta, phi)) / (k + 1)
            r = (k * r + zeta * y) / (k + 1)
            np.testing.assert_allclose(state.theta_tilde, np.linalg.solve(R, r), atol=1e-8)
            np.testing.assert_allclose(state.P, np.linalg.inv(R), rtol=1e-8, atol=1e-8)

    def test_degenerate_step_is_rejected(self):
        state = RecursiveIvState(theta_tilde=np.array([0.3]), P=np.eye(1))
        with pytest.raises(DegeneracyError) as excinfo:
            riv_step(state, [1.0], [-1.0], 2.0)
        assert excinfo.value.gamma == pytest.approx(0.0)
        assert state.k == 1
        np.testing.assert_array_equal(state.theta_tilde, [0.3])
        np.testing.assert_array_equal(state.P, np.eye(1))

    def test_dimension_mismatch(self):
        state = RecursiveIvState.start(1, 1, 1)
        with pytest.raises(DimensionError):
            riv_step(state, [1.0], [1.0, 2.0], 0.0)

    def test_regressors_delay_instruments_by_p(self):
        state = RecursiveIvState.start(n=1, m=1, p=1)
        state.push(u=1.0, y=2.0)
        state.push(u=3.0, y=4.0)
        zeta, phi = state.regressors()
        np.testing.assert_array_equal(phi, [-4.0, 3.0])
        np.testing.assert_array_equal(zeta, [-2.0, 3.0])


class TestOnlineMa:
    """Test cases for the online MA value iteration."""

    def test_start_state(self):
        state = OnlineMaState.start(1, 2.0)
        assert state.r[0] == 4.0
        assert state.eps2 == 4.0
        np.testing.assert_array_equal(state.c, [0.0])

    def test_single_step(self):
        state = OnlineMaState.start(1, 1.0)
        c, eps2 = online_ma_step(state, 1.0)
        # r = (1, 0.5): c = 0.5 / 1, eps2 = 1 - 0.25
        np.testing.assert_allclose(state.r, [1.0, 0.5])
        assert c[0] == pytest.approx(0.5)
        assert eps2 == pytest.approx(0.75)

    def test_all_zero_stream_stays_at_zero_model(self):
        state = OnlineMaState.start(2, 0.0)
        for _ in range(20):
            c, eps2 = online_ma_step(state, 0.0)
            np.testing.assert_array_equal(c, [0.0, 0.0])
            assert eps2 == 0.0
        np.testing.assert_array_equal(state.r, np.zeros(3))


class TestOnlineIdentifier:
    """Test cases for the sample-by-sample ARMAX identifier."""

    def test_first_sample_only_initializes(self):
        ident = OnlineIdentifier(2, 1, 1)
        estimate = ident.step(1.0, 2.0)
        assert ident.initialized
        np.testing.assert_array_equal(estimate, np.zeros(4))
        assert ident.samples == 1

    def test_recovers_reference_model(self, reference_params, make_trajectory):
        traj = make_trajectory(reference_params, 30_000, seed=2, burn_in=20)
        ident = OnlineIdentifier(2, 1, 1)
        table = ident.run(traj.u, traj.y)

        assert list(table.columns) == ["k", "a1", "a2", "b1", "c1", "eps2"]
        assert len(table) == 30_000
        np.testing.assert_allclose(ident.theta, reference_params.theta, atol=0.15)
        assert ident.eps2 == pytest.approx(1.0, abs=0.15)
        assert ident.params.orders == (2, 1, 1)

    def test_pure_ma_stream(self, ma1_params, make_trajectory):
        traj = make_trajectory(ma1_params, 20_000, seed=3)
        ident = OnlineIdentifier(0, 0, 1)
        ident.run(traj.u, traj.y)
        assert ident.c[0] == pytest.approx(0.5, abs=0.05)
        assert ident.eps2 == pytest.approx(1.0, abs=0.05)

    def test_run_rejects_mismatched_lengths(self):
        with pytest.raises(DimensionError):
            OnlineIdentifier(1, 1, 1).run([1.0, 2.0], [1.0])

    def test_negative_orders(self):
        with pytest.raises(DimensionError):
            OnlineIdentifier(-1, 0, 0)

    def test_estimate_columns(self):
        assert estimate_columns(1, 2, 0) == ["a1", "b1", "b2"]


class TestDiscountedCost:
    """Test cases for the discounted prediction-error cost."""

    @pytest.mark.parametrize("gamma", [0.5, 0.9, 0.99])
    def test_white_errors_reach_sigma2_over_one_minus_gamma(self, gamma):
        e = make_rng(4).standard_normal(200_000)
        cost = discounted_prediction_cost(e, gamma)
        assert cost * (1.0 - gamma) == pytest.approx(1.0, rel=0.05)

    def test_invalid_discount(self):
        with pytest.raises(ValueError):
            discounted_prediction_cost([1.0], 1.0)
        with pytest.raises(DimensionError):
            discounted_prediction_cost([], 0.5)
