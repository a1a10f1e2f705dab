"""
Tests for the ARMAX model core.
"""

import numpy as np
import pytest
from scipy import signal

from armaxlab.errors import DimensionError, InvalidModelError
from armaxlab.model_core import (
    ArmaxParams,
    Channel,
    DelayPolynomial,
    PolynomialKind,
    StateSpaceModel,
    autocorrelation,
    impulse_response,
    make_rng,
    observer_error_matrix,
    polynomial_is_stable,
    reconstruct_innovations,
    rollout,
    sample_correlation,
    simulate_armax,
    theoretical_autocovariance,
    to_observable_canonical,
)


class TestArmaxParams:
    """Test cases for the parameter container."""

    def test_theta_stacks_a_b_c(self, reference_params):
        np.testing.assert_array_equal(reference_params.theta, [-1.1, 0.3, 1.0, 0.4])
        assert reference_params.orders == (2, 1, 1)

    def test_from_theta_inverts_theta(self, reference_params):
        rebuilt = ArmaxParams.from_theta(reference_params.theta, 2, 1, 1, sigma2=1.0)
        assert rebuilt == reference_params

    def test_from_theta_rejects_wrong_length(self):
        with pytest.raises(DimensionError):
            ArmaxParams.from_theta([1.0, 2.0], 2, 1, 1)

    def test_validate_finite(self):
        with pytest.raises(InvalidModelError):
            ArmaxParams(a=[float("nan")]).validate_finite()
        with pytest.raises(InvalidModelError):
            ArmaxParams(sigma2=-1.0).validate_finite()

    def test_polynomial_taps(self, reference_params):
        np.testing.assert_array_equal(reference_params.a_poly.taps, [1.0, -1.1, 0.3])
        np.testing.assert_array_equal(reference_params.b_poly.taps, [0.0, 1.0])
        assert reference_params.c_poly.degree == 1


class TestCanonicalRealization:
    """Test cases for the observable-canonical realization."""

    def test_matrices(self, reference_params):
        model = to_observable_canonical(reference_params)
        np.testing.assert_allclose(model.A, [[0.0, -0.3], [1.0, 1.1]])
        np.testing.assert_allclose(model.B1[:, 0], [0.0, 1.0])
        np.testing.assert_allclose(model.B2[:, 0], [-0.3, 1.5])
        np.testing.assert_allclose(model.C, [[0.0, 1.0]])

    def test_worked_example(self):
        model = to_observable_canonical(ArmaxParams(a=[0.5, 0.25], b=[1.0], c=[0.4]))
        np.testing.assert_allclose(model.A, [[0.0, -0.25], [1.0, -0.5]])
        np.testing.assert_allclose(model.B1[:, 0], [0.0, 1.0])
        np.testing.assert_allclose(model.B2[:, 0], [-0.25, -0.1])
        np.testing.assert_allclose(model.C, [[0.0, 1.0]])

    def test_all_zero_first_order(self):
        model = to_observable_canonical(ArmaxParams(a=[0.0], b=[0.0], c=[0.0]))
        np.testing.assert_array_equal(model.A, [[0.0]])
        np.testing.assert_array_equal(model.B1, [[0.0]])
        np.testing.assert_array_equal(model.B2, [[0.0]])
        np.testing.assert_array_equal(model.C, [[1.0]])

    def test_impulse_responses_match_recursion(self):
        params = ArmaxParams(a=[-0.9, 0.2], b=[1.0, 0.5], c=[0.3])
        model = to_observable_canonical(params)
        impulse = np.zeros(50)
        impulse[0] = 1.0

        expected_input = signal.lfilter(params.b_poly.taps, params.a_poly.taps, impulse)
        expected_noise = signal.lfilter(params.c_poly.taps, params.a_poly.taps, impulse)
        np.testing.assert_allclose(impulse_response(model, Channel.INPUT, 50), expected_input, atol=1e-10)
        np.testing.assert_allclose(impulse_response(model, Channel.NOISE, 50), expected_noise, atol=1e-10)

    def test_observer_error_characteristic_polynomial(self):
        params = ArmaxParams(a=[-0.5, 0.1, 0.05], b=[1.0], c=[0.3, -0.2])
        F = observer_error_matrix(to_observable_canonical(params))
        np.testing.assert_allclose(np.poly(F), [1.0, 0.3, -0.2, 0.0], atol=1e-12)

    def test_requires_n_at_least_m_and_p(self):
        with pytest.raises(DimensionError):
            to_observable_canonical(ArmaxParams(a=[0.5], c=[0.1, 0.2]))
        with pytest.raises(DimensionError):
            to_observable_canonical(ArmaxParams(a=[0.5], b=[1.0, 1.0]))

    def test_rollout_matches_simulation(self, reference_params):
        T = 200
        u = make_rng(3, 1).standard_normal(T)
        traj = simulate_armax(reference_params, u, T, seed=3, with_truth=True)
        y, x = rollout(to_observable_canonical(reference_params), traj.u, traj.w)
        np.testing.assert_allclose(y, traj.y, atol=1e-10)
        np.testing.assert_allclose(traj.y, traj.x[:, -1] + traj.w, atol=1e-10)

    def test_rollout_matches_simulation_on_random_models(self, rng):
        for draw in range(20):
            roots = rng.uniform(-0.9, 0.9, size=3)
            params = ArmaxParams(
                a=np.poly(roots)[1:].tolist(),
                b=rng.standard_normal(2).tolist(),
                c=(0.5 * rng.standard_normal(2)).tolist()
            )
            u = make_rng(draw, 1).standard_normal(100)
            traj = simulate_armax(params, u, 100, seed=draw, with_truth=True)
            y, _ = rollout(to_observable_canonical(params), traj.u, traj.w)
            np.testing.assert_allclose(y, traj.y, atol=1e-9)

    def test_state_space_model_reshapes(self):
        model = StateSpaceModel(A=[[0.5]], B1=[1.0], B2=[0.2], C=[1.0])
        assert model.n == 1
        assert model.B1.shape == (1, 1)
        assert model.C.shape == (1, 1)


class TestStability:
    """Test cases for polynomial stability."""

    def test_stable_and_unstable(self):
        assert polynomial_is_stable(DelayPolynomial((0.5,)))
        assert not polynomial_is_stable(DelayPolynomial((-2.0,)))
        assert polynomial_is_stable(DelayPolynomial(()))

    def test_complex_roots_inside_unit_circle(self):
        # roots of z^2 - 1.5 z + 0.7 have modulus sqrt(0.7)
        assert polynomial_is_stable(DelayPolynomial((-1.5, 0.7)))
        assert not polynomial_is_stable(DelayPolynomial((-1.5, 1.1)))

    def test_non_monic_rejected(self):
        with pytest.raises(InvalidModelError):
            polynomial_is_stable(DelayPolynomial((1.0,), PolynomialKind.STRICTLY_CAUSAL))


class TestSimulation:
    """Test cases for seeded simulation."""

    def test_same_seed_same_record(self, reference_params, make_trajectory):
        first = make_trajectory(reference_params, 500, seed=7)
        second = make_trajectory(reference_params, 500, seed=7)
        np.testing.assert_array_equal(first.y, second.y)
        np.testing.assert_array_equal(first.u, second.u)

    def test_different_seed_different_record(self, reference_params, make_trajectory):
        first = make_trajectory(reference_params, 500, seed=1)
        second = make_trajectory(reference_params, 500, seed=2)
        assert not np.allclose(first.y, second.y)

    def test_burn_in_discards_leading_samples(self, reference_params):
        u = make_rng(0, 1).standard_normal(305)
        full = simulate_armax(reference_params, u, 305, seed=0)
        tail = simulate_armax(reference_params, u, 300, seed=0, burn_in=5)
        np.testing.assert_array_equal(tail.y, full.y[5:])
        assert len(tail) == 300

    def test_noise_free_impulse_response(self):
        params = ArmaxParams(a=[-0.5], b=[1.0], sigma2=0.0)
        impulse = np.zeros(8)
        impulse[0] = 1.0
        traj = simulate_armax(params, impulse, 8, seed=0)
        np.testing.assert_allclose(traj.y, [0.0, 1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625], atol=1e-15)

    def test_zero_input_and_noise_give_zero_output(self, reference_params):
        params = reference_params.model_copy(update={"sigma2": 0.0})
        traj = simulate_armax(params, np.zeros(50), 50, seed=9)
        np.testing.assert_array_equal(traj.y, np.zeros(50))

    def test_input_too_short(self, reference_params):
        with pytest.raises(DimensionError):
            simulate_armax(reference_params, np.zeros(10), 20, seed=0)

    def test_streams_are_independent(self):
        a = make_rng(5, 0).standard_normal(4)
        b = make_rng(5, 1).standard_normal(4)
        assert not np.allclose(a, b)
        np.testing.assert_array_equal(a, make_rng(5, 0).standard_normal(4))


class TestStatistics:
    """Test cases for autocorrelation helpers."""

    def test_autocorrelation_small_sequence(self):
        r = autocorrelation([1.0, 2.0, 3.0], 1)
        np.testing.assert_allclose(r, [14.0 / 3.0, 4.0])

    def test_autocorrelation_lag_out_of_range(self):
        with pytest.raises(DimensionError):
            autocorrelation([1.0, 2.0], 2)

    def test_sample_correlation_of_zero_signal(self):
        np.testing.assert_array_equal(sample_correlation(np.zeros(10), 2), [0.0, 0.0])

    def test_reconstruct_innovations_inverts_ma_filter(self):
        e = make_rng(1).standard_normal(300)
        y = signal.lfilter([1.0, 0.4, -0.2], [1.0], e)
        np.testing.assert_allclose(reconstruct_innovations(y, [0.4, -0.2]), e, atol=1e-10)

    def test_theoretical_autocovariance_ma1(self, ma1_params):
        np.testing.assert_allclose(theoretical_autocovariance(ma1_params, 2), [1.25, 0.5, 0.0], atol=1e-12)

    def test_theoretical_autocovariance_arma11(self):
        r = theoretical_autocovariance(ArmaxParams(a=[-0.5], c=[0.3]), 1)
        assert r[0] == pytest.approx(1.853333, abs=1e-5)
        assert r[1] == pytest.approx(1.226667, abs=1e-5)

    def test_theoretical_autocovariance_needs_stable_a(self):
        with pytest.raises(InvalidModelError):
            theoretical_autocovariance(ArmaxParams(a=[-1.5]), 1)
