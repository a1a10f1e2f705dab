"""
State estimation for armaxlab.
Steady-state Kalman filtering for known models, the zero-error observer of
the canonical ARMAX realization and the model-free estimator driven by the
online identifier.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Deque, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, signal

from armaxlab.config import settings
from armaxlab.errors import DimensionError, InvalidModelError, SolverError
from armaxlab.ident_online import OnlineIdentifier
from armaxlab.model_core import (
    ArmaxParams,
    StateSpaceModel,
    Trajectory,
    autocorrelation,
    companion_matrices,
    make_rng,
    observer_error_matrix,
    polynomial_is_stable,
    to_observable_canonical,
)
from armaxlab.utils import get_logger, log_operation

logger = get_logger(__name__)

INNOVATION_GUARD = 1e-12


@dataclass(frozen=True)
class NoiseCovariance:
    """Joint covariance [[Q, S], [S', R]] of process noise w and measurement noise v."""

    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        S = np.asarray(self.S, dtype=float).reshape(Q.shape[0], R.shape[0])
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "S", S)

        joint = self.joint
        if not np.allclose(joint, joint.T, atol=1e-12):
            raise InvalidModelError("noise covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(joint)) < -1e-9 * max(1.0, np.max(np.abs(joint))):
            raise InvalidModelError("noise covariance must be positive semidefinite")

    @property
    def joint(self) -> np.ndarray:
        return np.block([[self.Q, self.S], [self.S.T, self.R]])

    @classmethod
    def armax(cls, sigma2: float) -> "NoiseCovariance":
        """Q = R = S = sigma2, the covariance of the canonical ARMAX realization."""
        return cls(Q=[[sigma2]], R=[[sigma2]], S=[[sigma2]])


@dataclass
class ObserverSolution:
    """Steady-state observer gain L and error covariance Sigma."""

    L: np.ndarray
    Sigma: np.ndarray
    iterations: int
    residual: float


@dataclass
class EstimatorState:
    """
    Current state estimate x_hat_k.

    The lag rings (newest first) are only used by the model-free estimator.
    """

    x_hat: np.ndarray
    k: int = 0
    y_lags: Deque[float] = field(default_factory=deque)
    u_lags: Deque[float] = field(default_factory=deque)
    e_lags: Deque[float] = field(default_factory=deque)

    @classmethod
    def start(cls, n: int, m: int = 0, p: int = 0) -> "EstimatorState":
        return cls(
            x_hat=np.zeros(n),
            y_lags=deque([0.0] * n, maxlen=n),
            u_lags=deque([0.0] * m, maxlen=m),
            e_lags=deque([0.0] * p, maxlen=p)
        )


@dataclass(frozen=True)
class PitfallRealization:
    """One of two realizations with identical output statistics."""

    name: str
    model: StateSpaceModel
    noise: NoiseCovariance
    generator: StateSpaceModel


def solve_estimation_are(
    model: StateSpaceModel,
    noise: NoiseCovariance,
    tol: float = settings.are_tolerance,
    max_iter: int = settings.are_max_iter
) -> ObserverSolution:
    """
    Fixed-point iteration of the filtering Riccati equation from Sigma_0 = 0.

        G     = A Sigma C' + B2 S
        Sigma = A Sigma A' - G (C Sigma C' + R)^-1 G' + B2 Q B2'
        L     = G (C Sigma C' + R)^-1
    """
    A, B2, C = model.A, model.B2, model.C
    if noise.Q.shape[0] != B2.shape[1] or noise.R.shape[0] != C.shape[0]:
        raise DimensionError("noise covariance does not match the model dimensions")

    process = B2 @ noise.Q @ B2.T
    Sigma = np.zeros_like(A)
    residual = float("inf")

    for iteration in range(1, max_iter + 1):
        gain_term, innovation = _innovation_terms(A, B2, C, noise, Sigma)
        correction = gain_term @ linalg.solve(innovation, gain_term.T, assume_a="sym")
        Sigma_next = A @ Sigma @ A.T - correction + process
        Sigma_next = 0.5 * (Sigma_next + Sigma_next.T)

        residual = float(np.max(np.abs(Sigma_next - Sigma))) if Sigma.size else 0.0
        Sigma = Sigma_next
        if residual < tol:
            gain_term, innovation = _innovation_terms(A, B2, C, noise, Sigma)
            L = linalg.solve(innovation, gain_term.T, assume_a="sym").T
            log_operation("solve_estimation_are", "estimation", {
                "iterations": iteration,
                "residual": residual,
                "sigma_trace": float(np.trace(Sigma))
            })
            return ObserverSolution(L=L, Sigma=Sigma, iterations=iteration, residual=residual)

    log_operation("solve_estimation_are", "estimation", {"iterations": max_iter, "residual": residual}, "ERROR")
    raise SolverError(f"estimation ARE did not converge in {max_iter} iterations", residual=residual, iterations=max_iter)


def _innovation_terms(A, B2, C, noise: NoiseCovariance, Sigma: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    innovation = C @ Sigma @ C.T + noise.R
    innovation = 0.5 * (innovation + innovation.T)
    if np.min(np.abs(np.linalg.eigvalsh(innovation))) < INNOVATION_GUARD:
        raise SolverError("innovation covariance C Sigma C' + R is singular")
    return A @ Sigma @ C.T + B2 @ noise.S, innovation


def kalman_step(state: EstimatorState, model: StateSpaceModel, L: np.ndarray, u: float, y: float) -> EstimatorState:
    """x_hat_{k+1} = A x_hat + B1 u + L (y - C x_hat)."""
    x = state.x_hat
    innovation = float(y) - float(model.C[0] @ x)
    x_next = model.A @ x + model.B1[:, 0] * float(u) + np.asarray(L, dtype=float).reshape(-1) * innovation
    return EstimatorState(x_hat=x_next, k=state.k + 1)


def run_kalman_filter(model: StateSpaceModel, L: np.ndarray, traj: Trajectory) -> np.ndarray:
    """Predicted states x_hat_k (given y_{<k}) along a trajectory, x_hat_0 = 0."""
    state = EstimatorState(x_hat=np.zeros(model.n))
    estimates = np.zeros((len(traj), model.n))
    for k in range(len(traj)):
        estimates[k] = state.x_hat
        state = kalman_step(state, model, L, traj.u[k], traj.y[k])
    return estimates


def canonical_observer_gain(params: ArmaxParams) -> np.ndarray:
    """L = B2 of the canonical realization; requires a stable c(z)."""
    if not polynomial_is_stable(params.c_poly):
        raise InvalidModelError("canonical observer gain requires a stable c(z)")
    return to_observable_canonical(params).B2


def error_cov_step(Sigma: np.ndarray, model: StateSpaceModel) -> np.ndarray:
    """Sigma+ = (A - B2 C) Sigma (A - B2 C)'."""
    F = observer_error_matrix(model)
    return F @ np.asarray(Sigma, dtype=float) @ F.T


def model_free_estimator_step(
    ident: OnlineIdentifier,
    state: EstimatorState,
    u_k: float,
    y_k: float
) -> Tuple[EstimatorState, float, float]:
    """
    One step of the estimator built from the identifier's current estimate.

    y_hat_k and e_k use the stacked estimate over the state's own y/u/e lag
    rings. The state advances through the canonical realization of the same
    estimate, driven by that prediction error: x_hat+ = A x_hat + B1 u_k + B2 e_k.
    With a constant estimate and zero pre-samples e_k equals y_k - C x_hat_k.
    The state is updated in place and returned.
    """
    n, m, p = ident.n, ident.m, ident.p
    if n < m or n < p:
        raise DimensionError(f"realization needs n >= m and n >= p, got n={n}, m={m}, p={p}")
    if state.x_hat.size != n:
        raise DimensionError(f"estimator state has dimension {state.x_hat.size}, identifier n={n}")

    theta = ident.theta
    a, b, c = theta[:n], theta[n:n + m], theta[n + m:]
    y_lags = np.fromiter(state.y_lags, dtype=float, count=n)
    u_lags = np.fromiter(state.u_lags, dtype=float, count=m)
    e_lags = np.fromiter(state.e_lags, dtype=float, count=p)

    y_hat = float(-a @ y_lags + b @ u_lags + c @ e_lags)
    e_k = float(y_k) - y_hat

    A, B1, B2, _ = companion_matrices(a, b, c)
    state.x_hat = A @ state.x_hat + B1[:, 0] * float(u_k) + B2[:, 0] * e_k
    state.k += 1

    state.y_lags.appendleft(float(y_k))
    state.u_lags.appendleft(float(u_k))
    state.e_lags.appendleft(e_k)
    return state, e_k, y_hat


def run_model_free_estimation(traj: Trajectory, n: int, m: int, p: int, p0: float = settings.p0) -> pd.DataFrame:
    """
    Identifier and estimator in lockstep over a record.

    Columns k, e, y_hat, x_hat1..x_hatn, plus err_sq = |x_k - x_hat_k|^2
    when the trajectory carries the true state. x_hat_k is the estimate held
    before sample k is processed.
    """
    ident = OnlineIdentifier(n, m, p, p0=p0)
    state = EstimatorState.start(n, m, p)
    T = len(traj)
    x_hat = np.zeros((T, n))
    e = np.zeros(T)
    y_hat = np.zeros(T)

    for k in range(T):
        x_hat[k] = state.x_hat
        ident.step(traj.u[k], traj.y[k])
        _, e[k], y_hat[k] = model_free_estimator_step(ident, state, traj.u[k], traj.y[k])

    table = pd.DataFrame({"k": np.arange(T), "e": e, "y_hat": y_hat})
    for i in range(n):
        table[f"x_hat{i + 1}"] = x_hat[:, i]
    if traj.x is not None and traj.state_dim == n:
        table["err_sq"] = np.sum((traj.x - x_hat) ** 2, axis=1)

    log_operation("model_free_estimation", "estimation", {
        "samples": T,
        "theta": ident.theta,
        "eps2": ident.eps2,
        "rejected_steps": len(ident.step_log)
    })
    return table


def simulate_state_space(
    model: StateSpaceModel,
    noise: NoiseCovariance,
    input: Sequence[float],
    horizon: int,
    seed: int
) -> Trajectory:
    """
    Simulate x_{k+1} = A x + B1 u + B2 w, y = C x + v from x_0 = 0.

    (w_k, v_k) are drawn jointly from N(0, [[Q, S], [S', R]]).
    """
    if horizon < 1:
        raise DimensionError(f"horizon must be >= 1, got {horizon}")
    u = np.asarray(input, dtype=float).ravel()
    if u.size < horizon:
        raise DimensionError(f"input has {u.size} samples, need {horizon}")
    u = u[:horizon]

    nw = noise.Q.shape[0]
    ny = noise.R.shape[0]
    if ny != 1:
        raise DimensionError("only single-output models are supported")

    draws = make_rng(seed).multivariate_normal(np.zeros(nw + ny), noise.joint, size=horizon, method="eigh")
    w, v = draws[:, :nw], draws[:, nw:]

    B = np.hstack([model.B1[:, :1], model.B2, np.zeros((model.n, ny))])
    D = np.hstack([np.zeros((ny, 1 + nw)), np.eye(ny)])
    _, y, x = signal.dlsim((model.A, B, model.C, D, 1), np.column_stack([u, w, v]))
    return Trajectory(
        u=u,
        y=np.asarray(y, dtype=float).reshape(horizon),
        w=w[:, 0] if nw == 1 else None,
        x=np.asarray(x, dtype=float).reshape(horizon, model.n),
        seed=int(seed)
    )


def pitfall_realizations() -> List[PitfallRealization]:
    """
    Two realizations of y_k = w_{k-1} + w_k + mu_k with unit-variance w, mu.

    "direct":   y = x + (w + mu),  Q=1, R=2, S=1
    "spectral": y = x/alpha + w,   Q=R=S=alpha, alpha=(3+sqrt(5))/2

    The observer is designed on the A=1 matrices; output records come from
    the generating recursion x+ = w (A=0), which keeps y stationary with
    r(0)=3, r(1)=1 in both cases.
    """
    alpha = 0.5 * (3.0 + np.sqrt(5.0))
    direct = PitfallRealization(
        name="direct",
        model=StateSpaceModel(A=[[1.0]], B1=[[0.0]], B2=[[1.0]], C=[[1.0]]),
        noise=NoiseCovariance(Q=[[1.0]], R=[[2.0]], S=[[1.0]]),
        generator=StateSpaceModel(A=[[0.0]], B1=[[0.0]], B2=[[1.0]], C=[[1.0]])
    )
    spectral = PitfallRealization(
        name="spectral",
        model=StateSpaceModel(A=[[1.0]], B1=[[0.0]], B2=[[1.0]], C=[[1.0 / alpha]]),
        noise=NoiseCovariance(Q=[[alpha]], R=[[alpha]], S=[[alpha]]),
        generator=StateSpaceModel(A=[[0.0]], B1=[[0.0]], B2=[[1.0]], C=[[1.0 / alpha]])
    )
    return [direct, spectral]


def pitfall_demo(horizon: int, seed: int) -> Dict[str, Any]:
    """
    Output statistics and optimal Sigma of both realizations on equal-length records.

    Both outputs share r(0) = 3, r(1) = 1, so the lag-1 correlation r(1)/r(0)
    of each record should sit within bound = 3/sqrt(T) of 1/3.
    """
    results: Dict[str, Any] = {
        "horizon": horizon,
        "seed": seed,
        "rho1_exact": 1.0 / 3.0,
        "bound": 3.0 / np.sqrt(horizon),
        "realizations": []
    }
    for realization in pitfall_realizations():
        solution = solve_estimation_are(realization.model, realization.noise)
        traj = simulate_state_space(realization.generator, realization.noise, np.zeros(horizon), horizon, seed)
        r = autocorrelation(traj.y, 1)
        results["realizations"].append({
            "name": realization.name,
            "sigma": float(solution.Sigma[0, 0]),
            "L": float(solution.L[0, 0]),
            "r0": float(r[0]),
            "r1": float(r[1]),
            "rho1": float(r[1] / r[0]) if r[0] > 0 else 0.0
        })

    log_operation("pitfall_demo", "estimation", results)
    return results
