"""
Discounted LQR/LQG for armaxlab.
Riccati iteration, gain and Q-function assembly, value evaluation of a fixed
linear policy and the model-free LQG loop that runs in lockstep with the
online identifier and estimator.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from armaxlab.config import settings
from armaxlab.errors import DimensionError, InvalidModelError, SolverError
from armaxlab.estimation import EstimatorState, model_free_estimator_step
from armaxlab.ident_online import OnlineIdentifier
from armaxlab.model_core import ArmaxParams, companion_matrices, make_rng, to_observable_canonical
from armaxlab.utils import Timer, get_logger, log_operation

logger = get_logger(__name__)

INNER_GUARD = 1e-12
COST_TRUNCATION = 1e-12


@dataclass
class LqrSolution:
    """Converged Riccati solution P and feedback gain K for u = -K x."""

    P: np.ndarray
    K: np.ndarray
    gamma: float
    residual: float
    iterations: int = 0


@dataclass
class QMatrix:
    """Blocks of the quadratic state-action value [[H11, H12], [H12', H22]]."""

    H11: np.ndarray
    H12: np.ndarray
    H22: float

    @property
    def full(self) -> np.ndarray:
        return np.block([[self.H11, self.H12], [self.H12.T, np.array([[self.H22]])]])

    def schur_complement(self) -> np.ndarray:
        return self.H11 - self.H12 @ self.H12.T / self.H22

    def minimizer(self, x: np.ndarray) -> float:
        """argmin_u of [x; u]' H [x; u]."""
        return -float(self.H12[:, 0] @ np.asarray(x, dtype=float)) / self.H22


@dataclass
class LqgState:
    """Riccati iterate P_k and gain K_k of the model-free controller."""

    P: np.ndarray
    K: np.ndarray
    k: int = 0
    step_log: List[Dict[str, Any]] = field(default_factory=list)

    @classmethod
    def start(cls, n: int, P0: Optional[np.ndarray] = None) -> "LqgState":
        P = np.eye(n) if P0 is None else np.asarray(P0, dtype=float).reshape(n, n)
        if n and np.min(np.linalg.eigvalsh(P)) <= 0:
            raise InvalidModelError("initial Riccati iterate must be positive definite")
        return cls(P=P, K=np.zeros((1, n)))


def _as_matrices(A, B1, Q, R) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B1, dtype=float).reshape(n, -1)
    Q = np.asarray(Q, dtype=float).reshape(n, n)
    R = np.atleast_2d(np.asarray(R, dtype=float)).reshape(B.shape[1], B.shape[1])
    return A, B, Q, R


def _inner(P: np.ndarray, B: np.ndarray, R: np.ndarray, gamma: float) -> np.ndarray:
    inner = B.T @ P @ B + R / gamma
    inner = 0.5 * (inner + inner.T)
    if not np.all(np.isfinite(inner)):
        raise SolverError("inner matrix B' P B + R / gamma is not finite")
    if np.min(np.abs(np.linalg.eigvalsh(inner))) < INNER_GUARD:
        raise SolverError("inner matrix B' P B + R / gamma is singular")
    return inner


def riccati_iterate(P: np.ndarray, A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray, gamma: float) -> np.ndarray:
    """P+ = Q + gamma (A' P A - A' P B (B' P B + R/gamma)^-1 B' P A)."""
    PA = P @ A
    BPA = B.T @ PA
    P_next = Q + gamma * (A.T @ PA - BPA.T @ np.linalg.solve(_inner(P, B, R, gamma), BPA))
    return 0.5 * (P_next + P_next.T)


def lqr_gain(P, A, B1, R, gamma: float) -> np.ndarray:
    """K = (B' P B + R/gamma)^-1 B' P A, applied as u = -K x."""
    A, B, P, R = _as_matrices(A, B1, P, R)
    return np.linalg.solve(_inner(P, B, R, gamma), B.T @ P @ A)


def dare_solve(
    A,
    B1,
    Q,
    R,
    gamma: float,
    P0: Optional[np.ndarray] = None,
    tol: float = settings.dare_tolerance,
    max_iter: int = settings.dare_max_iter
) -> LqrSolution:
    """Iterate the discounted Riccati map from P0 (default I) until the step is below tol."""
    A, B, Q, R = _as_matrices(A, B1, Q, R)
    n = A.shape[0]
    if not 0.0 < gamma < 1.0:
        raise InvalidModelError(f"gamma must be in (0, 1), got {gamma}")
    if np.min(np.linalg.eigvalsh(0.5 * (R + R.T))) <= 0:
        raise InvalidModelError("R must be positive definite")
    if n and np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) < -1e-12:
        raise InvalidModelError("Q must be positive semidefinite")

    P = LqgState.start(n, P0).P
    step = float("inf")
    for iteration in range(1, max_iter + 1):
        P_next = riccati_iterate(P, A, B, Q, R, gamma)
        if n and np.min(np.linalg.eigvalsh(P_next)) < -1e-9 * max(1.0, np.max(np.abs(P_next))):
            raise SolverError("Riccati iterate lost positive semidefiniteness", iterations=iteration)
        step = float(np.max(np.abs(P_next - P))) if n else 0.0
        P = P_next
        if step < tol:
            residual = float(np.max(np.abs(riccati_iterate(P, A, B, Q, R, gamma) - P))) if n else 0.0
            K = lqr_gain(P, A, B, R, gamma)
            log_operation("dare_solve", "lqg", {"iterations": iteration, "residual": residual, "K": K})
            return LqrSolution(P=P, K=K, gamma=gamma, residual=residual, iterations=iteration)

    log_operation("dare_solve", "lqg", {"iterations": max_iter, "step": step}, "ERROR")
    raise SolverError(f"DARE iteration did not converge in {max_iter} iterations", residual=step, iterations=max_iter)


def q_matrix(P, A, B1, Q, R, gamma: float) -> QMatrix:
    """H11 = Q + gamma A'PA, H12 = gamma A'PB, H22 = gamma B'PB + R."""
    A, B, Q, R = _as_matrices(A, B1, Q, R)
    P = np.asarray(P, dtype=float).reshape(A.shape)
    return QMatrix(
        H11=Q + gamma * A.T @ P @ A,
        H12=gamma * A.T @ P @ B,
        H22=(gamma * B.T @ P @ B + R).item()
    )


def evaluate_value(
    A_closed,
    Q_eff,
    B,
    sigma2: float,
    gamma: float,
    tol: float = settings.dare_tolerance,
    max_iter: int = settings.dare_max_iter
) -> Tuple[np.ndarray, float]:
    """
    Value x'Px + offset of a fixed closed loop x+ = A_closed x + B w.

    P = Q_eff + gamma A_closed' P A_closed by iteration, and
    offset = gamma sigma2 / (1 - gamma) B'PB.
    """
    A = np.atleast_2d(np.asarray(A_closed, dtype=float))
    n = A.shape[0]
    Q = np.asarray(Q_eff, dtype=float).reshape(n, n)
    B = np.asarray(B, dtype=float).reshape(n, -1)
    if n and np.max(np.abs(np.linalg.eigvals(np.sqrt(gamma) * A))) >= 1.0:
        raise InvalidModelError("sqrt(gamma) * A_closed must be stable")

    P = Q.copy()
    for _ in range(max_iter):
        P_next = Q + gamma * A.T @ P @ A
        step = float(np.max(np.abs(P_next - P))) if n else 0.0
        P = P_next
        if step < tol:
            break
    else:
        raise SolverError("value iteration did not converge", residual=step, iterations=max_iter)

    offset = gamma * sigma2 / (1.0 - gamma) * float(np.sum(B.T @ P @ B))
    return P, offset


def model_free_lqg_step(
    lqg: LqgState,
    ident: OnlineIdentifier,
    x_hat: np.ndarray,
    Q,
    R,
    gamma: float
) -> Tuple[float, LqgState]:
    """
    Control u_k = -K_k x_hat_k from the identifier's current realization.

    K_k is formed from P_k, then P advances one Riccati sweep on (A^(k), B1^(k)).
    A singular or non-finite step keeps the previous K and P and is logged.
    """
    theta = ident.theta
    n, m = ident.n, ident.m
    A, B1, _, _ = companion_matrices(theta[:n], theta[n:n + m], theta[n + m:])
    Q = np.asarray(Q, dtype=float).reshape(n, n)
    R = np.atleast_2d(np.asarray(R, dtype=float))

    try:
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B1))):
            raise SolverError("realization of the current estimate is not finite")
        with np.errstate(over="ignore", invalid="ignore"):
            K = lqr_gain(lqg.P, A, B1, R, gamma)
            P_next = riccati_iterate(lqg.P, A, B1, Q, R, gamma)
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(P_next))):
            raise SolverError("Riccati step produced non-finite values")
        lqg.K, lqg.P = K, P_next
    except SolverError as e:
        lqg.step_log.append({"k": lqg.k, "reason": str(e)})
        logger.warning("LQG step rejected", k=lqg.k, reason=str(e))

    lqg.k += 1
    u = -float(lqg.K[0] @ np.asarray(x_hat, dtype=float)) if n else 0.0
    return u, lqg


class ArmaxPlant:
    """Canonical-realization plant advanced one sample at a time."""

    def __init__(self, params: ArmaxParams, seed: int, horizon: int):
        params.validate_finite()
        self.params = params
        self.model = to_observable_canonical(params)
        self.x = np.zeros(self.model.n)
        self.noise = np.sqrt(params.sigma2) * make_rng(seed).standard_normal(horizon)
        self.k = 0

    def output(self) -> float:
        """y_k = C x_k + w_k."""
        return float(self.model.C[0] @ self.x) + float(self.noise[self.k])

    def advance(self, u: float) -> None:
        """x_{k+1} = A x_k + B1 u_k + B2 w_k."""
        w = float(self.noise[self.k])
        self.x = self.model.A @ self.x + self.model.B1[:, 0] * float(u) + self.model.B2[:, 0] * w
        self.k += 1


@dataclass
class ClosedLoopResult:
    """Per-step records and final controller state of one closed-loop run."""

    u: np.ndarray
    y: np.ndarray
    x: np.ndarray
    x_hat: np.ndarray
    cost: np.ndarray
    K_history: np.ndarray
    lqg: LqgState
    identifier: OnlineIdentifier
    reference: LqrSolution
    value_offset: float
    summary: Dict[str, Any] = field(default_factory=dict)


def discounted_cost_to_go(costs: Sequence[float], gamma: float, starts: Sequence[int]) -> np.ndarray:
    """
    sum_t gamma^t cost_{s+t} for each start s, running to the end of the record.

    Starts closer to the end than the truncation horizon (gamma^t < 1e-12)
    see a shortened sum.
    """
    costs = np.asarray(costs, dtype=float).ravel()
    to_go = signal.lfilter([1.0], [1.0, -gamma], costs[::-1])[::-1]
    return to_go[np.asarray(starts, dtype=int)]


def truncation_horizon(gamma: float) -> int:
    return int(np.ceil(np.log(COST_TRUNCATION) / np.log(gamma)))


def closed_loop_run(
    params: ArmaxParams,
    horizon: int,
    seed: int,
    gamma: float = 0.9,
    Q: Optional[np.ndarray] = None,
    R: float = 1.0,
    dither_amplitude: float = 1.0,
    dither_window: Optional[int] = None,
    p0: float = settings.p0,
    P0: Optional[np.ndarray] = None
) -> ClosedLoopResult:
    """
    Plant, identifier, estimator and LQG controller advanced in lockstep.

    Each sample: measure y_k, form u_k = -K_k x_hat_k plus white dither while
    k < dither_window (default horizon // 10), update the identifier and the
    estimator with (u_k, y_k), then advance the plant. The achieved cost is
    compared with the optimal value from discounted cost-to-go over start
    indices in the second half of the run.
    """
    n, m, p = params.orders
    if horizon < 2:
        raise DimensionError(f"horizon must be >= 2, got {horizon}")
    Q = np.eye(n) if Q is None else np.asarray(Q, dtype=float).reshape(n, n)
    R_matrix = np.array([[float(R)]])
    dither_window = horizon // 10 if dither_window is None else dither_window

    model = to_observable_canonical(params)
    reference = dare_solve(model.A, model.B1, Q, R_matrix, gamma)
    _, value_offset = evaluate_value(
        model.A - model.B1 @ reference.K,
        Q + reference.K.T @ R_matrix @ reference.K,
        model.B2,
        params.sigma2,
        gamma
    )

    plant = ArmaxPlant(params, seed, horizon)
    dither = dither_amplitude * make_rng(seed, stream=2).standard_normal(horizon)
    ident = OnlineIdentifier(n, m, p, p0=p0)
    estimator = EstimatorState.start(n, m, p)
    lqg = LqgState.start(n, P0)

    u_log = np.zeros(horizon)
    y_log = np.zeros(horizon)
    x_log = np.zeros((horizon, n))
    x_hat_log = np.zeros((horizon, n))
    cost = np.zeros(horizon)
    K_history = np.zeros((horizon, n))

    with Timer("closed_loop_run") as timer:
        for k in range(horizon):
            x_log[k] = plant.x
            x_hat_log[k] = estimator.x_hat
            y_k = plant.output()

            u_k, lqg = model_free_lqg_step(lqg, ident, estimator.x_hat, Q, R_matrix, gamma)
            if k < dither_window:
                u_k += dither[k]

            ident.step(u_k, y_k)
            model_free_estimator_step(ident, estimator, u_k, y_k)

            cost[k] = float(plant.x @ Q @ plant.x) + float(R) * u_k * u_k
            u_log[k] = u_k
            y_log[k] = y_k
            K_history[k] = lqg.K[0]
            plant.advance(u_k)

    tail = truncation_horizon(gamma)
    starts = np.arange(max(horizon // 2, dither_window), max(horizon - tail, horizon // 2 + 1))
    starts = starts[starts < horizon]
    achieved = float(np.mean(discounted_cost_to_go(cost, gamma, starts)))
    optimal = float(np.mean(np.einsum("ij,jk,ik->i", x_log[starts], reference.P, x_log[starts]))) + value_offset

    K_error = float(np.max(np.abs(lqg.K - reference.K)) / max(np.max(np.abs(reference.K)), INNER_GUARD))
    summary = {
        "K_final": lqg.K[0].tolist(),
        "P_final": lqg.P.tolist(),
        "K_optimal": reference.K[0].tolist(),
        "P_optimal": reference.P.tolist(),
        "K_relative_error": K_error,
        "achieved_cost": achieved,
        "optimal_cost": optimal,
        "cost_ratio": achieved / optimal if optimal > 0 else float("nan"),
        "rejected_lqg_steps": len(lqg.step_log),
        "rejected_iv_steps": len(ident.step_log),
        "seconds": timer.elapsed
    }
    log_operation("closed_loop_run", "lqg", {"seed": seed, "horizon": horizon, **summary})

    return ClosedLoopResult(
        u=u_log,
        y=y_log,
        x=x_log,
        x_hat=x_hat_log,
        cost=cost,
        K_history=K_history,
        lqg=lqg,
        identifier=ident,
        reference=reference,
        value_offset=value_offset,
        summary=summary
    )
