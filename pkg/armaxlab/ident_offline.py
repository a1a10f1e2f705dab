"""
Offline identification for armaxlab.
Value-iteration MA estimation from autocorrelations, instrumental-variable
ARX estimation, the full offline ARMAX pipeline and the PLR bootstrap baseline.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, signal

from armaxlab.config import settings
from armaxlab.errors import ConfigError, DimensionError, ExcitationError, InvalidModelError, SolverError
from armaxlab.model_core import (
    ArmaxParams,
    DelayPolynomial,
    PolynomialKind,
    Trajectory,
    autocorrelation,
    reconstruct_innovations,
    sample_correlation,
)
from armaxlab.utils import Timer, get_logger, log_operation

logger = get_logger(__name__)


@dataclass
class MaViTrace:
    """Iterates of the MA value iteration."""

    c_estimates: List[np.ndarray] = field(default_factory=list)
    eps2: List[float] = field(default_factory=list)
    rho: np.ndarray = field(default_factory=lambda: np.zeros(0))
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.eps2)

    @property
    def c(self) -> np.ndarray:
        return self.c_estimates[-1] if self.c_estimates else np.zeros(0)

    @property
    def sigma2(self) -> float:
        return self.eps2[-1] if self.eps2 else 0.0

    def to_records(self) -> List[Dict[str, Any]]:
        return [
            {"iteration": i, "c": c.tolist(), "eps2": e}
            for i, (c, e) in enumerate(zip(self.c_estimates, self.eps2))
        ]


@dataclass
class IvEstimate:
    """Solution of the instrumental-variable normal equations R theta = r."""

    theta_tilde: np.ndarray
    R: np.ndarray
    r: np.ndarray
    condition: float
    samples: int = 0


@dataclass
class OrthogonalityStatistics:
    """Lag correlations of reconstructed innovations against the 3/sqrt(T) bound."""

    correlations: np.ndarray
    bound: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.correlations < self.bound))


@dataclass
class OfflineIdentification:
    """Result of the offline IV + value-iteration pipeline."""

    params: ArmaxParams
    iv: Optional[IvEstimate]
    trace: MaViTrace

    def to_report(self) -> Dict[str, Any]:
        """Identification report in the CLI/HTTP JSON layout."""
        return {
            "theta_tilde": [] if self.iv is None else self.iv.theta_tilde.tolist(),
            "c": list(self.params.c),
            "sigma2": self.params.sigma2,
            "condition": 1.0 if self.iv is None else self.iv.condition,
            "trace": self.trace.to_records(),
        }


def _lagged(x: np.ndarray, lag: int) -> np.ndarray:
    """x delayed by lag samples with zero pre-samples."""
    if lag <= 0:
        return x.copy()
    out = np.zeros_like(x)
    if lag < x.size:
        out[lag:] = x[:x.size - lag]
    return out


def _reciprocal_condition(matrix: np.ndarray) -> Tuple[float, float]:
    """(condition number, reciprocal condition) from singular values."""
    if matrix.size == 0:
        return 1.0, 1.0
    s = linalg.svdvals(matrix)
    if not np.all(np.isfinite(s)) or s[0] == 0.0 or s[-1] == 0.0:
        return float("inf"), 0.0
    return float(s[0] / s[-1]), float(s[-1] / s[0])


def solve_rho_system(c_history: Sequence[Sequence[float]], r_y: Sequence[float]) -> np.ndarray:
    """
    Back-substitute rho_k(p), ..., rho_k(1) from the unit upper-triangular system.

    Row i (1-based) reads rho(i) + sum_j c_j^(k-i) rho(i+j) = r(i), so
    c_history[0] is c^(k-1), c_history[1] is c^(k-2), and missing entries
    are taken as zero.
    """
    r = np.asarray(r_y, dtype=float).ravel()
    p = r.size
    if p == 0:
        return np.zeros(0)

    M = np.eye(p)
    for i in range(min(p - 1, len(c_history))):
        previous = np.asarray(c_history[i], dtype=float).ravel()
        span = min(p - 1 - i, previous.size)
        M[i, i + 1:i + 1 + span] = previous[:span]
    return linalg.solve_triangular(M, r, lower=False, unit_diagonal=True)


def ma_coefficient_update(
    rho: np.ndarray,
    eps2_previous: np.ndarray,
    r0: float,
    eps_min: float = settings.eps_min
) -> Tuple[np.ndarray, float]:
    """
    One value-iteration update of (c, eps2).

    c_i = rho(i) / eps2_{k-i}, or 0 when eps2_{k-i} <= eps_min;
    eps2_k = r(0) - sum_i c_i^2 eps2_{k-i}, clamped at 0.
    """
    eps2_previous = np.asarray(eps2_previous, dtype=float)
    usable = eps2_previous > eps_min
    c = np.zeros_like(eps2_previous)
    c[usable] = rho[usable] / eps2_previous[usable]
    eps2 = float(r0 - np.sum(c * c * eps2_previous))
    return c, max(eps2, 0.0)


def ma_identify_offline(
    r_y: Sequence[float],
    p: int,
    iterations: int,
    tolerance: float = settings.vi_tolerance,
    eps_min: float = settings.eps_min
) -> MaViTrace:
    """
    Estimate MA(p) coefficients from autocorrelations r(0..p) by value iteration.

    Starts from eps2_{-i} = 0 and c^(-i) = 0. Stops after `iterations`
    updates, or earlier once both the c step and the eps2 step are below
    `tolerance` (checked from iteration p on). The trace is always returned.
    """
    if iterations < 1:
        raise ConfigError(f"iterations must be >= 1, got {iterations}")
    if p < 0:
        raise DimensionError(f"p must be >= 0, got {p}")
    r = np.asarray(r_y, dtype=float).ravel()
    if r.size < p + 1:
        raise DimensionError(f"need autocorrelations r(0..{p}), got {r.size} values")
    if not np.all(np.isfinite(r[:p + 1])):
        raise InvalidModelError("autocorrelations must be finite")
    if r[0] < 0:
        raise InvalidModelError(f"r(0) must be non-negative, got {r[0]}")

    eps2_ring = deque([0.0] * p, maxlen=p)
    c_ring = deque([np.zeros(p) for _ in range(max(p - 1, 0))], maxlen=max(p - 1, 0))
    trace = MaViTrace()

    for k in range(iterations):
        rho = solve_rho_system(list(c_ring), r[1:p + 1])
        c, eps2 = ma_coefficient_update(rho, np.array(eps2_ring), r[0], eps_min)

        if trace.eps2 and k >= p:
            step = max(
                float(np.max(np.abs(c - trace.c))) if p else 0.0,
                abs(eps2 - trace.sigma2)
            )
            if step < tolerance:
                trace.converged = True

        trace.c_estimates.append(c)
        trace.eps2.append(eps2)
        trace.rho = rho
        if trace.converged:
            break

        eps2_ring.appendleft(eps2)
        c_ring.appendleft(c)

    log_operation("ma_identify_offline", "ident_offline", {
        "p": p,
        "iterations": trace.iterations,
        "converged": trace.converged,
        "eps2": trace.sigma2
    })
    return trace


def _arx_regressors(traj: Trajectory, n: int, m: int, delay: int) -> np.ndarray:
    """Columns [-y_{k-delay-1}..-y_{k-delay-n}, u_{k-1}..u_{k-m}]."""
    columns = [-_lagged(traj.y, delay + i) for i in range(1, n + 1)]
    columns += [_lagged(traj.u, i) for i in range(1, m + 1)]
    if not columns:
        return np.zeros((len(traj), 0))
    return np.column_stack(columns)


def iv_estimate_arx(
    traj: Trajectory,
    n: int,
    m: int,
    p: int,
    filter: Optional[DelayPolynomial] = None,
    rcond_threshold: float = settings.rcond_threshold
) -> IvEstimate:
    """
    Instrumental-variable estimate of theta_tilde = col{a, b}.

    The instrument delays the output lags by p so they are uncorrelated with
    the MA(p) equation noise; it is passed through the FIR filter F(z)
    (default F = 1) with zero initial state. Averages run over the samples
    k >= max(n + p, m), where every lag is inside the record.
    """
    d = n + m
    if min(n, m, p) < 0:
        raise DimensionError(f"orders must be non-negative, got n={n}, m={m}, p={p}")
    if d == 0:
        return IvEstimate(theta_tilde=np.zeros(0), R=np.zeros((0, 0)), r=np.zeros(0), condition=1.0, samples=len(traj))

    start = max(n + p, m)
    T = len(traj)
    if T <= start:
        raise DimensionError(f"trajectory of length {T} is too short for lags up to {start}")

    zeta = _arx_regressors(traj, n, m, delay=p)
    if filter is not None:
        if filter.kind is not PolynomialKind.MONIC:
            raise InvalidModelError("instrument filter must be monic")
        zeta = signal.lfilter(filter.taps, [1.0], zeta, axis=0)
    phi = _arx_regressors(traj, n, m, delay=0)

    Z = zeta[start:]
    samples = Z.shape[0]
    R = Z.T @ phi[start:] / samples
    r = Z.T @ traj.y[start:] / samples

    condition, rcond = _reciprocal_condition(R)
    if rcond < rcond_threshold:
        raise ExcitationError(f"IV Gram matrix is singular (condition {condition:.3e})", condition=condition)

    theta = linalg.solve(R, r)
    return IvEstimate(theta_tilde=theta, R=R, r=r, condition=condition, samples=samples)


def arma_instrument_gram(
    r_y: Sequence[float],
    n: int,
    p: int,
    rcond_threshold: float = settings.rcond_threshold
) -> Tuple[np.ndarray, bool]:
    """R_y[i, j] = r(p + i - j), i, j = 0..n-1, with r(-l) read as r(l)."""
    r = np.asarray(r_y, dtype=float).ravel()
    if r.size < p + n:
        raise DimensionError(f"need autocorrelations up to lag {p + n - 1}, got {r.size} values")

    index = p + np.arange(n)[:, None] - np.arange(n)[None, :]
    R = r[np.abs(index)] if n else np.zeros((0, 0))
    _, rcond = _reciprocal_condition(R)
    return R, rcond >= rcond_threshold


def residual_series(traj: Trajectory, theta_tilde: Sequence[float], n: int) -> np.ndarray:
    """ytilde_k = y_k - phi_k' theta_tilde = a(z) y_k - b(z) u_k."""
    theta = np.asarray(theta_tilde, dtype=float).ravel()
    if n < 0 or n > theta.size:
        raise DimensionError(f"n={n} does not fit a theta of length {theta.size}")
    a = theta[:n]
    b = theta[n:]
    return (
        signal.lfilter(np.r_[1.0, a], [1.0], traj.y)
        - signal.lfilter(np.r_[0.0, b], [1.0], traj.u)
    )


def _plr_solve(phi: np.ndarray, target: np.ndarray, rcond_threshold: float) -> np.ndarray:
    G = phi.T @ phi / phi.shape[0]
    g = phi.T @ target / phi.shape[0]
    condition, rcond = _reciprocal_condition(G)
    if rcond < rcond_threshold:
        raise ExcitationError(f"PLR normal equations are singular (condition {condition:.3e})", condition=condition)
    return linalg.solve(G, g, assume_a="sym")


def plr_bootstrap(
    traj: Trajectory,
    n: int,
    m: int,
    p: int,
    sweeps: int,
    rcond_threshold: float = settings.rcond_threshold
) -> np.ndarray:
    """
    Pseudo-linear regression by repeated least squares.

    The first pass is an ARX least-squares fit with c = 0. Each sweep then
    regenerates e(theta) = c(z)^-1 (a(z) y - b(z) u) from the previous
    estimate and re-solves the normal equations over k >= max(n, m, p).
    """
    if sweeps < 1:
        raise ConfigError(f"sweeps must be >= 1, got {sweeps}")
    d = n + m + p
    theta = np.zeros(d)
    if d == 0:
        return theta

    start = max(n, m, p)
    T = len(traj)
    if T <= start:
        raise DimensionError(f"trajectory of length {T} is too short for lags up to {start}")
    arx = _arx_regressors(traj, n, m, delay=0)
    target = traj.y[start:]

    # e = y would make each e_{k-i} column the negative of the -y_{k-i} column
    if n + m > 0:
        theta[:n + m] = _plr_solve(arx[start:], target, rcond_threshold)

    for sweep in range(sweeps):
        e = reconstruct_innovations(residual_series(traj, theta[:n + m], n), theta[n + m:])
        if not np.all(np.isfinite(e)):
            raise SolverError("PLR residuals diverged", iterations=sweep)

        phi = np.column_stack([arx] + [_lagged(e, i) for i in range(1, p + 1)])[start:]
        theta = _plr_solve(phi, target, rcond_threshold)

    log_operation("plr_bootstrap", "ident_offline", {"n": n, "m": m, "p": p, "sweeps": sweeps, "theta": theta})
    return theta


def orthogonality_statistics(y: Sequence[float], c: Sequence[float], lags: int) -> OrthogonalityStatistics:
    """Whiteness check of e = c(z)^-1 y for lags 1..lags."""
    e = reconstruct_innovations(y, c)
    return OrthogonalityStatistics(
        correlations=np.abs(sample_correlation(e, lags)),
        bound=3.0 / np.sqrt(e.size)
    )


def armax_identify_offline(
    traj: Trajectory,
    n: int,
    m: int,
    p: int,
    vi_iterations: int = 500,
    filter: Optional[DelayPolynomial] = None
) -> OfflineIdentification:
    """IV estimate of (a, b), then value iteration on the residual autocorrelations for c and sigma2."""
    try:
        with Timer("armax_identify_offline") as timer:
            iv = iv_estimate_arx(traj, n, m, p, filter) if n + m > 0 else None
            theta_tilde = np.zeros(0) if iv is None else iv.theta_tilde
            ytilde = residual_series(traj, theta_tilde, n)
            trace = ma_identify_offline(autocorrelation(ytilde, p), p, vi_iterations)

        params = ArmaxParams(
            a=theta_tilde[:n].tolist(),
            b=theta_tilde[n:].tolist(),
            c=trace.c.tolist(),
            sigma2=trace.sigma2
        )
        log_operation("armax_identify_offline", "ident_offline", {
            "orders": [n, m, p],
            "samples": len(traj),
            "theta": params.theta,
            "sigma2": params.sigma2,
            "seconds": timer.elapsed
        })
        return OfflineIdentification(params=params, iv=iv, trace=trace)

    except Exception as e:
        logger.error(f"Offline identification failed: {e}")
        log_operation("armax_identify_offline", "ident_offline", {"orders": [n, m, p], "error": str(e)}, "ERROR")
        raise
