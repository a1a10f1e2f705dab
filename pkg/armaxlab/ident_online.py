"""
Online identification for armaxlab.
Recursive instrumental variables plus online MA value iteration, composed
into the sample-by-sample ARMAX identifier.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import signal

from armaxlab.config import settings
from armaxlab.errors import DegeneracyError, DimensionError
from armaxlab.ident_offline import ma_coefficient_update, solve_rho_system
from armaxlab.model_core import ArmaxParams
from armaxlab.utils import get_logger, log_operation

logger = get_logger(__name__)


def estimate_columns(n: int, m: int, p: int) -> List[str]:
    """Column names a1..an, b1..bm, c1..cp of a stacked estimate."""
    return (
        [f"a{i}" for i in range(1, n + 1)]
        + [f"b{i}" for i in range(1, m + 1)]
        + [f"c{i}" for i in range(1, p + 1)]
    )


@dataclass
class RecursiveIvState:
    """Recursive IV estimate with P = inverse of the running Gram average."""

    theta_tilde: np.ndarray
    P: np.ndarray
    k: int = 0
    n: int = 0
    m: int = 0
    p: int = 0
    y_lags: Deque[float] = field(default_factory=deque)
    u_lags: Deque[float] = field(default_factory=deque)

    @classmethod
    def start(cls, n: int, m: int, p: int, p0: float = settings.p0) -> "RecursiveIvState":
        if p0 <= 0:
            raise ValueError(f"p0 must be positive, got {p0}")
        d = n + m
        return cls(
            theta_tilde=np.zeros(d),
            P=p0 * np.eye(d),
            n=n,
            m=m,
            p=p,
            y_lags=deque([0.0] * (n + p), maxlen=n + p),
            u_lags=deque([0.0] * m, maxlen=m)
        )

    def regressors(self) -> Tuple[np.ndarray, np.ndarray]:
        """(zeta_k, phi_k) from the lag buffers; pre-stream lags read as 0."""
        y_lags = np.fromiter(self.y_lags, dtype=float, count=len(self.y_lags))
        u_lags = np.fromiter(self.u_lags, dtype=float, count=len(self.u_lags))
        phi = np.concatenate([-y_lags[:self.n], u_lags])
        zeta = np.concatenate([-y_lags[self.p:self.p + self.n], u_lags])
        return zeta, phi

    def push(self, u: float, y: float) -> None:
        self.y_lags.appendleft(float(y))
        self.u_lags.appendleft(float(u))


def riv_step(
    state: RecursiveIvState,
    zeta: np.ndarray,
    phi: np.ndarray,
    y: float,
    gamma_guard: float = settings.gamma_guard
) -> RecursiveIvState:
    """
    One recursive IV update at sample k = state.k + 1.

        gamma_k = 1 + (1/k) phi' P zeta
        theta  += (1/k) P zeta gamma_k^-1 (y - phi' theta)
        P       = (I - (1/k) P zeta gamma_k^-1 phi') P (k+1)/k

    A |gamma_k| below gamma_guard rejects the step: the sample is counted,
    theta and P are left untouched and DegeneracyError is raised.
    """
    d = state.theta_tilde.size
    zeta = np.asarray(zeta, dtype=float).ravel()
    phi = np.asarray(phi, dtype=float).ravel()
    if zeta.size != d or phi.size != d:
        raise DimensionError(f"zeta and phi must have {d} entries")

    k = state.k + 1
    P_zeta = state.P @ zeta
    gamma = 1.0 + float(phi @ P_zeta) / k
    state.k = k
    if abs(gamma) < gamma_guard:
        raise DegeneracyError(f"gamma_k={gamma:.3e} at k={k}", gamma=gamma)

    gain = P_zeta / (k * gamma)
    state.theta_tilde = state.theta_tilde + gain * (float(y) - float(phi @ state.theta_tilde))
    state.P = (state.P - np.outer(gain, phi @ state.P)) * ((k + 1) / k)
    return state


@dataclass
class OnlineMaState:
    """Running autocorrelations and value-iteration rings of the online MA step."""

    p: int
    r: np.ndarray
    eps2_ring: Deque[float]
    c_ring: Deque[np.ndarray]
    ytilde_ring: Deque[float]
    c: np.ndarray
    eps2: float = 0.0
    rho: np.ndarray = field(default_factory=lambda: np.zeros(0))
    k: int = 0
    eps_min: float = settings.eps_min

    @classmethod
    def start(cls, p: int, ytilde0: float, eps_min: float = settings.eps_min) -> "OnlineMaState":
        """State after sample 0: r(0) = eps2_0 = ytilde_0^2, everything else zero."""
        r = np.zeros(p + 1)
        r[0] = ytilde0 * ytilde0
        eps2_ring = deque([0.0] * p, maxlen=p)
        ytilde_ring = deque([0.0] * p, maxlen=p)
        if p:
            eps2_ring.appendleft(r[0])
            ytilde_ring.appendleft(float(ytilde0))
        return cls(
            p=p,
            r=r,
            eps2_ring=eps2_ring,
            c_ring=deque([np.zeros(p) for _ in range(max(p - 1, 0))], maxlen=max(p - 1, 0)),
            ytilde_ring=ytilde_ring,
            c=np.zeros(p),
            eps2=float(r[0]),
            eps_min=eps_min
        )


def ma_value_update(state: OnlineMaState) -> Tuple[np.ndarray, float]:
    """Solve for rho from the current statistics, update (c, eps2) and push the rings."""
    p = state.p
    state.rho = solve_rho_system(list(state.c_ring), state.r[1:p + 1])
    c, eps2 = ma_coefficient_update(
        state.rho,
        np.fromiter(state.eps2_ring, dtype=float, count=p),
        state.r[0],
        state.eps_min
    )
    state.c = c
    state.eps2 = eps2
    if p:
        state.eps2_ring.appendleft(eps2)
    if p > 1:
        state.c_ring.appendleft(c)
    return c, eps2


def online_ma_step(state: OnlineMaState, ytilde_k: float) -> Tuple[np.ndarray, float]:
    """Fold ytilde_k into r(0..p), then run one value-iteration update."""
    state.k += 1
    k = state.k
    ytilde_k = float(ytilde_k)
    lagged = np.concatenate([[ytilde_k], np.fromiter(state.ytilde_ring, dtype=float, count=state.p)])
    state.r = (k * state.r + ytilde_k * lagged) / (k + 1)

    c, eps2 = ma_value_update(state)
    if state.p:
        state.ytilde_ring.appendleft(ytilde_k)
    return c, eps2


class OnlineIdentifier:
    """Sample-by-sample ARMAX identifier; combined estimate col{theta_tilde, c}."""

    def __init__(self, n: int, m: int, p: int, p0: float = settings.p0, gamma_guard: float = settings.gamma_guard):
        if min(n, m, p) < 0:
            raise DimensionError(f"orders must be non-negative, got n={n}, m={m}, p={p}")
        self.n = n
        self.m = m
        self.p = p
        self.gamma_guard = gamma_guard
        self.iv = RecursiveIvState.start(n, m, p, p0)
        self.ma: Optional[OnlineMaState] = None
        self.step_log: List[Dict[str, Any]] = []
        self.samples = 0

    @property
    def initialized(self) -> bool:
        return self.ma is not None

    @property
    def c(self) -> np.ndarray:
        return np.zeros(self.p) if self.ma is None else self.ma.c

    @property
    def eps2(self) -> float:
        return 0.0 if self.ma is None else self.ma.eps2

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.iv.theta_tilde, self.c])

    @property
    def params(self) -> ArmaxParams:
        return ArmaxParams.from_theta(self.theta, self.n, self.m, self.p, sigma2=self.eps2)

    def step(self, u_k: float, y_k: float) -> np.ndarray:
        return algorithm1_step(self, u_k, y_k)

    def run(self, u: Sequence[float], y: Sequence[float]) -> pd.DataFrame:
        """Feed a whole record; one row k, a1..an, b1..bm, c1..cp, eps2 per sample."""
        u = np.asarray(u, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if u.size != y.size:
            raise DimensionError(f"u has {u.size} samples, y has {y.size}")

        rows = np.empty((y.size, self.n + self.m + self.p + 1))
        for k in range(y.size):
            rows[k, :-1] = self.step(u[k], y[k])
            rows[k, -1] = self.eps2

        table = pd.DataFrame(rows, columns=estimate_columns(self.n, self.m, self.p) + ["eps2"])
        table.insert(0, "k", np.arange(self.samples - y.size, self.samples))
        log_operation("online_identification", "ident_online", {
            "samples": self.samples,
            "theta": self.theta,
            "eps2": self.eps2,
            "rejected_steps": len(self.step_log)
        })
        return table


def algorithm1_step(ident: OnlineIdentifier, u_k: float, y_k: float) -> np.ndarray:
    """
    Advance the identifier by one sample and return col{theta_tilde, c}.

    Sample 0 only initializes the statistics (estimate stays 0). Later
    samples run, in order: the recursive IV update, the residual
    ytilde_k = y_k - phi_k' theta_tilde, the autocorrelation update and the
    value-iteration update of (c, eps2). Rejected IV steps go to step_log.
    """
    u_k = float(u_k)
    y_k = float(y_k)

    if not ident.initialized:
        ident.ma = OnlineMaState.start(ident.p, y_k)
        ident.iv.push(u_k, y_k)
        ident.samples = 1
        return ident.theta

    zeta, phi = ident.iv.regressors()
    try:
        riv_step(ident.iv, zeta, phi, y_k, ident.gamma_guard)
    except DegeneracyError as e:
        ident.step_log.append({"k": ident.iv.k, "gamma": e.gamma, "reason": str(e)})
        logger.warning("Recursive IV step rejected", k=ident.iv.k, gamma=e.gamma)

    ytilde = y_k - float(phi @ ident.iv.theta_tilde)
    online_ma_step(ident.ma, ytilde)
    ident.iv.push(u_k, y_k)
    ident.samples += 1
    return ident.theta


def discounted_prediction_cost(e: Sequence[float], gamma: float, window: Optional[int] = None) -> float:
    """
    Mean over the final window of J_k = sum_t gamma^t e_{k-t}^2.

    For the optimal predictor this approaches sigma2 / (1 - gamma). The
    default window is the second half of the record.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")
    e = np.asarray(e, dtype=float).ravel()
    if e.size == 0:
        raise DimensionError("empty prediction-error sequence")
    window = window or max(e.size // 2, 1)
    cost = signal.lfilter([1.0], [1.0, -gamma], e * e)
    return float(np.mean(cost[-window:]))
