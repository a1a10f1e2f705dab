"""
ARMAX model representation for armaxlab.
Covers the delay polynomials, the observable-canonical realization, seeded
trajectory simulation and the signal statistics shared by all other modules.

Conventions: y_k = u_k = w_k = 0 for k < 0, and the realization state starts
at x_0 = 0, which is the same pre-sample assumption.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy import linalg, signal

from armaxlab.config import settings
from armaxlab.errors import DimensionError, InvalidModelError


class PolynomialKind(str, Enum):
    """Leading-term convention of a delay polynomial."""
    MONIC = "monic"
    STRICTLY_CAUSAL = "strictly-causal"


class Channel(str, Enum):
    """Input channel of the canonical realization."""
    INPUT = "input"
    NOISE = "noise"


@dataclass(frozen=True)
class DelayPolynomial:
    """
    Polynomial in the delay operator z^-1.

    MONIC:           1 + p_1 z^-1 + ... + p_d z^-d
    STRICTLY_CAUSAL:     p_1 z^-1 + ... + p_d z^-d
    """

    coeffs: Tuple[float, ...] = ()
    kind: PolynomialKind = PolynomialKind.MONIC

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))

    @property
    def degree(self) -> int:
        return len(self.coeffs)

    @property
    def taps(self) -> np.ndarray:
        """Coefficients in ascending powers of z^-1, including the z^0 term."""
        lead = 1.0 if self.kind is PolynomialKind.MONIC else 0.0
        return np.array([lead, *self.coeffs], dtype=float)


class ArmaxParams(BaseModel):
    """Parameter set of a(z) y_k = b(z) u_k + c(z) w_k with Var(w_k) = sigma2."""

    a: List[float] = Field(default_factory=list, description="a_1..a_n of the monic a(z)")
    b: List[float] = Field(default_factory=list, description="b_1..b_m of the strictly causal b(z)")
    c: List[float] = Field(default_factory=list, description="c_1..c_p of the monic c(z)")
    sigma2: float = Field(1.0, description="Variance of the Gaussian driving noise")

    @property
    def n(self) -> int:
        return len(self.a)

    @property
    def m(self) -> int:
        return len(self.b)

    @property
    def p(self) -> int:
        return len(self.c)

    @property
    def orders(self) -> Tuple[int, int, int]:
        return self.n, self.m, self.p

    @property
    def a_poly(self) -> DelayPolynomial:
        return DelayPolynomial(tuple(self.a), PolynomialKind.MONIC)

    @property
    def b_poly(self) -> DelayPolynomial:
        return DelayPolynomial(tuple(self.b), PolynomialKind.STRICTLY_CAUSAL)

    @property
    def c_poly(self) -> DelayPolynomial:
        return DelayPolynomial(tuple(self.c), PolynomialKind.MONIC)

    @property
    def theta(self) -> np.ndarray:
        """Stacked parameter vector col{a, b, c}."""
        return np.array([*self.a, *self.b, *self.c], dtype=float)

    @classmethod
    def from_theta(cls, theta: Sequence[float], n: int, m: int, p: int, sigma2: float = 1.0) -> "ArmaxParams":
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != n + m + p:
            raise DimensionError(f"theta has {theta.size} entries, expected n+m+p={n + m + p}")
        return cls(
            a=theta[:n].tolist(),
            b=theta[n:n + m].tolist(),
            c=theta[n + m:].tolist(),
            sigma2=float(sigma2)
        )

    def validate_finite(self) -> "ArmaxParams":
        """Raise InvalidModelError on nonfinite entries or a negative variance."""
        values = np.array([*self.a, *self.b, *self.c, self.sigma2], dtype=float)
        if not np.all(np.isfinite(values)):
            raise InvalidModelError("ARMAX parameters must be finite")
        if self.sigma2 < 0:
            raise InvalidModelError(f"sigma2 must be non-negative, got {self.sigma2}")
        return self


@dataclass(frozen=True)
class StateSpaceModel:
    """x_{k+1} = A x_k + B1 u_k + B2 w_k,  y_k = C x_k + w_k."""

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        B1 = np.asarray(self.B1, dtype=float).reshape(n, -1)
        B2 = np.asarray(self.B2, dtype=float).reshape(n, -1)
        C = np.asarray(self.C, dtype=float).reshape(-1, n)
        object.__setattr__(self, "A", A.reshape(n, n))
        object.__setattr__(self, "B1", B1)
        object.__setattr__(self, "B2", B2)
        object.__setattr__(self, "C", C)

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass
class Trajectory:
    """Input/output record of one simulation, with optional hidden truth."""

    u: np.ndarray
    y: np.ndarray
    w: Optional[np.ndarray] = None
    x: Optional[np.ndarray] = None
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).ravel()
        self.y = np.asarray(self.y, dtype=float).ravel()
        T = self.y.size
        if self.u.size != T:
            raise DimensionError(f"u has {self.u.size} samples, y has {T}")
        if self.w is not None:
            self.w = np.asarray(self.w, dtype=float).ravel()
            if self.w.size != T:
                raise DimensionError(f"w has {self.w.size} samples, y has {T}")
        if self.x is not None:
            self.x = np.asarray(self.x, dtype=float).reshape(T, -1)

    def __len__(self) -> int:
        return self.y.size

    @property
    def state_dim(self) -> int:
        return 0 if self.x is None else self.x.shape[1]


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """
    Counter-based generator for one (seed, stream) pair.

    Philox keyed through SeedSequence([seed, stream]); normals come from
    Generator.standard_normal, so streams are reproducible bit for bit.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def companion_matrices(
    a: np.ndarray,
    b: np.ndarray,
    c: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(A, B1, B2, C) of the canonical realization from raw coefficient arrays; needs a.size >= b.size, c.size."""
    n = a.size
    A = np.zeros((n, n))
    if n > 1:
        A[1:, :-1] = np.eye(n - 1)
    if n > 0:
        A[:, -1] = -a[::-1]

    b_pad = np.zeros(n)
    b_pad[:b.size] = b
    c_pad = np.zeros(n)
    c_pad[:c.size] = c
    c_tilde = c_pad - a

    C = np.zeros((1, n))
    if n > 0:
        C[0, -1] = 1.0
    return A, b_pad[::-1].reshape(n, 1), c_tilde[::-1].reshape(n, 1), C


def to_observable_canonical(params: ArmaxParams) -> StateSpaceModel:
    """Observable-canonical realization x_{k+1} = A x_k + B1 u_k + B2 w_k, y_k = C x_k + w_k."""
    n, m, p = params.orders
    if n < m or n < p:
        raise DimensionError(f"realization needs n >= m and n >= p, got n={n}, m={m}, p={p}")

    A, B1, B2, C = companion_matrices(
        np.asarray(params.a, dtype=float),
        np.asarray(params.b, dtype=float),
        np.asarray(params.c, dtype=float)
    )
    return StateSpaceModel(A=A, B1=B1, B2=B2, C=C)


def observer_error_matrix(model: StateSpaceModel) -> np.ndarray:
    """A - B2 C, whose characteristic polynomial is c(z) for canonical realizations."""
    return model.A - model.B2 @ model.C


def polynomial_is_stable(poly: DelayPolynomial, tolerance: float = settings.stability_tolerance) -> bool:
    """True iff every root of z^d + p_1 z^(d-1) + ... + p_d lies inside radius 1 - tolerance."""
    if poly.kind is not PolynomialKind.MONIC:
        raise InvalidModelError("stability is defined for monic polynomials only")
    if poly.degree == 0:
        return True
    roots = np.roots(poly.taps)
    return bool(np.all(np.abs(roots) < 1.0 - tolerance))


def rollout(model: StateSpaceModel, u: Sequence[float], w: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Drive the realization from x_0 = 0; returns (y, x) with x of shape (T, n)."""
    u = np.asarray(u, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    T = u.size
    if w.size != T:
        raise DimensionError("u and w must have the same length")
    if model.n == 0:
        return w.copy(), np.zeros((T, 0))

    B = np.hstack([model.B1[:, :1], model.B2[:, :1]])
    D = np.array([[0.0, 1.0]])
    _, y, x = signal.dlsim((model.A, B, model.C, D, 1), np.column_stack([u, w]))
    return np.asarray(y, dtype=float).reshape(T), np.asarray(x, dtype=float).reshape(T, model.n)


def simulate_armax(
    params: ArmaxParams,
    input: Sequence[float],
    horizon: int,
    seed: int,
    with_truth: bool = False,
    burn_in: int = 0
) -> Trajectory:
    """
    Simulate a(z) y_k = b(z) u_k + c(z) w_k with zero pre-samples.

    Noise is sqrt(sigma2) * standard_normal from make_rng(seed). When burn_in
    is positive, that many leading samples are simulated and discarded, so the
    input must cover horizon + burn_in samples.
    """
    params.validate_finite()
    if horizon < 1:
        raise DimensionError(f"horizon must be >= 1, got {horizon}")
    if burn_in < 0:
        raise DimensionError(f"burn_in must be >= 0, got {burn_in}")

    total = horizon + burn_in
    u = np.asarray(input, dtype=float).ravel()
    if u.size < total:
        raise DimensionError(f"input has {u.size} samples, need {total}")
    u = u[:total]

    w = np.sqrt(params.sigma2) * make_rng(seed).standard_normal(total)
    forcing = signal.lfilter(params.b_poly.taps, [1.0], u) + signal.lfilter(params.c_poly.taps, [1.0], w)
    y = signal.lfilter([1.0], params.a_poly.taps, forcing)

    x = None
    if with_truth:
        _, x = rollout(to_observable_canonical(params), u, w)
        x = x[burn_in:]

    return Trajectory(
        u=u[burn_in:],
        y=y[burn_in:],
        w=w[burn_in:] if with_truth else None,
        x=x,
        seed=int(seed)
    )


def autocorrelation(signal_values: Sequence[float], max_lag: int) -> np.ndarray:
    """r(i) = mean of y_k y_{k-i} over the T - i full-overlap terms, i = 0..max_lag."""
    y = np.asarray(signal_values, dtype=float).ravel()
    T = y.size
    if T == 0:
        raise DimensionError("autocorrelation of an empty signal")
    if max_lag < 0 or max_lag >= T:
        raise DimensionError(f"max_lag must be in [0, {T - 1}], got {max_lag}")
    return np.array([np.dot(y[i:], y[:T - i]) / (T - i) for i in range(max_lag + 1)])


def sample_correlation(e: Sequence[float], max_lag: int) -> np.ndarray:
    """Normalized lag correlations r(i)/r(0) for i = 1..max_lag."""
    r = autocorrelation(e, max_lag)
    if r[0] <= 0:
        return np.zeros(max_lag)
    return r[1:] / r[0]


def reconstruct_innovations(y: Sequence[float], c: Sequence[float]) -> np.ndarray:
    """Prediction errors e = c(z)^-1 y of an MA model with zero pre-samples."""
    return signal.lfilter([1.0], np.r_[1.0, np.asarray(c, dtype=float)], np.asarray(y, dtype=float))


def impulse_response(model: StateSpaceModel, channel: Channel, steps: int) -> np.ndarray:
    """Markov parameters of (A, B_channel, C) plus the direct term (0 input, 1 noise)."""
    if steps < 1:
        raise DimensionError(f"steps must be >= 1, got {steps}")
    channel = Channel(channel)
    B = model.B1[:, :1] if channel is Channel.INPUT else model.B2[:, :1]
    direct = 0.0 if channel is Channel.INPUT else 1.0

    if model.n == 0:
        h = np.zeros(steps)
        h[0] = direct
        return h
    _, (h,) = signal.dimpulse((model.A, B, model.C, np.array([[direct]]), 1), n=steps)
    return np.asarray(h, dtype=float).reshape(steps)


def theoretical_autocovariance(params: ArmaxParams, max_lag: int) -> np.ndarray:
    """
    Exact autocovariance r(0..max_lag) of the noise-driven part c(z)/a(z) w.

    Orders are padded so that the canonical realization exists; a(z) must be
    stable. The state covariance comes from the discrete Lyapunov equation.
    """
    params.validate_finite()
    order = max(params.n, params.p)
    a_pad = np.zeros(order)
    a_pad[:params.n] = params.a
    padded = ArmaxParams(a=a_pad.tolist(), b=[], c=list(params.c), sigma2=params.sigma2)

    r = np.zeros(max_lag + 1)
    r[0] = params.sigma2
    if order == 0:
        return r

    model = to_observable_canonical(padded)
    if np.max(np.abs(np.linalg.eigvals(model.A))) >= 1.0:
        raise InvalidModelError("autocovariance requires a stable a(z)")

    gram = linalg.solve_discrete_lyapunov(model.A, params.sigma2 * (model.B2 @ model.B2.T))
    r[0] += (model.C @ gram @ model.C.T).item()
    power = np.eye(order)
    for i in range(1, max_lag + 1):
        # power holds A^(i-1)
        r[i] = (model.C @ power @ model.A @ gram @ model.C.T).item() + params.sigma2 * (model.C @ power @ model.B2).item()
        power = power @ model.A
    return r
