"""
Acceptance benchmark for armaxlab.
Golden values, structural identities and seeded Monte Carlo checks, each
compared with a pass/fail threshold at quick or desk scale.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field
from scipy import signal

from armaxlab.config import settings
from armaxlab.estimation import pitfall_realizations, solve_estimation_are
from armaxlab.experiments import ExperimentConfig, ExperimentReport, ExperimentService
from armaxlab.ident_offline import ma_identify_offline
from armaxlab.ident_online import RecursiveIvState, riv_step
from armaxlab.lqg import dare_solve, q_matrix, riccati_iterate
from armaxlab.model_core import (
    ArmaxParams,
    Channel,
    impulse_response,
    make_rng,
    observer_error_matrix,
    theoretical_autocovariance,
    to_observable_canonical,
)
from armaxlab.utils import Timer, get_current_timestamp, get_logger, log_operation

logger = get_logger("bench")

BENCH_STREAM = 3
REFERENCE_MODEL = ArmaxParams(a=[-1.1, 0.3], b=[1.0], c=[0.4], sigma2=1.0)


class BenchScale(str, Enum):
    QUICK = "quick"
    DESK = "desk"


@dataclass(frozen=True)
class ScaleProfile:
    """Horizons, seed counts and Monte Carlo thresholds of one scale."""

    horizon: int
    seeds: int
    error_window: int
    parameter_tolerance: float
    estimation_tolerance: float
    gain_tolerance: float
    cost_tolerance: float
    discount_tolerance: float


PROFILES: Dict[BenchScale, ScaleProfile] = {
    BenchScale.QUICK: ScaleProfile(
        horizon=20_000,
        seeds=3,
        error_window=2_000,
        parameter_tolerance=0.10,
        estimation_tolerance=0.05,
        gain_tolerance=0.20,
        cost_tolerance=0.10,
        discount_tolerance=0.10
    ),
    BenchScale.DESK: ScaleProfile(
        horizon=200_000,
        seeds=20,
        error_window=10_000,
        parameter_tolerance=0.05,
        estimation_tolerance=0.01,
        gain_tolerance=0.05,
        cost_tolerance=0.05,
        discount_tolerance=0.05
    ),
}


class BenchCheck(BaseModel):
    """Outcome of one acceptance check; passes when value <= threshold."""

    name: str
    description: str
    value: Optional[float] = Field(None, description="Measured error statistic")
    threshold: float
    passed: bool
    seconds: float = 0.0
    error: Optional[str] = None


class BenchReport(BaseModel):
    scale: BenchScale
    checks: List[BenchCheck]
    generated_at: str = Field(default_factory=get_current_timestamp)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failed(self) -> List[str]:
        return [check.name for check in self.checks if not check.passed]


def pitfall_errors() -> Dict[str, float]:
    """Deviation of both pitfall realizations from their closed-form Sigma and L."""
    direct, spectral = pitfall_realizations()
    golden = 0.5 * (np.sqrt(5.0) - 1.0)
    first = solve_estimation_are(direct.model, direct.noise)
    second = solve_estimation_are(spectral.model, spectral.noise)
    return {
        "direct": max(abs(first.Sigma[0, 0] - golden), abs(first.L[0, 0] - golden)),
        "spectral": max(abs(second.Sigma[0, 0]), abs(second.L[0, 0] - 1.0)),
    }


def ma_exact_error(c: Sequence[float], iterations: int = 500) -> float:
    """Offline value iteration on exact MA autocorrelations; max of the c and sigma2 errors."""
    params = ArmaxParams(c=list(c), sigma2=1.0)
    r = theoretical_autocovariance(params, params.p)
    trace = ma_identify_offline(r, params.p, iterations)
    return max(float(np.max(np.abs(trace.c - np.asarray(c)))), abs(trace.sigma2 - 1.0))


def random_stable_monic(rng: np.random.Generator, degree: int, radius: float = 0.9) -> np.ndarray:
    """Coefficients c_1..c_degree of a real polynomial with roots inside radius."""
    roots: List[complex] = []
    while len(roots) < degree:
        modulus = radius * np.sqrt(rng.uniform())
        if degree - len(roots) >= 2 and rng.uniform() < 0.5:
            angle = rng.uniform(0.0, np.pi)
            roots += [modulus * np.exp(1j * angle), modulus * np.exp(-1j * angle)]
        else:
            roots.append(modulus * rng.choice([-1.0, 1.0]))
    return np.real(np.poly(roots))[1:]


def characteristic_polynomial_error(draws: int = 100, seed: int = 0) -> float:
    """Worst gap between det(zI - (A - B2 C)) and c(z) over random stable draws."""
    rng = make_rng(seed, BENCH_STREAM)
    worst = 0.0
    for _ in range(draws):
        n = int(rng.integers(1, 5))
        p = int(rng.integers(1, n + 1))
        m = int(rng.integers(0, n + 1))
        params = ArmaxParams(
            a=random_stable_monic(rng, n).tolist(),
            b=rng.standard_normal(m).tolist(),
            c=random_stable_monic(rng, p).tolist()
        )
        coeffs = np.poly(observer_error_matrix(to_observable_canonical(params)))[1:]
        expected = np.zeros(n)
        expected[:p] = params.c
        worst = max(worst, float(np.max(np.abs(coeffs - expected))))
    return worst


def impulse_equivalence_error(steps: int = 50) -> float:
    """Realization impulse responses against the direct ARMAX recursion, both channels."""
    params = ArmaxParams(a=[-0.9, 0.2], b=[1.0, 0.5], c=[0.3])
    model = to_observable_canonical(params)
    impulse = np.zeros(steps)
    impulse[0] = 1.0

    direct_input = signal.lfilter(params.b_poly.taps, params.a_poly.taps, impulse)
    direct_noise = signal.lfilter(params.c_poly.taps, params.a_poly.taps, impulse)
    return max(
        float(np.max(np.abs(impulse_response(model, Channel.INPUT, steps) - direct_input))),
        float(np.max(np.abs(impulse_response(model, Channel.NOISE, steps) - direct_noise)))
    )


def schur_complement_error() -> float:
    """Q-matrix Schur complement at the DARE solution against P."""
    params = REFERENCE_MODEL
    model = to_observable_canonical(params)
    Q = np.eye(params.n)
    solution = dare_solve(model.A, model.B1, Q, 1.0, 0.9)
    H = q_matrix(solution.P, model.A, model.B1, Q, 1.0, 0.9)
    return float(np.max(np.abs(H.schur_complement() - solution.P)))


def dare_golden_error() -> float:
    solution = dare_solve(1.0, 1.0, 1.0, 1.0, 0.9)
    return max(abs(solution.P[0, 0] - 1.58840), abs(solution.K[0, 0] - 0.58840))


def inversion_lemma_error(draws: int = 50, seed: int = 0) -> float:
    """Riccati map against Q + gamma A' (P^-1 + gamma B R^-1 B')^-1 A, relative to |P+|."""
    rng = make_rng(seed, BENCH_STREAM)
    worst = 0.0
    for _ in range(draws):
        n = int(rng.integers(1, 5))
        A = rng.standard_normal((n, n))
        B = rng.standard_normal((n, 1))
        F = rng.standard_normal((n, n))
        P = F @ F.T + np.eye(n)
        Q = np.eye(n)
        R = np.array([[1.0]])
        gamma = 0.9
        recursive = riccati_iterate(P, A, B, Q, R, gamma)
        direct = Q + gamma * A.T @ np.linalg.inv(np.linalg.inv(P) + gamma * B @ B.T / R[0, 0]) @ A
        worst = max(worst, float(np.max(np.abs(recursive - direct)) / max(1.0, np.max(np.abs(direct)))))
    return worst


def dare_residual_error(draws: int = 50, seed: int = 0) -> float:
    """Largest converged residual over random stabilizable instances."""
    rng = make_rng(seed, BENCH_STREAM + 1)
    worst = 0.0
    for _ in range(draws):
        n = int(rng.integers(1, 5))
        A = rng.standard_normal((n, n)) / np.sqrt(n)
        B = rng.standard_normal((n, 1))
        solution = dare_solve(A, B, np.eye(n), 1.0, 0.9)
        worst = max(worst, solution.residual)
    return worst


def riv_direct_error(steps: int = 50, d: int = 3, p0: float = 100.0, seed: int = 0) -> float:
    """Recursive IV against direct solves of the running-average normal equations, every step."""
    rng = make_rng(seed, BENCH_STREAM + 2)
    state = RecursiveIvState(theta_tilde=np.zeros(d), P=p0 * np.eye(d))
    R = np.eye(d) / p0
    r = np.zeros(d)
    worst = 0.0
    for k in range(1, steps + 1):
        zeta = rng.standard_normal(d)
        phi = zeta + 0.5 * rng.standard_normal(d)
        y = float(rng.standard_normal())
        riv_step(state, zeta, phi, y)
        R = (k * R + np.outer(zeta, phi)) / (k + 1)
        r = (k * r + zeta * y) / (k + 1)
        worst = max(worst, float(np.max(np.abs(state.theta_tilde - np.linalg.solve(R, r)))))
    return worst


class BenchRunner:
    """Runs the acceptance checks of one scale."""

    def __init__(self, service: Optional[ExperimentService] = None):
        self.service = service or ExperimentService()

    def _monte_carlo(self, profile: ScaleProfile, kind: str, **extra) -> ExperimentReport:
        config = ExperimentConfig.parse({
            "kind": kind,
            "model": REFERENCE_MODEL.model_dump(),
            "horizon": profile.horizon,
            "seeds": list(range(profile.seeds)),
            **extra
        })
        return self.service.run_experiment(config, out_dir=None)

    def _check(self, name: str, description: str, threshold: float, measure: Callable[[], float]) -> BenchCheck:
        with Timer(name) as timer:
            try:
                value = float(measure())
                error = None
            except Exception as e:
                logger.error(f"Bench check {name} failed: {e}")
                value, error = None, f"{type(e).__name__}: {e}"
        passed = value is not None and np.isfinite(value) and value <= threshold
        return BenchCheck(
            name=name,
            description=description,
            value=value if value is None or np.isfinite(value) else None,
            threshold=threshold,
            passed=bool(passed),
            seconds=timer.elapsed,
            error=error
        )

    def analytic_checks(self) -> List[BenchCheck]:
        pitfall = {}

        def pitfall_value(name: str) -> float:
            if not pitfall:
                pitfall.update(pitfall_errors())
            return pitfall[name]

        return [
            self._check("pitfall_direct", "Sigma = L = (sqrt 5 - 1)/2 for the direct realization", 1e-6, lambda: pitfall_value("direct")),
            self._check("pitfall_spectral", "L = 1, Sigma = 0 for the spectral realization", 1e-8, lambda: pitfall_value("spectral")),
            self._check("ma_vi_order1", "offline VI recovers c = (0.5) from exact statistics", 1e-6, lambda: ma_exact_error([0.5])),
            self._check("ma_vi_order2", "offline VI recovers c = (0.5, -0.3) from exact statistics", 1e-6, lambda: ma_exact_error([0.5, -0.3])),
            self._check("characteristic_polynomial", "det(zI - (A - B2 C)) equals c(z)", 1e-12, characteristic_polynomial_error),
            self._check("impulse_equivalence", "realization impulse responses match the ARMAX recursion", 1e-10, impulse_equivalence_error),
            self._check("schur_complement", "Q-matrix Schur complement equals P", 1e-8, schur_complement_error),
            self._check("dare_golden", "scalar DARE P = 1.58840, K = 0.58840", 1e-5, dare_golden_error),
            self._check("riccati_inversion_lemma", "recursive and inversion-lemma Riccati forms agree", 1e-10, inversion_lemma_error),
            self._check("dare_residual", "DARE residual on random stabilizable instances", 1e-8, dare_residual_error),
            self._check("riv_direct", "recursive IV matches direct solves at every step", 1e-8, riv_direct_error),
        ]

    def monte_carlo_checks(self, profile: ScaleProfile) -> List[BenchCheck]:
        checks: List[BenchCheck] = []
        reports: Dict[str, ExperimentReport] = {}

        def aggregate(kind: str, key: str, **extra) -> float:
            if kind not in reports:
                reports[kind] = self._monte_carlo(profile, kind, **extra)
            value = reports[kind].aggregate.get(key)
            return float("nan") if value is None else value

        def orthogonality_failures() -> float:
            aggregate("identify-online", "theta_relative_error")
            report = reports["identify-online"]
            return float(sum(
                1 for seed in report.seeds
                if seed.status != "ok" or seed.metrics.get("orthogonality_passed") != 1.0
            ))

        checks.append(self._check(
            "online_parameters", "median relative parameter error of the online identifier",
            profile.parameter_tolerance, lambda: aggregate("identify-online", "theta_relative_error")
        ))
        checks.append(self._check(
            "online_noise_variance", "median relative eps2 error of the online identifier",
            profile.parameter_tolerance, lambda: aggregate("identify-online", "eps2_relative_error")
        ))
        checks.append(self._check(
            "orthogonality", "seeds whose residual correlations exceed 3/sqrt(T)",
            0.0, orthogonality_failures
        ))
        for gamma in (0.5, 0.9, 0.99):
            checks.append(self._check(
                f"discounted_cost_{gamma:g}", f"|J (1 - gamma) / sigma2 - 1| at gamma = {gamma:g}",
                profile.discount_tolerance,
                lambda gamma=gamma: abs(aggregate("identify-online", f"discounted_cost_ratio_{gamma:g}") - 1.0)
            ))
        checks.append(self._check(
            "model_free_estimation", "final-window |x - x_hat|^2 relative to |x|^2",
            profile.estimation_tolerance,
            lambda: aggregate("estimate", "state_error_relative", estimation={"error_window": profile.error_window})
        ))
        checks.append(self._check(
            "lqg_gain", "relative error of the final model-free LQG gain",
            profile.gain_tolerance, lambda: aggregate("lqg", "K_relative_error", lqg={"gamma": 0.9})
        ))
        checks.append(self._check(
            "lqg_cost", "|achieved / optimal discounted cost - 1|",
            profile.cost_tolerance, lambda: abs(aggregate("lqg", "cost_ratio", lqg={"gamma": 0.9}) - 1.0)
        ))
        return checks

    def run(self, scale: BenchScale = BenchScale.QUICK, analytic_only: bool = False) -> BenchReport:
        scale = BenchScale(scale)
        with Timer("bench") as timer:
            checks = self.analytic_checks()
            if not analytic_only:
                checks += self.monte_carlo_checks(PROFILES[scale])
        report = BenchReport(scale=scale, checks=checks)

        log_operation("bench", "bench", {
            "scale": scale.value,
            "checks": len(checks),
            "failed": report.failed,
            "seconds": timer.elapsed,
            "max_workers": settings.max_workers
        }, "INFO" if report.passed else "WARNING")
        return report


# Global bench runner instance
bench_runner = BenchRunner()
