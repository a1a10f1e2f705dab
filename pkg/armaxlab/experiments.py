"""
Experiment runner for armaxlab.
Validated experiment configuration, per-seed pipelines for every experiment
kind, seed fan-out and report assembly.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from itertools import repeat
from pathlib import Path
from typing import Annotated, Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError, model_validator

from armaxlab import __version__
from armaxlab.config import settings
from armaxlab.errors import ArmaxLabError, ConfigError
from armaxlab.estimation import pitfall_demo, run_model_free_estimation
from armaxlab.ident_offline import (
    armax_identify_offline,
    orthogonality_statistics,
    plr_bootstrap,
    residual_series,
)
from armaxlab.ident_online import OnlineIdentifier, discounted_prediction_cost
from armaxlab.lqg import closed_loop_run
from armaxlab.model_core import ArmaxParams, DelayPolynomial, Trajectory, reconstruct_innovations, simulate_armax
from armaxlab.signals import file_input, prbs_input, white_input
from armaxlab.storage import ArtifactWriter
from armaxlab.utils import Timer, get_current_timestamp, get_logger, log_operation

logger = get_logger("experiments")


class ExperimentKind(str, Enum):
    IDENTIFY_OFFLINE = "identify-offline"
    IDENTIFY_ONLINE = "identify-online"
    ESTIMATE = "estimate"
    LQG = "lqg"
    PITFALL_DEMO = "pitfall-demo"


class InputKind(str, Enum):
    WHITE = "white"
    PRBS = "prbs"
    FILE = "file"


class InputSpec(BaseModel):
    """Excitation signal of an open-loop experiment."""

    kind: InputKind = Field(InputKind.WHITE, description="Input generator")
    variance: float = Field(1.0, ge=0.0, description="Variance of white input")
    amplitude: float = Field(1.0, description="Amplitude of PRBS input")
    nbits: int = Field(10, ge=2, le=32, description="PRBS register length")
    path: Optional[str] = Field(None, description="CSV file for file input")
    column: str = Field("u", description="Column of the CSV file")

    @model_validator(mode="after")
    def _file_needs_path(self):
        if self.kind is InputKind.FILE and not self.path:
            raise ValueError("file input requires a path")
        return self


class DitherSpec(BaseModel):
    amplitude: float = Field(1.0, ge=0.0, description="Standard deviation of exploration dither")
    window: Optional[int] = Field(None, ge=0, description="Dithered samples; default horizon // 10")


class IdentificationOptions(BaseModel):
    vi_iterations: int = Field(500, ge=1, description="Offline value-iteration budget")
    p0: float = Field(settings.p0, gt=0.0, description="Initial P = p0 I of the recursive IV")
    instrument_filter: List[float] = Field(default_factory=list, description="Coefficients of the monic instrument filter F(z)")
    plr_sweeps: int = Field(0, ge=0, description="PLR baseline sweeps; 0 disables the baseline")
    discount_factors: List[float] = Field(default_factory=lambda: [0.5, 0.9, 0.99], description="Discounts of the prediction-cost check")


class EstimationOptions(BaseModel):
    error_window: int = Field(10_000, ge=1, description="Window of the state-error statistics")


class LqgOptions(BaseModel):
    gamma: float = Field(0.9, gt=0.0, lt=1.0, description="Discount factor")
    Q: Optional[List[List[float]]] = Field(None, description="State weight; identity when omitted")
    R: float = Field(1.0, gt=0.0, description="Input weight")
    dither: DitherSpec = Field(default_factory=DitherSpec)


class ExperimentConfig(BaseModel):
    """One experiment: a model, an input, a horizon and the seeds to run."""

    kind: ExperimentKind
    model: ArmaxParams = Field(default_factory=ArmaxParams)
    input: InputSpec = Field(default_factory=InputSpec)
    horizon: int = Field(..., ge=1, description="Samples per seed")
    seeds: List[Annotated[int, Field(ge=0)]] = Field(..., min_length=1, description="Random seeds")
    burn_in: Optional[int] = Field(None, ge=0, description="Discarded leading samples; default 10 n")
    identification: IdentificationOptions = Field(default_factory=IdentificationOptions)
    estimation: EstimationOptions = Field(default_factory=EstimationOptions)
    lqg: LqgOptions = Field(default_factory=LqgOptions)
    curve_points: int = Field(settings.curve_points, ge=2, description="Points per downsampled curve")

    @property
    def effective_burn_in(self) -> int:
        return 10 * self.model.n if self.burn_in is None else self.burn_in

    @classmethod
    def parse(cls, data: Union[Dict[str, Any], str]) -> "ExperimentConfig":
        """Validate a dict or JSON text, raising ConfigError with pydantic's error list."""
        try:
            if isinstance(data, str):
                return cls.model_validate_json(data)
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"invalid experiment config: {e.errors(include_url=False)}")

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        return cls.parse(text)


class SeedResult(BaseModel):
    seed: int
    status: str = "ok"
    metrics: Dict[str, Optional[float]] = Field(default_factory=dict)
    curves: Dict[str, List[Optional[float]]] = Field(default_factory=dict)
    error: Optional[str] = None


class ExperimentReport(BaseModel):
    """Per-seed metrics, aggregate medians and the configuration echo."""

    schema_version: str = settings.report_schema_version
    tool_version: str = __version__
    kind: ExperimentKind
    config: Dict[str, Any]
    seeds: List[SeedResult]
    aggregate: Dict[str, Optional[float]] = Field(default_factory=dict)
    failed_seeds: List[int] = Field(default_factory=list)
    artifacts: List[str] = Field(default_factory=list)
    generated_at: str = Field(default_factory=get_current_timestamp)

    def deterministic_dump(self) -> Dict[str, Any]:
        """Report content without the timestamp."""
        return self.model_dump(mode="json", exclude={"generated_at"})


@dataclass
class SeedOutcome:
    seed: int
    metrics: Dict[str, float] = field(default_factory=dict)
    curves: Dict[str, List[float]] = field(default_factory=dict)
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    error: Optional[str] = None


def log_indices(length: int, points: int) -> np.ndarray:
    """Roughly log-spaced sample indices in [0, length), always ending at length - 1."""
    if length <= points:
        return np.arange(length)
    return np.unique(np.geomspace(1, length, points).astype(int) - 1)


def relative_error(estimate: np.ndarray, truth: np.ndarray) -> float:
    """max |estimate - truth| / max |truth|; absolute when truth is zero."""
    diff = float(np.max(np.abs(estimate - truth))) if truth.size else 0.0
    scale = float(np.max(np.abs(truth))) if truth.size else 0.0
    return diff / scale if scale > 0 else diff


def make_input(spec: InputSpec, length: int, seed: int) -> np.ndarray:
    if spec.kind is InputKind.WHITE:
        return white_input(length, spec.variance, seed)
    if spec.kind is InputKind.PRBS:
        return prbs_input(length, spec.amplitude, seed, spec.nbits)
    values = file_input(spec.path, spec.column)
    if values.size < length:
        raise ConfigError(f"input file has {values.size} samples, need {length}")
    return values[:length]


def simulate_for_seed(config: ExperimentConfig, seed: int, with_truth: bool = False) -> Trajectory:
    burn_in = config.effective_burn_in
    u = make_input(config.input, config.horizon + burn_in, seed)
    return simulate_armax(config.model, u, config.horizon, seed, with_truth=with_truth, burn_in=burn_in)


def _innovation_checks(traj: Trajectory, params: ArmaxParams, config: ExperimentConfig) -> Dict[str, float]:
    """Whiteness of the final predictor's errors over the second half, plus the discounted-cost ratios."""
    n, m, p = params.orders
    ytilde = residual_series(traj, params.theta[:n + m], n)
    half = len(traj) // 2
    metrics: Dict[str, float] = {}

    if p > 0 and len(traj) - half > 2 * p:
        stats = orthogonality_statistics(ytilde[half:], params.c, 2 * p)
        metrics["orthogonality_max_corr"] = float(np.max(stats.correlations))
        metrics["orthogonality_bound"] = stats.bound
        metrics["orthogonality_passed"] = float(stats.passed)

    e = reconstruct_innovations(ytilde, params.c)[half:]
    sigma2 = config.model.sigma2
    for gamma in config.identification.discount_factors:
        cost = discounted_prediction_cost(e, gamma)
        if sigma2 > 0:
            metrics[f"discounted_cost_ratio_{gamma:g}"] = cost * (1.0 - gamma) / sigma2
    return metrics


def _identify_offline(config: ExperimentConfig, seed: int) -> SeedOutcome:
    n, m, p = config.model.orders
    traj = simulate_for_seed(config, seed)
    options = config.identification
    instrument = DelayPolynomial(tuple(options.instrument_filter)) if options.instrument_filter else None
    result = armax_identify_offline(traj, n, m, p, options.vi_iterations, instrument)

    truth = config.model.theta
    metrics = {
        "theta_relative_error": relative_error(result.params.theta, truth),
        "theta_max_abs_error": float(np.max(np.abs(result.params.theta - truth))) if truth.size else 0.0,
        "sigma2_estimate": result.params.sigma2,
        "sigma2_relative_error": abs(result.params.sigma2 - config.model.sigma2) / config.model.sigma2 if config.model.sigma2 > 0 else result.params.sigma2,
        "vi_iterations": float(result.trace.iterations),
        "vi_converged": float(result.trace.converged),
        "iv_condition": result.iv.condition if result.iv is not None else 1.0,
    }
    metrics.update(_innovation_checks(traj, result.params, config))

    if options.plr_sweeps > 0:
        try:
            plr = plr_bootstrap(traj, n, m, p, options.plr_sweeps)
            metrics["plr_relative_error"] = relative_error(plr, truth)
        except ArmaxLabError as e:
            logger.warning(f"PLR baseline failed for seed {seed}: {e}")
            metrics["plr_relative_error"] = float("nan")

    curve = {
        f"c{i + 1}": [float(c[i]) for c in result.trace.c_estimates] for i in range(p)
    }
    curve["eps2"] = list(result.trace.eps2)
    indices = log_indices(result.trace.iterations, config.curve_points)
    curves = {"iteration": indices.astype(float).tolist()}
    curves.update({name: [values[i] for i in indices] for name, values in curve.items()})
    return SeedOutcome(seed=seed, metrics=metrics, curves=curves, tables={"curves": pd.DataFrame(curves)})


def _identify_online(config: ExperimentConfig, seed: int) -> SeedOutcome:
    n, m, p = config.model.orders
    traj = simulate_for_seed(config, seed)
    ident = OnlineIdentifier(n, m, p, p0=config.identification.p0)
    table = ident.run(traj.u, traj.y)

    truth = config.model.theta
    sigma2 = config.model.sigma2
    metrics = {
        "theta_relative_error": relative_error(ident.theta, truth),
        "theta_max_abs_error": float(np.max(np.abs(ident.theta - truth))) if truth.size else 0.0,
        "eps2_final": ident.eps2,
        "eps2_relative_error": abs(ident.eps2 - sigma2) / sigma2 if sigma2 > 0 else ident.eps2,
        "rejected_steps": float(len(ident.step_log)),
    }
    metrics.update(_innovation_checks(traj, ident.params, config))

    curve_table = table.iloc[log_indices(len(table), config.curve_points)].reset_index(drop=True)
    curves = {column: curve_table[column].astype(float).tolist() for column in curve_table.columns}
    return SeedOutcome(seed=seed, metrics=metrics, curves=curves, tables={"curves": curve_table})


def _estimate(config: ExperimentConfig, seed: int) -> SeedOutcome:
    n, m, p = config.model.orders
    traj = simulate_for_seed(config, seed, with_truth=True)
    table = run_model_free_estimation(traj, n, m, p, p0=config.identification.p0)

    window = min(config.estimation.error_window, len(traj))
    state_power = np.sum(traj.x ** 2, axis=1)
    err_sq = table["err_sq"].to_numpy()
    final_power = float(np.mean(state_power[-window:]))
    metrics = {
        "state_error_final": float(np.mean(err_sq[-window:])),
        "state_power_final": final_power,
        "state_error_relative": float(np.mean(err_sq[-window:])) / final_power if final_power > 0 else float("nan"),
    }

    windows = len(traj) // window
    window_means = [float(np.mean(err_sq[i * window:(i + 1) * window])) for i in range(windows)]
    curve_table = table.iloc[log_indices(len(table), config.curve_points)].reset_index(drop=True)
    curves = {column: curve_table[column].astype(float).tolist() for column in curve_table.columns}
    curves["window_mean_err_sq"] = window_means
    return SeedOutcome(seed=seed, metrics=metrics, curves=curves, tables={"curves": curve_table})


def _lqg(config: ExperimentConfig, seed: int) -> SeedOutcome:
    options = config.lqg
    result = closed_loop_run(
        config.model,
        config.horizon,
        seed,
        gamma=options.gamma,
        Q=None if options.Q is None else np.asarray(options.Q, dtype=float),
        R=options.R,
        dither_amplitude=options.dither.amplitude,
        dither_window=options.dither.window,
        p0=config.identification.p0
    )
    summary = result.summary
    metrics = {
        "K_relative_error": summary["K_relative_error"],
        "achieved_cost": summary["achieved_cost"],
        "optimal_cost": summary["optimal_cost"],
        "cost_ratio": summary["cost_ratio"],
        "rejected_lqg_steps": float(summary["rejected_lqg_steps"]),
        "rejected_iv_steps": float(summary["rejected_iv_steps"]),
    }

    T = config.horizon
    frame = pd.DataFrame({"k": np.arange(T), "u": result.u, "y": result.y, "cost": result.cost})
    for i in range(result.K_history.shape[1]):
        frame[f"Kk_{i + 1}"] = result.K_history[:, i]
    curve_table = frame.iloc[log_indices(T, config.curve_points)].reset_index(drop=True)
    curves = {column: curve_table[column].astype(float).tolist() for column in curve_table.columns}
    return SeedOutcome(seed=seed, metrics=metrics, curves=curves, tables={"curves": curve_table})


def _pitfall(config: ExperimentConfig, seed: int) -> SeedOutcome:
    result = pitfall_demo(config.horizon, seed)
    direct, spectral = result["realizations"]
    metrics = {
        "sigma_direct": direct["sigma"],
        "sigma_spectral": spectral["sigma"],
        "L_direct": direct["L"],
        "L_spectral": spectral["L"],
        "r0_direct": direct["r0"],
        "r0_spectral": spectral["r0"],
        "r1_direct": direct["r1"],
        "r1_spectral": spectral["r1"],
        "rho1_direct": direct["rho1"],
        "rho1_spectral": spectral["rho1"],
        "rho1_max_deviation": max(abs(direct["rho1"] - result["rho1_exact"]), abs(spectral["rho1"] - result["rho1_exact"])),
        "bound": result["bound"],
    }
    return SeedOutcome(seed=seed, metrics=metrics)


PIPELINES = {
    ExperimentKind.IDENTIFY_OFFLINE: _identify_offline,
    ExperimentKind.IDENTIFY_ONLINE: _identify_online,
    ExperimentKind.ESTIMATE: _estimate,
    ExperimentKind.LQG: _lqg,
    ExperimentKind.PITFALL_DEMO: _pitfall,
}


def run_seed(config: ExperimentConfig, seed: int) -> SeedOutcome:
    """Run one seed; any failure is captured in the outcome instead of raised."""
    try:
        return PIPELINES[config.kind](config, seed)
    except Exception as e:
        logger.error(f"Seed {seed} failed: {e}")
        log_operation("run_seed", "experiments", {"kind": config.kind.value, "seed": seed, "error": str(e)}, "ERROR")
        return SeedOutcome(seed=seed, error=f"{type(e).__name__}: {e}")


class ExperimentService:
    """Runs experiments across seeds and assembles reports."""

    def __init__(self, max_workers: Optional[int] = None):
        self.max_workers = max_workers or settings.max_workers

    def run_seeds(self, config: ExperimentConfig) -> List[SeedOutcome]:
        workers = min(self.max_workers, len(config.seeds))
        if workers <= 1:
            return [run_seed(config, seed) for seed in config.seeds]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run_seed, repeat(config), config.seeds))

    def build_report(self, config: ExperimentConfig, outcomes: List[SeedOutcome]) -> ExperimentReport:
        seeds = []
        for outcome in outcomes:
            seeds.append(SeedResult(
                seed=outcome.seed,
                status="failed" if outcome.error else "ok",
                metrics={key: _finite_or_none(value) for key, value in outcome.metrics.items()},
                curves={key: [_finite_or_none(v) for v in values] for key, values in outcome.curves.items()},
                error=outcome.error
            ))

        ok = [outcome for outcome in outcomes if outcome.error is None]
        keys = sorted({key for outcome in ok for key in outcome.metrics})
        aggregate = {}
        for key in keys:
            values = np.array([outcome.metrics.get(key, np.nan) for outcome in ok], dtype=float)
            aggregate[key] = _finite_or_none(np.nanmedian(values)) if np.isfinite(values).any() else None

        return ExperimentReport(
            kind=config.kind,
            config=config.model_dump(mode="json"),
            seeds=seeds,
            aggregate=aggregate,
            failed_seeds=[outcome.seed for outcome in outcomes if outcome.error]
        )

    def write_artifacts(self, report: ExperimentReport, outcomes: List[SeedOutcome], out_dir: Union[str, Path]) -> ExperimentReport:
        writer = ArtifactWriter(out_dir)
        names = []
        for outcome in outcomes:
            for table_name, frame in outcome.tables.items():
                name = f"{report.kind.value}_{table_name}_seed{outcome.seed}.csv"
                writer.write_frame(name, frame)
                names.append(name)
        report.artifacts = names + ["report.json"]
        writer.write_json("report.json", report.model_dump(mode="json"))
        return report

    def run_experiment(self, config: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None) -> ExperimentReport:
        """Execute the configured pipeline for every seed and build the report."""
        try:
            with Timer("run_experiment") as timer:
                outcomes = self.run_seeds(config)
                report = self.build_report(config, outcomes)
                target = out_dir or settings.output_dir
                if target:
                    report = self.write_artifacts(report, outcomes, target)

            log_operation("run_experiment", "experiments", {
                "kind": config.kind.value,
                "seeds": len(config.seeds),
                "failed_seeds": report.failed_seeds,
                "seconds": timer.elapsed
            })
            return report

        except Exception as e:
            logger.error(f"Experiment {config.kind.value} failed: {e}")
            log_operation("run_experiment", "experiments", {"kind": config.kind.value, "error": str(e)}, "ERROR")
            raise


def _finite_or_none(value: Any) -> Optional[float]:
    value = float(value)
    return value if np.isfinite(value) else None


def load_config(source: Union[str, Path, Dict[str, Any]]) -> ExperimentConfig:
    if isinstance(source, dict):
        return ExperimentConfig.parse(source)
    return ExperimentConfig.from_file(source)


# Global experiment service instance
experiment_service = ExperimentService()
