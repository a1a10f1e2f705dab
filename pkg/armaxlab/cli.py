"""
Command-line interface for armaxlab.
Subcommands for simulation, identification, estimation, closed-loop LQG,
the realization pitfall demo, experiment runs, the acceptance bench and the
HTTP server.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
import uvicorn

from armaxlab import __version__
from armaxlab.bench import BenchReport, BenchScale, bench_runner
from armaxlab.config import settings
from armaxlab.errors import ArmaxLabError, ConfigError
from armaxlab.estimation import pitfall_demo, run_model_free_estimation
from armaxlab.experiments import ExperimentConfig, ExperimentKind, experiment_service, simulate_for_seed
from armaxlab.ident_offline import armax_identify_offline
from armaxlab.ident_online import OnlineIdentifier, estimate_columns
from armaxlab.lqg import closed_loop_run
from armaxlab.model_core import DelayPolynomial
from armaxlab.storage import ArtifactWriter, iter_trajectory_rows, load_trajectory, save_trajectory
from armaxlab.utils import get_logger, log_operation, safe_json_dumps

logger = get_logger("cli")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
STREAM_CHUNK = 4096
PITFALL_HORIZON = 100_000


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="experiment config JSON file")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--seed", type=int, help="run this seed instead of the config's seeds")


def _add_orders(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--trajectory", type=Path, help="trajectory CSV (k,u,y[,w,x1..xn])")
    parser.add_argument("--orders", type=int, nargs=3, metavar=("N", "M", "P"), help="model orders n m p")
    parser.add_argument("--p0", type=float, default=settings.p0, help="initial P = p0 I of the recursive IV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="armaxlab", description="ARMAX identification, estimation and LQG experiments")
    parser.add_argument("--version", action="version", version=f"armaxlab {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="simulate the configured model to a trajectory CSV")
    _add_common(simulate)

    identify = commands.add_parser("identify", help="identify an ARMAX model from a trajectory or a config")
    _add_common(identify)
    _add_orders(identify)
    identify.add_argument("--online", action="store_true", help="stream the online identifier over the trajectory")
    identify.add_argument("--vi-iterations", type=int, default=500, help="offline value-iteration budget")
    identify.add_argument("--filter", type=float, nargs="*", default=None, help="monic instrument filter coefficients f1..fd")

    estimate = commands.add_parser("estimate", help="model-free state estimation over a trajectory or a config")
    _add_common(estimate)
    _add_orders(estimate)
    estimate.add_argument("--window", type=int, default=10_000, help="final window of the error statistics")

    lqg = commands.add_parser("lqg", help="closed-loop model-free LQG for the configured plant")
    _add_common(lqg)

    pitfall = commands.add_parser("demo-pitfall", help="two realizations with equal output statistics")
    _add_common(pitfall)
    pitfall.add_argument("--horizon", type=int, default=PITFALL_HORIZON, help="samples per realization when no --config is given")

    run = commands.add_parser("run", help="run any configured experiment across its seeds")
    _add_common(run)

    bench = commands.add_parser("bench", help="acceptance checks; nonzero exit when any check fails")
    _add_common(bench)
    bench.add_argument("--scale", choices=[scale.value for scale in BenchScale], default=BenchScale.QUICK.value)
    bench.add_argument("--analytic-only", action="store_true", help="skip the Monte Carlo checks")

    serve = commands.add_parser("serve", help="serve the HTTP API")
    serve.add_argument("--host", default=settings.service_host)
    serve.add_argument("--port", type=int, default=settings.service_port)
    return parser


def _load_config(args: argparse.Namespace, kind: Optional[ExperimentKind] = None) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError(f"'{args.command}' needs --config")
    config = ExperimentConfig.from_file(args.config)
    updates = {}
    if kind is not None:
        updates["kind"] = kind
    if args.seed is not None:
        updates["seeds"] = [args.seed]
    return config.model_copy(update=updates) if updates else config


def _writer(args: argparse.Namespace) -> ArtifactWriter:
    return ArtifactWriter(args.out or settings.output_dir or ".")


def _orders(args: argparse.Namespace):
    if args.orders is None:
        raise ConfigError("--trajectory needs --orders N M P")
    n, m, p = args.orders
    if min(n, m, p) < 0:
        raise ConfigError(f"orders must be non-negative, got {n} {m} {p}")
    return n, m, p


def _emit(data) -> None:
    print(safe_json_dumps(data))


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    writer = _writer(args)
    for seed in config.seeds:
        traj = simulate_for_seed(config, seed, with_truth=True)
        path = save_trajectory(traj, writer.path(f"trajectory_seed{seed}.csv"))
        print(path)
    return EXIT_OK


def _run_experiment(args: argparse.Namespace, kind: Optional[ExperimentKind] = None) -> int:
    config = _load_config(args, kind)
    report = experiment_service.run_experiment(config, out_dir=args.out)
    _emit({"kind": report.kind.value, "aggregate": report.aggregate, "failed_seeds": report.failed_seeds})
    return EXIT_CHECK_FAILED if len(report.failed_seeds) == len(report.seeds) else EXIT_OK


def stream_online_identification(path: Path, n: int, m: int, p: int, p0: float, writer: ArtifactWriter) -> OnlineIdentifier:
    """Feed trajectory rows to the online identifier chunk by chunk, appending k,a..,b..,c..,eps2 rows."""
    ident = OnlineIdentifier(n, m, p, p0=p0)
    columns = ["k"] + estimate_columns(n, m, p) + ["eps2"]
    target = writer.path("identify_online.csv")
    rows: List[List[float]] = []
    header = True

    def flush():
        nonlocal header, rows
        pd.DataFrame(rows, columns=columns).to_csv(target, mode="w" if header else "a", header=header, index=False, float_format="%.17g")
        header = False
        rows = []

    for k, u, y in iter_trajectory_rows(path, chunksize=STREAM_CHUNK):
        estimate = ident.step(u, y)
        rows.append([k, *estimate, ident.eps2])
        if len(rows) >= STREAM_CHUNK:
            flush()
    if rows or header:
        flush()

    writer.written.append(target)
    log_operation("stream_online_identification", "cli", {"path": str(path), "samples": ident.samples, "theta": ident.theta})
    return ident


def trace_frame(c_estimates, eps2, p: int) -> pd.DataFrame:
    """One row per value-iteration step: iteration, c1..cp, eps2."""
    frame = pd.DataFrame({"iteration": np.arange(len(eps2))})
    for i in range(p):
        frame[f"c{i + 1}"] = [float(c[i]) for c in c_estimates]
    frame["eps2"] = eps2
    return frame


def cmd_identify(args: argparse.Namespace) -> int:
    if args.trajectory is None:
        kind = ExperimentKind.IDENTIFY_ONLINE if args.online else ExperimentKind.IDENTIFY_OFFLINE
        return _run_experiment(args, kind)

    n, m, p = _orders(args)
    writer = _writer(args)
    if args.online:
        ident = stream_online_identification(args.trajectory, n, m, p, args.p0, writer)
        summary = {"theta": ident.theta, "eps2": ident.eps2, "samples": ident.samples, "rejected_steps": ident.step_log}
        writer.write_json("identify_online_summary.json", summary)
        _emit(summary)
        return EXIT_OK

    instrument = DelayPolynomial(tuple(args.filter)) if args.filter else None
    result = armax_identify_offline(load_trajectory(args.trajectory), n, m, p, args.vi_iterations, instrument)
    report = result.to_report()
    writer.write_frame("identify_offline_trace.csv", trace_frame(result.trace.c_estimates, result.trace.eps2, p))
    writer.write_json("identify_offline.json", report)
    _emit(report)
    return EXIT_OK


def estimation_summary(table: pd.DataFrame, window: int) -> dict:
    """Final-window statistics of a model-free estimation table."""
    tail = table.iloc[-window:]
    summary = {"samples": len(table), "window": len(tail), "mean_e2": float(np.mean(tail["e"] ** 2))}
    if "err_sq" in table.columns:
        summary["mean_err_sq"] = float(tail["err_sq"].mean())
    return summary


def cmd_estimate(args: argparse.Namespace) -> int:
    if args.trajectory is None:
        return _run_experiment(args, ExperimentKind.ESTIMATE)

    n, m, p = _orders(args)
    traj = load_trajectory(args.trajectory)
    table = run_model_free_estimation(traj, n, m, p, p0=args.p0)
    summary = estimation_summary(table, args.window)
    if traj.x is not None and traj.state_dim == n:
        power = float(np.mean(np.sum(traj.x[-summary["window"]:] ** 2, axis=1)))
        summary["mean_state_power"] = power
        summary["relative_err_sq"] = summary["mean_err_sq"] / power if power > 0 else None

    writer = _writer(args)
    writer.write_frame("estimate.csv", table)
    writer.write_json("estimate_summary.json", summary)
    _emit(summary)
    return EXIT_OK


def cmd_lqg(args: argparse.Namespace) -> int:
    config = _load_config(args, ExperimentKind.LQG)
    options = config.lqg
    writer = _writer(args)
    summaries = {}
    for seed in config.seeds:
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
        frame = pd.DataFrame({"k": np.arange(config.horizon), "u": result.u, "y": result.y, "cost": result.cost})
        for i in range(result.K_history.shape[1]):
            frame[f"Kk_{i + 1}"] = result.K_history[:, i]
        writer.write_frame(f"lqg_seed{seed}.csv", frame)
        summary = dict(result.summary)
        summary.pop("seconds", None)
        summaries[str(seed)] = summary

    writer.write_json("lqg_summary.json", summaries)
    _emit(summaries)
    return EXIT_OK


def cmd_demo_pitfall(args: argparse.Namespace) -> int:
    if args.config is not None:
        return _run_experiment(args, ExperimentKind.PITFALL_DEMO)
    result = pitfall_demo(args.horizon, args.seed if args.seed is not None else 0)
    if args.out or settings.output_dir:
        _writer(args).write_json("pitfall.json", result)
    _emit(result)
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    return _run_experiment(args)


def print_bench(report: BenchReport) -> None:
    for check in report.checks:
        status = "PASS" if check.passed else "FAIL"
        value = "error" if check.value is None else f"{check.value:.3e}"
        print(f"{status}  {check.name:<28} {value:>10} <= {check.threshold:.1e}  ({check.seconds:.2f}s)")
    print(f"{len(report.checks) - len(report.failed)}/{len(report.checks)} checks passed at {report.scale.value} scale")


def cmd_bench(args: argparse.Namespace) -> int:
    report = bench_runner.run(BenchScale(args.scale), analytic_only=args.analytic_only)
    if args.out or settings.output_dir:
        _writer(args).write_json("bench.json", report.model_dump(mode="json"))
    print_bench(report)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_serve(args: argparse.Namespace) -> int:
    uvicorn.run(
        "armaxlab.api:app",
        host=args.host,
        port=args.port,
        reload=settings.debug,
        log_level=settings.log_level.lower(),
        access_log=True
    )
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "identify": cmd_identify,
    "estimate": cmd_estimate,
    "lqg": cmd_lqg,
    "demo-pitfall": cmd_demo_pitfall,
    "run": cmd_run,
    "bench": cmd_bench,
    "serve": cmd_serve,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ArmaxLabError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        log_operation(args.command, "cli", {"error": str(e)}, "ERROR")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
