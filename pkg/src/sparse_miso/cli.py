"""
Command line entry point: saddle solves, predictions, simulations, calibrations
and figure-style sweeps, written as CSV plus a JSON sidecar.
"""

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv
from loguru import logger
from pydantic import ValidationError
from rich.console import Console
from rich.progress import Progress

from . import __version__
from .asymptotics import MetricReport, predict_l1, predict_thresh, thresholded_stats
from .config import (
    Command,
    DomainParams,
    PrecoderMode,
    RunConfig,
    TuneTarget,
    build_run_config,
    load_defaults,
    load_run_config,
)
from .errors import (
    BracketFailure,
    CalibrationDiverged,
    ConfigError,
    DegenerateSaddle,
    DomainError,
    InfeasibleTarget,
    InvalidArgument,
    PrecoderError,
    SolverNonConvergence,
    SolverNumericalError,
)
from .fixed_point import SaddlePoint, solve_saddle
from .montecarlo import EmpiricalReport, run_trials
from .reporting import SEED_DERIVATION, render_summary, result_row, write_results
from .tuner import Calibration, calibrate_pair, calibrate_rho, optimal_threshold

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_DEGENERATE = 4
EXIT_NONCONVERGENCE = 5

EXIT_CODES = [
    ((ConfigError, InvalidArgument, DomainError, ValidationError), EXIT_CONFIG),
    ((InfeasibleTarget,), EXIT_INFEASIBLE),
    ((DegenerateSaddle,), EXIT_DEGENERATE),
    ((SolverNonConvergence, CalibrationDiverged, BracketFailure, SolverNumericalError), EXIT_NONCONVERGENCE),
]

console = Console(stderr=True)


@dataclass
class RunOutcome:
    rows: List[Dict[str, Any]] = field(default_factory=list)
    saddles: List[Dict[str, Any]] = field(default_factory=list)


@dataclass
class _Point:
    row: Dict[str, Any]
    saddle: SaddlePoint


def exit_code_for(error: BaseException) -> int:
    for kinds, code in EXIT_CODES:
        if isinstance(error, kinds):
            return code
    return EXIT_FAILURE


def _simulate(config: RunConfig, params: DomainParams, saddle: SaddlePoint, t_x: Optional[float]) -> Optional[EmpiricalReport]:
    if config.trial is None:
        return None
    trial = config.trial.model_copy(update={"params": params, "threshold": t_x or None})
    report = run_trials(trial, config.solver, saddle)
    if report.nonconverged_fraction > trial.max_nonconverged_fraction:
        raise SolverNonConvergence(
            f"{report.num_nonconverged}/{report.num_trials} precoder solves did not converge "
            f"(allowed fraction {trial.max_nonconverged_fraction})",
            report.nonconverged_fraction,
        )
    return report


def _seed(config: RunConfig) -> Optional[int]:
    return config.trial.seed if config.trial is not None else None


def _predict(saddle: SaddlePoint, params: DomainParams, t_x: Optional[float]) -> MetricReport:
    if t_x:
        return predict_thresh(thresholded_stats(t_x, saddle, params), saddle, params)
    return predict_l1(saddle, params)


def _point(config: RunConfig, sweep_value: Optional[float], params: DomainParams, t_x: Optional[float]) -> _Point:
    saddle = solve_saddle(params)
    prediction = _predict(saddle, params, t_x)
    empirical = _simulate(config, params, saddle, t_x)
    row = result_row(sweep_value, params.lambda1, params.rho, t_x, prediction, empirical, _seed(config))
    return _Point(row, saddle)


def _tuned_point(config: RunConfig, sweep_value: Optional[float], target: TuneTarget) -> _Point:
    """Calibrate (lambda1, rho) for target, choosing the SINAD-optimal t_x when THRESH leaves it open."""
    base = config.params
    t_x = target.t_x
    if target.mode is PrecoderMode.THRESH and t_x is None:
        best = optimal_threshold(target, base, config.threshold_grid_size)
        calibration = Calibration(best.lambda1, best.rho)
        t_x = best.t_x
    else:
        calibration = calibrate_pair(target, base)
    if target.mode is PrecoderMode.L1:
        t_x = None
    return _point(config, sweep_value, calibration.params(base), t_x)


def _sweep_point(config: RunConfig, value: float) -> _Point:
    params, target = config.params, config.target
    if config.command is Command.SWEEP_LAMBDA1:
        t_x = config.threshold
        mode = PrecoderMode.THRESH if t_x else PrecoderMode.L1
        params = params.with_(lambda1=value)
        if target is not None:
            params = params.with_(rho=calibrate_rho(value, target.pb_target, params, mode, t_x))
        return _point(config, value, params, t_x)
    if config.command is Command.SWEEP_PB:
        return _tuned_point(config, value, target.model_copy(update={"pb_target": value}))
    if config.command is Command.SWEEP_THRESHOLD:
        point = target.model_copy(update={"mode": PrecoderMode.THRESH, "t_x": value})
        return _tuned_point(config, value, point)
    if config.command is Command.SWEEP_TSNR:
        if params.sigma2 <= 0:
            raise ConfigError("SWEEP_TSNR needs sigma2 > 0 (tSNR = P_b / sigma2)")
        pb_target = params.sigma2 * 10.0 ** (value / 10.0)
        update = {"pb_target": pb_target}
        if target.mode is PrecoderMode.THRESH:
            update["t_x"] = None
        target = target.model_copy(update=update)
        target.check_against(params)
        return _tuned_point(config, value, target)
    raise ConfigError(f"{config.command.value} is not a sweep")


def _run_sweep(config: RunConfig, show_progress: bool) -> List[_Point]:
    grid = list(config.sweep_grid)
    with Progress(console=console, transient=True, disable=not show_progress) as progress:
        task = progress.add_task(f"{config.command.value}", total=len(grid))

        def evaluate(value: float) -> _Point:
            point = _sweep_point(config, value)
            progress.advance(task)
            return point

        if config.threads > 1:
            with ThreadPoolExecutor(max_workers=config.threads) as executor:
                return list(executor.map(evaluate, grid))
        return [evaluate(value) for value in grid]


def run(config: RunConfig, show_progress: bool = False) -> RunOutcome:
    """Execute one resolved run config; raises PrecoderError subclasses on failure."""
    logger.info(f"running {config.command.value}")
    params = config.params
    target = config.target

    if config.command in (Command.SADDLE, Command.PREDICT, Command.SIMULATE):
        t_x = None
        if config.command is Command.PREDICT:
            t_x = config.threshold or (target.t_x if target is not None else None)
        if config.command is Command.SIMULATE:
            t_x = config.trial.threshold or config.threshold
        if config.command is not Command.SIMULATE:
            config = config.model_copy(update={"trial": None})
        points = [_point(config, None, params, t_x)]
    elif config.command is Command.TUNE:
        points = [_tuned_point(config, None, target)]
    else:
        points = _run_sweep(config, show_progress)

    return RunOutcome(
        rows=[point.row for point in points],
        saddles=[point.saddle.to_dict() for point in points],
    )


def sidecar_payload(config: RunConfig, outcome: RunOutcome) -> Dict[str, Any]:
    warnings = [
        f"point {index}: psi identity gap {saddle['psi_identity_gap']:.3e}"
        for index, saddle in enumerate(outcome.saddles)
        if not saddle.get("psi_identity_holds", True)
    ]
    return {
        "library_version": __version__,
        "config": config.model_dump(mode="json"),
        "saddles": outcome.saddles,
        "warnings": warnings,
        "seed_derivation": SEED_DERIVATION,
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparse-miso",
        description="l1-norm and thresholded precoders for massive MISO: predictions, simulations, sweeps",
    )
    parser.add_argument(
        "command",
        nargs="?",
        type=lambda text: Command(text.upper().replace("-", "_")),
        help="saddle | predict | simulate | tune | sweep-lambda1 | sweep-pb | sweep-threshold | sweep-tsnr",
    )
    parser.add_argument("--config", help="JSON run config (a results sidecar also works)")
    parser.add_argument("--seed", type=int, help="64-bit base seed for simulations")
    parser.add_argument("--out", help="Output CSV path; the JSON sidecar goes next to it")
    parser.add_argument("--threads", type=int, help="Sweep points evaluated concurrently")
    parser.add_argument("--log-level", default=None, help="loguru level (default: INFO or $SPARSE_MISO_LOG_LEVEL)")
    for flag in ("rho", "delta", "lambda1", "lambda2", "pcap", "sigma2", "kappa", "pb", "tx"):
        parser.add_argument(f"--{flag}", type=float)
    for flag in ("n", "m"):
        parser.add_argument(f"--{flag}", type=int)
    return parser


def _configure_logging(level: Optional[str]) -> None:
    load_dotenv()
    logger.remove()
    logger.add(sys.stderr, level=(level or os.getenv("SPARSE_MISO_LOG_LEVEL", "INFO")).upper())


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = {
        name: getattr(args, name)
        for name in ("seed", "out", "threads", "rho", "delta", "lambda1", "lambda2", "pcap",
                     "sigma2", "n", "m", "kappa", "pb", "tx")
    }
    if args.config:
        config = load_run_config(Path(args.config), overrides)
        if args.command is not None and args.command is not config.command:
            config = build_run_config({**config.model_dump(mode="json"), "command": args.command.value}, overrides)
        return config
    if args.command is None:
        raise ConfigError("give a command or a --config file that names one")
    return build_run_config({"command": args.command.value, "params": {}}, overrides)


def main(argv: Optional[List[str]] = None) -> None:
    args = build_parser().parse_args(argv)
    _configure_logging(args.log_level)

    try:
        config = resolve_config(args)
        outcome = run(config, show_progress=console.is_terminal)
        float_format = load_defaults().get("output", {}).get("float_format", "%.12g")
        path = write_results(outcome.rows, sidecar_payload(config, outcome), Path(config.output_path), float_format)
    except (PrecoderError, ValidationError) as exc:
        code = exit_code_for(exc)
        print(f"Error: {exc}", file=sys.stderr)
        logger.debug(f"exiting with code {code}")
        sys.exit(code)

    render_summary(console, config.command.value, outcome.rows)
    console.print(f"[green]Results written to {path}[/green]")


if __name__ == "__main__":
    main()
