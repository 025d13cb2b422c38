"""
Calibration of (lambda1, rho) against target sparsity and per-antenna power, and
the SINAD-optimal threshold search.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy import optimize

from .asymptotics import MetricReport, predict_l1, predict_thresh, thresholded_stats
from .config import DomainParams, PrecoderMode, TuneTarget
from .errors import CalibrationDiverged, InfeasibleTarget, NumericalInconsistency, ScalingUndefined
from .fixed_point import SaddlePoint, solve_saddle
from .scalar_core import q_func

RHO_FLOOR = 1e-6
RHO_CEILING = 1e6
LAMBDA1_CEILING = 1e6
PB_TOL = 1e-8
PAIR_TOL = 1e-7
_RTOL = 4 * np.finfo(float).eps


@dataclass(frozen=True)
class Calibration:
    lambda1: float
    rho: float
    residuals: Dict[str, float] = field(default_factory=dict)

    def params(self, base: DomainParams) -> DomainParams:
        return base.with_(lambda1=self.lambda1, rho=self.rho)


@dataclass(frozen=True)
class ThresholdOptimum:
    t_x: float
    lambda1: float
    rho: float
    sinad_lb: float
    scan: List[Tuple[float, float]] = field(default_factory=list, compare=False)


def _power(saddle: SaddlePoint, params: DomainParams, mode: PrecoderMode, t_x: Optional[float]) -> float:
    if mode is PrecoderMode.L1:
        return saddle.tau_star ** 2 * params.delta - params.rho
    return thresholded_stats(t_x, saddle, params).alpha_tilde_sq


def _activity(saddle: SaddlePoint, params: DomainParams, mode: PrecoderMode, t_x: Optional[float]) -> float:
    shift = params.lambda1 / saddle.beta_star
    if mode is PrecoderMode.THRESH:
        shift += t_x / saddle.tau_tilde_star
    return float(2.0 * q_func(shift))


def calibrate_rho(
    lambda1: float,
    pb_target: float,
    params_base: DomainParams,
    mode: PrecoderMode = PrecoderMode.L1,
    t_x: Optional[float] = None,
) -> float:
    """
    rho at which the predicted per-antenna power equals pb_target (to 1e-8).

    Raises:
        InfeasibleTarget: no sign change of the power residual on [1e-6, 1e6].
    """
    if pb_target <= 0:
        raise InfeasibleTarget(f"pb_target must be > 0, got {pb_target}")
    if mode is PrecoderMode.THRESH and t_x is None:
        raise InfeasibleTarget("thresholded calibration needs t_x")

    def residual(rho: float) -> float:
        params = params_base.with_(rho=rho, lambda1=lambda1)
        return _power(solve_saddle(params), params, mode, t_x) - pb_target

    lo, r_lo = RHO_FLOOR, residual(RHO_FLOOR)
    if r_lo >= 0:
        if r_lo == 0:
            return lo
        raise InfeasibleTarget(
            f"P_b target {pb_target} is below the power reached at rho={lo}", {"pb": r_lo}
        )

    hi = max(1.0, 2.0 * pb_target)
    r_hi = residual(hi)
    while r_hi <= 0:
        if r_hi == 0:
            return hi
        if hi >= RHO_CEILING:
            raise InfeasibleTarget(
                f"P_b target {pb_target} not reached for rho <= {RHO_CEILING:g}", {"pb": r_hi}
            )
        lo, r_lo = hi, r_hi
        hi = min(hi * 4.0, RHO_CEILING)
        r_hi = residual(hi)
        logger.debug(f"expanding rho bracket to [{lo:.3g}, {hi:.3g}]")

    middle = math.sqrt(lo * hi)
    r_mid = residual(middle)
    if r_lo <= r_mid <= r_hi:
        rho = optimize.brentq(residual, lo, hi, xtol=1e-14, rtol=_RTOL, maxiter=500)
    else:
        logger.warning(
            f"P_b is not monotone in rho on [{lo:.3g}, {hi:.3g}]; falling back to a bounded scalar search"
        )
        found = optimize.minimize_scalar(
            lambda rho: abs(residual(rho)), bounds=(lo, hi), method="bounded", options={"xatol": 1e-13}
        )
        rho = float(found.x)

    final = residual(rho)
    if abs(final) > PB_TOL * max(1.0, pb_target):
        raise InfeasibleTarget(f"rho calibration stalled with P_b residual {final:.3e}", {"pb": final})
    return rho


def calibrate_pair(
    target: TuneTarget,
    params_base: DomainParams,
    max_outer_iters: int = 200,
) -> Calibration:
    """
    (lambda1, rho) meeting both the sparsity and the power target: an outer
    bracketed search in lambda1 on the sparsity residual with calibrate_rho inside.
    """
    target.check_against(params_base)
    mode, t_x = target.mode, target.t_x
    if mode is PrecoderMode.THRESH and t_x is None:
        raise InfeasibleTarget("thresholded calibration needs t_x; use optimal_threshold to pick one")

    def kappa_residual(lambda1: float) -> float:
        rho = calibrate_rho(lambda1, target.pb_target, params_base, mode, t_x)
        params = params_base.with_(rho=rho, lambda1=lambda1)
        return _activity(solve_saddle(params), params, mode, t_x) - target.kappa_target

    def finish(lambda1: float) -> Calibration:
        rho = calibrate_rho(lambda1, target.pb_target, params_base, mode, t_x)
        params = params_base.with_(rho=rho, lambda1=lambda1)
        saddle = solve_saddle(params)
        residuals = {
            "kappa": _activity(saddle, params, mode, t_x) - target.kappa_target,
            "pb": _power(saddle, params, mode, t_x) - target.pb_target,
        }
        if max(abs(v) for v in residuals.values()) > PAIR_TOL:
            raise CalibrationDiverged(f"calibration residuals {residuals} above {PAIR_TOL}", residuals)
        return Calibration(lambda1, rho, residuals)

    r_zero = kappa_residual(0.0)
    if r_zero == 0:
        return finish(0.0)
    if r_zero < 0:
        raise InfeasibleTarget(
            f"kappa target {target.kappa_target} exceeds the activity reachable at lambda1 = 0",
            {"kappa": r_zero},
        )

    hi = 1.0
    r_hi = kappa_residual(hi)
    while r_hi > 0:
        if hi >= LAMBDA1_CEILING:
            raise InfeasibleTarget(
                f"kappa target {target.kappa_target} not reached for lambda1 <= {LAMBDA1_CEILING:g}",
                {"kappa": r_hi},
            )
        hi *= 4.0
        r_hi = kappa_residual(hi)
        logger.debug(f"expanding lambda1 bracket to [0, {hi:.3g}]")
    if r_hi == 0:
        return finish(hi)

    lambda1, outcome = optimize.brentq(
        kappa_residual,
        0.0,
        hi,
        xtol=1e-12,
        rtol=_RTOL,
        maxiter=max_outer_iters,
        full_output=True,
        disp=False,
    )
    if not outcome.converged:
        residual = kappa_residual(lambda1)
        raise CalibrationDiverged(
            f"lambda1 search did not converge in {max_outer_iters} iterations", {"kappa": residual}
        )
    return finish(lambda1)


def predict_calibrated(
    calibration: Calibration, target: TuneTarget, params_base: DomainParams
) -> Tuple[SaddlePoint, MetricReport]:
    params = calibration.params(params_base)
    saddle = solve_saddle(params)
    if target.mode is PrecoderMode.L1:
        return saddle, predict_l1(saddle, params)
    return saddle, predict_thresh(thresholded_stats(target.t_x, saddle, params), saddle, params)


def threshold_grid(p_cap: float, grid_size: int) -> np.ndarray:
    amp = math.sqrt(p_cap)
    return np.linspace(0.01 * amp, 0.99 * amp, grid_size)


def _score_threshold(t_x: float, target: TuneTarget, params_base: DomainParams):
    point = target.model_copy(update={"mode": PrecoderMode.THRESH, "t_x": float(t_x)})
    try:
        calibration = calibrate_pair(point, params_base)
        _, report = predict_calibrated(calibration, point, params_base)
    except (InfeasibleTarget, CalibrationDiverged, ScalingUndefined, NumericalInconsistency) as exc:
        logger.debug(f"t_x={t_x:.4g} skipped: {exc}")
        return None
    return calibration, report


def optimal_threshold(
    target: TuneTarget,
    params_base: DomainParams,
    grid_size: int = 200,
    grid: Optional[Sequence[float]] = None,
    workers: int = 1,
) -> ThresholdOptimum:
    """Scan t_x over (0.01 sqrt(P), 0.99 sqrt(P)) and keep the calibrated point with the best SINAD bound."""
    if grid is None:
        if grid_size < 2:
            raise InfeasibleTarget(f"grid_size must be >= 2, got {grid_size}")
        grid = threshold_grid(params_base.p_cap, grid_size)
    grid = [float(t) for t in grid]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            scored = list(executor.map(lambda t: _score_threshold(t, target, params_base), grid))
    else:
        scored = [_score_threshold(t, target, params_base) for t in grid]

    best = None
    scan = []
    for t_x, outcome in zip(grid, scored):
        if outcome is None:
            continue
        calibration, report = outcome
        scan.append((t_x, report.sinad_lb))
        if best is None or report.sinad_lb > best.sinad_lb:
            best = ThresholdOptimum(t_x, calibration.lambda1, calibration.rho, report.sinad_lb)

    if best is None:
        raise InfeasibleTarget(f"no feasible threshold among {len(grid)} grid points")
    logger.info(f"optimal threshold t_x={best.t_x:.4g} (SINAD_lb {best.sinad_lb:.4g})")
    return ThresholdOptimum(best.t_x, best.lambda1, best.rho, best.sinad_lb, scan)
