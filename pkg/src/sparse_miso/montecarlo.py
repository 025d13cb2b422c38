"""
Monte Carlo verification at finite (n, m).

Random streams are numpy Philox generators keyed by SeedSequence(seed,
spawn_key=(channel, draw, purpose)) with purpose 0 for the channel and symbols,
1 for receiver noise and 2 for reference samples of limiting laws. A given
(seed, channel, draw) therefore always sees the same numbers, whatever order
or thread trials run in.
"""

import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger
from scipy import special

from .asymptotics import (
    MetricReport,
    MetricSource,
    ThresholdStats,
    limit_law_e,
    predict_l1,
    predict_thresh,
    sample_limit_x,
    thresholded_stats,
)
from .config import DomainParams, SolverConfig, TrialConfig
from .errors import InvalidArgument, ScalingUndefined
from .fixed_point import SaddlePoint, solve_saddle
from .precoder import Instance, PrecoderResult, apply_threshold, precoder_for, solve_l1_precoder

PURPOSE_SYMBOLS = 0
PURPOSE_NOISE = 1
PURPOSE_REFERENCE = 2

METRIC_NAMES = ("p_b", "kappa", "sinad_lb", "ber")


@dataclass
class EmpiricalReport:
    metrics: MetricReport
    w2_x: float = math.nan
    w2_e_cond: Tuple[float, float] = (math.nan, math.nan)
    std_errors: Dict[str, float] = field(default_factory=dict)
    sinad_mean: float = math.nan
    per_channel: List[MetricReport] = field(default_factory=list)
    num_trials: int = 0
    num_nonconverged: int = 0

    @property
    def nonconverged_fraction(self) -> float:
        return self.num_nonconverged / self.num_trials if self.num_trials else 0.0

    def to_dict(self) -> dict:
        return {
            "metrics": self.metrics.to_dict(),
            "w2_x": self.w2_x,
            "w2_e_minus": self.w2_e_cond[0],
            "w2_e_plus": self.w2_e_cond[1],
            "std_errors": dict(self.std_errors),
            "sinad_mean": self.sinad_mean,
            "num_trials": self.num_trials,
            "num_nonconverged": self.num_nonconverged,
        }


def stream(seed: int, channel: int, draw: int, purpose: int) -> np.random.Generator:
    sequence = np.random.SeedSequence(seed, spawn_key=(channel, draw, purpose))
    return np.random.Generator(np.random.Philox(sequence))


def _random_symbols(rng: np.random.Generator, m: int) -> np.ndarray:
    return 2.0 * rng.integers(0, 2, size=m) - 1.0


def sample_instance(n: int, m: int, params: DomainParams, seed: int, channel: int = 0) -> Instance:
    """Channel with iid N(0, 1/n) entries and uniform BPSK symbols."""
    if n < 1 or m < 1:
        raise InvalidArgument(f"n and m must be >= 1, got n={n}, m={m}")
    if not math.isclose(params.delta, m / n, rel_tol=1e-9):
        logger.debug(f"sampling m/n={m / n:.4g} while params.delta={params.delta:.4g}")
    rng = stream(seed, channel, 0, PURPOSE_SYMBOLS)
    h_matrix = rng.standard_normal((m, n)) / math.sqrt(n)
    return Instance(h_matrix, _random_symbols(rng, m))


def empirical_metrics(
    inst: Instance,
    x: np.ndarray,
    params: DomainParams,
    scale: float,
    num_symbol_draws: int,
    seed: int,
    channel: int = 0,
    resolve: Optional[Callable[[np.ndarray], PrecoderResult]] = None,
) -> EmpiricalReport:
    """
    Finite-size power, activity, SINAD lower bound and BER.

    Draw 0 uses the instance symbols with x. Later draws take fresh symbols and
    call resolve for the matching precoder; without resolve they reuse (s, x) and
    only the receiver noise is redrawn.
    """
    if not math.isfinite(scale):
        raise ScalingUndefined(f"receive scaling is not finite: {scale}")
    if num_symbol_draws < 1:
        raise InvalidArgument("num_symbol_draws must be >= 1")

    noise_std = math.sqrt(params.sigma2)
    distortion = np.zeros(inst.m)
    errors = 0
    power = 0.0
    active = 0.0
    nonconverged = 0

    for draw in range(num_symbol_draws):
        symbols, precoded = inst.symbols, np.asarray(x, dtype=float)
        if draw > 0 and resolve is not None:
            symbols = _random_symbols(stream(seed, channel, draw, PURPOSE_SYMBOLS), inst.m)
            result = resolve(symbols)
            precoded = result.x_hat
            nonconverged += not result.converged

        received = inst.h_matrix @ precoded
        distortion += (scale * received - symbols) ** 2
        noise = stream(seed, channel, draw, PURPOSE_NOISE).normal(0.0, noise_std, inst.m)
        errors += int(np.count_nonzero(np.sign(scale * (received + noise)) != symbols))
        power += float(precoded @ precoded) / inst.n
        active += np.count_nonzero(precoded) / inst.n

    per_user = distortion / num_symbol_draws + scale * scale * params.sigma2
    metrics = MetricReport(
        p_b=power / num_symbol_draws,
        kappa=active / num_symbol_draws,
        sinad_lb=float(1.0 / np.mean(per_user)),
        ber=errors / (inst.m * num_symbol_draws),
        scale=scale,
        source=MetricSource.EMPIRICAL,
    )
    return EmpiricalReport(
        metrics=metrics,
        sinad_mean=float(np.mean(1.0 / per_user)),
        num_trials=max(num_symbol_draws - 1, 0) if resolve is not None else 0,
        num_nonconverged=nonconverged,
    )


def wasserstein2_1d(sample: np.ndarray, other: np.ndarray) -> float:
    """
    W2 between two empirical laws on the line by sorted (quantile) coupling; the
    larger sample is linearly interpolated onto the smaller one's mid-rank levels.
    """
    a = np.sort(np.asarray(sample, dtype=float).ravel())
    b = np.sort(np.asarray(other, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise InvalidArgument("W2 needs non-empty samples")
    if a.size != b.size:
        small, large = (a, b) if a.size < b.size else (b, a)
        levels = (np.arange(small.size) + 0.5) / small.size
        a, b = small, np.quantile(large, levels)
    return float(math.sqrt(np.mean((a - b) ** 2)))


def w2_to_gaussian(sample: np.ndarray, mean: float, std: float) -> float:
    """W2 of an empirical law to N(mean, std^2), coupling order statistics with mid-rank quantiles."""
    ordered = np.sort(np.asarray(sample, dtype=float).ravel())
    if ordered.size == 0:
        raise InvalidArgument("W2 needs a non-empty sample")
    levels = (np.arange(ordered.size) + 0.5) / ordered.size
    quantiles = mean + std * special.ndtri(levels)
    return float(math.sqrt(np.mean((ordered - quantiles) ** 2)))


def reference_sample(
    saddle: SaddlePoint,
    params: DomainParams,
    size: int,
    seed: int,
    t_x: Optional[float] = None,
    channel: int = 0,
) -> np.ndarray:
    draws = sample_limit_x(saddle, params, size, stream(seed, channel, 0, PURPOSE_REFERENCE))
    return draws if t_x is None else apply_threshold(draws, t_x)


def w2_to_limit_x(
    x: np.ndarray,
    saddle: SaddlePoint,
    params: DomainParams,
    ref_sample_size: int,
    seed: int = 0,
    t_x: Optional[float] = None,
    channel: int = 0,
) -> float:
    x = np.asarray(x, dtype=float)
    if ref_sample_size < x.size:
        raise InvalidArgument(f"ref_sample_size={ref_sample_size} must be >= n={x.size}")
    return wasserstein2_1d(x, reference_sample(saddle, params, ref_sample_size, seed, t_x, channel))


def w2_to_limit_e(
    e: np.ndarray,
    s: np.ndarray,
    saddle: SaddlePoint,
    params: DomainParams,
    stats: Optional[ThresholdStats] = None,
) -> Tuple[float, float]:
    """
    Conditional W2 of the distortion given s = -1 and s = +1 against the limiting
    Gaussian N(+-sqrt(rho) coef_S, coef_G^2). stats=None selects the l1 law.
    """
    e = np.asarray(e, dtype=float)
    s = np.asarray(s, dtype=float)
    if e.shape != s.shape:
        raise InvalidArgument(f"distortion shape {e.shape} != symbol shape {s.shape}")
    coef_g, coef_s = limit_law_e(saddle, params, stats)

    distances = []
    for sign in (-1.0, 1.0):
        members = e[s == sign]
        if members.size == 0:
            raise InvalidArgument(f"no users carry symbol {sign:+.0f}")
        distances.append(w2_to_gaussian(members, sign * math.sqrt(params.rho) * coef_s, coef_g))
    return distances[0], distances[1]


@dataclass
class _ChannelOutcome:
    channel: int
    report: EmpiricalReport
    solve_converged: bool


def _run_channel(
    cfg: TrialConfig,
    channel: int,
    saddle: SaddlePoint,
    stats: Optional[ThresholdStats],
    scale: float,
    solver: SolverConfig,
) -> _ChannelOutcome:
    params = cfg.params
    inst = sample_instance(cfg.n, cfg.m, params, cfg.seed, channel)
    result = solve_l1_precoder(inst, params, solver)
    x = result.x_hat if cfg.threshold is None else apply_threshold(result.x_hat, cfg.threshold)

    report = empirical_metrics(
        inst,
        x,
        params,
        scale,
        cfg.num_symbol_draws,
        cfg.seed,
        channel,
        resolve=precoder_for(inst, params, solver, cfg.threshold),
    )
    report.w2_x = w2_to_limit_x(
        x, saddle, params, max(cfg.ref_sample_size, cfg.n), cfg.seed, cfg.threshold, channel
    )
    try:
        report.w2_e_cond = w2_to_limit_e(inst.h_matrix @ x, inst.symbols, saddle, params, stats)
    except InvalidArgument as exc:
        logger.debug(f"channel {channel}: conditional W2 skipped ({exc})")
    return _ChannelOutcome(channel, report, result.converged)


def _standard_error(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(values.size))


def run_trials(
    cfg: TrialConfig,
    solver: Optional[SolverConfig] = None,
    saddle: Optional[SaddlePoint] = None,
    workers: int = 1,
) -> EmpiricalReport:
    """
    Channels x symbol draws with the precoder re-solved per (H, s), aggregated in
    channel order. The receive scaling comes from the matching prediction.
    """
    params = cfg.params
    solver = solver or SolverConfig()
    saddle = saddle or solve_saddle(params)
    stats = None
    if cfg.threshold is None:
        prediction = predict_l1(saddle, params)
    else:
        stats = thresholded_stats(cfg.threshold, saddle, params)
        prediction = predict_thresh(stats, saddle, params)

    args = (saddle, stats, prediction.scale, solver)
    if workers > 1:
        outcomes = []
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(_run_channel, cfg, c, *args) for c in range(cfg.num_channels)]
            for future in as_completed(futures):
                outcomes.append(future.result())
    else:
        outcomes = [_run_channel(cfg, c, *args) for c in range(cfg.num_channels)]
    outcomes.sort(key=lambda outcome: outcome.channel)

    per_channel = [o.report.metrics for o in outcomes]
    columns = {name: np.array([getattr(r, name) for r in per_channel]) for name in METRIC_NAMES}
    trials = sum(o.report.num_trials + 1 for o in outcomes)
    nonconverged = sum(o.report.num_nonconverged + (not o.solve_converged) for o in outcomes)
    if nonconverged:
        logger.warning(f"{nonconverged}/{trials} precoder solves did not converge")

    metrics = MetricReport(
        p_b=float(np.mean(columns["p_b"])),
        kappa=float(np.mean(columns["kappa"])),
        sinad_lb=float(np.mean(columns["sinad_lb"])),
        ber=float(np.mean(columns["ber"])),
        scale=prediction.scale,
        source=MetricSource.EMPIRICAL,
    )
    w2_e = np.array([o.report.w2_e_cond for o in outcomes])
    return EmpiricalReport(
        metrics=metrics,
        w2_x=float(np.mean([o.report.w2_x for o in outcomes])),
        w2_e_cond=(float(np.mean(w2_e[:, 0])), float(np.mean(w2_e[:, 1]))),
        std_errors={name: _standard_error(values) for name, values in columns.items()},
        sinad_mean=float(np.mean([o.report.sinad_mean for o in outcomes])),
        per_channel=per_channel,
        num_trials=trials,
        num_nonconverged=nonconverged,
    )
