"""
Closed-form large-system predictions for the l1-norm precoder and its thresholded
variant, all expressed through a solved SaddlePoint.
"""

import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from .config import DomainParams
from .errors import DomainError, InfeasibleTarget, NumericalInconsistency, ScalingUndefined
from .fixed_point import SaddlePoint
from .scalar_core import indicator_moments, prox, q_func, q_inv

KAPPA_SLACK = 1e-12


class MetricSource(str, Enum):
    PREDICTED_L1 = "PREDICTED_L1"
    PREDICTED_THRESH = "PREDICTED_THRESH"
    EMPIRICAL = "EMPIRICAL"


@dataclass(frozen=True)
class ThresholdStats:
    t_x: float
    theta_star: float
    alpha_tilde_star: float

    @property
    def alpha_tilde_sq(self) -> float:
        return self.alpha_tilde_star ** 2


@dataclass(frozen=True)
class MetricReport:
    p_b: float
    kappa: float
    sinad_lb: float
    ber: float
    scale: float
    source: MetricSource

    def __post_init__(self):
        if self.p_b < 0 or not (0.0 <= self.kappa <= 1.0) or self.sinad_lb < 0:
            raise NumericalInconsistency(f"metric report out of range: {self}")
        if self.source is not MetricSource.EMPIRICAL and not (0.0 <= self.ber <= 0.5):
            raise NumericalInconsistency(f"predicted BER {self.ber} outside [0, 0.5]")

    @property
    def sinad_lb_db(self) -> float:
        return 10.0 * math.log10(self.sinad_lb) if self.sinad_lb > 0 else -math.inf

    def to_dict(self) -> dict:
        data = asdict(self)
        data["source"] = self.source.value
        data["sinad_lb_db"] = self.sinad_lb_db
        return data


def _check_threshold(t_x: float, params: DomainParams) -> None:
    if not (0.0 < t_x < params.amplitude_cap):
        raise DomainError(f"t_x must lie in (0, sqrt(P)={params.amplitude_cap}), got {t_x}")


def distortion_coefficients(saddle: SaddlePoint, params: DomainParams) -> Tuple[float, float]:
    """(coef_G, coef_S) of the limiting l1 distortion law E = coef_G G + coef_S sqrt(rho) S."""
    tau, beta, delta = saddle.tau_star, saddle.beta_star, params.delta
    power = max(tau * tau * delta - params.rho, 0.0)
    coef_g = beta * math.sqrt(power) / (2.0 * tau * delta)
    coef_s = (2.0 * tau * delta - beta) / (2.0 * tau * delta)
    return coef_g, coef_s


def thresholded_distortion_coefficients(stats: ThresholdStats, saddle: SaddlePoint, params: DomainParams) -> Tuple[float, float]:
    theta = stats.theta_star
    power = saddle.tau_star ** 2 * params.delta - params.rho
    spread = stats.alpha_tilde_sq + theta * theta * power + 2.0 * stats.alpha_tilde_sq * theta
    if spread < 0:
        if spread < -1e-12:
            raise NumericalInconsistency(f"negative thresholded distortion variance {spread}")
        spread = 0.0
    return math.sqrt(spread), -theta


def limit_law_e(saddle: SaddlePoint, params: DomainParams, stats: Optional[ThresholdStats] = None) -> Tuple[float, float]:
    """Gaussian-mixture coefficients of the limiting distortion, l1 or thresholded."""
    if stats is None:
        return distortion_coefficients(saddle, params)
    return thresholded_distortion_coefficients(stats, saddle, params)


def sample_limit_x(saddle: SaddlePoint, params: DomainParams, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draws from the limiting law of the precoder entries, prox(tau_tilde* G; lambda1 tau_tilde*/beta*)."""
    a, b = saddle.prox_args(params)
    return prox(a * rng.standard_normal(size), b, params.p_cap)


def predict_l1(saddle: SaddlePoint, params: DomainParams) -> MetricReport:
    tau, beta, delta = saddle.tau_star, saddle.beta_star, params.delta
    margin = 2.0 * tau * delta - beta
    if margin <= 0:
        raise ScalingUndefined(f"2 tau* delta - beta* = {margin} <= 0; receive scaling undefined")

    power = tau * tau * delta - params.rho
    gain = 1.0 - beta / (2.0 * tau * delta)
    distortion = params.sigma2 + 0.25 * beta * beta * power / (tau * tau * delta * delta)
    sinad = params.rho * gain * gain / distortion if distortion > 0 else math.inf
    ber = float(q_func(math.sqrt(params.rho) * gain / math.sqrt(distortion))) if distortion > 0 else 0.0

    return MetricReport(
        p_b=power,
        kappa=float(2.0 * q_func(params.lambda1 / beta)),
        sinad_lb=sinad,
        ber=ber,
        scale=2.0 * tau * delta / (math.sqrt(params.rho) * margin),
        source=MetricSource.PREDICTED_L1,
    )


def sparsity_after_threshold(t_x: float, saddle: SaddlePoint, params: DomainParams) -> float:
    _check_threshold(t_x, params)
    return float(2.0 * q_func(t_x / saddle.tau_tilde_star + params.lambda1 / saddle.beta_star))


def threshold_for_target(kappa_target: float, saddle: SaddlePoint, params: DomainParams) -> float:
    """
    Threshold that leaves a kappa_target fraction of antennas active:

        t = (Qinv(kappa/2) - lambda1/beta*) tau_tilde*
    """
    if not (0.0 < kappa_target <= 1.0):
        raise DomainError(f"kappa_target must lie in (0, 1], got {kappa_target}")
    active = float(2.0 * q_func(params.lambda1 / saddle.beta_star))
    if kappa_target > active + KAPPA_SLACK:
        raise InfeasibleTarget(
            f"kappa_target={kappa_target} exceeds the l1 sparsity level {active:.6g}",
            {"kappa": kappa_target - active},
        )
    if kappa_target >= active:
        return 0.0

    t_x = (q_inv(kappa_target / 2.0) - params.lambda1 / saddle.beta_star) * saddle.tau_tilde_star
    t_x = max(t_x, 0.0)
    if t_x >= params.amplitude_cap:
        raise InfeasibleTarget(
            f"threshold {t_x:.6g} for kappa={kappa_target} is not below sqrt(P)={params.amplitude_cap:.6g}"
        )
    return t_x


def thresholded_stats(t_x: float, saddle: SaddlePoint, params: DomainParams) -> ThresholdStats:
    _check_threshold(t_x, params)
    a, b = saddle.prox_args(params)
    moments = indicator_moments(a, b, params.p_cap, t_x)
    return ThresholdStats(
        t_x=t_x,
        theta_star=-moments.h_cross / (saddle.tau_star * params.delta),
        alpha_tilde_star=math.sqrt(max(moments.square, 0.0)),
    )


def predict_thresh(stats: ThresholdStats, saddle: SaddlePoint, params: DomainParams) -> MetricReport:
    theta = stats.theta_star
    if theta >= 0:
        raise ScalingUndefined(f"theta*={theta} is not negative; no thresholded antenna survives")

    alpha_sq = stats.alpha_tilde_sq
    power = saddle.tau_star ** 2 * params.delta - params.rho
    denominator = alpha_sq + theta * theta * power + 2.0 * alpha_sq * theta + params.sigma2
    if denominator <= 0:
        raise NumericalInconsistency(f"thresholded distortion denominator {denominator} <= 0")

    return MetricReport(
        p_b=alpha_sq,
        kappa=sparsity_after_threshold(stats.t_x, saddle, params),
        sinad_lb=params.rho * theta * theta / denominator,
        ber=float(q_func(-math.sqrt(params.rho) * theta / math.sqrt(denominator))),
        scale=-1.0 / (math.sqrt(params.rho) * theta),
        source=MetricSource.PREDICTED_THRESH,
    )
