"""
Saddle point of the scalar max-min problem

    max_{beta >= 0} min_{tau >= 0} psi(tau, beta)

solved through its fixed-point system by nested bracketed root finding: an inner
search for tau*(beta) and an outer search for the zero of Psi'(beta).
"""

import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from loguru import logger
from scipy import optimize

from .config import DomainParams
from .errors import BracketFailure, DegenerateSaddle, InvalidArgument
from .scalar_core import ArrayLike, ProxMoments, effective_scale, prox_moments

INNER_XTOL = 1e-14
OUTER_XTOL = 1e-13
BETA_FLOOR_START = 1e-8
BETA_FLOOR_MIN = 1e-300
PSI_IDENTITY_TOL = 1e-9
_RTOL = 4 * np.finfo(float).eps


@dataclass(frozen=True)
class SaddlePoint:
    tau_star: float
    beta_star: float
    tau_tilde_star: float
    psi_star: float
    residuals: Tuple[float, float]
    psi_identity_gap: float = 0.0
    moments: ProxMoments = field(default=None, compare=False, repr=False)

    def prox_args(self, params: DomainParams) -> Tuple[float, float]:
        """(a, b) such that the limiting precoder entry is prox(a H; b)."""
        return self.tau_tilde_star, params.lambda1 * self.tau_tilde_star / self.beta_star

    @property
    def max_residual(self) -> float:
        return max(abs(r) for r in self.residuals)

    @property
    def identity_holds(self) -> bool:
        return self.psi_identity_gap <= PSI_IDENTITY_TOL * max(1.0, abs(self.psi_star))

    def to_dict(self) -> dict:
        return {
            "tau_star": self.tau_star,
            "beta_star": self.beta_star,
            "tau_tilde_star": self.tau_tilde_star,
            "psi_star": self.psi_star,
            "residuals": list(self.residuals),
            "psi_identity_gap": self.psi_identity_gap,
            "psi_identity_holds": self.identity_holds,
        }


def tau_bracket(params: DomainParams) -> Tuple[float, float]:
    return (
        math.sqrt(params.rho / params.delta),
        math.sqrt((params.rho + params.p_cap) / params.delta),
    )


def beta_upper_bound(params: DomainParams) -> float:
    return (params.delta + 1.0) * math.sqrt((params.p_cap + params.rho) / params.delta)


def _moments_at(tau: ArrayLike, beta: ArrayLike, params: DomainParams) -> ProxMoments:
    tau_tilde = effective_scale(tau, beta, params.lambda2)
    return prox_moments(tau_tilde, params.lambda1 * tau_tilde / beta, params.p_cap)


def _tau_equation(tau: float, beta: float, params: DomainParams) -> float:
    return tau * tau * params.delta - params.rho - _moments_at(tau, beta, params).square


def inner_tau(beta: float, params: DomainParams) -> float:
    """Unique tau in [sqrt(rho/delta), sqrt((rho+P)/delta)] with tau^2 delta = rho + E[prox^2]."""
    if not (math.isfinite(beta) and beta > 0):
        raise InvalidArgument(f"beta must be finite and > 0, got {beta}")
    lo, hi = tau_bracket(params)
    f_lo = _tau_equation(lo, beta, params)
    if f_lo >= 0:
        # prox vanishes identically; the lower end solves the equation
        return lo
    f_hi = _tau_equation(hi, beta, params)
    if f_hi <= 0:
        if f_hi == 0:
            return hi
        raise BracketFailure(
            f"tau equation has no sign change on [{lo}, {hi}] at beta={beta}: "
            f"j(lo)={f_lo}, j(hi)={f_hi}"
        )
    return optimize.brentq(
        _tau_equation, lo, hi, args=(beta, params), xtol=INNER_XTOL, rtol=_RTOL, maxiter=500
    )


def psi_prime(beta: float, params: DomainParams) -> float:
    """Derivative of Psi(beta) = min_tau psi(tau, beta), evaluated through tau*(beta)."""
    tau = inner_tau(beta, params)
    h_cross = _moments_at(tau, beta, params).h_cross
    return tau * params.delta - h_cross - 0.5 * beta


def psi(tau: ArrayLike, beta: ArrayLike, params: DomainParams) -> ArrayLike:
    """
    The scalar objective, with the inner expectation evaluated at the prox minimiser:

        beta tau delta/2 - beta^2/4 + beta rho/(2 tau)
            + (beta/(2 tau) + lambda2) E[prox^2] - beta E[H prox] + lambda1 E[|prox|]
    """
    moments = _moments_at(tau, beta, params)
    return (
        0.5 * beta * tau * params.delta
        - 0.25 * beta * beta
        + 0.5 * beta * params.rho / tau
        + (0.5 * beta / tau + params.lambda2) * moments.square
        - beta * moments.h_cross
        + params.lambda1 * moments.abs
    )


def fixed_point_residuals(tau: float, beta: float, params: DomainParams) -> Tuple[float, float]:
    moments = _moments_at(tau, beta, params)
    return (
        tau * tau * params.delta - params.rho - moments.square,
        beta - 2.0 * tau * params.delta + 2.0 * moments.h_cross,
    )


def _lower_beta(params: DomainParams) -> Tuple[float, float]:
    beta_lo = BETA_FLOOR_START
    while beta_lo >= BETA_FLOOR_MIN:
        slope = psi_prime(beta_lo, params)
        if slope > 0:
            return beta_lo, slope
        logger.debug(f"Psi'({beta_lo:.3e}) = {slope:.3e} <= 0; shrinking lower bracket")
        beta_lo *= 1e-2
    raise BracketFailure(f"Psi' is non-positive down to beta={BETA_FLOOR_MIN}")


def solve_saddle(params: DomainParams) -> SaddlePoint:
    """
    Solve for the unique (tau*, beta*) of the scalar max-min problem.

    Raises:
        DegenerateSaddle: if lambda1 = lambda2 = 0 and delta < 1.
        BracketFailure: if the outer bracket (0, beta_max] shows no sign change.
    """
    if not params.admissible:
        raise DegenerateSaddle(params.delta)

    beta_hi = beta_upper_bound(params)
    slope_hi = psi_prime(beta_hi, params)
    if slope_hi > 0:
        raise BracketFailure(f"Psi'(beta_max={beta_hi}) = {slope_hi} > 0")

    if slope_hi == 0:
        beta = beta_hi
    else:
        beta_lo, _ = _lower_beta(params)
        beta = optimize.brentq(
            psi_prime, beta_lo, beta_hi, args=(params,), xtol=OUTER_XTOL, rtol=_RTOL, maxiter=500
        )

    tau = inner_tau(beta, params)
    tau_tilde = effective_scale(tau, beta, params.lambda2)
    moments = _moments_at(tau, beta, params)
    residuals = fixed_point_residuals(tau, beta, params)
    psi_star = float(psi(tau, beta, params))

    identity = 0.25 * beta * beta + params.lambda2 * moments.square + params.lambda1 * moments.abs
    gap = abs(psi_star - identity)
    if gap > PSI_IDENTITY_TOL * max(1.0, abs(psi_star)):
        logger.warning(f"psi identity gap {gap:.3e} at tau={tau:.6g}, beta={beta:.6g}")

    power = tau * tau * params.delta - params.rho
    if not (0.0 < power <= params.p_cap * (1 + 1e-12)):
        logger.warning(f"saddle power {power:.3e} outside (0, P]; prox is (nearly) identically zero")

    logger.debug(f"saddle tau*={tau:.12g} beta*={beta:.12g} residuals={residuals}")
    return SaddlePoint(
        tau_star=tau,
        beta_star=beta,
        tau_tilde_star=float(tau_tilde),
        psi_star=psi_star,
        residuals=residuals,
        psi_identity_gap=gap,
        moments=moments,
    )
