"""
Scalar building blocks: the clipped soft-threshold proximal operator, its Moreau
envelope, the Gaussian tail Q and its inverse, and closed-form Gaussian moments
of prox(aH; b) for H ~ N(0, 1).

The moment formulas integrate each linear piece of the prox against the standard
density using

    int_l^u phi       = Q(l) - Q(u)
    int_l^u h phi     = phi(l) - phi(u)
    int_l^u h^2 phi   = Q(l) - Q(u) + l phi(l) - u phi(u)

and double the result by odd symmetry of the prox.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Union

import numpy as np
from scipy import optimize, special

from .errors import DomainError, InvalidArgument

ArrayLike = Union[float, np.ndarray]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
# phi and Q are exactly zero in double precision beyond this point.
_TAIL_CUTOFF = 60.0
_Q_INV_BRACKET = 40.0


class MomentTag(str, Enum):
    SQUARE = "SQUARE"
    H_CROSS = "H_CROSS"
    ABS = "ABS"
    IND_SQUARE = "IND_SQUARE"
    IND_H_CROSS = "IND_H_CROSS"
    IND_MASS = "IND_MASS"

    @property
    def is_indicator(self) -> bool:
        return self.value.startswith("IND_")


@dataclass(frozen=True)
class ProxMomentKind:
    """Which Gaussian functional of the prox to evaluate; magnitude_floor is t in 1{|prox| >= t}."""

    tag: MomentTag
    magnitude_floor: float = 0.0

    def __post_init__(self):
        if not isinstance(self.tag, MomentTag):
            object.__setattr__(self, "tag", MomentTag(self.tag))
        if not math.isfinite(self.magnitude_floor) or self.magnitude_floor < 0:
            raise InvalidArgument(f"magnitude_floor must be >= 0, got {self.magnitude_floor}")
        if self.tag.is_indicator and self.magnitude_floor == 0:
            raise InvalidArgument(
                f"{self.tag.value} needs magnitude_floor > 0; use the plain kind instead"
            )
        if not self.tag.is_indicator and self.magnitude_floor != 0:
            raise InvalidArgument(f"{self.tag.value} takes no magnitude_floor")


class ProxMoments(NamedTuple):
    square: ArrayLike
    h_cross: ArrayLike
    abs: ArrayLike


class IndicatorMoments(NamedTuple):
    square: ArrayLike
    h_cross: ArrayLike
    mass: ArrayLike


def _check_prox_args(t: ArrayLike, p_cap: float) -> None:
    if np.any(~np.isfinite(t)) or np.any(np.asarray(t) < 0):
        raise InvalidArgument(f"threshold t must be finite and >= 0, got {t}")
    if not (math.isfinite(p_cap) and p_cap > 0):
        raise InvalidArgument(f"p_cap must be finite and > 0, got {p_cap}")


def prox(y: ArrayLike, t: ArrayLike, p_cap: float) -> ArrayLike:
    """
    Clipped soft threshold: argmin over |x| <= sqrt(p_cap) of 0.5 (x - y)^2 + t |x|.

    Works element-wise on arrays. Entries with |y| <= t come back as exact 0.0 and
    entries with |y| >= t + sqrt(p_cap) as exactly +-sqrt(p_cap).
    """
    y_arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y_arr)):
        raise InvalidArgument("prox input must be finite")
    _check_prox_args(t, p_cap)

    magnitude = np.minimum(np.maximum(np.abs(y_arr) - t, 0.0), math.sqrt(p_cap))
    out = np.where(magnitude > 0, np.sign(y_arr) * magnitude, 0.0)
    return float(out) if out.ndim == 0 else out


def moreau_env(y: ArrayLike, t: ArrayLike, p_cap: float) -> ArrayLike:
    """Value of the box-constrained l1 Moreau envelope, attained at prox(y, t, p_cap)."""
    x = prox(y, t, p_cap)
    return 0.5 * (x - np.asarray(y, dtype=float)) ** 2 + t * np.abs(x)


def phi(x: ArrayLike) -> ArrayLike:
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def q_func(x: ArrayLike) -> ArrayLike:
    """Upper Gaussian tail probability Q(x) = P[H > x]."""
    return special.ndtr(-np.asarray(x, dtype=float))


def q_inv(p: float) -> float:
    """Inverse of Q on (0, 1), by bracketed root finding to 1e-13 in x."""
    if not (0.0 < p < 1.0):
        raise DomainError(f"q_inv needs p in (0, 1), got {p}")
    return optimize.brentq(
        lambda x: float(q_func(x)) - p,
        -_Q_INV_BRACKET,
        _Q_INV_BRACKET,
        xtol=1e-13,
        rtol=4 * np.finfo(float).eps,
        maxiter=500,
    )


def _check_moment_args(a: ArrayLike, b: ArrayLike, p_cap: float) -> None:
    if np.any(~np.isfinite(a)) or np.any(np.asarray(a) <= 0):
        raise InvalidArgument(f"scale a must be finite and > 0, got {a}")
    if np.any(np.isnan(b)) or np.any(np.asarray(b) < 0):
        raise InvalidArgument(f"threshold b must be >= 0, got {b}")
    if not (math.isfinite(p_cap) and p_cap > 0):
        raise InvalidArgument(f"p_cap must be finite and > 0, got {p_cap}")


def _linear_piece(a, origin, lower, upper):
    """
    Half-line integrals of a (h - origin) against phi over [lower, upper], returned
    as (E[v^2], E[h v], E[|v|]) restricted to that window.
    """
    q_lo, q_hi = q_func(lower), q_func(upper)
    phi_lo, phi_hi = phi(lower), phi(upper)
    mass = q_lo - q_hi
    first = phi_lo - phi_hi
    second = mass + lower * phi_lo - upper * phi_hi

    square = a * a * (second - 2.0 * origin * first + origin * origin * mass)
    h_cross = a * (second - origin * first)
    absolute = a * (first - origin * mass)
    return square, h_cross, absolute


def _breakpoints(a, b, p_cap):
    amp = math.sqrt(p_cap)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # prox(aH; b) is zero for |H| <= start and clamped for |H| >= clamp
    start = np.minimum(b / a, _TAIL_CUTOFF)
    clamp = np.minimum((b + amp) / a, _TAIL_CUTOFF)
    return a, amp, start, clamp


def _as_output(value):
    value = np.asarray(value)
    return float(value) if value.ndim == 0 else value


def prox_moments(a: ArrayLike, b: ArrayLike, p_cap: float) -> ProxMoments:
    """E[prox^2], E[H prox], E[|prox|] for prox(aH; b) capped at sqrt(p_cap)."""
    _check_moment_args(a, b, p_cap)
    a, amp, start, clamp = _breakpoints(a, b, p_cap)

    square, h_cross, absolute = _linear_piece(a, start, start, clamp)
    tail_mass, tail_density = q_func(clamp), phi(clamp)
    return ProxMoments(
        square=_as_output(2.0 * (square + p_cap * tail_mass)),
        h_cross=_as_output(2.0 * (h_cross + amp * tail_density)),
        abs=_as_output(2.0 * (absolute + amp * tail_mass)),
    )


def indicator_moments(a: ArrayLike, b: ArrayLike, p_cap: float, floor: float) -> IndicatorMoments:
    """Moments of prox(aH; b) restricted to the event |prox| >= floor, 0 < floor <= sqrt(p_cap)."""
    _check_moment_args(a, b, p_cap)
    amp = math.sqrt(p_cap)
    if not (0.0 < floor <= amp):
        raise DomainError(f"magnitude floor must lie in (0, sqrt(P)={amp}], got {floor}")
    a, amp, start, clamp = _breakpoints(a, b, p_cap)
    kept = np.minimum(start + floor / a, clamp)

    square, h_cross, _ = _linear_piece(a, start, kept, clamp)
    tail_mass, tail_density = q_func(clamp), phi(clamp)
    return IndicatorMoments(
        square=_as_output(2.0 * (square + p_cap * tail_mass)),
        h_cross=_as_output(2.0 * (h_cross + amp * tail_density)),
        mass=_as_output(2.0 * q_func(kept)),
    )


def expect_prox_moment(a: ArrayLike, b: ArrayLike, p_cap: float, kind: ProxMomentKind) -> ArrayLike:
    """Closed-form Gaussian expectation of one prox functional selected by kind."""
    if kind.magnitude_floor > math.sqrt(p_cap):
        raise DomainError(
            f"magnitude_floor={kind.magnitude_floor} exceeds sqrt(P)={math.sqrt(p_cap)}"
        )
    if kind.tag.is_indicator:
        moments = indicator_moments(a, b, p_cap, kind.magnitude_floor)
        return {
            MomentTag.IND_SQUARE: moments.square,
            MomentTag.IND_H_CROSS: moments.h_cross,
            MomentTag.IND_MASS: moments.mass,
        }[kind.tag]

    moments = prox_moments(a, b, p_cap)
    return {
        MomentTag.SQUARE: moments.square,
        MomentTag.H_CROSS: moments.h_cross,
        MomentTag.ABS: moments.abs,
    }[kind.tag]


def effective_scale(tau: ArrayLike, beta: ArrayLike, lambda2: float) -> ArrayLike:
    """tau_tilde = 1 / (1/tau + 2 lambda2 / beta)."""
    return 1.0 / (1.0 / tau + 2.0 * lambda2 / beta)
