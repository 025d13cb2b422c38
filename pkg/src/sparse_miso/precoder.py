"""
Finite-dimensional l1-norm precoder

    x_hat = argmin_{|x_i| <= sqrt(P)} (1/n)||Hx - sqrt(rho) s||^2 + (lambda2/n)||x||^2 + (lambda1/n)||x||_1

solved by accelerated proximal gradient with monotone restart. The proximal step
is scalar_core.prox applied coordinate-wise, so zeros and clamps are exact.

H x and H^T r are each a single numpy matmul (BLAS gemv, whose inner-product
order depends on the BLAS build and its thread count); the l1 term and the
squared norms are np.sum / dot reductions in index order with numpy's pairwise
blocking. Results are bit-reproducible for a fixed BLAS build and thread count.

Whether a coordinate lands in the prox dead zone is decided in gradient units,
|L x_j - g_j| <= lambda1/n, with a few ulps of slack, so that lambda1 at the
exact zero-solution boundary 2||H^T s||_inf sqrt(rho) gives x = 0 bitwise.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from loguru import logger

from .config import DomainParams, SolverConfig, StepRule
from .errors import DomainError, InvalidArgument, NumericalInconsistency, SolverNumericalError
from .scalar_core import prox

BOX_SLACK = 1e-12
# guards against power iteration slightly underestimating ||H||_2
LIPSCHITZ_MARGIN = 1.0 + 1e-6
DEAD_ZONE_RTOL = 8 * np.finfo(float).eps


@dataclass(frozen=True)
class Instance:
    h_matrix: np.ndarray
    symbols: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h_matrix, dtype=float)
        s = np.asarray(self.symbols, dtype=float)
        if h.ndim != 2:
            raise InvalidArgument(f"channel must be a matrix, got shape {h.shape}")
        if s.shape != (h.shape[0],):
            raise InvalidArgument(f"symbols shape {s.shape} does not match channel rows {h.shape[0]}")
        if not np.all(np.abs(s) == 1.0):
            raise InvalidArgument("symbols must be +-1")
        object.__setattr__(self, "h_matrix", h)
        object.__setattr__(self, "symbols", s)

    @property
    def dims(self) -> Tuple[int, int]:
        return self.h_matrix.shape

    @property
    def m(self) -> int:
        return self.h_matrix.shape[0]

    @property
    def n(self) -> int:
        return self.h_matrix.shape[1]

    def with_symbols(self, symbols: np.ndarray) -> "Instance":
        return Instance(self.h_matrix, symbols)


@dataclass(frozen=True)
class PrecoderResult:
    x_hat: np.ndarray
    objective: float
    iterations: int
    kkt_residual: float
    converged: bool

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.x_hat))


def _check_vector(inst: Instance, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (inst.n,):
        raise InvalidArgument(f"precoder length {x.shape} does not match n={inst.n}")
    return x


def _target(inst: Instance, params: DomainParams) -> np.ndarray:
    return math.sqrt(params.rho) * inst.symbols


def smooth_part(inst: Instance, x: np.ndarray, params: DomainParams) -> float:
    residual = inst.h_matrix @ x - _target(inst, params)
    return float(residual @ residual + params.lambda2 * (x @ x)) / inst.n


def smooth_gradient(inst: Instance, x: np.ndarray, params: DomainParams) -> np.ndarray:
    residual = inst.h_matrix @ x - _target(inst, params)
    return (2.0 / inst.n) * (inst.h_matrix.T @ residual + params.lambda2 * x)


def objective(inst: Instance, x: np.ndarray, params: DomainParams) -> float:
    x = _check_vector(inst, x)
    return smooth_part(inst, x, params) + params.lambda1 * float(np.sum(np.abs(x))) / inst.n


def kkt_residual(inst: Instance, x: np.ndarray, params: DomainParams) -> float:
    """
    Infinity-norm distance of the smooth gradient to the negative subdifferential of
    (lambda1/n)||.||_1 plus the box indicator at x.
    """
    x = _check_vector(inst, x)
    amp = params.amplitude_cap
    if np.any(np.abs(x) > amp + BOX_SLACK):
        raise DomainError(f"precoder violates the box |x_i| <= {amp}")

    grad = smooth_gradient(inst, x, params)
    weight = params.lambda1 / inst.n
    magnitude = np.abs(x)
    sign = np.sign(x)

    zero = magnitude == 0
    clamped = magnitude >= amp - BOX_SLACK
    interior = ~zero & ~clamped

    residual = np.zeros_like(x)
    residual[zero] = np.maximum(np.abs(grad[zero]) - weight * (1.0 + DEAD_ZONE_RTOL), 0.0)
    residual[interior] = np.abs(grad[interior] + weight * sign[interior])
    # at +-sqrt(P) the normal cone absorbs any push outward
    residual[clamped] = np.maximum(sign[clamped] * grad[clamped] + weight, 0.0)
    return float(np.max(residual)) if residual.size else 0.0


def spectral_norm(h_matrix: np.ndarray, max_iters: int = 100, tol: float = 1e-10) -> float:
    """Largest singular value of H by power iteration on H^T H from a fixed start."""
    n = h_matrix.shape[1]
    v = np.full(n, 1.0 / math.sqrt(n))
    estimate = 0.0
    for _ in range(max_iters):
        w = h_matrix.T @ (h_matrix @ v)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        v = w / norm
        if abs(norm - estimate) <= tol * norm:
            estimate = norm
            break
        estimate = norm
    return math.sqrt(estimate)


class _ProxGradientStep:
    """One forward-backward step, with fixed 1/L or backtracked L."""

    def __init__(self, inst: Instance, params: DomainParams, cfg: SolverConfig):
        self.inst = inst
        self.params = params
        self.backtracking = cfg.step_rule is StepRule.BACKTRACKING
        if self.backtracking:
            frob_sq = float(np.sum(inst.h_matrix ** 2)) / min(inst.m, inst.n)
            self.lipschitz = 2.0 / inst.n * (frob_sq + params.lambda2)
        else:
            norm = spectral_norm(inst.h_matrix, cfg.power_iters, cfg.power_tol)
            self.lipschitz = 2.0 / inst.n * (norm * norm + params.lambda2) * LIPSCHITZ_MARGIN
        if self.lipschitz <= 0:
            self.lipschitz = 2.0 / inst.n * max(params.lambda2, 1.0)

    def __call__(self, point: np.ndarray) -> np.ndarray:
        grad = smooth_gradient(self.inst, point, self.params)
        if not np.all(np.isfinite(grad)):
            raise SolverNumericalError("non-finite gradient in proximal step")
        weight = self.params.lambda1 / self.inst.n
        while True:
            step = 1.0 / self.lipschitz
            candidate = prox(point - step * grad, step * weight, self.params.p_cap)
            dead = np.abs(self.lipschitz * point - grad) <= weight * (1.0 + DEAD_ZONE_RTOL)
            candidate = np.where(dead, 0.0, candidate)
            if not self.backtracking:
                return candidate
            diff = candidate - point
            bound = (
                smooth_part(self.inst, point, self.params)
                + float(grad @ diff)
                + 0.5 * self.lipschitz * float(diff @ diff)
            )
            if smooth_part(self.inst, candidate, self.params) <= bound * (1 + 1e-15) + 1e-300:
                return candidate
            self.lipschitz *= 2.0


def solve_l1_precoder(
    inst: Instance,
    params: DomainParams,
    cfg: Optional[SolverConfig] = None,
    x0: Optional[np.ndarray] = None,
    on_iterate: Optional[Callable[[int, float], None]] = None,
) -> PrecoderResult:
    """
    Accelerated proximal gradient with monotone restart.

    Stops when the relative objective change falls below cfg.tol_obj and the KKT
    residual below cfg.tol_kkt. Running out of iterations returns converged=False.
    on_iterate, if given, receives (iteration, objective) after every step.
    """
    cfg = cfg or SolverConfig()
    step = _ProxGradientStep(inst, params, cfg)

    x = np.zeros(inst.n) if x0 is None else prox(_check_vector(inst, x0), 0.0, params.p_cap)
    f_x = objective(inst, x, params)
    y = x.copy()
    momentum = 1.0

    for iteration in range(1, cfg.max_iters + 1):
        z = step(y)
        f_z = objective(inst, z, params)
        if not math.isfinite(f_z):
            raise SolverNumericalError(f"non-finite objective at iteration {iteration}")
        if f_z > f_x:
            # restart from the last monotone iterate
            momentum = 1.0
            z = step(x)
            f_z = objective(inst, z, params)
            if f_z > f_x:
                z, f_z = x, f_x

        next_momentum = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum * momentum))
        y = z + ((momentum - 1.0) / next_momentum) * (z - x)
        change = abs(f_x - f_z) / max(1.0, abs(f_x))
        x, f_x, momentum = z, f_z, next_momentum
        if on_iterate is not None:
            on_iterate(iteration, f_x)

        if change < cfg.tol_obj:
            kkt = kkt_residual(inst, x, params)
            if kkt < cfg.tol_kkt:
                logger.debug(f"precoder converged in {iteration} iterations, kkt={kkt:.3e}")
                return PrecoderResult(x, f_x, iteration, kkt, True)

    kkt = kkt_residual(inst, x, params)
    logger.warning(
        f"precoder stopped after {cfg.max_iters} iterations: kkt={kkt:.3e} (tol {cfg.tol_kkt:.1e})"
    )
    return PrecoderResult(x, f_x, cfg.max_iters, kkt, kkt < cfg.tol_kkt)


def apply_threshold(x: np.ndarray, t_x: float) -> np.ndarray:
    """Zero every entry with |x_i| < t_x; entries at or above the threshold are kept verbatim."""
    if not (math.isfinite(t_x) and t_x > 0):
        raise DomainError(f"threshold must be > 0, got {t_x}")
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) >= t_x, x, 0.0)


def solve_rzf(inst: Instance, params: DomainParams) -> PrecoderResult:
    """
    Unconstrained regularized zero forcing, sqrt(rho) H^T (H H^T + lambda2 I)^-1 s.
    With lambda2 = 0 this is zero forcing (least squares when m > n).
    """
    h = inst.h_matrix
    target = _target(inst, params)
    try:
        if params.lambda2 == 0 and inst.m > inst.n:
            x = np.linalg.lstsq(h, target, rcond=None)[0]
        else:
            gram = h @ h.T + params.lambda2 * np.eye(inst.m)
            x = h.T @ np.linalg.solve(gram, target)
    except np.linalg.LinAlgError as exc:
        raise NumericalInconsistency(f"zero-forcing system is singular: {exc}") from exc

    grad = smooth_gradient(inst, x, params)
    value = smooth_part(inst, x, params)
    return PrecoderResult(x, value, 0, float(np.max(np.abs(grad))), True)


def clip_to_box(x: np.ndarray, p_cap: float) -> np.ndarray:
    """Per-antenna clipping of an unconstrained precoder to |x_i| <= sqrt(P)."""
    amp = math.sqrt(p_cap)
    return np.clip(np.asarray(x, dtype=float), -amp, amp)


def precoder_for(
    inst: Instance, params: DomainParams, cfg: SolverConfig, t_x: Optional[float] = None
) -> Callable[[np.ndarray], PrecoderResult]:
    """Closure that re-solves (and optionally thresholds) the precoder for fresh symbols."""

    def resolve(symbols: np.ndarray) -> PrecoderResult:
        result = solve_l1_precoder(inst.with_symbols(symbols), params, cfg)
        if t_x is None:
            return result
        return PrecoderResult(
            apply_threshold(result.x_hat, t_x),
            result.objective,
            result.iterations,
            result.kkt_residual,
            result.converged,
        )

    return resolve
