"""
Shared fixtures: reference parameter sets, a quadrature oracle for Gaussian
prox moments, and a small random instance factory.
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest
from dotenv import load_dotenv
from scipy import integrate

PROJECT_ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(PROJECT_ROOT / "src"))

load_dotenv()

from sparse_miso.config import DomainParams  # noqa: E402
from sparse_miso.precoder import Instance  # noqa: E402
from sparse_miso.scalar_core import MomentTag, prox  # noqa: E402


@pytest.fixture
def rzf_params():
    """Large-P, unpenalised point with closed-form saddle tau* = 1, beta* = 2."""
    return DomainParams(rho=1.0, delta=2.0, lambda1=0.0, lambda2=0.0, p_cap=1e6, sigma2=0.25)


@pytest.fixture
def fig_params():
    """The desk-scale operating point used throughout the figure protocols."""
    return DomainParams(rho=1.0, delta=0.5, lambda1=0.3, lambda2=0.005, p_cap=10.0, sigma2=0.25)


def quad_moment(a, b, p_cap, tag, floor=0.0):
    """E over H ~ N(0,1) of a prox functional by adaptive quadrature on H >= 0, doubled by symmetry."""
    tag = MomentTag(tag)
    amp = math.sqrt(p_cap)
    start = b / a
    clamp = (b + amp) / a
    if tag.is_indicator:
        start_kept = min(start + floor / a, clamp)
    else:
        start_kept = start

    def density(h):
        return math.exp(-0.5 * h * h) / math.sqrt(2.0 * math.pi)

    def value(h):
        return float(prox(a * h, b, p_cap))

    integrands = {
        MomentTag.SQUARE: lambda h: value(h) ** 2 * density(h),
        MomentTag.IND_SQUARE: lambda h: value(h) ** 2 * density(h),
        MomentTag.H_CROSS: lambda h: h * value(h) * density(h),
        MomentTag.IND_H_CROSS: lambda h: h * value(h) * density(h),
        MomentTag.ABS: lambda h: abs(value(h)) * density(h),
        MomentTag.IND_MASS: density,
    }
    integrand = integrands[tag]
    total = 0.0
    for lower, upper in ((start_kept, clamp), (clamp, math.inf)):
        if upper > lower:
            piece, _ = integrate.quad(integrand, lower, upper, epsabs=0.0, epsrel=1e-13, limit=200)
            total += piece
    return 2.0 * total


@pytest.fixture
def quad_oracle():
    return quad_moment


def make_instance(n, m, seed=0):
    rng = np.random.default_rng(seed)
    h_matrix = rng.standard_normal((m, n)) / math.sqrt(n)
    symbols = rng.choice([-1.0, 1.0], size=m)
    return Instance(h_matrix, symbols)


@pytest.fixture
def instance_factory():
    return make_instance
