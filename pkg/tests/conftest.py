"""Shared fixtures and parameter sets for the test suite."""
from __future__ import annotations

import math

import numpy as np
import pytest

from weakgrid.cir import CirParams
from weakgrid.heston import HestonParams


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Moderate-volatility CIR set used throughout the convergence experiments
# (sigma^2 <= 4a, so the splitting scheme is defined).
CIR_LOW = CirParams(a=0.2, b=0.5, sigma=0.65, x0=0.0)
CIR_LOW_X = CirParams(a=0.2, b=0.5, sigma=0.5, x0=0.2)
# High-volatility set (sigma^2 > 4a) for the switching schemes.
CIR_HIGH = CirParams(a=0.2, b=0.5, sigma=1.5, x0=0.2)
# Very high volatility set for the Poisson scheme.
CIR_VHIGH = CirParams(a=0.04, b=0.1, sigma=2.0, x0=0.3)

HESTON_MAIN = HestonParams(
    r=0.0, rho=-0.7, cir=CirParams(a=0.2, b=1.0, sigma=0.5, x0=0.2),
    x0=math.log(100.0))
HESTON_HIGHVOL = HestonParams(
    r=0.0, rho=-0.9, cir=CirParams(a=0.1, b=1.0, sigma=1.0, x0=0.1),
    x0=math.log(100.0))
