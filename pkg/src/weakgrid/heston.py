"""One-step second-order transition kernels for the joint log-price /
variance state, the running-average augmentation for Asian payoffs, and the
Bernoulli variants used in variance comparisons."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .cir import CirParams, nv_cir_step
from .kernels import bernoulli_x_step, heston_x_step

X_OVERFLOW = 700.0


@dataclass(frozen=True)
class HestonParams:
    """Joint log-price / variance model parameters.

    The variance follows dY = (a - bY)dt + sigma*sqrt(Y)dW starting at
    ``cir.x0``; the log-price starts at ``x0`` and carries rate ``r``,
    dividend yield ``delta`` and leverage correlation ``rho``.
    """

    r: float
    rho: float
    cir: CirParams
    x0: float
    delta: float = 0.0

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (-1, 1)")

    @property
    def y0(self) -> float:
        return self.cir.x0


@dataclass(frozen=True)
class LogHestonState:
    """Log-price, variance, and optional running integral of the price."""

    x: float
    y: float
    i: float = 0.0

    def __post_init__(self):
        if self.y < 0:
            raise ValueError("variance must be nonnegative")
        if self.i < 0:
            raise ValueError("running integral must be nonnegative")


def _x_update(x: float, y: float, y_next: float, t: float, n: float,
              p: HestonParams) -> float:
    out = heston_x_step(
        np.array([x]), np.array([y]), np.array([y_next]), t,
        np.array([n]), p.r - p.delta, p.rho,
        p.cir.a, p.cir.b, p.cir.sigma)
    return float(out[0])


def ex_step(state: LogHestonState, t: float, gaussian: float,
            y_next: float, p: HestonParams) -> LogHestonState:
    """One step with the variance drawn exactly (y_next supplied)."""
    if y_next < 0:
        raise ValueError("y_next must be nonnegative")
    x_new = _x_update(state.x, state.y, y_next, t, gaussian, p)
    return replace(state, x=x_new, y=y_next)


def nv_step(state: LogHestonState, t: float, gaussian_x: float,
            gaussian_y: float, p: HestonParams) -> LogHestonState:
    """One splitting step: variance by the one-Gaussian second-order map,
    then the log-price update with trapezoidal variance averaging."""
    y_new = nv_cir_step(state.y, t, gaussian_y, p.cir)
    x_new = _x_update(state.x, state.y, y_new, t, gaussian_x, p)
    return replace(state, x=x_new, y=y_new)


def bernoulli_step(state: LogHestonState, t: float, gaussian: float,
                   bernoulli: int, y_next: float,
                   p: HestonParams) -> tuple[LogHestonState, int]:
    """Variance-randomized variant of the x-update, for variance studies.

    The Gaussian term has variance (1-rho^2)*(y + B*(y_next-y))*t with an
    independent Bernoulli(1/2) B: the coin selects the start-of-step or the
    end-of-step variance, and averaging over B recovers the trapezoidal
    variance of the one-Gaussian update. The radicand can go slightly
    negative in floating point; it is clamped at zero and the occurrence
    counted. Returns (new state, clamp count).
    """
    if y_next < 0:
        raise ValueError("y_next must be nonnegative")
    x_arr, clamps = bernoulli_x_step(
        np.array([state.x]), np.array([state.y]), np.array([y_next]), t,
        np.array([gaussian]), np.array([float(bernoulli)]),
        p.r - p.delta, p.rho, p.cir.a, p.cir.b, p.cir.sigma)
    return replace(state, x=float(x_arr[0]), y=y_next), int(clamps)


def asian_update(state: LogHestonState, x_prev: float, x_new: float,
                 dt: float) -> LogHestonState:
    """Advance the running integral of e^x by the trapezoidal rule."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    for xv in (x_prev, x_new):
        if abs(xv) > X_OVERFLOW:
            raise OverflowError(f"log-price {xv} exceeds exp() range")
    return replace(state, i=state.i + 0.5 * (math.exp(x_prev) + math.exp(x_new)) * dt)
