"""One-step transition kernels and exact formulas for the CIR process
dX = (a - b X) dt + sigma sqrt(X) dW.

Contains the splitting flows and the second-order Gaussian scheme, the two
general second-order schemes with a switching threshold (valid for every
sigma), exact transition sampling, closed-form moments, a Poisson-based
first-order scheme, and the functional split that reduces the high
volatility regime sigma^2 > 4a to two Feller-regime problems.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr, ndtri

from .kernels import nv_phi_arr, phi_b_gauss_map, psi_scalar


class RegimeError(ValueError):
    """Raised when a scheme is evaluated outside its validity regime."""


def _vec(x):
    """Promote to a contiguous 1-d float array; report if input was scalar."""
    scalar = np.ndim(x) == 0
    return np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=float))), scalar


def _devec(out, scalar):
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class CirParams:
    """CIR coefficients: drift level ``a``, reversion speed ``b``,
    vol-of-vol ``sigma`` and start value ``x0``."""

    a: float
    b: float
    sigma: float
    x0: float = 0.0

    def __post_init__(self):
        if self.a < 0:
            raise ValueError(f"drift level a must be nonnegative, got {self.a}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.x0 < 0:
            raise ValueError(f"start value x0 must be nonnegative, got {self.x0}")

    @property
    def v(self) -> float:
        """Dimension-like parameter 2a / sigma^2."""
        return 2.0 * self.a / self.sigma**2

    @property
    def feller(self) -> bool:
        """sigma^2 <= 2a: the process never hits zero."""
        return self.sigma**2 <= 2.0 * self.a

    @property
    def low_vol(self) -> bool:
        """sigma^2 <= 4a: validity domain of the Gaussian splitting scheme."""
        return self.sigma**2 <= 4.0 * self.a

    def scaled(self, factor: float) -> "CirParams":
        """Parameters of the time-changed block (a, b, sigma) * factor."""
        return CirParams(self.a * factor, self.b * factor, self.sigma * factor, self.x0)


def psi(b: float, t) -> float | np.ndarray:
    """(1 - e^(-b t)) / b with psi_0(t) = t; stable for |b t| << 1."""
    if np.ndim(t) == 0:
        return psi_scalar(b, float(t))
    return np.array([psi_scalar(b, float(ti)) for ti in np.ravel(t)]).reshape(np.shape(t))


def flow_x0(t: float, x, p: CirParams):
    """Deterministic drift flow e^(-b t) x + psi_b(t)(a - sigma^2/4)."""
    if not p.low_vol:
        raise RegimeError(
            f"drift flow requires sigma^2 <= 4a (sigma^2={p.sigma**2:.6g}, 4a={4 * p.a:.6g})")
    out = np.exp(-p.b * t) * np.asarray(x, dtype=float) + psi_scalar(p.b, t) * (p.a - p.sigma**2 / 4.0)
    return float(out) if np.ndim(out) == 0 else out


def flow_x1(w, x, sigma: float):
    """Squared-Bessel-type flow (sqrt(x) + w sigma / 2)^2."""
    out = (np.sqrt(np.asarray(x, dtype=float)) + 0.5 * sigma * np.asarray(w, dtype=float)) ** 2
    return float(out) if np.ndim(out) == 0 else out


def nv_cir_step(x, t: float, gaussian, p: CirParams):
    """Second-order splitting step phi(x, t, sqrt(t) N); needs sigma^2 <= 4a."""
    if not p.low_vol:
        raise RegimeError(
            f"splitting step requires sigma^2 <= 4a (sigma^2={p.sigma**2:.6g}, 4a={4 * p.a:.6g})")
    x, scalar = _vec(x)
    w = np.ascontiguousarray(np.broadcast_to(
        math.sqrt(t) * np.atleast_1d(np.asarray(gaussian, dtype=float)), x.shape))
    return _devec(nv_phi_arr(x, t, w, p.a, p.b, p.sigma), scalar)


def threshold_k2(t: float, p: CirParams, a_y: float) -> float:
    """Switching threshold of the general second-order schemes.

    Zero when sigma^2 <= 4a; otherwise the smallest start value for which
    the flow composition stays nonnegative for every |Y| <= a_y.
    """
    if p.low_vol or t == 0.0:
        return 0.0
    gap = (p.sigma**2 / 4.0 - p.a) * psi_scalar(p.b, t / 2.0)
    grow = math.exp(p.b * t / 2.0)
    return grow * (gap + (math.sqrt(grow * gap) + 0.5 * p.sigma * a_y * math.sqrt(t)) ** 2)


def moment_delta(j: int, ell: int, v: float) -> float:
    """Coefficient C(ell, j) * prod_{q=j}^{ell-1} (q + v) of the moment formula."""
    out = math.comb(ell, j)
    for q in range(j, ell):
        out *= q + v
    return float(out)


@dataclass(frozen=True)
class MomentTable:
    """Closed-form moment coefficients delta_{j,L}(v) for j <= L <= degree."""

    degree: int
    v: float
    coefficients: dict

    @classmethod
    def build(cls, degree: int, v: float) -> "MomentTable":
        coeff = {(j, ell): moment_delta(j, ell, v)
                 for ell in range(degree + 1) for j in range(ell + 1)}
        return cls(degree=degree, v=v, coefficients=coeff)


def moment_exact(ell: int, t: float, x, p: CirParams):
    """E[(X_t^x)^ell] = sum_j delta_{j,ell}(v) (sigma^2 psi_b(t)/2)^(ell-j) e^(-j b t) x^j."""
    if ell < 0:
        raise ValueError("moment order must be nonnegative")
    x = np.asarray(x, dtype=float)
    if ell == 0:
        return np.ones_like(x) if x.ndim else 1.0
    half_var = p.sigma**2 * psi_scalar(p.b, t) / 2.0
    acc = np.zeros_like(x)
    for j in range(ell + 1):
        acc = acc + moment_delta(j, ell, p.v) * half_var ** (ell - j) * math.exp(-j * p.b * t) * x**j
    return float(acc) if acc.ndim == 0 else acc


def _pi_discrete(t: float, x, p: CirParams):
    """Branch probability pi(t,x) matching the first two exact moments."""
    m1 = moment_exact(1, t, x, p)
    m2 = moment_exact(2, t, x, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(np.asarray(m2) > 0.0, np.asarray(m1) ** 2 / np.asarray(m2), 0.0)
    return 0.5 * (1.0 - np.sqrt(np.maximum(1.0 - ratio, 0.0))), m1


_U_LOW = 1.0 / 6.0
_U_HIGH = 5.0 / 6.0


def general_second_order_step_A(x, t: float, uniform_draw, p: CirParams):
    """Second-order step with a three-point variable above the threshold and
    a two-point moment-matching variable below it; valid for every sigma."""
    if t <= 0:
        raise ValueError("time step must be positive")
    x, scalar = _vec(x)
    u = np.broadcast_to(np.atleast_1d(np.asarray(uniform_draw, dtype=float)), x.shape)
    w = np.ascontiguousarray(np.where(u < _U_LOW, -math.sqrt(3.0 * t),
                                      np.where(u < _U_HIGH, 0.0, math.sqrt(3.0 * t))))
    upper = nv_phi_arr(x, t, w, p.a, p.b, p.sigma)
    k2 = threshold_k2(t, p, math.sqrt(3.0))
    if k2 == 0.0:
        return _devec(upper, scalar)
    pi, m1 = _pi_discrete(t, x, p)
    pi = np.maximum(pi, 1e-300)
    lower = np.where(u < 1.0 - pi, m1 / (2.0 * (1.0 - pi)), m1 / (2.0 * pi))
    return _devec(np.where(x >= k2, upper, lower), scalar)


def second_order_step_B(x, t: float, gaussian, p: CirParams):
    """Second-order step mixing a truncated Gaussian above the threshold with
    a scaled-beta variable below it; valid for every sigma."""
    if t <= 0:
        raise ValueError("time step must be positive")
    x, scalar = _vec(x)
    n = np.ascontiguousarray(np.broadcast_to(
        np.atleast_1d(np.asarray(gaussian, dtype=float)), x.shape))
    y = phi_b_gauss_map(n)
    upper = nv_phi_arr(x, t, math.sqrt(t) * y, p.a, p.b, p.sigma)
    k2 = threshold_k2(t, p, 3.5)
    if k2 == 0.0:
        return _devec(upper, scalar)
    pi, m1 = _pi_discrete(t, x, p)
    pi = np.maximum(pi, 1e-300)
    lower = m1 / (2.0 * pi) * ndtr(n) ** (1.0 / (2.0 * pi) - 1.0)
    return _devec(np.where(x >= k2, upper, lower), scalar)


def exact_cir_sample(t: float, x, p: CirParams, rng: np.random.Generator,
                     size=None):
    """Draw from the exact CIR transition law started at ``x`` over ``t``.

    Mixes a Poisson(d_t x / 2) index into a Gamma(i + v, 2/c_t) draw with
    c_t = 4 / (sigma^2 psi_b(t)) and d_t = c_t e^(-b t).  For a = 0 the
    resulting atom at zero (weight e^(-d_t x / 2)) comes out of the i = 0
    mass automatically.
    """
    x = np.asarray(x, dtype=float)
    if size is not None:
        x = np.broadcast_to(x, size).astype(float)
    if t == 0.0:
        return x.copy() if x.ndim else float(x)
    c = 4.0 / (p.sigma**2 * psi_scalar(p.b, t))
    d = c * math.exp(-p.b * t)
    i = rng.poisson(0.5 * d * x)
    shape = i + p.v
    out = np.zeros_like(x, dtype=float)
    pos = shape > 0
    if np.any(pos):
        vals = rng.standard_gamma(shape[pos] if out.ndim else shape) * (2.0 / c)
        if out.ndim:
            out[pos] = vals
        else:
            out = vals
    return float(out) if np.ndim(out) == 0 else out


def poisson_first_order_step(x, t: float, p: CirParams, rng: np.random.Generator):
    """First-order scheme valid for every sigma: a Poisson(i + v) draw scaled
    by 2/c_t, with the outer index i ~ Poisson(d_t x / 2)."""
    if t <= 0:
        raise ValueError("time step must be positive")
    x = np.asarray(x, dtype=float)
    c = 4.0 / (p.sigma**2 * psi_scalar(p.b, t))
    d = c * math.exp(-p.b * t)
    i = rng.poisson(0.5 * d * x)
    out = rng.poisson(i + p.v) * (2.0 / c)
    return float(out) if np.ndim(x) == 0 else np.asarray(out, dtype=float)


@dataclass(frozen=True)
class HighVolSplit:
    """Ingredients of E[f(X_t^x)] = f(0) + w1 E[g(X^1)] + w2 E[g(X^2)] where
    g(z) = (f(z) - f(0)) / z and both shifted blocks satisfy the Feller
    condition, so Gaussian-regime machinery applies for any sigma."""

    f0: float
    weight1: float
    weight2: float
    params1: CirParams
    params2: CirParams
    g: Callable


def high_vol_split(f: Callable, t: float, x: float, p: CirParams) -> HighVolSplit:
    """Functional split of E[f(X_t^x)] onto two drift-shifted CIR blocks."""
    f0 = float(f(0.0))

    def g(z):
        z = np.asarray(z, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(z > 0.0, (f(z) - f0) / np.where(z > 0.0, z, 1.0), 0.0)
        return float(out) if out.ndim == 0 else out

    return HighVolSplit(
        f0=f0,
        weight1=p.a * psi_scalar(p.b, t),
        weight2=math.exp(-p.b * t) * x,
        params1=CirParams(p.a + p.sigma**2 / 2.0, p.b, p.sigma, x),
        params2=CirParams(p.a + p.sigma**2, p.b, p.sigma, x),
        g=g,
    )


def uniform_to_gaussian(u):
    """Inverse-CDF map used when a scheme is driven by a coupled normal."""
    return ndtri(u)
