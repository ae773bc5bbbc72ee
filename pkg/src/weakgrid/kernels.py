"""Elementwise hot kernels shared by the CIR and log-Heston schemes.

All functions operate on float64 arrays plus scalar parameters and are free
of Python objects, so they compile under numba ``njit`` and also run as-is
in the pure-numpy fallback mode (``WEAKGRID_NUMBA=0``).
"""
from __future__ import annotations

import numpy as np

from ._jit import njit

# Constants of the truncated-Gaussian variable used by the mixed
# Gaussian/discrete second-order step ("scheme B").  c1 and z2 are fixed;
# z1 and c2 solve E[Y^2]=1 and E[Y^4]=3 for the five-branch mapping below.
PHI_B_Z1 = 2.7523451704710586
PHI_B_Z2 = 3.5
PHI_B_C1 = 2.58
PHI_B_C2 = 3.106520327375868


@njit(cache=True)
def psi_scalar(b: float, t: float) -> float:
    """(1 - exp(-b t)) / b with the b -> 0 limit t, stable for small |b t|."""
    z = b * t
    if abs(z) < 1e-4:
        # degree-6 Taylor expansion in t; relative error below 1e-14
        return t * (1.0 - z / 2.0 + z * z / 6.0 - z**3 / 24.0 + z**4 / 120.0 - z**5 / 720.0)
    return (1.0 - np.exp(-z)) / b


@njit(cache=True)
def nv_phi_arr(x, t: float, w, a: float, b: float, sigma: float):
    """Splitting flow phi(x, t, w) = X0(t/2, X1(w, X0(t/2, x))).

    ``x`` and ``w`` are arrays of the same shape (``w`` is on the Brownian
    scale, i.e. sqrt(t) times a normalized variable).  Intermediate values
    are clipped at zero: for sigma^2 <= 4a they are nonnegative exactly, and
    above the switching threshold of the general schemes they are
    nonnegative by construction, so the clip only removes round-off dust.
    """
    ps = psi_scalar(b, t / 2.0)
    drift = ps * (a - sigma * sigma / 4.0)
    decay = np.exp(-b * t / 2.0)
    u = np.maximum(decay * x + drift, 0.0)
    u = (np.sqrt(u) + 0.5 * sigma * w) ** 2
    return np.maximum(decay * u + drift, 0.0)


@njit(cache=True)
def heston_x_step(x, y, y_next, dt: float, n, r: float, rho: float,
                  a: float, b: float, sigma: float):
    """One-Gaussian log-price update given the variance endpoints."""
    ybar = 0.5 * (y + y_next)
    return (x
            + (r - rho * a / sigma) * dt
            + (rho / sigma) * (y_next - y)
            + (rho * b / sigma - 0.5) * ybar * dt
            + np.sqrt((1.0 - rho * rho) * ybar * dt) * n)


@njit(cache=True)
def bernoulli_x_step(x, y, y_next, dt: float, n, bern, r: float, rho: float,
                     a: float, b: float, sigma: float):
    """Bernoulli-randomized log-price update; returns (x', clamp count).

    The Gaussian term has variance (1 - rho^2)(y + B(y_next - y)) dt: the
    coin picks whether the variance leg runs before or after the price leg,
    so the noise sees the start-of-step or end-of-step variance. Averaging
    over B recovers the trapezoidal variance of the one-Gaussian update.
    The radicand can dip below zero in floating point when y_next < y; it
    is clamped at zero and the number of clamped entries is reported.
    """
    ybar = 0.5 * (y + y_next)
    rad = (1.0 - rho * rho) * (y + bern * (y_next - y)) * dt
    clamped = int(np.sum(rad < 0.0))
    rad = np.maximum(rad, 0.0)
    xn = (x
          + (r - rho * a / sigma) * dt
          + (rho / sigma) * (y_next - y)
          + (rho * b / sigma - 0.5) * ybar * dt
          + np.sqrt(rad) * n)
    return xn, clamped


@njit(cache=True)
def phi_b_gauss_map(n):
    """Five-branch truncation of a standard normal onto [-3.5, 3.5].

    Matches the normal moments up to order five (odd moments by symmetry,
    E[Y^2]=1 and E[Y^4]=3 by the choice of the constants).
    """
    out = np.empty_like(n)
    for i in range(n.size):
        v = n.flat[i]
        if v <= -PHI_B_C2:
            out.flat[i] = -PHI_B_Z2
        elif v <= -PHI_B_C1:
            out.flat[i] = -PHI_B_Z1
        elif v < PHI_B_C1:
            out.flat[i] = v
        elif v <= PHI_B_C2:
            out.flat[i] = PHI_B_Z1
        else:
            out.flat[i] = PHI_B_Z2
    return out
