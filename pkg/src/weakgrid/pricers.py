"""Closed-form and semi-closed reference prices: the square-root diffusion
Laplace transform, European puts in the stochastic-volatility model via
Fourier inversion of the characteristic function, its multifactor extension,
and payoff helpers."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .cir import CirParams, psi
from .heston import HestonParams


@dataclass(frozen=True)
class PutSpec:
    """European put contract: strike and maturity."""

    K: float
    T: float

    def __post_init__(self):
        if self.K <= 0 or self.T <= 0:
            raise ValueError("strike and maturity must be positive")


def cir_laplace(lam: float, t: float, x: float, p: CirParams) -> float:
    """E[exp(-lam * X_t)] for the square-root diffusion started at x."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if lam == 0.0:
        return 1.0
    denom = 1.0 + 0.5 * lam * p.sigma**2 * psi(p.b, t)
    return denom ** (-2.0 * p.a / p.sigma**2) * math.exp(
        -lam * x * math.exp(-p.b * t) / denom)


def _heston_cf(u: np.ndarray, T: float, p: HestonParams) -> np.ndarray:
    """Characteristic function E[exp(i*u*X_T)] of the log-price.

    Uses the branch of the complex logarithm that stays continuous in T
    (the 'D with negative real part' convention), which avoids the phase
    jumps of the textbook formula for long maturities.
    """
    a, b, sig = p.cir.a, p.cir.b, p.cir.sigma
    rho = p.rho
    iu = 1j * u
    beta = b - rho * sig * iu
    d = np.sqrt(beta * beta + sig * sig * (iu + u * u))
    g = (beta - d) / (beta + d)
    edt = np.exp(-d * T)
    log_term = np.log((1.0 - g * edt) / (1.0 - g))
    big_c = (a / sig**2) * ((beta - d) * T - 2.0 * log_term)
    big_d = ((beta - d) / sig**2) * (1.0 - edt) / (1.0 - g * edt)
    return np.exp(iu * (p.x0 + (p.r - p.delta) * T) + big_c + big_d * p.y0)


class IntegrationError(RuntimeError):
    """Fourier inversion failed to converge on the truncated domain."""


def _gil_pelaez(cf, log_k: float, tail_tol: float = 1e-10,
                panel_width: float = 10.0, max_panels: int = 400,
                gl_order: int = 64) -> float:
    """(1/pi) * integral over u>0 of Re[e^{-iu logK} cf(u) / (iu)] du.

    Adaptive in the truncation only: fixed-order Gauss-Legendre panels are
    appended until two consecutive panel contributions fall below tail_tol.
    """
    nodes, weights = np.polynomial.legendre.leggauss(gl_order)
    total = 0.0
    small = 0
    for k in range(max_panels):
        lo, hi = k * panel_width, (k + 1) * panel_width
        u = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        vals = np.real(np.exp(-1j * u * log_k) * cf(u) / (1j * u))
        panel = 0.5 * (hi - lo) * float(weights @ vals)
        total += panel
        small = small + 1 if abs(panel) < tail_tol else 0
        if small >= 2:
            return total / math.pi
    raise IntegrationError(
        f"tail contribution still above {tail_tol} after {max_panels} panels")


def _put_from_cf(cf, spot_fwd_cf_at_minus_i: float, df_r: float,
                 df_delta: float, s0: float, spec: PutSpec) -> float:
    log_k = math.log(spec.K)
    p2 = 0.5 + _gil_pelaez(cf, log_k)
    denom = spot_fwd_cf_at_minus_i
    p1 = 0.5 + _gil_pelaez(lambda u: cf(u - 1j) / denom, log_k)
    call = s0 * df_delta * p1 - spec.K * df_r * p2
    put = call - s0 * df_delta + spec.K * df_r
    return max(put, 0.0)


def heston_put_fourier(p: HestonParams, spec: PutSpec) -> float:
    """European put price by Fourier inversion; call first, put by parity."""
    s0 = math.exp(p.x0)
    if p.y0 == 0.0 and p.cir.a == 0.0:
        # Variance is identically zero: the asset is deterministic.
        fwd = s0 * math.exp((p.r - p.delta) * spec.T)
        return math.exp(-p.r * spec.T) * max(spec.K - fwd, 0.0)
    cf = lambda u: _heston_cf(np.asarray(u, dtype=complex), spec.T, p)
    fwd_cf = float(np.real(cf(np.array([-1j]))[0]))
    return _put_from_cf(cf, fwd_cf, math.exp(-p.r * spec.T),
                        math.exp(-p.delta * spec.T), s0, spec)


def _multifactor_cf(u: np.ndarray, T: float, p: HestonParams,
                    gammas: np.ndarray, rhos: np.ndarray) -> np.ndarray:
    """Characteristic function of the multifactor log-price.

    The factor exposures psi_k and the scalar phi solve a Riccati-type ODE
    system in time-to-maturity; the factors start at zero so only the spot
    variance level y0 enters through phi.
    """
    a, b, sig = p.cir.a, p.cir.b, p.cir.sigma
    rho, y = p.rho, p.y0
    d = len(gammas)
    u = np.asarray(u, dtype=complex)
    shape = u.shape
    uu = u.ravel()
    nu = uu.size
    iu = 1j * uu
    half = (d + 1) * nu
    g_col = np.asarray(gammas)[:, None]
    r_col = np.asarray(rhos)[:, None]

    def rhs(_tau, z):
        # rows 0..d-1 hold psi_k, row d holds phi; the u-values are
        # independent, so they integrate as one stacked system.
        zz = (z[:half] + 1j * z[half:]).reshape(d + 1, nu)
        psi_k = zz[:d]
        s = psi_k.sum(axis=0)
        big_r = (-(iu + uu * uu) / 2.0 + (iu * rho * sig - b) * s
                 + 0.5 * sig * sig * s * s)
        dz = np.empty((d + 1, nu), dtype=complex)
        dz[:d] = -r_col * psi_k + g_col * big_r
        dz[d] = iu * (p.r - p.delta) + a * s + y * big_r
        flat = dz.ravel()
        return np.concatenate([flat.real, flat.imag])

    sol = solve_ivp(rhs, (0.0, T), np.zeros(2 * half),
                    rtol=1e-10, atol=1e-12, method="RK45")
    if not sol.success:
        raise IntegrationError(f"Riccati ODE failed: {sol.message}")
    zz = (sol.y[:half, -1] + 1j * sol.y[half:, -1]).reshape(d + 1, nu)
    out = np.exp(iu * p.x0 + zz[d])
    return out.reshape(shape)


def multifactor_put_fourier(p: HestonParams, gammas, rhos,
                            spec: PutSpec) -> float:
    """European put in the multifactor model by Fourier inversion."""
    gammas = np.asarray(gammas, dtype=float)
    rhos = np.asarray(rhos, dtype=float)
    s0 = math.exp(p.x0)
    cf = lambda u: _multifactor_cf(u, spec.T, p, gammas, rhos)
    fwd_cf = float(np.real(cf(np.array([-1j]))[0]))
    return _put_from_cf(cf, fwd_cf, math.exp(-p.r * spec.T),
                        math.exp(-p.delta * spec.T), s0, spec)


def payoff_put(x_log: float, K: float) -> float:
    """(K - e^x)^+ on the log-price."""
    return max(K - math.exp(x_log), 0.0)


def payoff_asian_put(i: float, T: float, K: float) -> float:
    """(K - I/T)^+ on the running integral of the price."""
    return max(K - i / T, 0.0)
