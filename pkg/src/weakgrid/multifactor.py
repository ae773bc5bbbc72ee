"""Second-order splitting scheme for the multifactor stochastic-volatility
model with a discrete completely monotone kernel (a standard proxy for rough
volatility)."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cir import RegimeError
from .heston import HestonParams, LogHestonState, nv_step


@dataclass(frozen=True)
class KernelNodes:
    """Discrete completely monotone kernel K(t) = sum_k gamma_k exp(-rho_k t)."""

    gammas: tuple
    rhos: tuple

    def __post_init__(self):
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        object.__setattr__(self, "rhos", tuple(float(r) for r in self.rhos))
        if len(self.gammas) != len(self.rhos):
            raise ValueError("gammas and rhos must have the same length")
        if any(g < 0 for g in self.gammas) or any(r < 0 for r in self.rhos):
            raise ValueError("kernel weights and nodes must be nonnegative")
        if sum(self.gammas) <= 0:
            raise ValueError("K(0) = sum of gammas must be positive")

    @property
    def d(self) -> int:
        return len(self.gammas)

    @property
    def k0(self) -> float:
        return sum(self.gammas)


# Three-node kernel fitted to the fractional kernel with Hurst index H = 0.1.
BL2_H01_D3 = KernelNodes(
    gammas=(0.80386099, 1.60786461, 8.80775525),
    rhos=(0.08399474, 5.64850577, 118.00624702),
)


def load_kernel_nodes(path) -> KernelNodes:
    """Read kernel nodes from a CSV file with columns k, rho, gamma."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append((int(row["k"]), float(row["rho"]), float(row["gamma"])))
    rows.sort()
    return KernelNodes(gammas=tuple(r[2] for r in rows),
                       rhos=tuple(r[1] for r in rows))


def save_kernel_nodes(nodes: KernelNodes, path) -> None:
    """Write kernel nodes to a CSV file with columns k, rho, gamma."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "rho", "gamma"])
        for k, (rho, gamma) in enumerate(zip(nodes.rhos, nodes.gammas)):
            writer.writerow([k, repr(rho), repr(gamma)])


@dataclass(frozen=True)
class MfState:
    """Log-price, factor vector, and the constant base variance level.

    The instantaneous variance is reconstructed as
    y_level + sum_k gamma_k * factors[k].
    """

    x: float
    factors: tuple
    y_level: float

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(float(f) for f in self.factors))
        if self.y_level < 0:
            raise ValueError("y_level must be nonnegative")

    def variance(self, nodes: KernelNodes) -> float:
        return self.y_level + sum(
            g * f for g, f in zip(nodes.gammas, self.factors))


def kernel_eval(nodes: KernelNodes, t: float) -> float:
    """K(t) = sum_k gamma_k exp(-rho_k t)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return sum(g * math.exp(-r * t) for g, r in zip(nodes.gammas, nodes.rhos))


def psi1_flow(t: float, state: MfState, nodes: KernelNodes) -> MfState:
    """Exact flow of the factor mean-reversion ODE: Y^k -> Y^k e^{-rho_k t}."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    factors = tuple(f * math.exp(-r * t)
                    for f, r in zip(state.factors, nodes.rhos))
    return replace(state, factors=factors)


def remap_Ay(state_before: MfState, y_prime_before: float,
             y_prime_after: float, nodes: KernelNodes) -> tuple:
    """Spread a variance-level change evenly over the factors.

    Each factor is shifted by (y'_after - y'_before)/K(0), so the
    reconstructed variance moves by exactly the same amount as y'.
    """
    shift = (y_prime_after - y_prime_before) / nodes.k0
    return tuple(f + shift for f in state_before.factors)


def mf_step(state: MfState, t: float, gaussians: tuple, p: HestonParams,
            nodes: KernelNodes) -> MfState:
    """One Strang step: half factor decay, a frozen-kernel joint step on
    (x, reconstructed variance) with the model coefficients scaled by K(0),
    a factor remap, then the second half decay."""
    a, b, sigma = p.cir.a, p.cir.b, p.cir.sigma
    k0 = nodes.k0
    if k0 * sigma**2 >= 4.0 * a:
        raise RegimeError(
            f"K(0)*sigma^2 = {k0 * sigma**2} must be < 4a = {4.0 * a}")
    gaussian_x, gaussian_y = gaussians

    half = psi1_flow(t / 2.0, state, nodes)
    y_prime = half.variance(nodes)
    if y_prime < 0:
        raise RegimeError(f"reconstructed variance {y_prime} went negative")

    inner_params = HestonParams(r=p.r, rho=p.rho, delta=p.delta,
                                cir=p.cir.scaled(k0), x0=half.x)
    inner = nv_step(LogHestonState(x=half.x, y=y_prime), t,
                    gaussian_x, gaussian_y, inner_params)
    factors = remap_Ay(half, y_prime, inner.y, nodes)

    remapped = MfState(x=inner.x, factors=factors, y_level=state.y_level)
    recon = remapped.variance(nodes)
    assert abs(recon - inner.y) <= 1e-9 * max(1.0, abs(inner.y)), \
        f"variance reconstruction drifted: {recon} vs {inner.y}"
    return psi1_flow(t / 2.0, remapped, nodes)
