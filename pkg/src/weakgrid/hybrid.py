"""Hybrid deterministic pricer: a binomial-style lattice for the variance,
implicit upwind finite differences in the transformed log-price, and
backward induction for European payoffs. Serves as a cross-check for the
Monte Carlo engines."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_banded

from .heston import HestonParams
from .pricers import PutSpec


def mu_x(y: float, p: HestonParams) -> float:
    """Drift of the transformed log-price x = ln s - (rho/sigma) y."""
    c = p.cir
    return (p.r - p.delta - p.rho * c.a / c.sigma
            + (p.rho * c.b / c.sigma - 0.5) * y)


def mu_y(y: float, p: HestonParams) -> float:
    """Drift of the variance."""
    return p.cir.a - p.cir.b * y


def transform_initial(s: float, y: float, p: HestonParams) -> tuple:
    """Map spot coordinates (s, y) to the decoupled coordinates (x, y)."""
    if s <= 0:
        raise ValueError("spot must be positive")
    return math.log(s) - (p.rho / p.cir.sigma) * y, y


@dataclass(frozen=True)
class TridiagonalOp:
    """Rows of the implicit one-step operator A; boundary rows are identity."""

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray


def assemble_operator(y: float, p: HestonParams, h: float, dx: float,
                      x_count: int) -> TridiagonalOp:
    """Implicit upwind operator at variance level y.

    alpha = (h/dx) * mu_x(y) (drift, sign-split upwind) and
    beta = h * (1 - rho^2) * y / (2 dx^2) (diffusion). Interior rows sum
    to one; the two boundary rows are identity (copy-out), which keeps the
    row-sum and maximum-principle properties on the truncated grid.
    """
    if dx <= 0:
        raise ValueError("dx must be positive")
    alpha = (h / dx) * mu_x(y, p)
    beta = h * (1.0 - p.rho**2) * y / (2.0 * dx * dx)
    diag = np.full(x_count, 1.0 + 2.0 * beta + abs(alpha))
    sub = np.full(x_count, -beta - (abs(alpha) if alpha < 0 else 0.0))
    sup = np.full(x_count, -beta - (abs(alpha) if alpha > 0 else 0.0))
    diag[0] = diag[-1] = 1.0
    sub[0] = sub[-1] = 0.0
    sup[0] = sup[-1] = 0.0
    return TridiagonalOp(sub=sub, diag=diag, sup=sup)


def implicit_solve(op: TridiagonalOp, rhs: np.ndarray) -> np.ndarray:
    """Solve A v = rhs for the tridiagonal operator (sup-norm contraction)."""
    m = op.diag.size
    if rhs.shape != (m,):
        raise ValueError("rhs length does not match the operator")
    ab = np.zeros((3, m))
    ab[0, 1:] = op.sup[:-1]
    ab[1, :] = op.diag
    ab[2, :-1] = op.sub[1:]
    return solve_banded((1, 1), ab, rhs)


@dataclass(frozen=True)
class HybridLattice:
    """Variance lattice plus (optionally) the truncated x-grid.

    ``nodes[n]`` holds the n+1 variance values at time level n; ``ku``,
    ``kd`` and ``pu`` hold, for each node of levels 0..N-1, the up/down jump
    indices into level n+1 and the up probability.
    """

    p: HestonParams
    y0: float
    N: int
    T: float
    nodes: tuple
    ku: tuple
    kd: tuple
    pu: tuple
    xs: np.ndarray | None = None

    @property
    def h(self) -> float:
        return self.T / self.N

    def with_x_grid(self, x_center: float, dx: float,
                    half_count: int) -> "HybridLattice":
        xs = x_center + dx * np.arange(-half_count, half_count + 1)
        return replace(self, xs=xs)


def build_lattice(y0: float, p: HestonParams, N: int,
                  T: float) -> HybridLattice:
    """Variance lattice y^n_k = (sqrt(y0) + (sigma/2)(2k - n) sqrt(h))^2,
    floored at zero, with mean-matching jump indices and probabilities."""
    if N < 1:
        raise ValueError("N must be >= 1")
    h = T / N
    sig = p.cir.sigma
    sq = math.sqrt(y0)
    nodes = []
    for n in range(N + 1):
        k = np.arange(n + 1)
        root = sq + 0.5 * sig * (2 * k - n) * math.sqrt(h)
        nodes.append(np.where(root > 0.0, root * root, 0.0))
    ku_all, kd_all, pu_all = [], [], []
    for n in range(N):
        nxt = nodes[n + 1]
        ku = np.empty(n + 1, dtype=int)
        kd = np.empty(n + 1, dtype=int)
        pu = np.empty(n + 1)
        for k in range(n + 1):
            y = nodes[n][k]
            target = y + mu_y(y, p) * h
            up_candidates = [ks for ks in range(k + 1, n + 2)
                             if target <= nxt[ks]]
            ku[k] = min(up_candidates) if up_candidates else n + 1
            dn_candidates = [ks for ks in range(0, k + 1)
                             if target >= nxt[ks]]
            kd[k] = max(dn_candidates) if dn_candidates else 0
            denom = nxt[ku[k]] - nxt[kd[k]]
            if denom > 0:
                pu[k] = min(max((target - nxt[kd[k]]) / denom, 0.0), 1.0)
            else:
                pu[k] = 0.0
        ku_all.append(ku)
        kd_all.append(kd)
        pu_all.append(pu)
    return HybridLattice(p=p, y0=y0, N=N, T=T, nodes=tuple(nodes),
                         ku=tuple(ku_all), kd=tuple(kd_all),
                         pu=tuple(pu_all))


def backward_sweep(lattice: HybridLattice, payoff) -> np.ndarray:
    """Backward induction; returns the value curve over x at time 0.

    ``payoff(x_array, y)`` must return the terminal values on the x-grid
    for a variance node y.
    """
    if lattice.xs is None:
        raise ValueError("lattice has no x-grid; call with_x_grid first")
    xs, p, h = lattice.xs, lattice.p, lattice.h
    dx = xs[1] - xs[0] if xs.size > 1 else 1.0
    surface = [np.asarray(payoff(xs, y), dtype=float)
               for y in lattice.nodes[lattice.N]]
    for n in range(lattice.N - 1, -1, -1):
        new_surface = []
        for k in range(n + 1):
            y = lattice.nodes[n][k]
            pu = lattice.pu[n][k]
            mix = (pu * surface[lattice.ku[n][k]]
                   + (1.0 - pu) * surface[lattice.kd[n][k]])
            op = assemble_operator(y, p, h, dx, xs.size)
            new_surface.append(implicit_solve(op, mix))
        surface = new_surface
    return surface[0]


def hybrid_put_price(p: HestonParams, spec: PutSpec, N: int = 100,
                     dx: float = 0.01, half_width: float | None = None) -> float:
    """European put via the hybrid scheme, interpolated at the initial spot."""
    s0 = math.exp(p.x0)
    x0, y0 = transform_initial(s0, p.y0, p)
    rho_over_sig = p.rho / p.cir.sigma
    if half_width is None:
        # size the grid so the tail mass beyond the boundary is negligible
        y_cap = p.y0 + p.cir.a / max(p.cir.b, 1e-8) + p.cir.sigma
        half_width = (abs(math.log(spec.K) - p.x0)
                      + 8.0 * math.sqrt(max(y_cap * spec.T, 1e-8))
                      + abs(p.r - p.delta) * spec.T
                      + abs(rho_over_sig) * (y_cap + p.y0) + 1.0)
    half_count = int(math.ceil(half_width / dx))
    lattice = build_lattice(y0, p, N, spec.T).with_x_grid(x0, dx, half_count)

    def payoff(xs, y):
        s = np.exp(xs + rho_over_sig * y)
        return np.maximum(spec.K - s, 0.0)

    curve = backward_sweep(lattice, payoff)
    # undiscounted backward induction: apply the discount factor once
    price = float(np.interp(x0, lattice.xs, curve)) * math.exp(-p.r * spec.T)
    return price
