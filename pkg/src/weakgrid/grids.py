"""Random refinement grids and the boosted estimators.

A base scheme with n steps of size h1 = T/n is combined with randomly
refined copies of itself (one coarse step replaced by n steps of size
h1/n, possibly nested) to cancel the leading bias terms:

    order-2 boost: E f(X0) + n E[f(X1) - f(X0)]
    order-3 boost: adds n^2 E[f(X2) - f(X1)]
                   + n(n-1)/2 E[f(X5) - f(X4) - f(X3) + f(X0)]

where X0 is the coarse scheme, X1 refines step kappa, X2 additionally
refines fine step kappa' inside that window, X3/X4 refine steps kappa1 <
kappa2, and X5 refines both. All schemes ride the same Brownian motion:
the refined windows draw the fine Gaussians, and every scheme that crosses
such a window with a coarse step consumes a coupled aggregate of them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .cir import (CirParams, RegimeError, exact_cir_sample,
                  general_second_order_step_A, nv_cir_step,
                  poisson_first_order_step, second_order_step_B)
from .engine import Estimate, RunningStats
from .heston import HestonParams, X_OVERFLOW
from .kernels import bernoulli_x_step, heston_x_step
from .multifactor import KernelNodes

COUPLINGS = ("standard", "vol_weighted")
_BLOCK = 1 << 16


# ---------------------------------------------------------------------------
# Grid plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridPlan:
    """Random refinement indices for one boosted sample.

    Level 1 uses the uniform grid only; level 2 refines coarse step
    ``kappa``; level 3 additionally refines fine step ``kappa_prime`` inside
    that window and the strictly ordered coarse pair ``pair``.
    """

    n: int
    level: int
    kappa: int | None = None
    kappa_prime: int | None = None
    pair: tuple | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.level not in (1, 2, 3):
            raise ValueError("level must be 1, 2 or 3")
        need_kappa = self.level >= 2
        if (self.kappa is not None) != need_kappa:
            raise ValueError("kappa must be present exactly for level >= 2")
        if (self.kappa_prime is not None) != (self.level == 3):
            raise ValueError("kappa_prime must be present exactly for level 3")
        for idx in (self.kappa, self.kappa_prime):
            if idx is not None and not 0 <= idx < self.n:
                raise ValueError(f"index {idx} outside 0..{self.n - 1}")
        if self.level == 3:
            if self.n == 1:
                if self.pair is not None:
                    raise ValueError("pair set is empty for n = 1")
            else:
                if self.pair is None:
                    raise ValueError("level 3 with n >= 2 requires a pair")
                k1, k2 = self.pair
                if not 0 <= k1 < k2 < self.n:
                    raise ValueError(f"pair {self.pair} not strictly ordered in range")
        elif self.pair is not None:
            raise ValueError("pair is only meaningful at level 3")


def _unrank_pair(idx: int, n: int) -> tuple:
    for k1 in range(n):
        block = n - 1 - k1
        if idx < block:
            return (k1, k1 + 1 + idx)
        idx -= block
    raise ValueError("pair rank out of range")


def draw_grid(n: int, level: int, rng: np.random.Generator) -> GridPlan:
    """Draw the random refinement indices for one sample."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if level == 1:
        return GridPlan(n=n, level=1)
    if level == 2:
        return GridPlan(n=n, level=2, kappa=int(rng.integers(n)))
    if level == 3:
        kappa = int(rng.integers(n))
        kappa_prime = int(rng.integers(n))
        pair = None
        if n >= 2:
            pair = _unrank_pair(int(rng.integers(n * (n - 1) // 2)), n)
        return GridPlan(n=n, level=3, kappa=kappa, kappa_prime=kappa_prime,
                        pair=pair)
    raise ValueError("level must be 1, 2 or 3")


# ---------------------------------------------------------------------------
# Couplings
# ---------------------------------------------------------------------------

def coupling_standard(fine_gaussians) -> float:
    """Aggregate n fine Gaussians into one: (1/sqrt(n)) * sum."""
    z = np.asarray(fine_gaussians, dtype=float)
    if z.size < 1:
        raise ValueError("need at least one fine Gaussian")
    return float(z.sum() / math.sqrt(z.size))

def coupling_vol_weighted(fine_gaussians, fine_variances) -> float:
    """Volatility-weighted aggregate: sum(sqrt(w_k) N_k) / sqrt(sum w_k).

    ``fine_variances`` are the successive (y_{k-1} + y_k) sums along the
    refined path. If all weights vanish the standard coupling is used.
    """
    z = np.asarray(fine_gaussians, dtype=float)
    w = np.asarray(fine_variances, dtype=float)
    if z.shape != w.shape:
        raise ValueError("gaussians and weights must have the same length")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    tot = w.sum()
    if tot == 0.0:
        return coupling_standard(z)
    return float((np.sqrt(w) * z).sum() / math.sqrt(tot))


def _couple_block(pool: np.ndarray, weights, av_component, kind: str):
    """Aggregate a (m, n, nz) fine-noise pool into one (m, nz) coarse row."""
    n = pool.shape[1]
    out = pool.sum(axis=1) / math.sqrt(n)
    if kind == "vol_weighted" and av_component is not None and weights is not None:
        tot = weights.sum(axis=1)
        good = tot > 0
        num = (np.sqrt(weights) * pool[:, :, av_component]).sum(axis=1)
        out[good, av_component] = num[good] / np.sqrt(tot[good])
    return out


# ---------------------------------------------------------------------------
# Scheme adapters (batched over paths; state is a dict of arrays)
# ---------------------------------------------------------------------------

def _copy_state(state: dict) -> dict:
    return {k: v.copy() for k, v in state.items()}


class CirNvScheme:
    """Second-order splitting scheme for the square-root diffusion."""

    nz = 1
    exact_y = False
    av_component = None
    uses_rng = False

    def __init__(self, params: CirParams, T: float):
        if not params.low_vol:
            raise RegimeError("scheme requires sigma^2 <= 4a")
        self.p = params
        self.T = T

    def init(self, m: int) -> dict:
        return {"x": np.full(m, self.p.x0)}

    def step(self, state, dt, z, y_next=None):
        return {"x": nv_cir_step(state["x"], dt, z[:, 0], self.p)}

    def y_value(self, state):
        return state["x"]


class CirPhiAScheme(CirNvScheme):
    """All-regime second-order scheme built on a three-point noise."""

    def __init__(self, params: CirParams, T: float):
        self.p = params
        self.T = T

    def step(self, state, dt, z, y_next=None):
        return {"x": general_second_order_step_A(state["x"], dt,
                                                 ndtr(z[:, 0]), self.p)}


class CirPhiBScheme(CirPhiAScheme):
    """All-regime second-order scheme built on a bounded Gaussian remap."""

    def step(self, state, dt, z, y_next=None):
        return {"x": second_order_step_B(state["x"], dt, z[:, 0], self.p)}


class CirPoissonScheme(CirPhiAScheme):
    """First-order scheme for the high-volatility regime."""

    uses_rng = True

    def step_rng(self, state, dt, rng):
        return {"x": poisson_first_order_step(state["x"], dt, self.p, rng)}


class HestonNvScheme:
    """Joint log-price / variance splitting step (one Gaussian per factor)."""

    nz = 2
    exact_y = False
    av_component = 0
    uses_rng = False

    def __init__(self, params: HestonParams, T: float, asian: bool = False):
        if not params.cir.low_vol:
            raise RegimeError("scheme requires sigma^2 <= 4a")
        self.p = params
        self.T = T
        self.asian = asian

    def init(self, m: int) -> dict:
        state = {"x": np.full(m, self.p.x0), "y": np.full(m, self.p.y0)}
        if self.asian:
            state["i"] = np.zeros(m)
        return state

    def _advance(self, state, dt, x_new, y_new):
        out = {"x": x_new, "y": y_new}
        if self.asian:
            if np.abs(x_new).max(initial=0.0) > X_OVERFLOW:
                raise OverflowError("log-price exceeds exp() range")
            out["i"] = state["i"] + 0.5 * (np.exp(state["x"]) + np.exp(x_new)) * dt
        return out

    def step(self, state, dt, z, y_next=None):
        c = self.p.cir
        y_new = nv_cir_step(state["y"], dt, z[:, 1], c)
        x_new = heston_x_step(state["x"], state["y"], y_new, dt, z[:, 0],
                              self.p.r - self.p.delta, self.p.rho,
                              c.a, c.b, c.sigma)
        return self._advance(state, dt, x_new, y_new)

    def y_value(self, state):
        return state["y"]


class HestonExScheme(HestonNvScheme):
    """Log-price step around an exactly simulated variance path."""

    nz = 1
    exact_y = True

    def __init__(self, params: HestonParams, T: float, asian: bool = False):
        self.p = params
        self.T = T
        self.asian = asian

    def step(self, state, dt, z, y_next=None):
        c = self.p.cir
        x_new = heston_x_step(state["x"], state["y"], y_next, dt, z[:, 0],
                              self.p.r - self.p.delta, self.p.rho,
                              c.a, c.b, c.sigma)
        return self._advance(state, dt, x_new, y_next)


class HestonBernoulliNvScheme(HestonNvScheme):
    """Variance-randomized x-update; kept for variance comparisons.

    The third noise component is turned into the Bernoulli flag by its sign,
    so coarse/fine coupling of that component still yields a fair coin.
    """

    nz = 3

    def __init__(self, params: HestonParams, T: float, asian: bool = False):
        super().__init__(params, T, asian)
        self.clamp_count = 0

    def step(self, state, dt, z, y_next=None):
        c = self.p.cir
        y_new = nv_cir_step(state["y"], dt, z[:, 1], c)
        bern = (z[:, 2] > 0).astype(float)
        x_new, clamps = bernoulli_x_step(state["x"], state["y"], y_new, dt,
                                         z[:, 0], bern,
                                         self.p.r - self.p.delta, self.p.rho,
                                         c.a, c.b, c.sigma)
        self.clamp_count += int(clamps)
        return self._advance(state, dt, x_new, y_new)


class HestonBernoulliExScheme(HestonExScheme):
    """Bernoulli x-update around an exactly simulated variance path."""

    nz = 2

    def __init__(self, params: HestonParams, T: float, asian: bool = False):
        super().__init__(params, T, asian)
        self.clamp_count = 0

    def step(self, state, dt, z, y_next=None):
        c = self.p.cir
        bern = (z[:, 1] > 0).astype(float)
        x_new, clamps = bernoulli_x_step(state["x"], state["y"], y_next, dt,
                                         z[:, 0], bern,
                                         self.p.r - self.p.delta, self.p.rho,
                                         c.a, c.b, c.sigma)
        self.clamp_count += int(clamps)
        return self._advance(state, dt, x_new, y_next)


class MultifactorNvScheme:
    """Strang step for the multifactor model, batched over paths."""

    nz = 2
    exact_y = False
    av_component = 0
    uses_rng = False

    def __init__(self, params: HestonParams, nodes: KernelNodes, T: float):
        k0 = nodes.k0
        if k0 * params.cir.sigma**2 >= 4.0 * params.cir.a:
            raise RegimeError("scheme requires K(0) * sigma^2 < 4a")
        self.p = params
        self.nodes = nodes
        self.T = T
        self.scaled = params.cir.scaled(k0)
        self._gammas = np.asarray(nodes.gammas)
        self._rhos = np.asarray(nodes.rhos)

    def init(self, m: int) -> dict:
        return {"x": np.full(m, self.p.x0),
                "fac": np.zeros((m, self.nodes.d))}

    def step(self, state, dt, z, y_next=None):
        decay = np.exp(-self._rhos * dt / 2.0)
        fac = state["fac"] * decay
        y_prime = np.maximum(self.p.y0 + fac @ self._gammas, 0.0)
        c = self.scaled
        y_new = nv_cir_step(y_prime, dt, z[:, 1], c)
        x_new = heston_x_step(state["x"], y_prime, y_new, dt, z[:, 0],
                              self.p.r - self.p.delta, self.p.rho,
                              c.a, c.b, c.sigma)
        fac = (fac + ((y_new - y_prime) / self.nodes.k0)[:, None]) * decay
        return {"x": x_new, "fac": fac}

    def y_value(self, state):
        return np.maximum(self.p.y0 + state["fac"] @ self._gammas, 0.0)


# ---------------------------------------------------------------------------
# Coupled simulation
# ---------------------------------------------------------------------------

def _step_group(scheme, states, keys, dt, z, y_next=None):
    for k in keys:
        states[k] = scheme.step(states[k], dt, z, y_next=y_next)


def _exact_y_path(scheme, n, kappa, m, rng):
    """Exact variance path on the union grid, shared by coarse and refined.

    Returns (coarse endpoints list y[0..n], fine window values ys[0..n]).
    """
    p = scheme.p.cir
    h1, h2 = scheme.T / n, scheme.T / n**2
    y = np.full(m, p.x0)
    coarse = [y]
    fine = None
    for k in range(n):
        if k == kappa:
            fine = [y]
            for _ in range(n):
                y = exact_cir_sample(h2, y, p, rng, size=m)
                fine.append(y)
        else:
            y = exact_cir_sample(h1, y, p, rng, size=m)
        coarse.append(y)
    return coarse, fine


def _sim_level1(scheme, n, m, rng):
    h1 = scheme.T / n
    state = scheme.init(m)
    if scheme.uses_rng:
        for _ in range(n):
            state = scheme.step_rng(state, h1, rng)
        return {0: state}
    if scheme.exact_y:
        y = np.full(m, scheme.p.cir.x0)
        for _ in range(n):
            y_next = exact_cir_sample(h1, y, scheme.p.cir, rng, size=m)
            z = rng.standard_normal((m, scheme.nz))
            state = scheme.step(state, h1, z, y_next=y_next)
            y = y_next
        return {0: state}
    z = rng.standard_normal((m, n, scheme.nz))
    for k in range(n):
        state = scheme.step(state, h1, z[:, k])
    return {0: state}


def _sim_level2(scheme, n, kappa, coupling, m, rng):
    h1, h2 = scheme.T / n, scheme.T / n**2
    zb = rng.standard_normal((m, n, scheme.nz))
    zf = rng.standard_normal((m, n, scheme.nz))
    if scheme.exact_y:
        coarse_y, fine_y = _exact_y_path(scheme, n, kappa, m, rng)
    s0 = scheme.init(m)
    for k in range(kappa):
        y_next = coarse_y[k + 1] if scheme.exact_y else None
        s0 = scheme.step(s0, h1, zb[:, k], y_next=y_next)
    s1 = _copy_state(s0)
    # refined window: fine steps for s1, coupled aggregate for s0
    weights = np.empty((m, n))
    for j in range(n):
        y_prev = fine_y[j] if scheme.exact_y else scheme.y_value(s1)
        y_next = fine_y[j + 1] if scheme.exact_y else None
        s1 = scheme.step(s1, h2, zf[:, j], y_next=y_next)
        y_new = fine_y[j + 1] if scheme.exact_y else scheme.y_value(s1)
        weights[:, j] = y_prev + y_new
    z_agg = _couple_block(zf, weights, scheme.av_component, coupling)
    y_next = coarse_y[kappa + 1] if scheme.exact_y else None
    s0 = scheme.step(s0, h1, z_agg, y_next=y_next)
    for k in range(kappa + 1, n):
        y_next = coarse_y[k + 1] if scheme.exact_y else None
        s0 = scheme.step(s0, h1, zb[:, k], y_next=y_next)
        s1 = scheme.step(s1, h1, zb[:, k], y_next=y_next)
    return {0: s0, 1: s1}


def _window(scheme, states, refiners, pool, weights_out, h_fine,
            sub=None):
    """Run one refined window: ``refiners`` take n fine steps from ``pool``.

    ``sub`` = (scheme_index, kappa_prime, sub_pool, coupling) requests a
    nested refinement for one of the refiners. The provider of the coupling
    weights is the smallest refiner index. Returns the effective fine pool
    (with nested aggregates substituted).
    """
    n = pool.shape[1]
    provider = min(refiners)
    eff = pool.copy()
    for j in range(n):
        if sub is not None and j == sub[1]:
            sub_idx, _, sub_pool, coupling = sub
            h_sub = h_fine / n
            w_sub = np.empty((pool.shape[0], n))
            for jj in range(n):
                y_prev = scheme.y_value(states[sub_idx])
                states[sub_idx] = scheme.step(states[sub_idx], h_sub,
                                              sub_pool[:, jj])
                w_sub[:, jj] = y_prev + scheme.y_value(states[sub_idx])
            eff[:, j] = _couple_block(sub_pool, w_sub, scheme.av_component,
                                      coupling)
            stepping = [r for r in refiners if r != sub_idx]
        else:
            stepping = list(refiners)
        y_prev = scheme.y_value(states[provider])
        for r in stepping:
            states[r] = scheme.step(states[r], h_fine, eff[:, j])
        weights_out[:, j] = y_prev + scheme.y_value(states[provider])
    return eff


def _sim_level3(scheme, n, kappa, kappa_prime, pair, coupling, m, rng):
    if scheme.exact_y or scheme.uses_rng:
        raise ValueError("level-3 boosting is implemented for "
                         "Gaussian-driven schemes only")
    h1, h2 = scheme.T / n, scheme.T / n**2
    zb = rng.standard_normal((m, n, scheme.nz))
    z1 = rng.standard_normal((m, n, scheme.nz))
    z2 = rng.standard_normal((m, n, scheme.nz))
    z3 = rng.standard_normal((m, n, scheme.nz))
    z4 = rng.standard_normal((m, n, scheme.nz))
    k1, k2 = pair if pair is not None else (None, None)

    states = {i: scheme.init(m) for i in range(6)}
    for k in range(n):
        refiners = set()
        if k == kappa:
            refiners |= {1, 2}
        if k == k1:
            refiners |= {3, 5}
        if k == k2:
            refiners |= {4, 5}
        if not refiners:
            _step_group(scheme, states, range(6), h1, zb[:, k])
            continue
        # the window at kappa owns its pool; collisions share it
        if k == kappa:
            pool, sub = z1, (2, kappa_prime, z2, coupling)
        elif k == k1:
            pool, sub = z3, None
        else:
            pool, sub = z4, None
        weights = np.empty((m, n))
        eff = _window(scheme, states, sorted(refiners), pool, weights, h2,
                      sub=sub)
        z_agg = _couple_block(eff, weights, scheme.av_component, coupling)
        coarse = [i for i in range(6) if i not in refiners]
        _step_group(scheme, states, coarse, h1, z_agg)
    return states


def simulate_coupled(scheme, plan: GridPlan, rng: np.random.Generator,
                     samples: int = 1, coupling: str = "standard") -> dict:
    """Simulate the coupled family of schemes for one grid plan.

    Returns a dict of terminal states keyed by scheme index (0 = coarse;
    1 = refined at kappa; at level 3 additionally 2..5). Each state is a
    dict of arrays of length ``samples``.
    """
    if coupling not in COUPLINGS:
        raise ValueError(f"coupling must be one of {COUPLINGS}")
    n, m = plan.n, samples
    if plan.level == 1:
        return _sim_level1(scheme, n, m, rng)
    if plan.level == 2:
        return _sim_level2(scheme, n, plan.kappa, coupling, m, rng)
    return _sim_level3(scheme, n, plan.kappa, plan.kappa_prime, plan.pair,
                       coupling, m, rng)


# ---------------------------------------------------------------------------
# Boosted estimators
# ---------------------------------------------------------------------------

def _composite_block(scheme, f, n, level, coupling, m, rng) -> np.ndarray:
    """Per-sample boosted values for one block of m paths.

    Refinement indices are drawn per path, then paths with identical indices
    are simulated together as one vectorized group.
    """
    if level == 1:
        return np.asarray(f(_sim_level1(scheme, n, m, rng)[0]), dtype=float)
    vals = np.empty(m)
    if level == 2:
        kappas = rng.integers(0, n, m)
        for kv in range(n):
            idx = np.flatnonzero(kappas == kv)
            if idx.size == 0:
                continue
            states = _sim_level2(scheme, n, kv, coupling, idx.size, rng)
            f0, f1 = f(states[0]), f(states[1])
            vals[idx] = f0 + n * (f1 - f0)
        return vals
    # level 3
    n_pairs = n * (n - 1) // 2
    kappas = rng.integers(0, n, m)
    kps = rng.integers(0, n, m)
    pair_idx = rng.integers(0, max(n_pairs, 1), m)
    code = (kappas * n + kps) * max(n_pairs, 1) + pair_idx
    for cv in np.unique(code):
        idx = np.flatnonzero(code == cv)
        kv, kpv, pv = kappas[idx[0]], kps[idx[0]], pair_idx[idx[0]]
        pair = _unrank_pair(int(pv), n) if n_pairs > 0 else None
        states = _sim_level3(scheme, n, int(kv), int(kpv), pair, coupling,
                             idx.size, rng)
        f_of = {i: f(states[i]) for i in range(6)}
        vals[idx] = (f_of[0]
                     + n * (f_of[1] - f_of[0])
                     + n**2 * (f_of[2] - f_of[1])
                     + 0.5 * n * (n - 1)
                     * (f_of[5] - f_of[4] - f_of[3] + f_of[0]))
    return vals


def boosted_estimate(scheme, f, n, level, samples, coupling, rng,
                     block: int = _BLOCK) -> Estimate:
    """Monte Carlo estimate of the level-nu boosted value at base grid n."""
    if samples < 2:
        raise ValueError("need at least two samples")
    stats = RunningStats()
    done = 0
    while done < samples:
        m = min(block, samples - done)
        stats.update(_composite_block(scheme, f, n, level, coupling, m, rng))
        done += m
    return Estimate(value=stats.mean, variance=stats.variance,
                    n_samples=stats.count)


def estimator_order2(scheme, f, n, samples, coupling,
                     rng: np.random.Generator) -> Estimate:
    """E f(X0) + n E[f(X1) - f(X0)] with per-sample shared corrections."""
    return boosted_estimate(scheme, f, n, 2, samples, coupling, rng)


def estimator_order3(scheme, f, n, samples, coupling,
                     rng: np.random.Generator) -> Estimate:
    """Four-term boosted estimator (order 6 for second-order base schemes)."""
    return boosted_estimate(scheme, f, n, 3, samples, coupling, rng)


def correction_variance(scheme, f, n, samples, coupling,
                        rng: np.random.Generator,
                        block: int = _BLOCK) -> Estimate:
    """Mean and variance of the order-2 correction term n*(f(X1) - f(X0))."""
    stats = RunningStats()
    done = 0
    while done < samples:
        m = min(block, samples - done)
        kappas = rng.integers(0, n, m)
        vals = np.empty(m)
        for kv in range(n):
            idx = np.flatnonzero(kappas == kv)
            if idx.size == 0:
                continue
            states = _sim_level2(scheme, n, kv, coupling, idx.size, rng)
            vals[idx] = n * (f(states[1]) - f(states[0]))
        stats.update(vals)
        done += m
    return Estimate(value=stats.mean, variance=stats.variance,
                    n_samples=stats.count)


# ---------------------------------------------------------------------------
# Sample allocation and the two estimator layouts
# ---------------------------------------------------------------------------

def allocate_samples(sigma2_sq: float, sigma4_sq: float, gamma_cov: float,
                     zeta: float, epsilon: float, mode: str) -> tuple:
    """Sample counts (M1, M2) for the base term and the correction term.

    Targets a 95%-style precision epsilon at minimal cost when a correction
    sample costs zeta times a base sample. ``independent`` draws the two
    terms from disjoint samples; ``shared`` reuses the correction samples'
    base values (covariance gamma_cov between f(X0) and the correction).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if sigma2_sq < 0 or sigma4_sq < 0:
        raise ValueError("variances must be nonnegative")
    e2 = epsilon * epsilon
    s2, s4 = math.sqrt(sigma2_sq), math.sqrt(sigma4_sq)
    if mode == "independent":
        m1 = math.ceil((sigma2_sq + math.sqrt(zeta) * s2 * s4) / e2)
        m2 = math.ceil((sigma4_sq + s2 * s4 / math.sqrt(zeta)) / e2)
        return m1, m2
    if mode != "shared":
        raise ValueError("mode must be 'independent' or 'shared'")
    if zeta <= 1:
        raise ValueError("shared mode requires zeta > 1")
    v2 = max(sigma2_sq + 2.0 * gamma_cov, 0.0)
    v4 = sigma4_sq + 2.0 * gamma_cov
    if v4 <= 0 or zeta * v2 / v4 >= 1.0:
        # M1 >= M2 branch of the closed form
        m1 = math.ceil((v2 + math.sqrt(v2 * sigma4_sq * (zeta - 1.0))) / e2)
        m2 = math.ceil((sigma4_sq + math.sqrt(v2 * sigma4_sq / (zeta - 1.0)))
                       / e2)
        return max(m1, m2), m2
    # The closed form gives M1 < M2 here; the source leaves this branch
    # open, so fall back to a single shared stream sized for the total.
    m = math.ceil((sigma2_sq + sigma4_sq + 2.0 * gamma_cov) / e2)
    return m, m


def theta_estimate(scheme, f, n, epsilon, coupling, rng,
                   mode: str = "shared", pilot: int = 10_000,
                   block: int = _BLOCK):
    """Order-2 boosted estimate targeting half-width epsilon.

    Runs a pilot to measure the term variances, their covariance, and the
    cost ratio zeta, allocates (M1, M2) accordingly, then runs the final
    sampling in the requested layout. Returns (Estimate, info dict).
    """
    import time

    t0 = time.perf_counter()
    _sim_level1(scheme, n, pilot, rng)
    t_base = (time.perf_counter() - t0) / pilot

    f0_stats, corr_stats = RunningStats(), RunningStats()
    cross = 0.0
    t0 = time.perf_counter()
    kappas = rng.integers(0, n, pilot)
    f0_all = np.empty(pilot)
    corr_all = np.empty(pilot)
    for kv in range(n):
        idx = np.flatnonzero(kappas == kv)
        if idx.size == 0:
            continue
        states = _sim_level2(scheme, n, kv, coupling, idx.size, rng)
        f0_all[idx] = f(states[0])
        corr_all[idx] = n * (f(states[1]) - f(states[0]))
    t_corr = (time.perf_counter() - t0) / pilot
    f0_stats.update(f0_all)
    corr_stats.update(corr_all)
    cross = float(np.cov(f0_all, corr_all)[0, 1])

    zeta = max(t_corr / max(t_base, 1e-12), 1.0 + 1e-9)
    sigma2_sq, sigma4_sq = f0_stats.variance, corr_stats.variance
    m1, m2 = allocate_samples(sigma2_sq, sigma4_sq,
                              cross if mode == "shared" else 0.0,
                              zeta, epsilon, mode)
    m1, m2 = max(m1, 2), max(m2, 2)

    base_stats, corr_fin = RunningStats(), RunningStats()
    wall0 = time.perf_counter()
    done = 0
    while done < m2:
        m = min(block, m2 - done)
        kappas = rng.integers(0, n, m)
        f0_blk = np.empty(m)
        corr_blk = np.empty(m)
        for kv in range(n):
            idx = np.flatnonzero(kappas == kv)
            if idx.size == 0:
                continue
            states = _sim_level2(scheme, n, kv, coupling, idx.size, rng)
            f0_blk[idx] = f(states[0])
            corr_blk[idx] = n * (f(states[1]) - f(states[0]))
        corr_fin.update(corr_blk)
        if mode == "shared":
            base_stats.update(f0_blk)
        done += m
    extra = m1 - (m2 if mode == "shared" else 0)
    done = 0
    while done < extra:
        m = min(block, extra - done)
        states = _sim_level1(scheme, n, m, rng)
        base_stats.update(np.asarray(f(states[0]), dtype=float))
        done += m
    wallclock = time.perf_counter() - wall0

    value = base_stats.mean + corr_fin.mean
    if mode == "shared":
        var_total = (sigma2_sq / m1 + 2.0 * cross / max(m1, m2)
                     + sigma4_sq / m2)
    else:
        var_total = sigma2_sq / m1 + sigma4_sq / m2
    est = Estimate(value=value, variance=max(var_total, 0.0), n_samples=1)
    info = {"M1": m1, "M2": m2, "zeta": zeta, "sigma2_sq": sigma2_sq,
            "sigma4_sq": sigma4_sq, "gamma_cov": cross,
            "wallclock_s": wallclock}
    return est, info
