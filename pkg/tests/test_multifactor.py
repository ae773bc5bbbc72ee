"""Multifactor variance kernel, factor flows, and the Strang step."""
from __future__ import annotations

import math

import numpy as np
import pytest

from weakgrid.cir import CirParams, RegimeError
from weakgrid.heston import HestonParams, LogHestonState, nv_step
from weakgrid.multifactor import (BL2_H01_D3, KernelNodes, MfState,
                                  kernel_eval, load_kernel_nodes, mf_step,
                                  psi1_flow, remap_Ay, save_kernel_nodes)

MF_PARAMS = HestonParams(
    r=0.0, rho=-0.7, cir=CirParams(a=0.3, b=1.0, sigma=0.1, x0=0.1),
    x0=math.log(100.0))


def test_node_validation():
    with pytest.raises(ValueError):
        KernelNodes(gammas=(1.0,), rhos=(0.5, 0.6))
    with pytest.raises(ValueError):
        KernelNodes(gammas=(-1.0,), rhos=(0.5,))
    nodes = KernelNodes(gammas=(1.0, 2.0), rhos=(0.0, 3.0))
    assert nodes.d == 2
    assert nodes.k0 == pytest.approx(3.0)


def test_bl2_kernel_frozen_values():
    assert BL2_H01_D3.d == 3
    assert BL2_H01_D3.k0 == pytest.approx(11.21948085, abs=1e-7)
    assert kernel_eval(BL2_H01_D3, 0.0) == pytest.approx(BL2_H01_D3.k0)


def test_kernel_eval_decays_to_zero():
    ts = np.linspace(0.0, 3.0, 40)
    vals = [kernel_eval(BL2_H01_D3, t) for t in ts]
    assert all(v1 >= v2 for v1, v2 in zip(vals, vals[1:]))
    assert vals[-1] < 0.1 * vals[0]
    assert kernel_eval(BL2_H01_D3, 400.0) < 1e-10


def test_csv_round_trip(tmp_path):
    path = tmp_path / "nodes.csv"
    save_kernel_nodes(BL2_H01_D3, path)
    loaded = load_kernel_nodes(path)
    assert loaded.gammas == pytest.approx(BL2_H01_D3.gammas)
    assert loaded.rhos == pytest.approx(BL2_H01_D3.rhos)


def test_psi1_flow_semigroup():
    nodes = BL2_H01_D3
    s = MfState(x=4.6, factors=(0.01, -0.002, 0.0005),
                y_level=0.1)
    one = psi1_flow(0.7, s, nodes)
    two = psi1_flow(0.4, psi1_flow(0.3, s, nodes), nodes)
    assert one.factors == pytest.approx(two.factors, rel=1e-12)
    assert one.x == pytest.approx(two.x, rel=1e-12)


def test_remap_identity_when_level_unchanged():
    nodes = BL2_H01_D3
    s = MfState(x=4.6, factors=(0.01, -0.002, 0.0005), y_level=0.1)
    factors = remap_Ay(s, 0.17, 0.17, nodes)
    assert factors == pytest.approx(s.factors, rel=1e-12)


def test_remap_reconstructs_target_level():
    nodes = BL2_H01_D3
    s = MfState(x=4.6, factors=(0.01, -0.002, 0.0005), y_level=0.1)
    factors = remap_Ay(s, 0.15, 0.23, nodes)
    before = s.y_level + sum(g * f for g, f in zip(nodes.gammas, s.factors))
    after = s.y_level + sum(g * f for g, f in zip(nodes.gammas, factors))
    # the reconstructed variance moves by exactly the requested amount
    assert after - before == pytest.approx(0.23 - 0.15, rel=1e-10)


def test_regime_check():
    bad = HestonParams(r=0.0, rho=-0.7,
                       cir=CirParams(a=0.3, b=1.0, sigma=0.4, x0=0.1),
                       x0=math.log(100.0))
    with pytest.raises(RegimeError):
        mf_step(MfState(x=bad.x0, factors=(0.0, 0.0, 0.0), y_level=0.1),
                0.1, (0.0, 0.0), bad, BL2_H01_D3)


def test_zero_time_step_is_identity():
    s = MfState(x=MF_PARAMS.x0, factors=(0.0, 0.0, 0.0), y_level=0.1)
    out = mf_step(s, 0.0, (0.4, -1.2), MF_PARAMS, BL2_H01_D3)
    assert out.x == pytest.approx(s.x, abs=1e-12)
    assert out.factors == pytest.approx(s.factors, abs=1e-12)


def test_single_flat_node_reduces_to_plain_heston():
    # one node with no decay and unit weight is exactly the standard model
    nodes = KernelNodes(gammas=(1.0,), rhos=(0.0,))
    t, g = 0.25, (0.7, -0.4)
    s = MfState(x=MF_PARAMS.x0, factors=(0.02,), y_level=MF_PARAMS.y0)
    out = mf_step(s, t, g, MF_PARAMS, nodes)
    plain = nv_step(LogHestonState(x=s.x, y=MF_PARAMS.y0 + 0.02), t,
                    g[0], g[1], MF_PARAMS)
    assert out.x == pytest.approx(plain.x, rel=1e-12)
    y_out = MF_PARAMS.y0 + out.factors[0]
    assert y_out == pytest.approx(plain.y, rel=1e-12)


def test_step_keeps_variance_level_nonnegative(rng):
    s = MfState(x=MF_PARAMS.x0, factors=(0.0, 0.0, 0.0), y_level=0.1)
    nodes = BL2_H01_D3
    for _ in range(50):
        g = tuple(rng.standard_normal(2))
        s = mf_step(s, 1.0 / 50, g, MF_PARAMS, nodes)
        level = s.y_level + sum(gm * f for gm, f in zip(nodes.gammas,
                                                        s.factors))
        assert level >= -1e-12
        assert np.isfinite(s.x)
