"""Experiment runner: parses TOML configs, dispatches convergence /
variance / PDE experiments, and writes CSV plus a machine-readable summary.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
import zlib
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .cir import CirParams, RegimeError
from .engine import regress_slope
from .grids import (CirNvScheme, CirPhiAScheme, CirPhiBScheme,
                    CirPoissonScheme, HestonBernoulliExScheme,
                    HestonBernoulliNvScheme, HestonExScheme, HestonNvScheme,
                    MultifactorNvScheme, boosted_estimate,
                    correction_variance)
from .heston import HestonParams
from .hybrid import hybrid_put_price
from .multifactor import BL2_H01_D3, KernelNodes, load_kernel_nodes
from .pricers import (PutSpec, cir_laplace, heston_put_fourier,
                      multifactor_put_fourier)

CSV_COLUMNS = ("n", "estimate", "variance", "half_width", "samples",
               "wallclock_s")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"missing '{key}' in [{where}]")
    return table[key]


def _build_model(cfg: dict):
    model = _require(cfg, "model", "config")
    kind = _require(model, "type", "model")
    cir = CirParams(a=float(_require(model, "a", "model")),
                    b=float(_require(model, "b", "model")),
                    sigma=float(_require(model, "sigma", "model")),
                    x0=float(model.get("x0", 0.0)))
    if kind == "cir":
        return kind, cir, None
    if kind in ("heston", "multifactor"):
        s0 = float(_require(model, "s0", "model"))
        params = HestonParams(r=float(model.get("r", 0.0)),
                              delta=float(model.get("delta", 0.0)),
                              rho=float(_require(model, "rho", "model")),
                              cir=cir, x0=math.log(s0))
        nodes = None
        if kind == "multifactor":
            src = model.get("kernel", "bl2_h01_d3")
            if src == "bl2_h01_d3":
                nodes = BL2_H01_D3
            else:
                nodes = load_kernel_nodes(src)
        return kind, params, nodes
    raise ConfigError(f"unknown model type '{kind}'")


def _build_scheme(kind, params, nodes, scheme_name: str, T: float,
                  asian: bool):
    if kind == "cir":
        table = {"nv": CirNvScheme, "phi_a": CirPhiAScheme,
                 "phi_b": CirPhiBScheme, "poisson": CirPoissonScheme}
        if scheme_name not in table:
            raise ConfigError(f"scheme '{scheme_name}' not valid for cir")
        return table[scheme_name](params, T)
    if kind == "heston":
        table = {"nv": HestonNvScheme, "exact": HestonExScheme,
                 "bernoulli_nv": HestonBernoulliNvScheme,
                 "bernoulli_ex": HestonBernoulliExScheme}
        if scheme_name not in table:
            raise ConfigError(f"scheme '{scheme_name}' not valid for heston")
        return table[scheme_name](params, T, asian=asian)
    if kind == "multifactor":
        if scheme_name != "nv":
            raise ConfigError("multifactor supports only the 'nv' scheme")
        return MultifactorNvScheme(params, nodes, T)
    raise ConfigError(f"unknown model kind '{kind}'")


def _build_payoff(cfg: dict, kind: str, T: float):
    payoff = _require(cfg, "payoff", "config")
    ptype = _require(payoff, "type", "payoff")
    if ptype == "exp":
        lam = float(_require(payoff, "lam", "payoff"))
        return lambda st: np.exp(-lam * st["x"]), False, None
    if ptype == "put":
        strike = float(_require(payoff, "K", "payoff"))
        return (lambda st: np.maximum(strike - np.exp(st["x"]), 0.0),
                False, strike)
    if ptype == "asian_put":
        strike = float(_require(payoff, "K", "payoff"))
        return (lambda st: np.maximum(strike - st["i"] / T, 0.0),
                True, strike)
    raise ConfigError(f"unknown payoff type '{ptype}'")


def _reference_value(cfg, kind, params, nodes, strike, T):
    ref = cfg.get("reference", {"type": "none"})
    rtype = ref.get("type", "none")
    if rtype == "none" or rtype == "self_difference":
        return None, rtype
    if rtype == "laplace":
        lam = float(_require(cfg["payoff"], "lam", "payoff"))
        return cir_laplace(lam, T, params.x0, params), rtype
    if rtype == "fourier":
        spec = PutSpec(K=strike, T=T)
        if kind == "heston":
            return heston_put_fourier(params, spec), rtype
        if kind == "multifactor":
            return multifactor_put_fourier(params, nodes.gammas, nodes.rhos,
                                           spec), rtype
        raise ConfigError("fourier reference needs a heston-type model")
    raise ConfigError(f"unknown reference type '{rtype}'")


def _discount(kind, params, T):
    if kind == "cir":
        return 1.0
    return math.exp(-params.r * T)


def _write_csv(path: Path, rows, columns=CSV_COLUMNS):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in row])


def cmd_converge(cfg: dict, out_dir: Path) -> dict:
    run = _require(cfg, "run", "config")
    T = float(run.get("T", 1.0))
    kind, params, nodes = _build_model(cfg)
    f, asian, strike = _build_payoff(cfg, kind, T)
    scheme_name = _require(run, "scheme", "run")
    coupling = run.get("coupling", "standard")
    levels = list(run.get("levels", [1, 2]))
    n_list = list(_require(run, "n", "run"))
    samples = int(_require(run, "samples", "run"))
    seed = int(run.get("seed", 0))
    scheme = _build_scheme(kind, params, nodes, scheme_name, T, asian)
    reference, rtype = _reference_value(cfg, kind, params, nodes, strike, T)
    disc = _discount(kind, params, T)

    name = cfg.get("experiment", {}).get("name", "converge")
    summary = {"experiment": name, "values": {}, "slopes": {},
               "runtimes": {}}
    rows = []
    estimates = {}
    for level in levels:
        per_n = {}
        t0 = time.perf_counter()
        for n in n_list:
            rng = np.random.default_rng([seed, level, n])
            est = boosted_estimate(scheme, f, n, level, samples, coupling,
                                   rng)
            value = disc * est.value
            per_n[n] = value
            rows.append((f"{level}:{n}", value, est.variance,
                         disc * est.half_width_95, est.n_samples,
                         time.perf_counter() - t0))
        estimates[level] = per_n
        summary["values"][str(level)] = per_n
        summary["runtimes"][str(level)] = time.perf_counter() - t0
        if len(n_list) >= 2:
            if rtype == "self_difference":
                errs = [(n, abs(per_n[2 * n] - per_n[n]))
                        for n in n_list if 2 * n in per_n]
            elif reference is not None:
                errs = [(n, abs(v - reference)) for n, v in per_n.items()]
            else:
                errs = []
            if len(errs) >= 2:
                fit = regress_slope(errs)
                summary["slopes"][str(level)] = fit.slope
    if reference is not None:
        summary["reference"] = reference
    _write_csv(out_dir / f"{name}.csv", rows)
    with open(out_dir / f"{name}.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary


def cmd_variance(cfg: dict, out_dir: Path) -> dict:
    run = _require(cfg, "run", "config")
    T = float(run.get("T", 1.0))
    kind, params, nodes = _build_model(cfg)
    f, asian, strike = _build_payoff(cfg, kind, T)
    n_list = list(_require(run, "n", "run"))
    samples = int(_require(run, "samples", "run"))
    seed = int(run.get("seed", 0))
    var_cfg = cfg.get("variance", {})
    specs = var_cfg.get("rows")
    if specs is None:
        specs = [{"scheme": _require(run, "scheme", "run"),
                  "coupling": run.get("coupling", "standard")}]

    name = cfg.get("experiment", {}).get("name", "variance")
    summary = {"experiment": name, "values": {}, "slopes": {},
               "runtimes": {}}
    rows = []
    for spec_row in specs:
        scheme_name = spec_row["scheme"]
        coupling = spec_row.get("coupling", "standard")
        label = f"{scheme_name}/{coupling}"
        scheme = _build_scheme(kind, params, nodes, scheme_name, T, asian)
        per_n = {}
        t0 = time.perf_counter()
        for n in n_list:
            rng = np.random.default_rng(
                [seed, zlib.crc32(label.encode()), n])
            est = correction_variance(scheme, f, n, samples, coupling, rng)
            # 95% half-width of the variance estimate itself (normal theory)
            hw = 1.96 * est.variance * math.sqrt(2.0 / max(est.n_samples - 1,
                                                           1))
            per_n[n] = est.variance
            rows.append((f"{label}:{n}", est.variance, est.variance, hw,
                         est.n_samples, time.perf_counter() - t0))
        summary["values"][label] = per_n
        summary["runtimes"][label] = time.perf_counter() - t0
    _write_csv(out_dir / f"{name}.csv", rows)
    with open(out_dir / f"{name}.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary


def cmd_pde(cfg: dict, out_dir: Path) -> dict:
    kind, params, nodes = _build_model(cfg)
    if kind != "heston":
        raise ConfigError("the pde command prices the heston model only")
    pde = _require(cfg, "pde", "config")
    strike = float(_require(pde, "K", "pde"))
    T = float(pde.get("T", 1.0))
    N = int(pde.get("N", 100))
    dx = float(pde.get("dx", 0.01))
    spec = PutSpec(K=strike, T=T)
    t0 = time.perf_counter()
    price = hybrid_put_price(params, spec, N=N, dx=dx)
    elapsed = time.perf_counter() - t0
    reference = heston_put_fourier(params, spec)

    name = cfg.get("experiment", {}).get("name", "pde")
    rows = [(N, price, 0.0, 0.0, 0, elapsed)]
    _write_csv(out_dir / f"{name}.csv", rows)
    summary = {"experiment": name,
               "values": {"hybrid": price, "fourier": reference,
                          "rel_error": abs(price - reference) / reference},
               "slopes": {}, "runtimes": {"pde": elapsed}}
    with open(out_dir / f"{name}.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary


COMMANDS = {"converge": cmd_converge, "variance": cmd_variance,
            "pde": cmd_pde}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="weakgrid",
        description="Run weak-approximation experiments from a TOML config.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="TOML config file")
    parser.add_argument("--seed", type=int, help="override run.seed")
    parser.add_argument("--samples", type=int, help="override run.samples")
    parser.add_argument("--epsilon", type=float,
                        help="override run.epsilon (target half-width)")
    parser.add_argument("--out", default=".", help="output directory")
    args = parser.parse_args(argv)

    try:
        with open(args.config, "rb") as fh:
            cfg = tomllib.load(fh)
        run = cfg.setdefault("run", {})
        if args.seed is not None:
            run["seed"] = args.seed
        if args.samples is not None:
            run["samples"] = args.samples
        if args.epsilon is not None:
            run["epsilon"] = args.epsilon
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](cfg, out_dir)
    except (ConfigError, RegimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
