"""Operation registry: every public computation behind a uniform
(params dict, output dir) -> files interface, shared by the CLI and the
experiment harness.  Each entry carries a short anchor label naming the
mathematical object it exercises, which the report command displays.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import mc, pde, sim, spectral
from .errors import ConfigurationError
from .model import ModelParams, RateFamily, derived_constants


def _positive(v):
    if not (isinstance(v, (int, float)) and v > 0):
        raise ConfigurationError(f"expected a positive number, got {v!r}")


def _nonneg(v):
    if not (isinstance(v, (int, float)) and v >= 0):
        raise ConfigurationError(f"expected a nonnegative number, got {v!r}")


def _any(v):
    return None


def _count(v):
    if not (isinstance(v, int) and v >= 1):
        raise ConfigurationError(f"expected a count >= 1, got {v!r}")


@dataclass(frozen=True)
class Operation:
    name: str
    anchor: str
    parameters: dict
    run: Callable
    stochastic: bool = False

    def validate(self, key, value):
        fn = self.parameters.get(key)
        if fn is not None:
            fn(value)


def _write_json(path: Path, payload: dict) -> str:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return str(path)


def _params_from(args, default_family="SinPow"):
    return ModelParams(
        alpha=float(args.get("alpha", 1.0)),
        beta=float(args.get("beta", 1.0)),
        rate_family=RateFamily(args.get("family", default_family)),
    )


# -- deterministic operations -------------------------------------------------

def _run_spectrum(args, out: Path):
    sys_ = spectral.solve_spectrum(
        float(args["alpha"]), int(args.get("n_max", 8)),
        accuracy=float(args.get("accuracy", 1e-8)), q=float(args.get("q", 1.0)))
    csv = out / "eigensystem.csv"
    js = out / "eigensystem.json"
    sys_.export_csv(csv)
    sys_.export_json(js)
    return [str(csv), str(js)]


def _run_weyl(args, out: Path):
    sys_ = spectral.solve_spectrum(float(args["alpha"]), int(args.get("n_max", 41)),
                                   accuracy=float(args.get("accuracy", 1e-6)))
    rep = spectral.weyl_check(sys_)
    payload = {
        "alpha": sys_.alpha,
        "constant": spectral.weyl_constant(sys_.alpha),
        "levels": rep.levels.tolist(),
        "relative_errors": rep.relative_errors.tolist(),
        "decreasing_10_20_40": bool(rep.decreasing_over([10, 20, 40]))
        if sys_.n_levels > 40 else None,
    }
    return [_write_json(out / "weyl.json", payload)]


def _run_pde(args, out: Path):
    grids = pde.PdeGrids(x_max=float(args.get("x_max", 8.0)),
                         dx=float(args.get("dx", 1.0 / 128.0)),
                         cfl_pot=float(args.get("cfl", 0.02)))
    g = pde.fundamental_solution_g(float(args.get("xi", 0.0)), float(args["t_end"]),
                                   float(args["rho"]), float(args["alpha"]), grids)
    csv = out / "field.csv"
    js = out / "field.json"
    g.field.export_csv(csv)
    g.field.export_json(js)
    return [str(csv), str(js)]


def _run_barriers(args, out: Path):
    pair = pde.build_barriers(float(args["t_end"]), float(args["eps1"]),
                              float(args["eps2"]), float(args["alpha"]))
    t = np.linspace(0.0, pair.T, int(args.get("n_grid", 1001)))
    lo, hi = pair.sandwich_margins()
    payload = {
        "T": pair.T, "eps1": pair.eps1, "eps2": pair.eps2, "alpha": pair.alpha,
        "t": t.tolist(),
        "q_star": pair.q_star.value(t).tolist(),
        "q_upper": pair.q_upper.value(t).tolist(),
        "max_violation_low": lo, "max_violation_high": hi,
    }
    return [_write_json(out / "barriers.json", payload)]


def _run_galerkin(args, out: Path):
    sys_ = spectral.solve_spectrum(float(args["alpha"]),
                                   int(args.get("n_modes", 12)) + 2,
                                   accuracy=float(args.get("accuracy", 1e-7)))
    d_mat, a_mat, defect = pde.galerkin_matrices(sys_, int(args.get("n_modes", 12)))
    payload = {
        "alpha": sys_.alpha,
        "gap_diagonal": np.diag(d_mat).tolist(),
        "mixing": a_mat.tolist(),
        "quadrature_defect": defect,
    }
    return [_write_json(out / "galerkin.json", payload)]


def _run_kernel_g(args, out: Path):
    val = pde.kernel_G_from_g(
        float(args["s"]), float(args.get("x", 0.0)), float(args["t_end"]),
        float(args.get("y", 0.0)), float(args.get("beta", 1.0)), float(args["alpha"]),
        grids=pde.PdeGrids(x_max=float(args.get("x_max", 8.0)),
                           dx=float(args.get("dx", 1.0 / 128.0)),
                           cfl_pot=float(args.get("cfl", 0.02))))
    payload = {k: args[k] for k in args if k != "seed"}
    payload["value"] = val
    return [_write_json(out / "kernel.json", payload)]


# -- stochastic operations ----------------------------------------------------

def _run_mass(args, out: Path):
    p = _params_from(args, default_family="PowClamp")
    est = mc.estimate_total_mass(float(args["s"]), float(args["t_end"]),
                                 float(args.get("x", 0.0)), p,
                                 int(args.get("n", 100000)),
                                 float(args.get("step", 0.1)), int(args["seed"]))
    return [_write_json(out / "mass.json", est.to_json_dict(
        s=args["s"], t=args["t_end"], x=args.get("x", 0.0), seed=args["seed"],
        alpha=p.alpha, beta=p.beta))]


def _run_gtilde(args, out: Path):
    p = _params_from(args, default_family="PowClamp")
    est = mc.estimate_gtilde(float(args["s"]), float(args.get("x", 0.0)),
                             float(args["t_end"]), float(args.get("y", 0.0)), p,
                             int(args.get("n", 100000)),
                             float(args.get("step", 0.04)), int(args["seed"]))
    return [_write_json(out / "gtilde.json", est.to_json_dict(
        s=args["s"], t=args["t_end"], x=args.get("x", 0.0), y=args.get("y", 0.0),
        seed=args["seed"], alpha=p.alpha, beta=p.beta))]


def _parse_list(text, cast=float):
    if isinstance(text, (int, float)):
        return [cast(text)]
    return [cast(v) for v in str(text).split(",") if v.strip()]


def _run_alpha2(args, out: Path):
    rep = mc.alpha2_exponent_fit(float(args.get("beta", 1.0)),
                                 _parse_list(args.get("s_list", "2,4,8,16")),
                                 float(args.get("t_end", 512.0)),
                                 int(args.get("n", 20000)),
                                 float(args.get("step", 0.1)), int(args["seed"]))
    rep["beta"] = float(args.get("beta", 1.0))
    return [_write_json(out / "alpha2_fit.json", rep)]


def _run_simulate(args, out: Path):
    p = _params_from(args)
    consts = None
    if p.rate_family is not RateFamily.HOMOGENEOUS:
        lam0 = spectral.solve_spectrum(p.alpha, 1, accuracy=1e-7).eigenvalues[0]
        consts = derived_constants(p, lam0)
    snaps = _parse_list(args.get("snapshots", args["t_end"]))
    pop, stats = sim.run_continuous(p, float(args["t_end"]), int(args["seed"]),
                                    snapshot_times=snaps,
                                    cap=int(args.get("cap", sim.DEFAULT_CAP)),
                                    consts=consts)
    snap_csv = out / "snapshots.csv"
    stats_csv = out / "stats.csv"
    manifest = out / "run.json"
    pop.export_snapshots_csv(snap_csv)
    sim.export_stats_csv(stats_csv, [(0, stats)])
    pop.export_manifest_json(manifest, p)
    return [str(snap_csv), str(stats_csv), str(manifest)]


def _run_couple(args, out: Path):
    alphas = _parse_list(args.get("alphas", "0.5,1,2,4"))
    snaps = _parse_list(args.get("snapshots", args["t_end"]))
    runs = sim.run_coupled(alphas, float(args["t_end"]), int(args["seed"]),
                           snapshot_times=snaps,
                           cap=int(args.get("cap", sim.DEFAULT_CAP)),
                           include_homogeneous=bool(args.get("homogeneous", 0)))
    files = []
    sizes = {}
    for key, (pop, _) in runs.items():
        csv = out / f"snapshots_alpha_{key.replace('.', 'p')}.csv"
        pop.export_snapshots_csv(csv)
        files.append(str(csv))
        sizes[key] = pop.size
    files.append(_write_json(out / "coupling.json", {
        "alphas": alphas, "sizes": sizes, "chain": "verified",
        "seed": args["seed"],
    }))
    return files


def _run_discrete(args, out: Path):
    p = _params_from(args)
    pop, _ = sim.run_discrete(p, int(args.get("n_end", 100)), int(args["seed"]),
                              cap=int(args.get("cap", sim.DEFAULT_CAP)))
    csv = out / "lattice.csv"
    with open(csv, "w", newline="") as fh:
        fh.write("lineage_id,x,y\n")
        for i in range(pop.size):
            fh.write(f"{pop.lineage_hex(i)},{int(pop.x[i])},{int(pop.y[i])}\n")
    manifest = out / "run.json"
    pop.export_manifest_json(manifest, p)
    return [str(csv), str(manifest)]


def _functional_from(args, prefix=""):
    kind = args.get(prefix + "functional", "one")
    return sim.PathFunctional(kind, x0=float(args.get(prefix + "x0", 0.0)),
                              r0=float(args.get(prefix + "r0", 0.0)))


def _run_mto1(args, out: Path):
    p = _params_from(args)
    rep = sim.many_to_one_check(p, float(args["t_end"]), _functional_from(args),
                                int(args.get("n_sim", 2000)),
                                int(args.get("n_mc", 100000)), int(args["seed"]))
    return [_write_json(out / "many_to_one.json", rep)]


def _run_mto2(args, out: Path):
    p = _params_from(args)
    rep = sim.many_to_two_check(p, float(args["t_end"]), _functional_from(args, "f_"),
                                _functional_from(args, "g_"),
                                int(args.get("n_sim", 4000)),
                                int(args.get("n_mc", 50000)), int(args["seed"]))
    return [_write_json(out / "many_to_two.json", rep)]


def _run_porism(args, out: Path):
    p = _params_from(args)
    consts = None
    if p.rate_family is not RateFamily.HOMOGENEOUS:
        lam0 = spectral.solve_spectrum(p.alpha, 1, accuracy=1e-7).eigenvalues[0]
        consts = derived_constants(p, lam0)
    rep = sim.porism_probe(p, _parse_list(args.get("t_list", "8,12,16")),
                           int(args.get("replicates", 200)), int(args["seed"]),
                           consts=consts, eps=float(args.get("eps", 0.25)))
    rep["rows"] = {repr(k): v for k, v in rep["rows"].items()}
    return [_write_json(out / "porism.json", rep)]


REGISTRY = {
    "spectrum": Operation(
        "spectrum", "line-operator eigenpairs",
        {"alpha": _positive, "n_max": _count, "accuracy": _positive, "q": _positive},
        _run_spectrum),
    "weyl": Operation(
        "weyl", "eigenvalue growth law",
        {"alpha": _positive, "n_max": _count, "accuracy": _positive}, _run_weyl),
    "pde": Operation(
        "pde", "killed-diffusion fundamental solution",
        {"xi": _any, "t_end": _positive, "rho": _positive, "alpha": _positive,
         "x_max": _positive, "dx": _positive, "cfl": _positive}, _run_pde),
    "barriers": Operation(
        "barriers", "sandwich coefficient pair",
        {"t_end": _positive, "eps1": _positive, "eps2": _positive,
         "alpha": _positive, "n_grid": _count}, _run_barriers),
    "galerkin": Operation(
        "galerkin", "eigenbasis gap and mixing matrices",
        {"alpha": _positive, "n_modes": _count, "accuracy": _positive}, _run_galerkin),
    "kernel-g": Operation(
        "kernel-g", "weighted kernel via rescaled fundamental solution",
        {"s": _positive, "x": _any, "t_end": _positive, "y": _any,
         "beta": _positive, "alpha": _positive, "x_max": _positive,
         "dx": _positive, "cfl": _positive}, _run_kernel_g),
    "mass": Operation(
        "mass", "weighted-path total mass",
        {"s": _positive, "t_end": _positive, "x": _any, "alpha": _positive,
         "beta": _nonneg, "family": _any, "n": _count, "step": _positive,
         "seed": _any}, _run_mass, stochastic=True),
    "gtilde": Operation(
        "gtilde", "bridge-conditioned weighted kernel",
        {"s": _positive, "x": _any, "t_end": _positive, "y": _any,
         "alpha": _positive, "beta": _nonneg, "family": _any, "n": _count,
         "step": _positive, "seed": _any}, _run_gtilde, stochastic=True),
    "alpha2": Operation(
        "alpha2", "quadratic-angle decay exponent",
        {"beta": _positive, "s_list": _any, "t_end": _positive, "n": _count,
         "step": _positive, "seed": _any}, _run_alpha2, stochastic=True),
    "simulate": Operation(
        "simulate", "continuous branching diffusion",
        {"alpha": _positive, "beta": _positive, "family": _any,
         "t_end": _positive, "snapshots": _any, "cap": _count, "seed": _any},
        _run_simulate, stochastic=True),
    "couple": Operation(
        "couple", "nested runs across the angular exponent",
        {"alphas": _any, "t_end": _positive, "snapshots": _any, "cap": _count,
         "homogeneous": _any, "seed": _any}, _run_couple, stochastic=True),
    "discrete": Operation(
        "discrete", "lattice generation model",
        {"alpha": _positive, "beta": _positive, "family": _any, "n_end": _count,
         "cap": _count, "seed": _any}, _run_discrete, stochastic=True),
    "mto1": Operation(
        "mto1", "single-spine moment identity",
        {"alpha": _positive, "beta": _positive, "family": _any, "t_end": _positive,
         "functional": _any, "x0": _any, "r0": _any, "n_sim": _count,
         "n_mc": _count, "seed": _any}, _run_mto1, stochastic=True),
    "mto2": Operation(
        "mto2", "two-spine moment identity",
        {"alpha": _positive, "beta": _positive, "family": _any, "t_end": _positive,
         "f_functional": _any, "f_x0": _any, "f_r0": _any,
         "g_functional": _any, "g_x0": _any, "g_r0": _any,
         "n_sim": _count, "n_mc": _count, "seed": _any}, _run_mto2, stochastic=True),
    "porism": Operation(
        "porism", "extremal-particle localization probe",
        {"alpha": _positive, "beta": _positive, "family": _any, "t_list": _any,
         "replicates": _count, "eps": _positive, "cap": _count, "seed": _any},
        _run_porism, stochastic=True),
}
