"""Experiment runner: one config file in, one artifact directory out.

Every subcommand reads a schema-validated JSON config, writes its outputs
under --out with fixed names, and always leaves a manifest.json recording
the config hash, effective seed, library versions, wall time, and status
(also on failure paths, with the error mirrored in error.json).  All
floating-point output goes through repr(), so identical (config, seed)
runs produce byte-identical files; wall-time fields in the manifest are
the only exception.

Replica Monte Carlo honors --workers by chunking the replica index range
across processes; rows are merged in index order, so the output does not
depend on the worker count.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, ExperimentConfig
from .diagnostics import continuity_experiment, estimate_report
from .geometry import GeometryError, build_oblique_matrix, validate_oblique_field
from .ldp import (ldp_compare, mc_rows, minimize_rate, summarize_rows,
                  weighted_trend)
from .solvers import (ReplicaPlan, SolverError, resolve_time_grid,
                      sample_brownian, solve_penalized_skeleton,
                      solve_penalized_spde, solve_skeleton)

SUBCOMMANDS = ("validate-domain", "skeleton", "spde", "penalty-sweep",
               "cauchy", "continuity", "rate", "mc", "ldp-compare", "all")

SWEEP_HEADER = ("n_pen,sup_pen_H,n_l1_integral,n2_h2_integral,"
                "sup_H4,sup_V2,int_H2,cauchy_to_next")
CAUCHY_HEADER = "n_pen,n_next,cauchy_H,cauchy_V,cauchy_total"
CONTINUITY_HEADER = "label,cm_gap_sq,gap_H,gap_V,rho_sq,converged"


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, lines) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(header + "\n")
        for line in lines:
            fh.write(line + "\n")


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


# -- subcommand bodies (each returns the list of files it wrote) -------


def _cmd_validate_domain(cfg: ExperimentConfig, args, out: str) -> list:
    dom = cfg.build_domain()
    gamma = cfg.build_gamma(dom)
    val = cfg.validation
    seed = args.seed if args.seed is not None else val["seed"]
    tol = cfg.tolerances
    report = validate_oblique_field(dom, gamma, samples=val["samples"],
                                    seed=seed, rho_min=tol["rho_min"],
                                    delta_min=tol["delta_min"])
    payload = report.to_dict()
    payload["passed"] = report.passed
    if report.passed:
        matrix = build_oblique_matrix(dom, gamma)
        payload["theta_hat"] = float(matrix.theta_hat)
    _write_json(os.path.join(out, "report.json"), payload)
    _say(args, f"validate-domain: rho_hat={payload['rho_hat']!r} "
               f"delta_hat={payload['delta_hat']!r} passed={report.passed}")
    if not report.passed:
        raise GeometryError(
            f"oblique field validation failed: {payload['violations']}")
    return ["report.json"]


def _solver_pieces(cfg: ExperimentConfig):
    dom = cfg.build_domain()
    return cfg.build_coefficients(), dom, cfg.build_gamma(dom), cfg.build_u0()


def _cmd_skeleton(cfg: ExperimentConfig, args, out: str) -> list:
    coeffs, dom, gamma, u0 = _solver_pieces(cfg)
    control = cfg.build_control()
    ctl_K = control.K if control is not None else 1
    steps, dt = resolve_time_grid(cfg.T, cfg.dt, cfg.n_event, ctl_K)
    traj = solve_penalized_skeleton(coeffs, dom, gamma, u0, control,
                                    n_pen=cfg.n_event, dt=dt, steps=steps,
                                    stride=cfg.snapshot_stride)
    traj.save(os.path.join(out, "trajectory"))
    _write_json(os.path.join(out, "report.json"),
                estimate_report(traj).to_dict())
    _say(args, f"skeleton: {steps} steps at dt={dt!r}, n_pen={cfg.n_event!r}")
    return ["report.json", "trajectory"]


def _cmd_spde(cfg: ExperimentConfig, args, out: str) -> list:
    coeffs, dom, gamma, u0 = _solver_pieces(cfg)
    control = cfg.build_control()
    ctl_K = control.K if control is not None else 1
    steps, dt = resolve_time_grid(cfg.T, cfg.dt, cfg.n_event, ctl_K)
    seed = args.seed if args.seed is not None else cfg.base_seed
    eps = cfg.epsilons[0]
    noise = sample_brownian(coeffs.m, steps, dt,
                            ReplicaPlan(base_seed=seed, count=1).seed_for(0))
    traj = solve_penalized_spde(coeffs, dom, gamma, u0, n_pen=cfg.n_event,
                                dt=dt, steps=steps, epsilon=eps, noise=noise,
                                control=control, stride=cfg.snapshot_stride)
    traj.save(os.path.join(out, "trajectory"))
    _write_json(os.path.join(out, "report.json"),
                estimate_report(traj).to_dict())
    _say(args, f"spde: epsilon={eps!r}, {steps} steps, seed={seed}")
    return ["report.json", "trajectory"]


def _run_sweep(cfg: ExperimentConfig):
    coeffs, dom, gamma, u0 = _solver_pieces(cfg)
    control = cfg.build_control()
    if control is None:
        from .controls import zero_control
        control = zero_control(cfg.T, coeffs.m)
    sw = cfg.sweep
    return solve_skeleton(coeffs, dom, gamma, u0, control, dt=cfg.dt,
                          T=cfg.T, n_start=sw["n_start"], factor=sw["factor"],
                          n_max=sw["n_max"], tol_cauchy=sw["tol_cauchy"],
                          stride=cfg.snapshot_stride)


def _sweep_lines(rows) -> list:
    return [f"{r.n_pen!r},{r.sup_pen_H!r},{r.n_times_l1_integral!r},"
            f"{r.n2_times_h2_integral!r},{r.sup_H4!r},{r.sup_V2!r},"
            f"{r.int_H2!r},{r.cauchy_to_next!r}" for r in rows]


def _emit_sweep(res, out: str) -> dict:
    _write_csv(os.path.join(out, "sweep.csv"), SWEEP_HEADER,
               _sweep_lines(res.rows))
    res.trajectory.save(os.path.join(out, "trajectory"))
    return {"converged": res.converged, "tol_cauchy": res.tol_cauchy,
            "final_cauchy": res.final_cauchy,
            "members": [r.n_pen for r in res.rows],
            **estimate_report(res.trajectory).to_dict()}


def _emit_cauchy(res, out: str) -> dict:
    lines = []
    for cur, nxt in zip(res.rows[:-1], res.rows[1:]):
        lines.append(f"{cur.n_pen!r},{nxt.n_pen!r},{cur.cauchy_H_to_next!r},"
                     f"{cur.cauchy_V_to_next!r},{cur.cauchy_to_next!r}")
    _write_csv(os.path.join(out, "cauchy.csv"), CAUCHY_HEADER, lines)
    return {"converged": res.converged, "tol_cauchy": res.tol_cauchy,
            "final_cauchy": res.final_cauchy,
            "members": [r.n_pen for r in res.rows]}


def _cmd_penalty_sweep(cfg: ExperimentConfig, args, out: str) -> list:
    res = _run_sweep(cfg)
    _write_json(os.path.join(out, "report.json"), _emit_sweep(res, out))
    _say(args, f"penalty-sweep: {len(res.rows)} members, "
               f"converged={res.converged}")
    return ["report.json", "sweep.csv", "trajectory"]


def _cmd_cauchy(cfg: ExperimentConfig, args, out: str) -> list:
    res = _run_sweep(cfg)
    _write_json(os.path.join(out, "report.json"), _emit_cauchy(res, out))
    _say(args, f"cauchy: final gap {res.final_cauchy!r} "
               f"(tol {res.tol_cauchy!r})")
    return ["cauchy.csv", "report.json"]


def _cmd_continuity(cfg: ExperimentConfig, args, out: str) -> list:
    coeffs, dom, gamma, u0 = _solver_pieces(cfg)
    family = cfg.build_control_family()
    if not family:
        raise ConfigError("continuity needs a 'control_family' section")
    limit = cfg.build_control()
    if limit is None:
        from .controls import zero_control
        limit = zero_control(cfg.T, coeffs.m, K=family[0][1].K)
    sw = cfg.sweep
    rows = continuity_experiment(coeffs, dom, gamma, u0, family, limit,
                                 dt=cfg.dt, T=cfg.T, n_start=sw["n_start"],
                                 factor=sw["factor"], n_max=sw["n_max"],
                                 tol_cauchy=sw["tol_cauchy"])
    lines = [f"{r.label},{r.cm_gap_sq!r},{r.gap_H!r},{r.gap_V!r},"
             f"{r.rho_sq!r},{int(r.converged)}" for r in rows]
    _write_csv(os.path.join(out, "continuity.csv"), CONTINUITY_HEADER, lines)
    _say(args, f"continuity: {len(rows)} family members")
    return ["continuity.csv"]


def _compute_rate(cfg: ExperimentConfig):
    coeffs, dom, gamma, u0 = _solver_pieces(cfg)
    event = cfg.build_event()
    if event is None:
        raise ConfigError("this subcommand needs an 'event' section")
    opts = cfg.rate_options
    res = minimize_rate(coeffs, dom, gamma, u0, event, T=cfg.T, K=opts["K"],
                        dt=cfg.dt, n_pen=cfg.n_event,
                        mu_schedule=tuple(opts["mu_schedule"]),
                        fd_step=opts["fd_step"], max_iters=opts["max_iters"],
                        stag_window=opts["stag_window"],
                        feas_tol=opts["feas_tol"], max_dim=opts["max_dim"])
    return event, res


def _cmd_rate(cfg: ExperimentConfig, args, out: str) -> list:
    event, res = _compute_rate(cfg)
    payload = res.to_dict()
    payload["event"] = event.describe()
    _write_json(os.path.join(out, "rate.json"), payload)
    _say(args, f"rate: I*={res.rate!r} feasible={res.feasible}")
    return ["rate.json"]


def _mc_chunk(payload):
    """Worker body: rebuild the model from the raw config and run a
    contiguous replica range.  Module-level so it pickles."""
    raw, seed, eps, start, stop = payload
    cfg = ExperimentConfig.from_dict(raw)
    coeffs, dom, gamma, u0 = _solver_pieces(cfg)
    event = cfg.build_event()
    steps, dt = resolve_time_grid(cfg.T, cfg.dt, cfg.n_event, 1)
    plan = ReplicaPlan(base_seed=seed, count=cfg.replica_count)
    return mc_rows(coeffs, dom, gamma, u0, event, eps, cfg.n_event, dt,
                   steps, plan, start, stop)


def _emit_mc(cfg: ExperimentConfig, args, out: str) -> dict:
    if cfg.build_event() is None:
        raise ConfigError("mc needs an 'event' section")
    seed = args.seed if args.seed is not None else cfg.base_seed
    eps = cfg.epsilons[0]
    count = cfg.replica_count
    workers = max(1, args.workers)
    if workers == 1:
        rows = _mc_chunk((cfg.raw, seed, eps, 0, count))
    else:
        bounds = [count * i // workers for i in range(workers + 1)]
        payloads = [(cfg.raw, seed, eps, lo, hi)
                    for lo, hi in zip(bounds[:-1], bounds[1:]) if lo < hi]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = [row for chunk in pool.map(_mc_chunk, payloads)
                    for row in chunk]
    res = summarize_rows(rows, count)
    from .ldp import ReplicaRow
    _write_csv(os.path.join(out, "mc.csv"), ReplicaRow.CSV_HEADER,
               [r.csv_line() for r in rows])
    _say(args, f"mc: p_hat={res.p_hat!r} +- {res.stderr!r} "
               f"({res.hits}/{count} hits)")
    return {"epsilon": eps, "seed": seed, **res.to_dict()}


def _cmd_mc(cfg: ExperimentConfig, args, out: str) -> list:
    fragment = _emit_mc(cfg, args, out)
    _write_json(os.path.join(out, "report.json"), fragment)
    return ["mc.csv", "report.json"]


def _emit_compare(cfg: ExperimentConfig, args, out: str) -> list:
    """Rate minimization plus the across-epsilon table; writes rate.json
    and comparison.csv, returns the file list."""
    coeffs, dom, gamma, u0 = _solver_pieces(cfg)
    event, rate = _compute_rate(cfg)
    payload = rate.to_dict()
    payload["event"] = event.describe()
    _write_json(os.path.join(out, "rate.json"), payload)
    seed = args.seed if args.seed is not None else cfg.base_seed
    plan = ReplicaPlan(base_seed=seed, count=cfg.replica_count)
    ldp1 = cfg.ldp1
    rows = ldp_compare(coeffs, dom, gamma, u0, event, rate,
                       epsilons=cfg.epsilons, plan=plan, T=cfg.T,
                       ldp1_delta_sq=ldp1["delta_sq"],
                       ldp1_replicas=ldp1["replicas"])
    from .ldp import CompareRow
    _write_csv(os.path.join(out, "comparison.csv"), CompareRow.CSV_HEADER,
               [r.csv_line() for r in rows])
    _say(args, "ldp-compare: " + " ".join(
        f"eps={r.epsilon!r}:{r.neg_eps_log_p!r}" for r in rows))
    return ["rate.json", "comparison.csv"]


def _cmd_ldp_compare(cfg: ExperimentConfig, args, out: str) -> list:
    return _emit_compare(cfg, args, out)


def _cmd_weighted(cfg: ExperimentConfig, args, out: str) -> list:
    coeffs, dom, gamma, u0 = _solver_pieces(cfg)
    control = cfg.build_control()
    if control is None:
        return []
    seed = args.seed if args.seed is not None else cfg.base_seed
    w = cfg.weighted
    plan = ReplicaPlan(base_seed=seed, count=w.get("replicas",
                                                   cfg.replica_count))
    rows = weighted_trend(coeffs, dom, gamma, u0, control,
                          epsilons=w.get("epsilons", cfg.epsilons),
                          plan=plan, lam=w["lam"], n_pen=cfg.n_event,
                          dt=cfg.dt, T=cfg.T)
    from .ldp import WeightedTrendRow
    _write_csv(os.path.join(out, "weighted.csv"), WeightedTrendRow.CSV_HEADER,
               [r.csv_line() for r in rows])
    _say(args, f"weighted: {len(rows)} noise levels")
    return ["weighted.csv"]


def _cmd_all(cfg: ExperimentConfig, args, out: str) -> list:
    """Every stage the config supports, sharing one report.json with a
    section per stage (and one penalty sweep feeding both CSV views)."""
    report = {}
    outputs = set(_cmd_validate_domain(cfg, args, out))
    with open(os.path.join(out, "report.json"), encoding="utf-8") as fh:
        report["validate_domain"] = json.load(fh)
    res = _run_sweep(cfg)
    report["penalty_sweep"] = _emit_sweep(res, out)
    report["cauchy"] = _emit_cauchy(res, out)
    outputs |= {"sweep.csv", "cauchy.csv", "trajectory"}
    if cfg.raw.get("control_family"):
        outputs |= set(_cmd_continuity(cfg, args, out))
    if cfg.raw.get("control"):
        outputs |= set(_cmd_weighted(cfg, args, out))
    if cfg.raw.get("event") is not None:
        report["mc"] = _emit_mc(cfg, args, out)
        outputs.add("mc.csv")
        if "rate" in cfg.raw:
            outputs |= set(_emit_compare(cfg, args, out))
    _write_json(os.path.join(out, "report.json"), report)
    outputs.add("report.json")
    return sorted(outputs)


_HANDLERS = {
    "validate-domain": _cmd_validate_domain,
    "skeleton": _cmd_skeleton,
    "spde": _cmd_spde,
    "penalty-sweep": _cmd_penalty_sweep,
    "cauchy": _cmd_cauchy,
    "continuity": _cmd_continuity,
    "rate": _cmd_rate,
    "mc": _cmd_mc,
    "ldp-compare": _cmd_ldp_compare,
    "all": _cmd_all,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rspde",
        description="Penalized reflected SPDE laboratory: run experiments "
                    "from a JSON config into an output directory.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's base seed")
        p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as err:
        return err.code if err.code is not None else 2

    out = args.out
    os.makedirs(out, exist_ok=True)
    started = time.time()
    manifest = {
        "subcommand": args.subcommand,
        "config_hash": None,
        "seed": args.seed,
        "versions": {"python": sys.version.split()[0],
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "rspde": __version__},
        "status": "ok",
        "outputs": [],
        "started_unix": started,
        "wall_time_seconds": None,
    }
    code = 0
    try:
        cfg = ExperimentConfig.from_file(args.config)
        manifest["config_hash"] = cfg.config_hash()
        if args.seed is None:
            manifest["seed"] = cfg.base_seed
        outputs = _HANDLERS[args.subcommand](cfg, args, out)
        manifest["outputs"] = sorted(set(outputs))
    except (ConfigError, GeometryError, SolverError, OSError, ValueError) as err:
        manifest["status"] = "error"
        manifest["error"] = f"{type(err).__name__}: {err}"
        _write_json(os.path.join(out, "error.json"),
                    {"error": type(err).__name__, "detail": str(err)})
        if not args.quiet:
            print(f"error: {err}", file=sys.stderr)
        code = 1
    finally:
        manifest["wall_time_seconds"] = time.time() - started
        _write_json(os.path.join(out, "manifest.json"), manifest)
    return code


if __name__ == "__main__":
    sys.exit(main())
