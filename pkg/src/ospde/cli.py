"""Command line harness: ``ospde run`` and ``ospde sweep``.

Exit status: 0 when every requested check passes, 1 when a check fails or a
solve breaks down, 2 on configuration or contraction errors.
"""
import argparse
import copy
import sys
from pathlib import Path

import numpy as np

from . import config as cfg
from . import io, kernels
from .coefficients import COEFFICIENTS, AssumptionError, ContractionError, ObstacleSpec
from .linear_solver import StepRejected, solve
from .noise import sample_path
from .obstacle_solver import (
    InnerSolveError, PicardDivergence, contraction_gate, skorokhod_gap, solve_obstacle,
)
from .verify import (
    CHECKS, CheckReport, energy_norm, check_apriori_estimate, check_comparison, check_ito_identity,
    check_kappa_estimate, check_weak_form, data_norm, ito_ledger, make_test_function,
    parallel_map, weak_form_refinement,
)

SWEEP_PARAMS = ("dt", "n_max", "J", "cells")


def _solve_seed(spec, opts, seed, phi):
    path = sample_path(seed, spec.J, spec.dt, spec.steps)
    rec = {"seed": seed, "path": path}
    if spec.obstacle is not None:
        sol = solve_obstacle(
            spec, path, n_schedule=opts["n_schedule"], tol_picard=opts["tol_picard"],
            max_picard=opts["max_picard"], inner_max=opts["inner_max"], inner_tol=opts["inner_tol"],
            force=True,
        )
        rec.update(traj=sol.trajectory, measure=sol.measure, solution=sol)
        rec["skorokhod_gap"] = skorokhod_gap(sol)
        rec["total_mass"] = sol.measure.total_mass
        rec["max_violation"] = sol.history[-1]["max_violation"]
        rec["history"] = sol.history
    else:
        rec.update(traj=solve(spec, path), measure=None, solution=None)
        rec.update(skorokhod_gap=0.0, total_mass=0.0, max_violation=0.0, history=[])
    led = ito_ledger(rec["traj"], spec, path, rec["measure"], phi)
    rec["ledger"] = led
    rec["ito_residual"] = float(led["residual"])
    rhs = float(np.sum(spec.xi**2) * spec.grid.cell_volume) + data_norm(spec, spec.coefficients, path)
    lhs = energy_norm(spec.op, rec["traj"].values, spec.dt)
    rec["estimate_ratio"] = 0.0 if lhs == 0 and rhs == 0 else lhs / rhs if rhs > 0 else float("inf")
    return rec


AGGREGATES = ("skorokhod_gap", "total_mass", "max_violation", "ito_residual", "estimate_ratio")


def _aggregate(records):
    return {k: float(np.mean([r[k] for r in records])) for k in AGGREGATES}


def _comparison_partner(spec, shifts):
    c = spec.coefficients
    if shifts.get("f"):
        c = c.with_(f=c.f.shifted(shifts["f"]))
    if shifts.get("l"):
        c = c.with_(l=c.l.shifted(shifts["l"]))
    obs = spec.obstacle
    dS = shifts.get("S", 0.0)
    if obs is not None and dS:
        if obs.mode == "direct":
            obs = ObstacleSpec("direct", values=np.asarray(obs.values, dtype=float) + dS)
        else:
            obs = ObstacleSpec("driven", coefficients=obs.coefficients, S0=np.asarray(obs.S0) + dS,
                               offset=obs.offset)
    return spec.with_(coefficients=c, xi=spec.xi + shifts.get("xi", 0.0), obstacle=obs)


def _skorokhod_report(records, slack=0.1):
    worst = 0.0
    trend = []
    for r in records:
        gaps = [h["skorokhod_gap"] for h in r["history"]]
        trend.append(gaps)
        for a, b in zip(gaps, gaps[1:]):
            worst = max(worst, b - (1 + slack) * a)
    return CheckReport(
        name="skorokhod", passed=bool(worst <= 1e-12), margin=worst, tolerance=1e-12,
        trend=np.mean(trend, axis=0).tolist(), paths=len(records), seeds=[r["seed"] for r in records],
        details={"n_schedule": [h["n"] for h in records[0]["history"]], "slack": slack},
    )


def _weak_form_report(spec, records, opts, copts):
    phi = make_test_function(spec.grid, T=spec.T)
    reps = [check_weak_form(r["traj"], spec, r["path"], phi, r["measure"]) for r in records]
    ablation = [rep.details["residual_without_measure"] > rep.margin for rep in reps]
    passed = all(rep.passed for rep in reps)
    if spec.obstacle is not None:
        passed = passed and all(ablation)
    trend = weak_form_refinement(spec, records[0]["seed"], copts["levels"], (opts["n_schedule"][-1],), phi)
    return CheckReport(
        name="weak_form", passed=bool(passed), margin=max(rep.margin for rep in reps),
        tolerance=min(rep.tolerance for rep in reps), trend=trend, paths=len(reps),
        seeds=[r["seed"] for r in records],
        details={
            "residuals": [rep.margin for rep in reps],
            "ablation_worse": int(sum(ablation)) if spec.obstacle is not None else None,
        },
    )


def run_checks(spec, doc, records, threads=1):
    opts = cfg.solver_options(doc)
    copts = cfg.check_options(doc)
    seeds = [r["seed"] for r in records]
    mc_seeds = range(seeds[0], seeds[0] + copts["paths"])
    reports = []
    for name in cfg.check_names(doc):
        if name == "skorokhod":
            rep = _skorokhod_report(records)
        elif name == "ito_identity":
            rep = check_ito_identity(spec, seeds, copts["phi"], copts["levels"], opts["n_schedule"], threads=threads)
        elif name == "weak_form":
            rep = _weak_form_report(spec, records, opts, copts)
        elif name == "apriori_estimate":
            rep = check_apriori_estimate(spec, mc_seeds, "solution", copts["stability"], threads)
        elif name == "driver_estimate":
            rep = check_apriori_estimate(spec, mc_seeds, "driver", copts["stability"], threads)
        elif name == "kappa_estimate":
            rep = check_kappa_estimate(spec, mc_seeds, (opts["n_schedule"][-1],), copts["stability"], threads)
        elif name == "comparison":
            partner = _comparison_partner(spec, copts["comparison"] or {"f": 1.0})
            mode = "obstacle" if spec.obstacle is not None else "linear"
            rep = check_comparison(spec, partner, seeds, mode, opts["n_schedule"], threads)
        else:
            raise cfg.ConfigError("checks", f"unknown check {name!r}")
        reports.append(rep)
    return reports


def _precheck(spec, doc):
    names = cfg.check_names(doc)
    obs = spec.obstacle
    if "skorokhod" in names and obs is None:
        raise cfg.ConfigError("checks", "skorokhod check needs an obstacle")
    if "driver_estimate" in names and (obs is None or obs.mode != "driven"):
        raise cfg.ConfigError("checks", "driver_estimate needs a driven obstacle")
    if "ito_identity" in names and spec.J > 0 and len(cfg.seeds(doc)) < 10:
        raise cfg.ConfigError("checks", "ito_identity needs at least 10 seeds for a refinement trend")


def _gate(spec, opts, force, err):
    try:
        return contraction_gate(spec, opts["safety"])
    except ContractionError as e:
        if not force:
            raise
        print(f"WARNING: --force given, running anyway: {e}", file=err)
        return None


def solve_all(doc, force=False, threads=1, err=sys.stderr):
    """Build, gate and solve every configured seed; returns (spec, records, margin)."""
    spec = cfg.build_spec(doc)
    opts = cfg.solver_options(doc)
    _precheck(spec, doc)
    margin = _gate(spec, opts, force, err)
    phi = cfg.check_options(doc)["phi"]
    records = parallel_map(lambda s: _solve_seed(spec, opts, s, phi), cfg.seeds(doc), threads)
    return spec, records, margin


def execute(doc, out, force=False, threads=1, err=sys.stderr):
    """Full run; returns (exit status, summary dict)."""
    spec, records, margin = solve_all(doc, force, threads, err)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    keep = doc.get("output", {}).get("trajectories", len(records))
    for r in records[:keep]:
        s = r["seed"]
        written.append(io.write_trajectory(out / f"trajectory_seed{s}.csv", r["traj"]))
        if r["measure"] is not None:
            written.append(io.write_measure(out / f"measure_seed{s}.csv", r["measure"], spec.grid))
        cols = {k: v for k, v in r["ledger"].items() if isinstance(v, np.ndarray)}
        written.append(io.write_ledger(out / f"ledger_seed{s}.csv", cols))

    reports = run_checks(spec, doc, records, threads)
    for rep in reports:
        written.append(io.write_json(out / f"check_{rep.name}.json", rep.to_dict()))
    written.append(io.write_csv(
        out / "checks.csv", ["check", "verdict", "margin", "tolerance"],
        [[r.name, r.verdict, float(r.margin), float(r.tolerance)] for r in reports],
    ))
    summary = {
        "name": doc.get("name", ""),
        "config_hash": io.config_hash(doc),
        "contraction_margin": margin,
        "seeds": [r["seed"] for r in records],
        "aggregate": _aggregate(records),
        "per_seed": [{k: r[k] for k in ("seed", *AGGREGATES, "history")} for r in records],
        "checks": {r.name: r.verdict for r in reports},
    }
    written.append(io.write_json(out / "summary.json", summary))
    _manifest(out, doc, written)
    status = 0 if all(r.passed for r in reports) else 1
    return status, summary


def _manifest(out, doc, written):
    files = [{"path": str(Path(p).relative_to(out)), "sha256": io.sha256(p)} for p in written]
    io.write_json(out / "manifest.json", {
        "config_hash": io.config_hash(doc), "kernel_backend": kernels.BACKEND, "files": files,
    })


def _with_param(doc, param, value):
    d = copy.deepcopy(doc)
    if param == "dt":
        d["time"]["dt"] = float(value)
    elif param == "n_max":
        sched = d.setdefault("solver", {}).get("n_schedule", cfg.SOLVER_DEFAULTS["n_schedule"])
        d["solver"]["n_schedule"] = [n for n in sched if n < value] + [float(value)]
    elif param == "J":
        d.setdefault("noise", {})["J"] = int(value)
    elif param == "cells":
        d["grid"]["cells"] = int(value)
    else:
        raise cfg.ConfigError("sweep", f"parameter must be one of {SWEEP_PARAMS}, got {param!r}")
    return cfg.validate(d)


def sweep(doc, param, values, out, force=False, threads=1, err=sys.stderr):
    """One row of aggregate diagnostics per value on the configured seeds."""
    rows = []
    for v in values:
        spec, records, _ = solve_all(_with_param(doc, param, v), force, threads, err)
        agg = _aggregate(records)
        rows.append([v, *(agg[k] for k in AGGREGATES)])
    out = Path(out)
    path = io.write_csv(out / f"sweep_{param}.csv", [param, *AGGREGATES], rows)
    _manifest(out, doc, [path])
    return 0, rows


def _load(arg):
    p = Path(arg)
    if p.exists():
        return cfg.load(p)
    return cfg.demo(arg)


def _number(text):
    v = float(text)
    return int(v) if v.is_integer() and "." not in text and "e" not in text.lower() else v


def build_parser():
    ap = argparse.ArgumentParser(prog="ospde", description="Penalized obstacle-SPDE simulator")
    ap.add_argument("--list-checks", action="store_true", help="list available checks and exit")
    ap.add_argument("--list-coefficients", action="store_true", help="list built-in coefficients and exit")
    sub = ap.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", required=True, help="config JSON path or bundled config name")
        p.add_argument("--out", default=None, help="output directory (overrides output.dir)")
        p.add_argument("--force", action="store_true", help="run even if the contraction property fails")
        p.add_argument("--threads", type=int, default=1)

    common(sub.add_parser("run", help="solve and run the configured checks"))
    sw = sub.add_parser("sweep", help="rerun over values of one parameter")
    common(sw)
    sw.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    sw.add_argument("--values", required=True, nargs="+", type=_number)
    return ap


def main(argv=None, out=sys.stdout, err=sys.stderr):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.list_checks:
        for name, desc in CHECKS.items():
            print(f"{name:18s} {desc}", file=out)
        return 0
    if args.list_coefficients:
        for name in COEFFICIENTS:
            print(name, file=out)
        return 0
    if args.command is None:
        ap.print_usage(err)
        return 2
    try:
        doc = _load(args.config)
        dest = args.out or doc.get("output", {}).get("dir") or "ospde-out"
        if args.command == "run":
            status, summary = execute(doc, dest, args.force, args.threads, err)
            agg = summary["aggregate"]
            print(f"run {summary['name'] or args.config}: skorokhod gap {agg['skorokhod_gap']:.3g}, "
                  f"total mass {agg['total_mass']:.6g}, ito residual {agg['ito_residual']:.3g}", file=out)
            for name, verdict in summary["checks"].items():
                print(f"  {name}: {verdict}", file=out)
        else:
            status, _ = sweep(doc, args.param, args.values, dest, args.force, args.threads, err)
            print(f"sweep over {args.param} written to {dest}", file=out)
        return status
    except cfg.ConfigError as e:
        print(f"config error: {e}", file=err)
        return 2
    except (ContractionError, AssumptionError) as e:
        print(f"error: {e}", file=err)
        return 2
    except (PicardDivergence, StepRejected, InnerSolveError) as e:
        print(f"solve failed: {e}", file=err)
        return 1


if __name__ == "__main__":
    sys.exit(main())
