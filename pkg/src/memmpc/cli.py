"""Command line entry point: ``memmpc run | sweep | audit-hull``."""

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .config import Problem, SCENARIOS, default_steps, load_scenario, replace
from .controller import run_closed_loop, suboptimality, write_rows
from .exceptions import ConfigError, ControllerFault
from .hull import (ConvexHullObject, brute_force_lower_hull, brute_force_outer_hull,
                   live_facet_sets, qhull_lower_hull)

EXIT_CONFIG = 2
EXIT_FAULT = 3
EXIT_AUDIT = 4

SUBOPT_FIELDS = ["k", "J_star", "subopt_temporal", "subopt_spatial", "converged"]
SWEEP_FIELDS = ["i_T", "learning", "repeats", "mean_step_time", "mean_accumulated_cost"]


def _latency(text):
    if text is None:
        return None
    lo, _, hi = str(text).partition(":")
    lo = int(lo)
    hi = int(hi) if hi else lo
    return lo, hi


def _overrides(args):
    ov = {
        "steps": args.steps,
        "iterations": args.it,
        "runs": getattr(args, "runs", None),
        "steps_per_run": getattr(args, "steps_per_run", None),
        "periods": getattr(args, "periods", None),
        "learning.threshold": args.threshold,
        "learning.learner": "off" if args.no_learning else args.learner,
        "learning.latency_seed": args.seed,
    }
    lat = _latency(args.async_latency)
    if lat is not None:
        ov["learning.latency_min"], ov["learning.latency_max"] = lat
    return ov


def _scenario(args):
    name = args.config or args.scenario_opt or args.scenario
    if name is None:
        raise ConfigError("a scenario name or config path is required")
    return load_scenario(name, _overrides(args))


def _steps_for(scn, args):
    if args.steps is not None:
        return args.steps
    return default_steps(scn)


def cmd_run(args):
    scn = _scenario(args)
    steps = _steps_for(scn, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = Problem(scn)
    rec = run_closed_loop(scn, steps, problem)
    rec.write_trace(out / "trace.csv")
    rec.write_summary(out / "summary.csv")
    if args.oracle:
        rows = suboptimality(problem, rec, every=args.oracle_every)
        write_rows(out / "suboptimality.csv", rows, SUBOPT_FIELDS)
    mem = rec.controller.memory
    if mem is not None and mem.kind == "hull" and mem.learner.hull is not None:
        with open(out / "hull.txt", "w") as fh:
            mem.learner.hull.dump(fh)
    elif mem is not None and mem.kind == "lipschitz":
        with open(out / "cones.txt", "w") as fh:
            mem.data.dump(fh)
    meta = dict(scenario=scn.name, steps=steps, wall_time=rec.wall_time, stats=rec.stats,
                config=rec.config)
    with open(out / "run.json", "w") as fh:
        json.dump(meta, fh, indent=2, default=str)
    acc = sum(r["stage_cost"] for r in rec.rows)
    print(f"{scn.name}: {steps} steps, accumulated cost {acc:.6g}, "
          f"stats {rec.stats}, wrote {out}")
    return 0


def sweep_iterations(scn, it_values, repeats, seed=0, steps=None):
    """Mean step time and accumulated cost for each i_T, learning on and off."""
    rng = np.random.default_rng(seed)
    problem = Problem(scn)
    x0s = [_draw_initial(problem, rng) for _ in range(repeats)]
    steps = steps or scn.steps
    learner = scn.learning.learner if scn.learning.learner != "off" else "hull"
    rows = []
    for it in it_values:
        for mode in (learner, "off"):
            times, costs = [], []
            for x0 in x0s:
                s = replace(scn, iterations=int(it), x0=tuple(float(v) for v in x0),
                            **{"learning.learner": mode})
                rec = run_closed_loop(s, steps)
                times.append(rec.wall_time / steps)
                costs.append(sum(r["stage_cost"] for r in rec.rows))
            rows.append(dict(i_T=int(it), learning=("on" if mode != "off" else "off"),
                             repeats=repeats, mean_step_time=float(np.mean(times)),
                             mean_accumulated_cost=float(np.mean(costs))))
    return rows


def _draw_initial(problem, rng):
    """Uniform draw from the bounding box of the state polytope (rejection on the polytope)."""
    c = problem.scenario.cost
    if not c.state_C:
        return problem.x0 + rng.normal(scale=0.1, size=problem.n)
    C, d = np.array(c.state_C, float), np.array(c.state_d, float)
    V = problem.feasible_vertices()
    lo, hi = V.min(axis=0), V.max(axis=0)
    for _ in range(10_000):
        x = rng.uniform(lo, hi)
        if np.all(C @ x < d):
            return x
    raise ConfigError("could not draw an initial state inside the state constraints")


def cmd_sweep(args):
    scn = _scenario(args)
    lo, _, hi = args.it_range.partition(":")
    its = list(range(int(lo), int(hi or lo) + 1))
    if not its:
        raise ConfigError("empty i_T range")
    rows = sweep_iterations(scn, its, args.repeats, args.seed, args.steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "sweep.csv", rows, SWEEP_FIELDS)
    for r in rows:
        print(f"i_T={r['i_T']:2d} learning={r['learning']:3s} "
              f"time/step={r['mean_step_time'] * 1e3:.3f} ms cost={r['mean_accumulated_cost']:.6g}")
    return 0


def audit_dump(hull, oracle="auto"):
    """Invariant violations of a hull, plus a facet comparison with a batch reference."""
    problems = list(hull.audit())
    if oracle == "off":
        return problems
    low, out = live_facet_sets(hull)
    Z = hull.D_xJ
    small = math.comb(hull.count, hull.n + 1) <= 2_000_000
    if oracle == "brute" or (oracle == "auto" and small):
        ref_low = brute_force_lower_hull(Z)
        ref_out = brute_force_outer_hull(hull.D_x)
    else:
        ref_low = qhull_lower_hull(Z)
        ref_out = None
        if hull.n > 1:
            from scipy.spatial import ConvexHull
            ref_out = {tuple(sorted(map(int, s))) for s in ConvexHull(hull.D_x, qhull_options="Qt").simplices}
    if low != ref_low:
        problems.append(f"lower hull differs from the batch reference "
                        f"({len(low - ref_low)} extra, {len(ref_low - low)} missing)")
    if ref_out is not None and out != ref_out:
        problems.append(f"state hull differs from the batch reference "
                        f"({len(out - ref_out)} extra, {len(ref_out - out)} missing)")
    return problems


def cmd_audit(args):
    try:
        with open(args.dump) as fh:
            hull = ConvexHullObject.load(fh)
    except (OSError, ValueError, IndexError) as exc:
        print(f"cannot read hull dump {args.dump}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    problems = audit_dump(hull, args.oracle)
    if problems:
        for p in problems:
            print(f"FAIL {p}")
        return EXIT_AUDIT
    print(f"ok: {hull.count} points, {len(hull.live_facets('xJ'))} lower facets, "
          f"{len(hull.live_facets('x'))} state-hull facets")
    return 0


def _common(p):
    p.add_argument("scenario", nargs="?", help=f"one of {', '.join(SCENARIOS)} or a .toml path")
    p.add_argument("--scenario", dest="scenario_opt")
    p.add_argument("--config", help="TOML scenario file")
    p.add_argument("--steps", type=int)
    p.add_argument("--it", type=int, help="optimizer iterations per step")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-learning", action="store_true")
    p.add_argument("--learner", choices=["hull", "lipschitz"])
    p.add_argument("--async-latency", help="learner latency in control periods, N or MIN:MAX")
    p.add_argument("--threshold", type=float, help="significance threshold")
    p.add_argument("--out", default="out")


def build_parser():
    ap = argparse.ArgumentParser(prog="memmpc", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)
    run = sub.add_parser("run", help="simulate one scenario")
    _common(run)
    run.add_argument("--oracle", action="store_true", help="also write suboptimality.csv")
    run.add_argument("--oracle-every", type=int, default=1)
    run.add_argument("--runs", type=int)
    run.add_argument("--steps-per-run", type=int)
    run.add_argument("--periods", type=int)
    run.set_defaults(func=cmd_run)
    sw = sub.add_parser("sweep", help="accumulated cost and step time versus i_T")
    _common(sw)
    sw.add_argument("--it-range", default="1:10")
    sw.add_argument("--repeats", type=int, default=10)
    sw.set_defaults(func=cmd_sweep)
    au = sub.add_parser("audit-hull", help="check a hull dump")
    au.add_argument("dump")
    au.add_argument("--oracle", choices=["auto", "brute", "qhull", "off"], default="auto")
    au.set_defaults(func=cmd_audit)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ControllerFault as exc:
        print(f"controller fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
