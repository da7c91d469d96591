"""Double integrator: suboptimality traces with learning on and off, and the i_T sweep.

Writes <out>/{on,off}_suboptimality.csv, <out>/{on,off}_trace.csv and <out>/sweep.csv.
"""

import argparse
from pathlib import Path

from memmpc.cli import SUBOPT_FIELDS, SWEEP_FIELDS, sweep_iterations
from memmpc.config import Problem, load_scenario, replace
from memmpc.controller import run_closed_loop, suboptimality, write_rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--oracle-every", type=int, default=1)
    ap.add_argument("--it-max", type=int, default=10)
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/double-integrator")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scn = load_scenario("double-integrator")
    for tag, learner in (("on", "hull"), ("off", "off")):
        s = replace(scn, **{"learning.learner": learner})
        pb = Problem(s)
        rec = run_closed_loop(s, args.steps, pb)
        rec.write_trace(out / f"{tag}_trace.csv")
        rows = suboptimality(pb, rec, every=args.oracle_every)
        write_rows(out / f"{tag}_suboptimality.csv", rows, SUBOPT_FIELDS)
        acc = sum(r["stage_cost"] for r in rec.rows)
        print(f"learning {tag}: accumulated cost {acc:.6g}, stats {rec.stats}")
    rows = sweep_iterations(scn, range(1, args.it_max + 1), args.repeats, args.seed, args.steps)
    write_rows(out / "sweep.csv", rows, SWEEP_FIELDS)
    for r in rows:
        print(f"i_T={r['i_T']:2d} {r['learning']:3s} cost {r['mean_accumulated_cost']:.6g} "
              f"time/step {r['mean_step_time'] * 1e3:.3f} ms")


if __name__ == "__main__":
    main()
