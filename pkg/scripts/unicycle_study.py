"""Unicycle with resets: accumulated cost per run against the fully optimized loop.

Writes <out>/runs.csv with one row per run.
"""

import argparse
from pathlib import Path

from memmpc.config import Problem, load_scenario, replace
from memmpc.controller import oracle_closed_loop, run_closed_loop, write_rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--it", type=int, default=2)
    ap.add_argument("--out", default="out/unicycle")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scn = replace(load_scenario("unicycle"), runs=args.runs, iterations=args.it)
    pb = Problem(scn)
    oracle = float(oracle_closed_loop(pb, scn.steps_per_run).sum())
    rows = []
    for learner in ("lipschitz", "off"):
        rec = run_closed_loop(replace(scn, **{"learning.learner": learner}))
        for s in rec.summaries():
            rows.append(dict(run=s["segment"], learning=learner,
                             accumulated_cost=s["accumulated_cost"], oracle_cost=oracle,
                             ratio=s["accumulated_cost"] / oracle))
    write_rows(out / "runs.csv", rows, ["run", "learning", "accumulated_cost", "oracle_cost",
                                        "ratio"])
    for r in rows:
        print(f"{r['learning']:9s} run {r['run']:2d}: {r['accumulated_cost']:.5f} "
              f"({r['ratio']:.4f} x oracle)")


if __name__ == "__main__":
    main()
