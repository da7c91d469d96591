"""Servo tracking: mean tracking error per reference period with and without learning.

Writes <out>/periods.csv and the learning-on trace.
"""

import argparse
from pathlib import Path

from memmpc.config import load_scenario, replace
from memmpc.controller import run_closed_loop, write_rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--periods", type=int, default=30)
    ap.add_argument("--latency", default="0:0", help="learner latency MIN:MAX in periods")
    ap.add_argument("--out", default="out/servo")
    args = ap.parse_args()
    lo, _, hi = args.latency.partition(":")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scn = replace(load_scenario("servo"), periods=args.periods,
                  **{"learning.latency_min": int(lo), "learning.latency_max": int(hi or lo)})
    rows = []
    for learner in ("hull", "off"):
        rec = run_closed_loop(replace(scn, **{"learning.learner": learner}))
        if learner == "hull":
            rec.write_trace(out / "trace.csv")
        print(f"{learner}: stats {rec.stats}")
        for s in rec.summaries():
            rows.append(dict(period=s["segment"], learning=learner,
                             mean_tracking_error=s["mean_tracking_error"],
                             accumulated_cost=s["accumulated_cost"]))
    write_rows(out / "periods.csv", rows, ["period", "learning", "mean_tracking_error",
                                           "accumulated_cost"])
    for r in rows:
        print(f"{r['learning']:4s} period {r['period']:3d}: error {r['mean_tracking_error']:.4f}")


if __name__ == "__main__":
    main()
