"""Closed-loop real-time MPC with temporal and spatial warm starts."""

import csv
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .config import Problem
from .exceptions import ControllerFault, DegenerateGeometry, StaleLocation, WalkAborted
from .hull import HullLearner
from .lipnet import LipschitzDataset
from .rtopt import iterate, oracle_solve, temporal_warm_start


class Candidate(NamedTuple):
    U: np.ndarray
    value: float        # data-based upper approximation J^a at the query
    inside: bool
    location: object


class DataPoint(NamedTuple):
    e: np.ndarray       # learning coordinates (state minus steady state)
    U: np.ndarray
    J: float


class LearnerStats:
    __slots__ = ("added", "skipped_small", "skipped_busy", "aborted", "rejected")

    def __init__(self):
        self.added = self.skipped_small = self.skipped_busy = self.aborted = self.rejected = 0

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__slots__}


class HullMemory:
    """Convex-hull interpolation of stored (state, input sequence, cost) triples."""

    kind = "hull"

    def __init__(self, n, threshold):
        self.learner = HullLearner(n)
        self.threshold = threshold
        self.stats = LearnerStats()

    @property
    def size(self):
        return self.learner.size

    def query(self, e):
        if not self.learner.ready:
            return None
        try:
            res = self.learner.query(e)
        except (WalkAborted, DegenerateGeometry):
            self.stats.aborted += 1
            return None
        return Candidate(res.U, res.value if res.inside else math.inf, res.inside, res)

    def approx(self, e):
        """Interpolated value J^a(e); inf outside the hull or before initialization."""
        if not self.learner.ready:
            return math.inf
        res = self.learner.hull.generate_sw(e, self.learner.guess)
        return res.value if res.inside else math.inf

    def evaluate(self, p):
        """Significance decision for a data point: (insert?, payload)."""
        if not self.learner.ready:
            return True, None
        try:
            loc = self.learner.hull.generate_sw(p.e, self.learner.guess)
        except (WalkAborted, DegenerateGeometry):
            self.stats.aborted += 1
            return False, None
        if not loc.inside:
            return True, loc
        return loc.value - p.J > self.threshold, loc

    def apply(self, p, loc):
        try:
            ok = self.learner.add(p.e, p.U, p.J, loc)
        except (WalkAborted, DegenerateGeometry, StaleLocation):
            self.stats.aborted += 1
            return
        if ok:
            self.stats.added += 1
        else:
            self.stats.skipped_small += 1

    def seed(self, p):
        self.learner.add(p.e, p.U, p.J)


class LipschitzMemory:
    """Lower envelope of Lipschitz cones around stored data."""

    kind = "lipschitz"

    def __init__(self, n, threshold, cost):
        self.data = LipschitzDataset(n)
        self.threshold = threshold
        self.cost = cost
        self.stats = LearnerStats()

    @property
    def size(self):
        return len(self.data)

    def query(self, e):
        res = self.data.warm_start(e)
        if res is None:
            return None
        return Candidate(res.U, res.value, True, res)

    def approx(self, e):
        return self.data.approx(e)

    def evaluate(self, p):
        return self.data.approx(p.e) - p.J > self.threshold, None

    def apply(self, p, _payload):
        if self.data.insert(p.U, p.e, p.J, self.cost.lipschitz(p.U)):
            self.stats.added += 1
        else:
            self.stats.rejected += 1

    def seed(self, p):
        self.data.insert(p.U, p.e, p.J, self.cost.lipschitz(p.U))


class UpdateQueue:
    """Learner hand-off with simulated latency.

    At most one update is in flight; a single pending slot keeps only the newest
    point (an overwritten pending point counts as skipped-busy).  The significance
    test runs when processing starts; the insertion lands when the delay expires.
    """

    def __init__(self, memory, latency_min=0, latency_max=0, seed=0):
        self.memory = memory
        self.lo, self.hi = int(latency_min), int(latency_max)
        self.rng = np.random.default_rng(seed)
        self.inflight = None
        self.pending = None
        self.delays = []

    def _start(self, p, k):
        insert, payload = self.memory.evaluate(p)
        if not insert:
            if payload is not None or self.memory.kind == "lipschitz":
                self.memory.stats.skipped_small += 1
            return
        delay = int(self.rng.integers(self.lo, self.hi + 1)) if self.hi > 0 else 0
        self.delays.append(delay)
        if delay == 0:
            self.memory.apply(p, payload)
        else:
            self.inflight = (p, payload, k + delay)

    def tick(self, k):
        if self.inflight is not None and self.inflight[2] <= k:
            p, payload, _ = self.inflight
            self.inflight = None
            self.memory.apply(p, payload)
        if self.inflight is None and self.pending is not None:
            p, self.pending = self.pending, None
            self._start(p, k)

    def offer(self, p, k):
        if self.inflight is None and self.pending is None:
            self._start(p, k)
        else:
            if self.pending is not None:
                self.memory.stats.skipped_busy += 1
            self.pending = p

    def drain(self, k):
        """Finish all outstanding work (used at the end of a run)."""
        while self.inflight is not None or self.pending is not None:
            if self.inflight is not None:
                k = max(k, self.inflight[2])
            self.tick(k)


def make_memory(problem, learning):
    if learning.learner == "off":
        return None
    if learning.learner == "hull":
        return HullMemory(problem.n, learning.threshold)
    return LipschitzMemory(problem.n, learning.threshold, problem.cost)


def select_warm_start(J_temporal, J_spatial):
    """Temporal only when strictly cheaper; ties go to the spatial branch."""
    return "temporal" if J_temporal < J_spatial else "spatial"


@dataclass
class RunRecord:
    scenario: str
    n: int
    m: int
    rows: list = field(default_factory=list)
    x_plus: list = field(default_factory=list)
    r_next: list = field(default_factory=list)
    U_next: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    segments: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def column(self, name):
        return np.array([row[name] for row in self.rows])

    def trace_fields(self):
        xs = [f"x{i + 1}" for i in range(self.n)]
        us = [f"u{i + 1}" for i in range(self.m)]
        return (["k", *xs, *us, "r", "J_Nt", "J_Ns", "J_a", "selected", "iters", "J", "stage_cost",
                 "tracking_error", "flagged", "tw_decrease", "learner_size", "added",
                 "skipped_small", "skipped_busy", "aborted"])

    def summaries(self):
        """Per-segment accumulated stage cost and mean tracking error."""
        out = []
        cost = self.column("stage_cost")
        err = self.column("tracking_error")
        sel = np.array([row["selected"] == "spatial" for row in self.rows])
        for idx, (a, b) in enumerate(self.segments):
            out.append(dict(segment=idx + 1, k_first=a + 1, k_last=b,
                            accumulated_cost=float(cost[a:b].sum()),
                            mean_tracking_error=float(err[a:b].mean()),
                            spatial_selected=int(sel[a:b].sum())))
        return out

    def write_trace(self, path):
        fields = self.trace_fields()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
            w.writeheader()
            for row in self.rows:
                w.writerow({k: _fmt(row[k]) for k in fields})

    def write_summary(self, path):
        rows = self.summaries()
        fields = ["segment", "k_first", "k_last", "accumulated_cost", "mean_tracking_error",
                  "spatial_selected"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            for row in rows:
                w.writerow({k: _fmt(row[k]) for k in fields})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


class Controller:
    """Stateful real-time controller: one ``step`` per sampling period."""

    def __init__(self, scenario, problem=None):
        self.scenario = scenario
        self.problem = problem or Problem(scenario)
        pb = self.problem
        self.cost, self.plant = pb.cost, pb.plant
        self.opt = scenario.optimizer
        self.budget = pb.budget
        self.x = pb.x0.copy()
        self.U = np.zeros(self.cost.size)
        self.k = 1
        lc = scenario.learning
        self.memory = make_memory(pb, lc)
        self.queue = None
        if self.memory is not None:
            self.queue = UpdateQueue(self.memory, lc.latency_min, lc.latency_max, lc.latency_seed)
            if lc.seed_vertices:
                self._seed()
        self.record = RunRecord(scenario.name, pb.n, pb.m, config=_echo(scenario))

    def _seed(self):
        """Preload the data set with feasible-set vertices (zero inputs) and the origin."""
        pb = self.problem
        levels = [None]
        if pb.reference.kind != "none":
            levels = sorted({pb.reference.high, pb.reference.low})
        U0 = np.zeros(self.cost.size)
        verts = pb.feasible_vertices()
        centre = verts.mean(axis=0)
        # pull vertices inward by tiny random fractions: the exact vertices of a
        # box-like polytope are far from general position
        rng = np.random.default_rng(self.scenario.learning.latency_seed)
        pts = []
        for r in levels:
            xs = pb.steady_state(r)
            shrink = 1.0 - 1e-3 * rng.uniform(0.1, 1.0, len(verts))
            for v, c in zip(verts, shrink):
                v = centre + c * (v - centre)
                pts.append(DataPoint(v - xs, U0, self.cost.total(U0, v, r)))
        pts.append(DataPoint(np.zeros(pb.n), U0, 0.0))
        for p in pts:
            self.memory.seed(p)

    def learning_coords(self, x, r):
        return x - self.problem.steady_state(r)

    def step(self):
        pb, cost = self.problem, self.cost
        k, x, U = self.k, self.x, self.U
        r_k, r_next = pb.reference(k), pb.reference(k + 1)
        m = pb.m
        u = U[:m].copy()
        if self.queue is not None:
            self.queue.tick(k)

        x_plus = self.plant.step(x, u)
        U_t = temporal_warm_start(cost, U, x, r_next, self.scenario.temporal_policy)
        J_t = cost.total(U_t, x_plus, r_next)
        e_plus = self.learning_coords(x_plus, r_next)
        cand = self.memory.query(e_plus) if self.memory is not None else None
        J_s = cost.total(cand.U, x_plus, r_next) if cand is not None else math.inf
        if not (math.isfinite(J_t) or math.isfinite(J_s)):
            raise ControllerFault("both warm starts have non-finite cost", k)
        selected = select_warm_start(J_t, J_s)
        warm = U_t if selected == "temporal" else cand.U

        res = iterate(self.opt, cost, warm, x_plus, self.budget, r_next)
        if not all(b <= a for a, b in zip(res.costs, res.costs[1:])):
            raise ControllerFault("optimizer update increased the cost", k)

        stage = cost.stage(x, u, r_k)
        J_prev = cost.total(U, x, r_k)
        tw_ok = bool(J_t - J_prev <= -stage + 1e-8 * max(1.0, abs(J_prev)))

        if self.queue is not None:
            self.queue.offer(DataPoint(e_plus, res.U.copy(), res.J), k)

        x_next = pb.disturbance.next_state(k, x, u, self.plant)
        if r_k is None:
            err = float(np.linalg.norm(x))
        else:
            err = float(abs(x[0] - r_k))
        stats = self.memory.stats.as_dict() if self.memory is not None else {}
        row = dict(k=k, r=(math.nan if r_k is None else float(r_k)), J_Nt=float(J_t),
                   J_Ns=float(J_s), selected=selected, iters=res.iterations, J=float(res.J),
                   stage_cost=float(stage), tracking_error=err, flagged=res.flagged,
                   tw_decrease=int(tw_ok),
                   learner_size=(self.memory.size if self.memory is not None else 0),
                   added=stats.get("added", 0), skipped_small=stats.get("skipped_small", 0),
                   skipped_busy=stats.get("skipped_busy", 0), aborted=stats.get("aborted", 0),
                   J_warm=float(min(J_t, J_s)),
                   J_a=(float(cand.value) if cand is not None else math.inf))
        for i, v in enumerate(x):
            row[f"x{i + 1}"] = float(v)
        for i, v in enumerate(u):
            row[f"u{i + 1}"] = float(v)
        self.record.rows.append(row)
        self.record.x_plus.append(x_plus)
        self.record.r_next.append(r_next)
        self.record.U_next.append(res.U)

        self.x, self.U, self.k = x_next, res.U, k + 1
        return row


def _echo(scn):
    import dataclasses
    return dataclasses.asdict(scn)


def segments_for(scn, steps):
    if scn.plant == "unicycle" and scn.steps_per_run:
        size = scn.steps_per_run
    elif scn.reference.get("kind", "none") != "none":
        size = int(scn.reference.get("period", steps))
    else:
        size = steps
    return [(a, min(a + size, steps)) for a in range(0, steps, size)]


def run_closed_loop(scenario, steps=None, problem=None, callback=None):
    """Simulate ``steps`` control steps and return the RunRecord."""
    from .config import default_steps
    steps = default_steps(scenario) if steps is None else int(steps)
    ctl = Controller(scenario, problem)
    t0 = time.perf_counter()
    for _ in range(steps):
        ctl.step()
        if callback is not None:
            callback(ctl)
    if ctl.queue is not None:
        ctl.queue.drain(ctl.k)
    rec = ctl.record
    rec.wall_time = time.perf_counter() - t0
    rec.stats = ctl.memory.stats.as_dict() if ctl.memory is not None else {}
    rec.stats["spatial_selected"] = sum(r["selected"] == "spatial" for r in rec.rows)
    rec.stats["tw_decrease_violations"] = sum(1 - r["tw_decrease"] for r in rec.rows)
    rec.stats["flagged_updates"] = sum(r["flagged"] for r in rec.rows)
    rec.segments = segments_for(scenario, steps)
    rec.controller = ctl
    return rec


def suboptimality(problem, record, opt=None, every=1):
    """Offline J* at each successor state and the gap of both warm starts."""
    opt = opt or problem.scenario.optimizer
    out = []
    for idx in range(0, len(record.rows), every):
        row = record.rows[idx]
        xp, r = record.x_plus[idx], record.r_next[idx]
        sol = oracle_solve(opt, problem.cost, xp, record.U_next[idx], r)
        out.append(dict(k=row["k"], J_star=sol.J, subopt_temporal=row["J_Nt"] - sol.J,
                        subopt_spatial=row["J_Ns"] - sol.J, converged=sol.converged))
    return out


def write_rows(path, rows, fields):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row[k]) for k in fields})


def oracle_closed_loop(problem, steps, opt=None):
    """Closed loop of the fully optimized policy with the same one-step-delay structure.

    U(1) = 0; afterwards the sequence applied at x(k+1) minimizes J_N at the
    predicted successor, warm-started from the shifted previous optimum.
    """
    opt = opt or problem.scenario.optimizer
    cost, plant = problem.cost, problem.plant
    x = problem.x0.copy()
    U = np.zeros(cost.size)
    stage_costs = []
    policy = problem.scenario.temporal_policy
    for k in range(1, steps + 1):
        r_k, r_next = problem.reference(k), problem.reference(k + 1)
        u = U[:problem.m].copy()
        stage_costs.append(cost.stage(x, u, r_k))
        x_plus = plant.step(x, u)
        warm = temporal_warm_start(cost, U, x, r_next, policy)
        U = oracle_solve(opt, cost, x_plus, warm, r_next).U
        x = problem.disturbance.next_state(k, x, u, plant)
    return np.array(stage_costs)
