"""Scenario configuration: dataclasses, TOML loading, and model/cost construction."""

import dataclasses
import itertools
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .cost import QuadraticBarrierCost, UnicycleCost
from .exceptions import ConfigError
from .model import Disturbance, Reference, UnicyclePlant, double_integrator, servo
from .rtopt import Budget, OptimizerConfig

SCENARIOS = ("double-integrator", "unicycle", "servo")
LEARNERS = ("hull", "lipschitz", "off")


@dataclass(frozen=True)
class LearningConfig:
    learner: str = "hull"
    threshold: float = 1e-2
    # simulated learner latency in control periods, drawn uniformly per update
    latency_min: int = 0
    latency_max: int = 0
    latency_seed: int = 0
    seed_vertices: bool = False

    def __post_init__(self):
        if self.learner not in LEARNERS:
            raise ConfigError(f"unknown learner {self.learner!r}; expected one of {LEARNERS}")
        if not self.threshold >= 0:
            raise ConfigError("significance threshold must be >= 0")
        if not 0 <= self.latency_min <= self.latency_max:
            raise ConfigError("need 0 <= latency_min <= latency_max")

    @property
    def asynchronous(self):
        return self.latency_max > 0


@dataclass(frozen=True)
class CostConfig:
    Q: tuple = ()
    R: tuple = ()
    eps: float = 0.0
    delta: float = 0.1
    state_C: tuple = ()
    state_d: tuple = ()
    input_C: tuple = ()
    input_d: tuple = ()
    ref_map: tuple = ()
    region_radius: Optional[float] = None


@dataclass(frozen=True)
class Scenario:
    name: str
    plant: str
    Ts: float = 0.1
    N: int = 10
    x0: tuple = ()
    steps: int = 3000
    iterations: Optional[int] = 2
    time_budget: Optional[float] = None
    temporal_policy: str = "local-law"
    cost: CostConfig = field(default_factory=CostConfig)
    disturbance: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)
    plant_params: dict = field(default_factory=dict)
    learning: LearningConfig = field(default_factory=LearningConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    runs: int = 1
    steps_per_run: Optional[int] = None
    periods: Optional[int] = None

    def __post_init__(self):
        if self.plant not in SCENARIOS:
            raise ConfigError(f"unknown plant {self.plant!r}; expected one of {SCENARIOS}")
        if not self.Ts > 0:
            raise ConfigError("sampling time must be positive")
        if self.N < 1:
            raise ConfigError("horizon must be >= 1")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.temporal_policy not in ("local-law", "zero"):
            raise ConfigError(f"unknown temporal policy {self.temporal_policy!r}")
        self.budget()

    def budget(self):
        if self.time_budget is not None:
            return Budget(seconds=self.time_budget)
        if self.iterations is None:
            raise ConfigError("scenario needs iterations or time_budget")
        return Budget(count=int(self.iterations))


def _tuple(v):
    if isinstance(v, list):
        return tuple(_tuple(e) for e in v)
    return v


def _from_dict(d):
    d = dict(d)
    sub = {
        "cost": CostConfig,
        "learning": LearningConfig,
        "optimizer": OptimizerConfig,
    }
    kwargs = {}
    names = {f.name for f in dataclasses.fields(Scenario)}
    for key, val in d.items():
        if key not in names:
            raise ConfigError(f"unknown scenario key {key!r}")
        if key in sub:
            fields = {f.name for f in dataclasses.fields(sub[key])}
            bad = set(val) - fields
            if bad:
                raise ConfigError(f"unknown [{key}] keys: {sorted(bad)}")
            kwargs[key] = sub[key](**{k: _tuple(v) for k, v in val.items()})
        elif key in ("disturbance", "reference", "plant_params"):
            kwargs[key] = dict(val)
        else:
            kwargs[key] = _tuple(val)
    return Scenario(**kwargs)


def _read_toml(path_or_name):
    p = Path(path_or_name)
    if p.suffix == ".toml" and p.exists():
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    if path_or_name in SCENARIOS:
        text = resources.files("memmpc").joinpath(f"configs/{path_or_name}.toml").read_bytes()
        return tomllib.loads(text.decode())
    raise ConfigError(f"no scenario named {path_or_name!r} and no such config file")


def _set_dotted(d, key, value):
    parts = key.split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
    d[parts[-1]] = value


def load_scenario(name_or_path, overrides=None):
    """Load a built-in scenario by name or a TOML file; ``overrides`` maps dotted keys to values."""
    try:
        raw = _read_toml(name_or_path)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {name_or_path}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(raw, key, value)
    return _from_dict(raw)


def replace(scn, **changes):
    """Copy of ``scn`` with top-level or dotted (``learning.threshold``) fields replaced."""
    flat, nested = {}, {}
    for key, val in changes.items():
        if "__" in key or "." in key:
            head, tail = key.replace("__", ".").split(".", 1)
            nested.setdefault(head, {})[tail] = val
        else:
            flat[key] = val
    for head, vals in nested.items():
        flat[head] = dataclasses.replace(getattr(scn, head), **vals)
    return dataclasses.replace(scn, **flat)


# --- construction ---------------------------------------------------------------

class Problem:
    """Plant, cost and exogenous signals built from a scenario."""

    def __init__(self, scn):
        self.scenario = scn
        c = scn.cost
        if scn.plant == "unicycle":
            self.plant = UnicyclePlant(Ts=scn.Ts)
            self.cost = UnicycleCost(self.plant, scn.N)
        else:
            if scn.plant == "double-integrator":
                self.plant = double_integrator(scn.Ts)
            else:
                self.plant = servo(scn.Ts, **scn.plant_params)
            sp = (np.array(c.state_C, float), np.array(c.state_d, float)) if c.state_C else None
            ip = (np.array(c.input_C, float), np.array(c.input_d, float)) if c.input_C else None
            self.cost = QuadraticBarrierCost(
                self.plant, scn.N, np.array(c.Q, float), np.array(c.R, float), c.eps, c.delta,
                state_poly=sp, input_poly=ip, ref_map=c.ref_map or None,
                region_radius=c.region_radius)
        n = self.plant.n
        x0 = np.array(scn.x0 if scn.x0 else [0.0] * n, dtype=float)
        if x0.shape != (n,):
            raise ConfigError(f"x0 has dimension {x0.shape[0]}, expected {n}")
        self.x0 = x0
        dist = dict(scn.disturbance)
        kind = dist.pop("kind", "none")
        if kind == "reset":
            dist.setdefault("period", scn.steps_per_run or scn.steps)
            dist["x0"] = tuple(x0)
        self.disturbance = Disturbance(kind=kind, Ts=scn.Ts, **dist)
        ref = dict(scn.reference)
        self.reference = Reference(kind=ref.pop("kind", "none"), **ref)
        self.budget = scn.budget()

    @property
    def n(self):
        return self.plant.n

    @property
    def m(self):
        return self.plant.m

    def steady_state(self, r):
        if hasattr(self.cost, "steady_state"):
            return self.cost.steady_state(r)
        return np.zeros(self.n)

    def feasible_vertices(self):
        """Vertices of the state polytope (used to seed the data set)."""
        c = self.scenario.cost
        if not c.state_C:
            raise ConfigError("scenario has no state polytope to seed from")
        return polytope_vertices(np.array(c.state_C, float), np.array(c.state_d, float))


def polytope_vertices(C, d, tol=1e-9):
    """Vertices of the bounded polytope {z : C z <= d} by enumerating active sets."""
    m, n = C.shape
    out = []
    for rows in itertools.combinations(range(m), n):
        A = C[list(rows)]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        v = np.linalg.solve(A, d[list(rows)])
        if np.all(C @ v <= d + tol * max(1.0, float(np.abs(d).max()))):
            if not any(np.allclose(v, w, atol=1e-9) for w in out):
                out.append(v)
    return np.array(out)


def default_steps(scn):
    if scn.plant == "unicycle" and scn.steps_per_run:
        return scn.runs * scn.steps_per_run
    if scn.periods and scn.reference.get("period"):
        return scn.periods * int(scn.reference["period"])
    return scn.steps

