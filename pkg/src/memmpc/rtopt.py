"""Temporal warm start, gradient/backtracking optimizer update, and the oracle solver."""

import math
import time
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import minimize

from .exceptions import ConfigError, NonFiniteGradient


@dataclass(frozen=True)
class OptimizerConfig:
    rho: float = 0.5
    c1: float = 1e-3
    c2: float = 0.999
    max_backtracks: int = 60
    grad_tol: float = 1e-8
    max_iter: int = 100_000

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ConfigError("backtracking contraction rho must lie in (0, 1)")
        if not 0 < self.c1 < self.c2 < 1:
            raise ConfigError("need 0 < c1 < c2 < 1")
        if self.max_backtracks < 1:
            raise ConfigError("max_backtracks must be >= 1")


@dataclass(frozen=True)
class Budget:
    """Iteration budget: a fixed count, or a wall-clock allowance (at least one update)."""

    count: Optional[int] = None
    seconds: Optional[float] = None

    def __post_init__(self):
        if (self.count is None) == (self.seconds is None):
            raise ConfigError("budget needs exactly one of count / seconds")
        if self.count is not None and self.count < 1:
            raise ConfigError("iteration budget must allow at least one update")
        if self.seconds is not None and not self.seconds > 0:
            raise ConfigError("time budget must be positive")


def temporal_warm_start(cost, U, x, r=None, policy="local-law"):
    """Drop u_0, shift, and append the local law at the predicted terminal state.

    ``policy`` is ``"local-law"`` (u_N = cost.local_law(x_N)) or ``"zero"``.
    """
    U = np.asarray(U, dtype=float).reshape(-1)
    m = cost.m
    out = np.empty_like(U)
    out[:-m] = U[m:]
    if policy == "zero":
        out[-m:] = 0.0
    elif policy == "local-law":
        xN = cost.rollout(U, x, r)[-1]
        out[-m:] = cost.local_law(xN, r)
    else:
        raise ConfigError(f"unknown temporal warm start policy {policy!r}")
    return out


class Step(NamedTuple):
    U: np.ndarray
    J: float
    alpha: float
    flagged: bool


def optimizer_update(cfg, cost, U, x, r=None, J=None):
    """One gradient step with Armijo backtracking from alpha_0 = 1/c2.

    Never increases the cost: if no step satisfies the Armijo condition within
    ``max_backtracks`` halvings, U is returned unchanged and the step is flagged.
    """
    U = np.asarray(U, dtype=float)
    try:
        J0, g, _ = cost.value_and_grad(U, x, r)
    except NonFiniteGradient:
        return Step(U, cost.total(U, x, r) if J is None else J, 0.0, True)
    gg = float(g @ g)
    if gg == 0.0:
        return Step(U, J0, 0.0, False)
    alpha = 1.0 / cfg.c2
    for _ in range(cfg.max_backtracks):
        trial = U - alpha * g
        Jt = cost.total(trial, x, r)
        if Jt <= J0 - cfg.c1 * alpha * gg:
            return Step(trial, Jt, alpha, False)
        alpha *= cfg.rho
    return Step(U, J0, 0.0, True)


class IterateResult(NamedTuple):
    U: np.ndarray
    J: float
    iterations: int
    costs: list
    flagged: int


def iterate(cfg, cost, warm, x_next, budget, r=None):
    """Apply ``optimizer_update`` at the successor state until the budget is spent."""
    if isinstance(budget, int):
        budget = Budget(count=budget)
    U = np.asarray(warm, dtype=float)
    J = cost.total(U, x_next, r)
    costs = [J]
    flagged = 0
    it = 0
    deadline = None if budget.seconds is None else time.perf_counter() + budget.seconds
    while True:
        step = optimizer_update(cfg, cost, U, x_next, r, J)
        U, J = step.U, step.J
        flagged += step.flagged
        costs.append(J)
        it += 1
        if budget.count is not None:
            if it >= budget.count:
                break
        elif time.perf_counter() >= deadline:
            break
    return IterateResult(U, J, it, costs, flagged)


class OracleResult(NamedTuple):
    U: np.ndarray
    J: float
    grad_norm: float
    converged: bool


def oracle_solve(cfg, cost, x, U_init=None, r=None, method="lbfgs"):
    """High-accuracy minimizer of J_N(., x).

    ``method="lbfgs"`` runs scipy's L-BFGS-B on the analytic gradient and then
    polishes with the backtracking update; ``method="gd"`` uses only the
    backtracking update.  Both stop at ``cfg.grad_tol`` or ``cfg.max_iter``.
    """
    U = np.zeros(cost.size) if U_init is None else np.asarray(U_init, dtype=float).copy()
    if not math.isfinite(cost.total(U, x, r)):
        raise ConfigError("oracle needs a finite initial cost")

    def fg(v):
        try:
            J, g, _ = cost.value_and_grad(v, x, r)
        except NonFiniteGradient:
            return math.inf, np.zeros_like(v)
        return J, g

    if method == "lbfgs":
        res = minimize(fg, U, jac=True, method="L-BFGS-B",
                       options=dict(maxiter=cfg.max_iter, gtol=cfg.grad_tol * 1e-2,
                                    ftol=1e-15, maxcor=30))
        if res.fun <= cost.total(U, x, r):
            U = res.x
    elif method != "gd":
        raise ConfigError(f"unknown oracle method {method!r}")
    J, g = fg(U)
    gnorm = float(np.linalg.norm(g))
    budget = cfg.max_iter if method == "gd" else 200
    for _ in range(budget):
        if gnorm <= cfg.grad_tol:
            break
        step = optimizer_update(cfg, cost, U, x, r, J)
        if step.flagged or step.J >= J:
            break
        U, J = step.U, step.J
        gnorm = float(np.linalg.norm(fg(U)[1]))
    return OracleResult(U, float(J), gnorm, gnorm <= 1e-4)
