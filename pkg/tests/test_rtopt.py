import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memmpc.cost import MPCCost, QuadraticBarrierCost
from memmpc.exceptions import ConfigError
from memmpc.model import LinearPlant, double_integrator
from memmpc.rtopt import (Budget, OptimizerConfig, iterate, optimizer_update, oracle_solve,
                          temporal_warm_start)

CFG = OptimizerConfig()


class _Square(MPCCost):
    """J(U) = U^2 with a one-dimensional dummy plant."""

    def __init__(self):
        super().__init__(LinearPlant(np.eye(1), np.eye(1)), 1)

    def total(self, U, x, r=None):
        return float(np.asarray(U) @ np.asarray(U))

    def value_and_grad(self, U, x, r=None):
        U = np.asarray(U, dtype=float)
        return float(U @ U), 2 * U, np.zeros(1)


def test_shift_append_zero(uni_problem):
    cost = uni_problem.cost
    U = np.arange(cost.size, dtype=float)
    out = temporal_warm_start(cost, U, np.zeros(3), policy="zero")
    np.testing.assert_array_equal(out[:-2], U[2:])
    np.testing.assert_array_equal(out[-2:], [0, 0])


@pytest.mark.parametrize("policy", ["zero", "local-law"])
def test_warm_start_fixed_point(di_problem, policy):
    cost = di_problem.cost
    assert np.all(temporal_warm_start(cost, np.zeros(cost.size), np.zeros(2), policy=policy) == 0)


def test_unknown_policy(di_problem):
    with pytest.raises(ConfigError):
        temporal_warm_start(di_problem.cost, np.zeros(10), np.zeros(2), policy="nope")


def test_local_law_appended(di_problem):
    cost = di_problem.cost
    rng = np.random.default_rng(0)
    U, x = rng.normal(scale=0.2, size=cost.size), rng.normal(scale=0.3, size=2)
    out = temporal_warm_start(cost, U, x)
    xN = cost.rollout(U, x)[-1]
    np.testing.assert_allclose(out[-1:], cost.K @ xN)


def _feasible_samples(pb, rng, count, scale=0.8):
    C, d = pb.cost.state_barrier.C, pb.cost.state_barrier.d
    out = []
    while len(out) < count:
        x = rng.uniform(-scale * 2, scale * 3, size=2) * [1, 0.5]
        if np.all(C @ x < scale * d):
            out.append(x)
    return out


def test_temporal_decrease_linear_no_barrier():
    # pure quadratic cost with the LQR terminal weight: the shifted sequence plus
    # the local law decreases by at least the first stage cost
    cost = QuadraticBarrierCost(double_integrator(0.1), 10, np.eye(2), 0.1 * np.eye(1))
    rng = np.random.default_rng(0)
    for _ in range(1000):
        U, x = rng.normal(size=cost.size), rng.normal(size=2)
        u0 = U[:1]
        lhs = cost.total(temporal_warm_start(cost, U, x), cost.plant.step(x, u0)) - cost.total(U, x)
        assert lhs <= -cost.stage(x, u0) + 1e-8 * max(1.0, cost.total(U, x))


def test_temporal_decrease_with_barrier_reported(di_problem):
    # with eps > 0 the decrease is only guaranteed near the origin; count violations
    cost = di_problem.cost
    rng = np.random.default_rng(1)
    bad = 0
    for x in _feasible_samples(di_problem, rng, 1000, scale=0.1):
        U = rng.normal(scale=0.01, size=cost.size)
        u0 = U[:1]
        lhs = cost.total(temporal_warm_start(cost, U, x), cost.plant.step(x, u0)) - cost.total(U, x)
        bad += lhs > -cost.stage(x, u0) + 1e-8
    assert bad == 0


def test_zero_gradient_leaves_U(di_problem):
    cost = di_problem.cost
    step = optimizer_update(CFG, cost, np.zeros(cost.size), np.zeros(2))
    assert np.all(step.U == 0) and step.J == 0.0 and not step.flagged


def test_armijo_hand_trace():
    cfg = OptimizerConfig(rho=0.5, c1=1e-3, c2=0.999)
    step = optimizer_update(cfg, _Square(), np.array([1.0]), np.zeros(1))
    # alpha0 = 1/c2 overshoots to 1 - 2 alpha0 < -1; successive halvings reach 1 - 2 alpha
    assert step.U[0] == pytest.approx(1 - 2 * step.alpha)
    assert step.J < 1.0
    assert step.alpha == pytest.approx(0.5 / 0.999)


def test_update_decreases_cost(di_problem):
    cost = di_problem.cost
    rng = np.random.default_rng(2)
    for x in _feasible_samples(di_problem, rng, 1000):
        U = rng.normal(scale=0.3, size=cost.size)
        J0, g, _ = cost.value_and_grad(U, x)
        step = optimizer_update(CFG, cost, U, x)
        assert step.J <= J0
        if np.linalg.norm(g) > 1e-9 and not step.flagged:
            assert step.J < J0


def test_budget_floor():
    with pytest.raises(ConfigError):
        Budget(count=0)
    with pytest.raises(ConfigError):
        Budget()
    with pytest.raises(ConfigError):
        iterate(CFG, _Square(), np.ones(1), np.zeros(1), 0)


def test_iterate_chained_decrease(di_problem):
    cost = di_problem.cost
    rng = np.random.default_rng(3)
    for x in _feasible_samples(di_problem, rng, 100):
        res = iterate(CFG, cost, rng.normal(scale=0.3, size=cost.size), x, Budget(count=2))
        assert res.iterations == 2
        assert all(b <= a for a, b in zip(res.costs, res.costs[1:]))


def test_iterate_at_optimum(di_problem):
    cost = di_problem.cost
    x = np.array([0.3, -0.2])
    sol = oracle_solve(CFG, cost, x)
    res = iterate(CFG, cost, sol.U, x, Budget(count=3))
    assert np.abs(res.U - sol.U).max() <= 1e-7
    assert res.J <= sol.J


def test_time_budget_runs_at_least_once():
    res = iterate(CFG, _Square(), np.ones(1), np.zeros(1), Budget(seconds=1e-9))
    assert res.iterations >= 1


def test_oracle_origin(di_problem):
    sol = oracle_solve(CFG, di_problem.cost, np.zeros(2))
    assert sol.J == 0.0 and np.all(sol.U == 0)


def test_oracle_scalar_lqr_closed_form():
    # J(u) = q x^2 + r u^2 + p (a x + b u)^2, minimizer u* = -p a b x / (r + p b^2)
    a, b, q, r, p, x = 0.9, 0.5, 1.0, 0.3, 2.0, 1.7
    cost = QuadraticBarrierCost(LinearPlant(np.array([[a]]), np.array([[b]])), 1,
                                np.array([[q]]), np.array([[r]]), 0.0, P=np.array([[p]]))
    sol = oracle_solve(CFG, cost, np.array([x]))
    assert sol.U[0] == pytest.approx(-p * a * b * x / (r + p * b * b), abs=1e-6)


def test_oracle_dominates_candidates(di_problem):
    cost = di_problem.cost
    rng = np.random.default_rng(4)
    for x in _feasible_samples(di_problem, rng, 30):
        U = rng.normal(scale=0.2, size=cost.size)
        sol = oracle_solve(CFG, cost, x)
        assert sol.converged
        assert sol.J <= cost.total(temporal_warm_start(cost, U, x), x) + 1e-12
        assert sol.J <= cost.total(U, x) + 1e-12


def test_oracle_gd_method(di_problem):
    cfg = OptimizerConfig(grad_tol=1e-6, max_iter=20_000)
    x = np.array([0.5, 0.1])
    a = oracle_solve(cfg, di_problem.cost, x, method="gd")
    b = oracle_solve(cfg, di_problem.cost, x)
    assert a.J == pytest.approx(b.J, abs=1e-8)


def test_optimizer_config_validation():
    with pytest.raises(ConfigError):
        OptimizerConfig(rho=1.0)
    with pytest.raises(ConfigError):
        OptimizerConfig(c1=0.5, c2=0.4)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1.5, 2.5), st.floats(-0.9, 0.9),
       st.lists(st.floats(-1, 1), min_size=10, max_size=10))
def test_update_never_increases(x1, x2, U):
    cost = _di_cost()
    x = np.array([x1, x2])
    U = np.array(U)
    assert optimizer_update(CFG, cost, U, x).J <= cost.total(U, x)


_CACHE = {}


def _di_cost():
    if "di" not in _CACHE:
        from memmpc.config import Problem, load_scenario
        _CACHE["di"] = Problem(load_scenario("double-integrator")).cost
    return _CACHE["di"]
