import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from memmpc.exceptions import ConfigError
from memmpc.model import (Disturbance, LinearPlant, Reference, UnicyclePlant, discretize_zoh,
                          disturbance_at, double_integrator, servo, servo_continuous,
                          step_nominal)

from conftest import central_difference

PLANTS = [double_integrator(0.1), UnicyclePlant(Ts=0.1), servo(0.1)]


@pytest.mark.parametrize("plant", PLANTS, ids=lambda p: p.name)
def test_origin_is_equilibrium(plant):
    assert np.all(plant.step(np.zeros(plant.n), np.zeros(plant.m)) == 0)


def test_double_integrator_unit_input():
    np.testing.assert_allclose(step_nominal(double_integrator(0.1), [0, 0], [1]), [0.01, 0.1])


def test_double_integrator_zero_input():
    assert np.all(step_nominal(double_integrator(0.1), [0, 0], [0]) == 0)


def test_unicycle_forward():
    np.testing.assert_allclose(step_nominal(UnicyclePlant(Ts=0.1), [0, 0, 0], [1, 0]),
                               [0.1, 0, 0], atol=1e-15)


def test_wrong_dimension_rejected():
    with pytest.raises(ConfigError):
        double_integrator().step([0, 0, 0], [0])


@pytest.mark.parametrize("plant", PLANTS, ids=lambda p: p.name)
def test_jacobians_match_finite_differences(plant):
    rng = np.random.default_rng(1)
    for _ in range(20):
        x, u = rng.normal(size=plant.n), rng.normal(size=plant.m)
        fx, fu = plant.jacobians(x, u)
        for i in range(plant.n):
            gx = central_difference(lambda z: plant.step(z, u)[i], x)
            gu = central_difference(lambda v: plant.step(x, v)[i], u)
            scale = max(1.0, np.abs(fx[i]).max(), np.abs(fu[i]).max())
            assert np.abs(gx - fx[i]).max() / scale <= 1e-6
            assert np.abs(gu - fu[i]).max() / scale <= 1e-6


def test_quasiperiodic_at_zero():
    w = disturbance_at(Disturbance("quasiperiodic", amplitude=0.09, Ts=0.1), 0,
                       np.zeros(2), np.zeros(1), double_integrator())
    np.testing.assert_allclose(w, [0.0, 0.09])


def test_no_disturbance_is_zero():
    d = Disturbance()
    for k in (0, 1, 17, 3000):
        assert np.all(d(k, np.ones(2), np.ones(1), double_integrator()) == 0)


def test_reset_schedule():
    plant = UnicyclePlant(Ts=0.1)
    x0 = (1.0, 1.0, 1.0 + math.pi / 2)
    d = Disturbance("reset", period=120, x0=x0)
    x, u = np.array([0.3, -0.2, 0.5]), np.array([0.4, 0.1])
    np.testing.assert_allclose(d(120, x, u, plant), np.array(x0) - plant.step(x, u))
    assert np.all(d(119, x, u, plant) == 0)
    assert np.all(d(0, x, u, plant) == 0)
    assert np.array_equal(d.next_state(240, x, u, plant), np.array(x0))


def test_reset_needs_period():
    with pytest.raises(ConfigError):
        Disturbance("reset", period=0)


def test_zoh_zero_generator():
    A, B = discretize_zoh(np.zeros((2, 2)), np.eye(2), 0.1)
    np.testing.assert_allclose(A, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(B, 0.1 * np.eye(2), atol=1e-15)


@given(st.floats(1e-3, 2.0))
def test_zoh_double_integrator_closed_form(Ts):
    A, B = discretize_zoh([[0, 1], [0, 0]], [[0], [1]], Ts)
    np.testing.assert_allclose(A, [[1, Ts], [0, 1]], atol=1e-12)
    np.testing.assert_allclose(B, [[Ts ** 2 / 2], [Ts]], atol=1e-12)


def _series_zoh(Ac, Bc, Ts, sub=1000, terms=30):
    # exp(Ac h) and its integral by truncated Taylor series on a small step,
    # then composed by repeated squaring-free stepping
    n = Ac.shape[0]
    h = Ts / sub
    E, I = np.eye(n), np.eye(n) * h
    term, iterm = np.eye(n), np.eye(n) * h
    for k in range(1, terms):
        term = term @ Ac * (h / k)
        iterm = iterm @ Ac * (h / (k + 1))
        E = E + term
        I = I + iterm
    A, B = np.eye(n), np.zeros_like(Bc)
    Bh = I @ Bc
    for _ in range(sub):
        A, B = E @ A, E @ B + Bh
    return A, B


def test_servo_zoh_against_series():
    Ac, Bc = servo_continuous(**{k: v for k, v in dict(
        k_theta=1280.2, J_L=25.0, J_M=0.5, beta_L=25.0, beta_M=0.1, rho=20.0, K_T=10.0,
        R=20.0).items()})
    A, B = discretize_zoh(Ac, Bc, 0.1)
    As, Bs = _series_zoh(Ac, Bc, 0.1)
    np.testing.assert_allclose(A, As, atol=1e-8)
    np.testing.assert_allclose(B, Bs, atol=1e-8)


def test_zoh_rejects_bad_input():
    with pytest.raises(ConfigError):
        discretize_zoh(np.zeros((2, 3)), np.zeros((2, 1)), 0.1)
    with pytest.raises(ConfigError):
        discretize_zoh(np.zeros((2, 2)), np.zeros((2, 1)), 0.0)


def test_linear_plant_shape_check():
    with pytest.raises(ConfigError):
        LinearPlant(np.eye(2), np.ones((3, 1)))


def test_square_reference():
    r = Reference("square", period=200, high=1.0, low=0.0)
    assert r(1) == 1.0 and r(100) == 1.0 and r(101) == 0.0 and r(200) == 0.0 and r(201) == 1.0
    assert Reference()(5) is None
