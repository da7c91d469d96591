"""Discrete-time plant models, disturbance signals and ZOH discretization."""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .exceptions import ConfigError


def _vec(v, size, what):
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != size:
        raise ConfigError(f"{what} has dimension {v.shape[0]}, expected {size}")
    return v


class Plant:
    """Nominal dynamics ``x+ = f(x, u)``.

    Subclasses set ``n``, ``m`` and implement ``_f`` and ``jacobians``.
    """

    n: int
    m: int
    name = "plant"

    def step(self, x, u):
        return self._f(_vec(x, self.n, "state"), _vec(u, self.m, "input"))

    def _f(self, x, u):
        raise NotImplementedError

    def jacobians(self, x, u):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class LinearPlant(Plant):
    A: np.ndarray
    B: np.ndarray
    name: str = "linear"

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ConfigError(f"incompatible shapes A{A.shape}, B{B.shape}")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def _f(self, x, u):
        return self.A @ x + self.B @ u

    def jacobians(self, x, u):
        return self.A, self.B


@dataclass(frozen=True, eq=False)
class UnicyclePlant(Plant):
    """Forward-Euler unicycle, state (px, py, heading), input (speed, turn rate)."""

    Ts: float = 0.1
    name: str = "unicycle"
    n: int = field(default=3, init=False)
    m: int = field(default=2, init=False)

    def _f(self, x, u):
        c, s = np.cos(x[2]), np.sin(x[2])
        return x + self.Ts * np.array([u[0] * c, u[0] * s, u[1]])

    def jacobians(self, x, u):
        c, s = np.cos(x[2]), np.sin(x[2])
        Ts = self.Ts
        fx = np.array([[1.0, 0.0, -Ts * u[0] * s],
                       [0.0, 1.0, Ts * u[0] * c],
                       [0.0, 0.0, 1.0]])
        fu = np.array([[Ts * c, 0.0],
                       [Ts * s, 0.0],
                       [0.0, Ts]])
        return fx, fu


def step_nominal(plant, x, u):
    return plant.step(x, u)


def double_integrator(Ts=0.1):
    # input column [Ts^2, Ts] by convention; the exact ZOH column would be [Ts^2/2, Ts]
    return LinearPlant(np.array([[1.0, Ts], [0.0, 1.0]]),
                       np.array([[Ts ** 2], [Ts]]), name="double-integrator")


SERVO_DEFAULTS = dict(
    k_theta=1280.2, J_L=25.0, J_M=0.5, beta_L=25.0, beta_M=0.1,
    rho=20.0, K_T=10.0, R=20.0, T_max=78.5398, V_max=220.0,
)


def servo_continuous(k_theta, J_L, J_M, beta_L, beta_M, rho, K_T, R, **_):
    """Continuous-time (Ac, Bc) of the motor / gearbox / elastic shaft / load model.

    State is (load angle, load rate, motor angle, motor rate), input the DC voltage.
    """
    Ac = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [-k_theta / J_L, -beta_L / J_L, k_theta / (rho * J_L), 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [k_theta / (rho * J_M), 0.0, -k_theta / (rho ** 2 * J_M),
         -(beta_M * R + K_T ** 2) / (J_M * R)],
    ])
    Bc = np.array([[0.0], [0.0], [0.0], [K_T / (R * J_M)]])
    return Ac, Bc


def discretize_zoh(Ac, Bc, Ts):
    """Zero-order-hold discretization via the exponential of [[Ac, Bc], [0, 0]]."""
    Ac = np.atleast_2d(np.asarray(Ac, dtype=float))
    Bc = np.asarray(Bc, dtype=float)
    if Bc.ndim == 1:
        Bc = Bc.reshape(-1, 1)
    if Ac.shape[0] != Ac.shape[1] or Bc.shape[0] != Ac.shape[0]:
        raise ConfigError(f"incompatible shapes Ac{Ac.shape}, Bc{Bc.shape}")
    if not Ts > 0:
        raise ConfigError("sampling time must be positive")
    n, m = Bc.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = Ac
    M[:n, n:] = Bc
    E = expm(M * Ts)
    return E[:n, :n], E[:n, n:]


def servo(Ts=0.1, **params):
    p = dict(SERVO_DEFAULTS)
    p.update(params)
    A, B = discretize_zoh(*servo_continuous(**p), Ts)
    return LinearPlant(A, B, name="servo")


@dataclass(frozen=True, eq=False)
class Disturbance:
    """Deterministic external signal w(k).

    ``quasiperiodic``: amplitude * (sin(k Ts), cos(k Ts)), padded with zeros.
    ``reset``: at every positive multiple of ``period`` returns x0 - f(x, u),
    so the next state equals ``x0`` exactly.
    """

    kind: str = "none"
    amplitude: float = 0.0
    Ts: float = 0.1
    period: int = 0
    x0: tuple = ()

    def __post_init__(self):
        if self.kind not in ("none", "quasiperiodic", "reset"):
            raise ConfigError(f"unknown disturbance kind {self.kind!r}")
        if self.kind == "reset" and self.period < 1:
            raise ConfigError("reset disturbance needs period >= 1")

    def is_reset(self, k):
        return self.kind == "reset" and k > 0 and k % self.period == 0

    def __call__(self, k, x, u, plant):
        n = plant.n
        if self.kind == "quasiperiodic":
            w = np.zeros(n)
            w[:2] = self.amplitude * np.array([np.sin(k * self.Ts), np.cos(k * self.Ts)])
            return w
        if self.is_reset(k):
            x0 = np.asarray(self.x0, dtype=float)
            # cancellation must be exact: x+ = f + (x0 - f) == x0 in floating point
            # is not guaranteed, so callers use next_state() for the plant update
            return x0 - plant.step(x, u)
        return np.zeros(n)

    def next_state(self, k, x, u, plant):
        if self.is_reset(k):
            return np.asarray(self.x0, dtype=float).copy()
        return plant.step(x, u) + self(k, x, u, plant)


def disturbance_at(sig, k, x, u, plant):
    return sig(k, x, u, plant)


@dataclass(frozen=True, eq=False)
class Reference:
    """Piecewise-constant reference r(k); ``square`` holds ``high`` for the first
    half of each period (periods start at k = 1) and ``low`` for the second."""

    kind: str = "none"
    period: int = 200
    high: float = 1.0
    low: float = 0.0

    def __call__(self, k):
        if self.kind == "none":
            return None
        if self.kind == "square":
            return self.high if (k - 1) % self.period < self.period // 2 else self.low
        raise ConfigError(f"unknown reference kind {self.kind!r}")
