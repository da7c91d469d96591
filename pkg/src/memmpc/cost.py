"""Finite-horizon MPC costs J_N(U, x), their gradients and Lipschitz bounds."""

import math

import numpy as np
import scipy.linalg

from .exceptions import ConfigError, NonFiniteGradient
from .model import LinearPlant, UnicyclePlant


# --- relaxed logarithmic barrier -------------------------------------------

def relaxed_log_barrier(z, delta):
    """-ln z for z > delta, quadratic extension below; C^2, convex, defined on R."""
    if not delta > 0:
        raise ConfigError("barrier relaxation delta must be positive")
    z = np.asarray(z, dtype=float)
    quad = 0.5 * (((z - 2.0 * delta) / delta) ** 2 - 1.0) - math.log(delta)
    out = np.where(z > delta, -np.log(np.maximum(z, delta)), quad)
    return out if out.ndim else float(out)


def relaxed_log_barrier_d1(z, delta):
    z = np.asarray(z, dtype=float)
    return np.where(z > delta, -1.0 / np.maximum(z, delta), (z - 2.0 * delta) / delta ** 2)


def relaxed_log_barrier_d2(z, delta):
    z = np.asarray(z, dtype=float)
    return np.where(z > delta, 1.0 / np.maximum(z, delta) ** 2, 1.0 / delta ** 2)


class PolytopeBarrier:
    """Relaxed barrier of {z : C z <= d}, recentred so value and gradient vanish at ``center``."""

    def __init__(self, C, d, delta=0.1, center=None):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        d = np.asarray(d, dtype=float).reshape(-1)
        if C.shape[0] != d.shape[0]:
            raise ConfigError("barrier C and d have different row counts")
        self.C, self.d, self.delta = C, d, float(delta)
        self.dim = C.shape[1]
        self.recentre(np.zeros(self.dim) if center is None else center)

    def recentre(self, center):
        center = np.asarray(center, dtype=float)
        margin = self.d - self.C @ center
        if np.any(margin <= 0):
            raise ConfigError("barrier centre must lie strictly inside the polytope")
        self.center = center
        self._b0 = relaxed_log_barrier(margin, self.delta)
        self._g0 = relaxed_log_barrier_d1(margin, self.delta)
        self._h0 = relaxed_log_barrier_d2(margin, self.delta)

    def shifted(self, center):
        other = PolytopeBarrier(self.C, self.d, self.delta)
        other.recentre(center)
        return other

    def _shift(self, Z):
        Z = np.atleast_2d(Z)
        M = self.d - self.C @ self.center
        return M, (Z - self.center) @ self.C.T

    def value(self, Z):
        """Barrier of each row of Z (shape (k, dim)) summed over constraints."""
        M, s = self._shift(Z)
        delta = self.delta
        with np.errstate(all="ignore"):
            out = relaxed_log_barrier(M - s, delta) - self._b0 + self._g0 * s
            z = M - s
            # near the centre the difference above cancels; use closed forms instead
            both_log = (M > delta) & (z > delta)
            t = s / M
            small = both_log & (np.abs(t) < 1e-3)
            ser = t * t * (0.5 + t * (1 / 3 + t * (0.25 + t * (0.2 + t * (1 / 6 + t / 7)))))
            out = np.where(small, ser, out)
            both_quad = (M <= delta) & (z <= delta)
            out = np.where(both_quad, 0.5 * (s / delta) ** 2, out)
        return np.sum(out, axis=-1)

    def grad(self, Z):
        M, s = self._shift(Z)
        delta = self.delta
        z = M - s
        with np.errstate(all="ignore"):
            g = self._g0 - relaxed_log_barrier_d1(z, delta)
            g = np.where((M > delta) & (z > delta), s / (M * z), g)
            g = np.where((M <= delta) & (z <= delta), s / delta ** 2, g)
        return g @ self.C

    def hessian_at_center(self):
        return (self.C.T * self._h0) @ self.C

    def curvature_bound(self):
        # B'' <= 1/delta^2 everywhere
        return self.C.T @ self.C / self.delta ** 2


# --- generic cost ------------------------------------------------------------

class MPCCost:
    """J_N(U, x) = sum_j l(x_j, u_j) + F(x_N) over the nominal rollout.

    Subclasses provide ``stage``/``terminal`` and their gradients; the generic
    rollout and backward adjoint here work for any differentiable plant.
    """

    def __init__(self, plant, N):
        if N < 1:
            raise ConfigError("horizon N must be >= 1")
        self.plant, self.N = plant, int(N)
        self.n, self.m = plant.n, plant.m

    @property
    def size(self):
        return self.N * self.m

    def _check_U(self, U):
        U = np.asarray(U, dtype=float).reshape(-1)
        if U.shape[0] != self.size:
            raise ConfigError(f"input sequence has length {U.shape[0]}, expected {self.size}")
        return U

    def rollout(self, U, x, r=None):
        U = self._check_U(U).reshape(self.N, self.m)
        X = np.empty((self.N + 1, self.n))
        X[0] = x
        for j in range(self.N):
            X[j + 1] = self.plant.step(X[j], U[j])
        return X

    def total(self, U, x, r=None):
        U = self._check_U(U)
        with np.errstate(all="ignore"):
            X = self.rollout(U, x, r)
            if not np.all(np.isfinite(X)):
                return math.inf
            Us = U.reshape(self.N, self.m)
            J = sum(self.stage(X[j], Us[j], r) for j in range(self.N))
            J += self.terminal(X[-1], r)
        return float(J) if np.isfinite(J) else math.inf

    def value_and_grad(self, U, x, r=None):
        """Returns (J, dJ/dU, dJ/dx) by a backward adjoint sweep."""
        U = self._check_U(U)
        Us = U.reshape(self.N, self.m)
        with np.errstate(all="ignore"):
            X = self.rollout(U, x, r)
            J = self.terminal(X[-1], r)
            lam = self.terminal_grad(X[-1], r)
            gU = np.empty_like(Us)
            for j in range(self.N - 1, -1, -1):
                J += self.stage(X[j], Us[j], r)
                lx, lu = self.stage_grad(X[j], Us[j], r)
                fx, fu = self.plant.jacobians(X[j], Us[j])
                gU[j] = lu + fu.T @ lam
                lam = lx + fx.T @ lam
        gU = gU.reshape(-1)
        if not (np.isfinite(J) and np.all(np.isfinite(gU))):
            raise NonFiniteGradient("non-finite cost or gradient along the rollout")
        return float(J), gU, lam

    def grad(self, U, x, r=None):
        return self.value_and_grad(U, x, r)[1]

    def local_law(self, x, r=None):
        """Input appended by the temporal warm start; zero unless overridden."""
        return np.zeros(self.m)

    def lipschitz(self, U):
        raise NotImplementedError(f"{type(self).__name__} has no Lipschitz bound")


# --- linear plant with quadratic + relaxed barrier costs ------------------------

def riccati_step(P, A, B, Q, R):
    BtP = B.T @ P
    S = R + BtP @ B
    return Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(S, BtP @ A)


def dare_iterate(A, B, Q, R, tol=1e-10, max_iter=10_000):
    """Fixed-point Riccati iteration; returns (P, K) with u = K x the associated gain."""
    A, B = np.atleast_2d(A).astype(float), np.atleast_2d(B).astype(float)
    Q, R = np.atleast_2d(Q).astype(float), np.atleast_2d(R).astype(float)
    P = Q.copy()
    for _ in range(max_iter):
        P_new = riccati_step(P, A, B, Q, R)
        P_new = 0.5 * (P_new + P_new.T)
        if np.max(np.abs(P_new - P)) <= tol * max(1.0, np.max(np.abs(P_new))):
            P = P_new
            break
        P = P_new
    else:
        raise ConfigError("Riccati iteration did not converge; is (A, B) stabilizable?")
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return P, K


def terminal_weight(A, B, Q, R, eps=0.0, state_barrier=None, input_barrier=None):
    """Terminal weight P (and gain K) from the DARE with barrier-curvature-augmented weights."""
    Qb = np.atleast_2d(np.asarray(Q, dtype=float)).copy()
    Rb = np.atleast_2d(np.asarray(R, dtype=float)).copy()
    if eps and state_barrier is not None:
        Qb += eps * state_barrier.hessian_at_center()
    if eps and input_barrier is not None:
        Rb += eps * input_barrier.hessian_at_center()
    A, B = np.atleast_2d(A).astype(float), np.atleast_2d(B).astype(float)
    try:
        P = scipy.linalg.solve_discrete_are(A, B, Qb, Rb)
    except (np.linalg.LinAlgError, ValueError):
        raise ConfigError("no stabilizing DARE solution; is (A, B) stabilizable?") from None
    # one Riccati sweep removes the solver's rounding-level residual
    P = riccati_step(P, A, B, Qb, Rb)
    P = 0.5 * (P + P.T)
    K = -np.linalg.solve(Rb + B.T @ P @ B, B.T @ P @ A)
    return P, K


def _check_pd(M, what):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    try:
        np.linalg.cholesky(0.5 * (M + M.T))
    except np.linalg.LinAlgError:
        raise ConfigError(f"{what} must be positive definite") from None
    return M


class QuadraticBarrierCost(MPCCost):
    """Quadratic stage/terminal cost plus relaxed barriers for a linear plant.

    l(x, u) = |x - xs|_Q^2 + |u|_R^2 + eps (B_x(x) + B_u(u)),  F(x) = |x - xs|_P^2,
    where xs = ref_map @ r for tracking problems (xs = 0 otherwise) and the state
    barrier is recentred at xs.  Uses prediction matrices so the rollout and the
    adjoint collapse to matrix products.
    """

    def __init__(self, plant, N, Q, R, eps=0.0, delta=0.1, state_poly=None,
                 input_poly=None, P=None, ref_map=None, region_radius=None):
        if not isinstance(plant, LinearPlant):
            raise ConfigError("QuadraticBarrierCost needs a LinearPlant")
        super().__init__(plant, N)
        n, m = self.n, self.m
        self.Q = _check_pd(Q, "Q")
        self.R = _check_pd(R, "R")
        if eps < 0:
            raise ConfigError("barrier weight eps must be >= 0")
        self.eps, self.delta = float(eps), float(delta)
        self.state_barrier = None if state_poly is None else PolytopeBarrier(*state_poly, delta)
        self.input_barrier = None if input_poly is None else PolytopeBarrier(*input_poly, delta)
        if P is None:
            P, K = terminal_weight(plant.A, plant.B, self.Q, self.R, self.eps,
                                   self.state_barrier, self.input_barrier)
        else:
            P = _check_pd(P, "P")
            K = -np.linalg.solve(self.R + plant.B.T @ P @ plant.B, plant.B.T @ P @ plant.A)
        self.P, self.K = P, K
        self.ref_map = None if ref_map is None else np.asarray(ref_map, dtype=float).reshape(n)
        self.region_radius = region_radius
        self._barrier_cache = {}

        A, B = plant.A, plant.B
        Phi = np.empty(((N + 1) * n, n))
        Gam = np.zeros(((N + 1) * n, N * m))
        Ak = np.eye(n)
        for j in range(N + 1):
            Phi[j * n:(j + 1) * n] = Ak
            Ak = A @ Ak
        for j in range(1, N + 1):
            for i in range(j):
                Gam[j * n:(j + 1) * n, i * m:(i + 1) * m] = np.linalg.matrix_power(A, j - 1 - i) @ B
        self.Phi, self.Gamma = Phi, Gam

    def steady_state(self, r=None):
        if r is None or self.ref_map is None:
            return np.zeros(self.n)
        return self.ref_map * r

    def _state_barrier(self, r):
        if self.state_barrier is None or r is None or self.ref_map is None or r == 0:
            return self.state_barrier
        key = float(r)
        if key not in self._barrier_cache:
            self._barrier_cache[key] = self.state_barrier.shifted(self.steady_state(r))
        return self._barrier_cache[key]

    def stage(self, x, u, r=None):
        e = x - self.steady_state(r)
        u = np.atleast_1d(u)
        val = e @ self.Q @ e + u @ self.R @ u
        if self.eps:
            sb = self._state_barrier(r)
            if sb is not None:
                val += self.eps * sb.value(x)[0]
            if self.input_barrier is not None:
                val += self.eps * self.input_barrier.value(u)[0]
        return float(val)

    def stage_grad(self, x, u, r=None):
        e = x - self.steady_state(r)
        u = np.atleast_1d(u)
        lx, lu = 2 * self.Q @ e, 2 * self.R @ u
        if self.eps:
            sb = self._state_barrier(r)
            if sb is not None:
                lx = lx + self.eps * sb.grad(x)[0]
            if self.input_barrier is not None:
                lu = lu + self.eps * self.input_barrier.grad(u)[0]
        return lx, lu

    def terminal(self, x, r=None):
        e = x - self.steady_state(r)
        return float(e @ self.P @ e)

    def terminal_grad(self, x, r=None):
        return 2 * self.P @ (x - self.steady_state(r))

    def local_law(self, x, r=None):
        return self.K @ (x - self.steady_state(r))

    def rollout(self, U, x, r=None):
        U = self._check_U(U)
        return (self.Phi @ np.asarray(x, dtype=float) + self.Gamma @ U).reshape(self.N + 1, self.n)

    def _pieces(self, U, x, r):
        U = self._check_U(U)
        X = self.rollout(U, x, r)
        Us = U.reshape(self.N, self.m)
        E = X - self.steady_state(r)
        Es = E[:-1]
        J = np.einsum("ij,jk,ik->", Es, self.Q, Es) + np.einsum("ij,jk,ik->", Us, self.R, Us)
        J += E[-1] @ self.P @ E[-1]
        sb = self._state_barrier(r)
        if self.eps:
            if sb is not None:
                J += self.eps * np.sum(sb.value(X[:-1]))
            if self.input_barrier is not None:
                J += self.eps * np.sum(self.input_barrier.value(Us))
        return X, Us, E, sb, float(J)

    def total(self, U, x, r=None):
        with np.errstate(all="ignore"):
            J = self._pieces(U, x, r)[-1]
        return J if math.isfinite(J) else math.inf

    def value_and_grad(self, U, x, r=None):
        with np.errstate(all="ignore"):
            X, Us, E, sb, J = self._pieces(U, x, r)
            gX = np.empty_like(X)
            gX[:-1] = 2 * E[:-1] @ self.Q
            gX[-1] = 2 * self.P @ E[-1]
            gU = 2 * Us @ self.R
            if self.eps:
                if sb is not None:
                    gX[:-1] += self.eps * sb.grad(X[:-1])
                if self.input_barrier is not None:
                    gU = gU + self.eps * self.input_barrier.grad(Us)
            gX = gX.reshape(-1)
            gUt = self.Gamma.T @ gX + gU.reshape(-1)
            gx = self.Phi.T @ gX
        if not (math.isfinite(J) and np.all(np.isfinite(gUt))):
            raise NonFiniteGradient("non-finite cost or gradient along the rollout")
        return J, gUt, gx

    def state_hessian_bound(self):
        """Upper bound (in the psd order) on the Hessian of J_N(U, .)."""
        n, N = self.n, self.N
        W = 2 * self.Q
        if self.eps and self.state_barrier is not None:
            W = W + self.eps * self.state_barrier.curvature_bound()
        D = np.zeros(((N + 1) * n, (N + 1) * n))
        for j in range(N):
            D[j * n:(j + 1) * n, j * n:(j + 1) * n] = W
        D[N * n:, N * n:] = 2 * self.P
        return self.Phi.T @ D @ self.Phi

    def lipschitz(self, U):
        """Lipschitz constant of J_N(U, .) on the ball of radius ``region_radius`` about 0.

        The quadratic terms make J_N(U, .) only locally Lipschitz, so a region is required.
        """
        if self.region_radius is None:
            raise ConfigError("linear costs need region_radius for a Lipschitz bound")
        if not hasattr(self, "_hess_norm"):
            self._hess_norm = float(np.linalg.eigvalsh(self.state_hessian_bound())[-1])
        _, _, gx = self.value_and_grad(U, np.zeros(self.n))
        return float(np.linalg.norm(gx) + self.region_radius * self._hess_norm)


def stage_cost_linear(cost, x, u, r=None):
    return cost.stage(np.asarray(x, dtype=float), np.atleast_1d(np.asarray(u, dtype=float)), r)


# --- unicycle ------------------------------------------------------------------

LIPSCHITZ_STAGE = math.sqrt(13.0 / 50.0)


def stage_cost_unicycle(x, u):
    return (0.1 * math.sin(x[2] / 2.0) ** 2 + (1.0 + x[0] ** 2 + x[1] ** 2) ** 0.25 - 1.0
            + u[0] ** 8 + u[1] ** 8)


def lipschitz_dynamics_unicycle(u1, Ts):
    a = Ts * abs(u1)
    return math.sqrt(1.0 + a * math.sqrt(1.0 + a * a / 4.0) + a * a / 2.0)


def lipschitz_L(U, Ts, N=None, m=2, L_stage=LIPSCHITZ_STAGE, L_terminal=None):
    """sum_{i=0}^{N} (L_l + [i = N](L_F - L_l)) prod_{j<i} L_f(u_j) for the unicycle cost."""
    U = np.asarray(U, dtype=float).reshape(-1, m)
    N = U.shape[0] if N is None else N
    L_terminal = 100.0 * L_stage if L_terminal is None else L_terminal
    total, prod = 0.0, 1.0
    for i in range(N + 1):
        total += (L_terminal if i == N else L_stage) * prod
        if i < N:
            prod *= lipschitz_dynamics_unicycle(U[i, 0], Ts)
    return total


class UnicycleCost(MPCCost):
    """Stage cost 0.1 sin(x3/2)^2 + (1 + x1^2 + x2^2)^(1/4) - 1 + u1^8 + u2^8, F = 100 l(x, 0)."""

    terminal_scale = 100.0

    def __init__(self, plant, N):
        if not isinstance(plant, UnicyclePlant):
            raise ConfigError("UnicycleCost needs a UnicyclePlant")
        super().__init__(plant, N)
        self.Ts = plant.Ts

    def stage(self, x, u, r=None):
        return stage_cost_unicycle(x, u)

    def stage_grad(self, x, u, r=None):
        q = (1.0 + x[0] ** 2 + x[1] ** 2) ** -0.75
        lx = np.array([0.5 * x[0] * q, 0.5 * x[1] * q, 0.05 * math.sin(x[2])])
        lu = np.array([8.0 * u[0] ** 7, 8.0 * u[1] ** 7])
        return lx, lu

    def terminal(self, x, r=None):
        return self.terminal_scale * stage_cost_unicycle(x, (0.0, 0.0))

    def terminal_grad(self, x, r=None):
        return self.terminal_scale * self.stage_grad(x, (0.0, 0.0))[0]

    # scalar fast paths; identical arithmetic to the generic rollout/adjoint above

    def total(self, U, x, r=None):
        U = self._check_U(U)
        Ts = self.Ts
        p, q, th = float(x[0]), float(x[1]), float(x[2])
        J = 0.0
        try:
            for j in range(self.N):
                u1, u2 = U[2 * j], U[2 * j + 1]
                J += (0.1 * math.sin(th / 2.0) ** 2 + (1.0 + p * p + q * q) ** 0.25 - 1.0
                      + u1 ** 8 + u2 ** 8)
                p, q, th = p + Ts * u1 * math.cos(th), q + Ts * u1 * math.sin(th), th + Ts * u2
            J += self.terminal_scale * (0.1 * math.sin(th / 2.0) ** 2
                                        + (1.0 + p * p + q * q) ** 0.25 - 1.0)
        except (OverflowError, ValueError):
            return math.inf
        return J if math.isfinite(J) else math.inf

    def value_and_grad(self, U, x, r=None):
        U = self._check_U(U)
        Ts, N = self.Ts, self.N
        P = [float(x[0])]
        Qy = [float(x[1])]
        TH = [float(x[2])]
        try:
            for j in range(N):
                u1, u2 = U[2 * j], U[2 * j + 1]
                P.append(P[-1] + Ts * u1 * math.cos(TH[-1]))
                Qy.append(Qy[-1] + Ts * u1 * math.sin(TH[-1]))
                TH.append(TH[-1] + Ts * u2)
            s = self.terminal_scale
            p, q, th = P[N], Qy[N], TH[N]
            w = (1.0 + p * p + q * q)
            J = s * (0.1 * math.sin(th / 2.0) ** 2 + w ** 0.25 - 1.0)
            c = w ** -0.75
            l1, l2, l3 = s * 0.5 * p * c, s * 0.5 * q * c, s * 0.05 * math.sin(th)
            g = np.empty(2 * N)
            for j in range(N - 1, -1, -1):
                p, q, th = P[j], Qy[j], TH[j]
                u1, u2 = U[2 * j], U[2 * j + 1]
                w = (1.0 + p * p + q * q)
                J += 0.1 * math.sin(th / 2.0) ** 2 + w ** 0.25 - 1.0 + u1 ** 8 + u2 ** 8
                ct, st = math.cos(th), math.sin(th)
                g[2 * j] = 8.0 * u1 ** 7 + Ts * (ct * l1 + st * l2)
                g[2 * j + 1] = 8.0 * u2 ** 7 + Ts * l3
                c = w ** -0.75
                l3 = 0.05 * math.sin(th) + l3 + Ts * u1 * (-st * l1 + ct * l2)
                l1 = 0.5 * p * c + l1
                l2 = 0.5 * q * c + l2
        except (OverflowError, ValueError):
            raise NonFiniteGradient("overflow along the unicycle rollout") from None
        if not (math.isfinite(J) and np.all(np.isfinite(g))):
            raise NonFiniteGradient("non-finite cost or gradient along the rollout")
        return J, g, np.array([l1, l2, l3])

    def lipschitz(self, U):
        return lipschitz_L(U, self.Ts, self.N, self.m)


def total_cost(cost, U, x, r=None):
    return cost.total(U, x, r)


def grad_U(cost, U, x, r=None):
    return cost.grad(U, x, r)
