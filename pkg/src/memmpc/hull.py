"""Incremental lower convex hull of the lifted (x, J) data with a directed-walk
point location and convex-combination warm starts.

Vertex and facet indices are 0-based.  A facet of the lower hull ("xJ") holds
n+1 vertex indices, a facet of the state-space hull ("x") holds n.  Deleted
facet slots are kept as ``None`` and reused from the free lists.
"""

import copy
import itertools
import math
from collections import deque
from typing import NamedTuple

import numpy as np

from .exceptions import DegenerateGeometry, StaleLocation, WalkAborted

TOL_BRANCH = 1e-12
TOL_AUDIT = 1e-9


def normal(A, x):
    """Unit normal of the hyperplane through the rows of ``A``, pointing away from ``x``.

    Uses the QR factorization of [A_1 - A_p, ..., A_{p-1} - A_p, x - A_p] with a
    positive R diagonal; the normal is the negated last column of Q.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    x = np.asarray(x, dtype=float).reshape(-1)
    p = A.shape[0]
    if A.shape[1] != p or x.shape[0] != p:
        raise DegenerateGeometry(f"normal needs p points in R^p, got {A.shape}")
    M = np.empty((p, p))
    M[:, :p - 1] = (A[:p - 1] - A[p - 1]).T
    M[:, p - 1] = x - A[p - 1]
    Q, R = np.linalg.qr(M)
    diag = np.diag(R)
    scale = float(np.abs(M).max())
    if scale == 0.0 or np.any(np.abs(diag) <= 1e-13 * scale):
        raise DegenerateGeometry("points and reference are affinely dependent")
    return -Q[:, p - 1] * np.sign(diag[p - 1])


def _plane(P, ref):
    """(d, offset) of the hyperplane through the rows of ``P``, with d.ref < offset."""
    P = np.asarray(P, dtype=float)
    p = P.shape[1]
    if p == 1:
        d = np.array([1.0])
    else:
        D = (P[:-1] - P[-1]).T
        Q, R = np.linalg.qr(D, mode="complete")
        diag = np.abs(np.diag(R))
        scale = float(np.abs(D).max())
        if scale == 0.0 or np.any(diag <= 1e-13 * scale):
            raise DegenerateGeometry("facet vertices are affinely dependent")
        d = Q[:, -1].copy()
    off = float(d @ P[-1])
    side = float(d @ ref) - off
    if side == 0.0:
        raise DegenerateGeometry("orientation reference lies on the facet plane")
    if side > 0:
        d, off = -d, -off
    return d, off


def _worst_side(P, d, off):
    """Largest relative signed distance of the rows of P beyond the plane (d, off)."""
    mag = np.abs(P) @ np.abs(d) + abs(off)
    raw = P @ d - off
    rel = np.divide(raw, mag, out=np.zeros_like(raw), where=mag > 0)
    return float(rel.max())


class WarmStartResult(NamedTuple):
    U: np.ndarray
    F: int
    i: int
    value: float
    vertices: tuple
    weights: np.ndarray
    inside: bool


def _facet_key(F, hull):
    # signed facet index: +(slot+1) for the lower hull, -(slot+1) for the state hull
    return F + 1 if hull == "xJ" else -(F + 1)


class ConvexHullObject:
    """Data set D = {(x, U, J)} together with the lower hull of the lifted cloud."""

    def __init__(self, n):
        if n < 1:
            raise ValueError("state dimension must be >= 1")
        self.n = n
        self._X = np.empty((16, n))
        self._Jv = np.empty(16)
        self.D_U = []
        self.count = 0
        self.facets = {"xJ": [], "x": []}
        self.free = {"xJ": [], "x": []}
        self.G = {"xJ": [], "x": []}
        self.absorbed_by = []
        self._planes = {"xJ": [], "x": []}
        self.c_x = np.zeros(n)
        self.c_xJ = np.zeros(n + 1)
        self.version = 0
        self.fallbacks = 0

    # ------------------------------------------------------------------ data
    @property
    def D_x(self):
        return self._X[:self.count]

    @property
    def D_J(self):
        return self._Jv[:self.count]

    @property
    def D_xJ(self):
        return np.column_stack([self.D_x, self.D_J])

    def _lift(self, idx):
        return np.concatenate([self._X[idx], [self._Jv[idx]]])

    def _append(self, x, U, J):
        if self.count == self._X.shape[0]:
            cap = 2 * self.count
            X = np.empty((cap, self.n))
            X[:self.count] = self._X[:self.count]
            Jv = np.empty(cap)
            Jv[:self.count] = self._Jv[:self.count]
            self._X, self._Jv = X, Jv
        k = self.count
        self._X[k] = x
        self._Jv[k] = J
        self.D_U.append(np.array(U, dtype=float))
        self.G["xJ"].append([])
        self.G["x"].append([])
        self.absorbed_by.append(-1)
        self.count += 1
        # running centroids
        self.c_x = self.c_x * ((k) / (k + 1)) + x / (k + 1)
        self.c_xJ = self.c_xJ * ((k) / (k + 1)) + np.append(x, J) / (k + 1)
        return k

    def _scale(self):
        X = self.D_x
        return max(1.0, float(np.abs(X).max()) if len(X) else 1.0)

    def _jscale(self):
        J = self.D_J
        return max(1.0, float(np.abs(J).max()) if len(J) else 1.0)

    # --------------------------------------------------------------- facets
    def live_facets(self, which):
        return [F for F, f in enumerate(self.facets[which]) if f is not None]

    def facet(self, F, which="xJ"):
        return self.facets[which][F]

    def get_facets(self, E, which="xJ"):
        """Facets of the chosen hull containing every vertex of ``E`` (all live facets if E is empty)."""
        E = list(E)
        if not E:
            return self.live_facets(which)
        G = self.G[which]
        out = set(G[E[0]])
        for p in E[1:]:
            if not out:
                break
            out.intersection_update(G[p])
        return sorted(out)

    def _orient_ref(self, which):
        if which == "x":
            return self.c_x
        J = self.D_J
        H = 1.0 + float(J.max() - J.min())
        ref = self.c_xJ.copy()
        ref[-1] += H
        return ref

    def _compute_plane(self, f, which):
        idx = list(f)
        P = self.D_xJ[idx] if which == "xJ" else self.D_x[idx]
        return _plane(P, self._orient_ref(which))

    def add_facet(self, f, k=None, which="xJ", plane=None):
        f = tuple(int(v) for v in f)
        if plane is None:
            plane = self._compute_plane(f, which)
        if self.free[which]:
            F = self.free[which].pop()
            self.facets[which][F] = f
            self._planes[which][F] = plane
        else:
            F = len(self.facets[which])
            self.facets[which].append(f)
            self._planes[which].append(plane)
        for p in f:
            self.G[which][p].append(F)
        return F

    def remove_facet(self, F, k=None, which="xJ"):
        f = self.facets[which][F]
        if f is None:
            raise StaleLocation(f"facet {F} of {which} is not live")
        for p in f:
            self.G[which][p].remove(F)
            if which == "xJ" and k is not None and not self.G["xJ"][p]:
                self.absorbed_by[p] = k
        self.facets[which][F] = None
        self._planes[which][F] = None
        self.free[which].append(F)

    def signed_distance(self, F, point, which="xJ"):
        """Positive when ``point`` lies strictly outside facet F (below it for xJ)."""
        d, off = self._planes[which][F]
        return float(d @ point) - off

    def relative_side(self, F, point, which="xJ"):
        """Signed distance scaled by the magnitude of the terms it is computed from."""
        d, off = self._planes[which][F]
        mag = float(np.abs(d) @ np.abs(point)) + abs(off)
        return (float(d @ point) - off) / mag if mag > 0 else 0.0

    def follow(self, i):
        """Follow absorbed-vertex redirects to a vertex that still lies on the hull."""
        seen = 0
        while self.absorbed_by[i] >= 0 and not self.G["xJ"][i]:
            i = self.absorbed_by[i]
            seen += 1
            if seen > self.count:
                raise WalkAborted("redirect chain does not terminate")
        return i

    # ------------------------------------------------------- point location
    def points_in_facet(self, x, F, i):
        """True if x - D_x(i) points into the state projection of lower facet F."""
        a = self._X[i]
        v = np.asarray(x, dtype=float) - a
        if not np.any(v):
            return True
        vnorm = float(np.linalg.norm(v))
        E = self.facets["xJ"][F]
        X = self._X
        for j in E:
            if j == i:
                continue
            rest = [p for p in E if p != j]
            try:
                d = normal(X[rest], X[j]) if self.n > 1 else np.array(
                    [1.0 if X[rest[0]][0] > X[j][0] else -1.0])
            except DegenerateGeometry:
                return False
            if float(d @ v) > TOL_BRANCH * vnorm:
                return False
        return True

    def find_intersection(self, a, v, s, F, E):
        """Exit parameter and exit ridge of the ray a + t v leaving lower facet F."""
        f = self.facets["xJ"][F]
        E = set(E)
        entered_from = [p for p in f if p not in E]
        X = self._X
        best, best_E = math.inf, None
        for j in f:
            if j in entered_from:
                continue
            rest = [p for p in f if p != j]
            if self.n > 1:
                try:
                    d = normal(X[rest], X[j])
                except DegenerateGeometry:
                    continue
            else:
                d = np.array([1.0 if X[rest[0]][0] > X[j][0] else -1.0])
            dv = float(d @ v)
            if dv <= 0:
                continue
            sj = float(d @ (X[rest[0]] - a)) / dv
            if sj <= s:
                continue
            if sj < best:
                best, best_E = sj, rest
        if best_E is None:
            raise WalkAborted("ray does not leave the facet through another ridge")
        return best, tuple(best_E)

    def find_conv_comb(self, E, x):
        """Weights c with sum(c) = 1 and sum(c_j D_x(E_j)) = x (bordered system)."""
        E = list(E)
        P = self._X[E]
        M = np.vstack([P.T, np.ones(len(E))])
        rhs = np.append(np.asarray(x, dtype=float), 1.0)
        if M.shape[0] == M.shape[1]:
            try:
                c = np.linalg.solve(M, rhs)
            except np.linalg.LinAlgError as exc:
                raise DegenerateGeometry("singular simplex") from exc
        else:
            c, _, rank, _ = np.linalg.lstsq(M, rhs, rcond=None)
            if rank < len(E):
                raise DegenerateGeometry("degenerate exit ridge")
        if not np.all(np.isfinite(c)):
            raise DegenerateGeometry("non-finite convex weights")
        return c

    def _combine(self, E, c):
        U = sum(cj * self.D_U[p] for cj, p in zip(c, E))
        val = float(sum(cj * self._Jv[p] for cj, p in zip(c, E)))
        return np.asarray(U, dtype=float), val

    def generate_sw(self, x, i=0, fallback=True):
        """Spatial warm start at ``x`` by a directed walk from vertex ``i``.

        The walk result is verified; if the walk aborts or ends inconsistently
        (rays through lower-dimensional faces) and ``fallback`` is set, the query
        is located by scanning all live facets instead.
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        try:
            res = self._walk(x, i)
            if self._consistent(res, x):
                return res
            if not fallback:
                raise WalkAborted("walk ended in a facet that does not locate the query")
        except (WalkAborted, DegenerateGeometry):
            if not fallback:
                raise
        self.fallbacks += 1
        return self.locate_exhaustive(x)

    def _consistent(self, res, x):
        if res.inside:
            w = res.weights
            return bool(np.all(w >= -TOL_AUDIT) and np.all(w <= 1 + TOL_AUDIT))
        return self.relative_side(-res.F - 1, x, "x") > TOL_BRANCH

    def locate_exhaustive(self, x):
        """Point location by checking every live facet (no walk)."""
        if self.count <= self.n:
            raise WalkAborted("hull not initialized")
        x = np.asarray(x, dtype=float).reshape(-1)
        live_x = self.live_facets("x")
        D = np.array([self._planes["x"][F][0] for F in live_x])
        off = np.array([self._planes["x"][F][1] for F in live_x])
        mag = np.abs(D) @ np.abs(x) + np.abs(off)
        raw = D @ x - off
        side = np.divide(raw, mag, out=np.zeros_like(raw), where=mag > 0)
        j = int(np.argmax(side))
        if side[j] > TOL_BRANCH:
            Fx = live_x[j]
            v = self._nearest(self.facets["x"][Fx], x)
            return WarmStartResult(self.D_U[v].copy(), _facet_key(Fx, "x"), v,
                                   float(self._Jv[v]), (v,), np.array([1.0]), False)
        live = self.live_facets("xJ")
        idx = np.array([self.facets["xJ"][F] for F in live])
        P = self._X[idx]                                   # (m, n+1, n)
        M = np.concatenate([P.transpose(0, 2, 1), np.ones((len(live), 1, self.n + 1))], axis=1)
        rhs = np.append(x, 1.0)
        with np.errstate(all="ignore"):
            cond_ok = np.abs(np.linalg.det(M)) > 0
            W = np.full((len(live), self.n + 1), -np.inf)
            if np.any(cond_ok):
                W[cond_ok] = np.linalg.solve(M[cond_ok], np.broadcast_to(
                    rhs, (int(cond_ok.sum()), self.n + 1))[..., None])[..., 0]
        score = np.where(np.all(np.isfinite(W), axis=1), W.min(axis=1), -np.inf)
        best = int(np.argmax(score))
        if not score[best] >= -TOL_AUDIT:
            raise WalkAborted("no facet contains the query")
        F = live[best]
        f = self.facets["xJ"][F]
        c = self.find_conv_comb(f, x)
        U, val = self._combine(f, c)
        return WarmStartResult(U, _facet_key(F, "xJ"), self._nearest(f, x), val, f, c, True)

    def _walk(self, x, i):
        if self.count <= self.n:
            raise WalkAborted("hull not initialized")
        x = np.asarray(x, dtype=float).reshape(-1)
        i = self.follow(int(i))
        if not self.G["xJ"][i]:
            raise WalkAborted(f"vertex {i} is not on the hull")
        a = self._X[i].copy()
        v = x - a
        if not np.any(v):
            F = self.G["xJ"][i][0]
            f = self.facets["xJ"][F]
            w = np.array([1.0 if p == i else 0.0 for p in f])
            U, val = self._combine(f, w)
            return WarmStartResult(U, _facet_key(F, "xJ"), i, val, f, w, True)

        F = None
        for cand in self.G["xJ"][i]:
            if self.points_in_facet(x, cand, i):
                F = cand
                break
        if F is None:
            return self._outside_at_vertex(x, i)

        f = self.facets["xJ"][F]
        E = tuple(p for p in f if p != i)
        X = self._X
        if self.n > 1:
            try:
                d = normal(X[list(E)], a)
            except DegenerateGeometry as exc:
                raise WalkAborted("degenerate facet at start of walk") from exc
        else:
            d = np.array([1.0 if X[E[0]][0] > a[0] else -1.0])
        dv = float(d @ v)
        if dv <= 0:
            raise WalkAborted("direction is tangent to the starting facet")
        s = float(d @ (X[E[0]] - a)) / dv
        steps = 0
        limit = 4 * (len(self.facets["xJ"]) + 4)
        while s < 1.0:
            nxt = [G for G in self.get_facets(E, "xJ") if G != F]
            if not nxt:
                break
            F = nxt[0]
            s, E = self.find_intersection(a, v, s, F, E)
            steps += 1
            if steps > limit:
                raise WalkAborted("walk did not terminate")

        if s < 1.0:
            # left the hull through boundary ridge E
            fx = self.get_facets(E, "x")
            if not fx:
                raise WalkAborted("exit ridge has no state-hull facet")
            Fx = fx[0]
            point = a + s * v
            c = self.find_conv_comb(E, point)
            U, val = self._combine(E, c)
            nearest = self._nearest(E, x)
            return WarmStartResult(U, _facet_key(Fx, "x"), nearest, val, tuple(E), c, False)

        f = self.facets["xJ"][F]
        try:
            c = self.find_conv_comb(f, x)
        except DegenerateGeometry as exc:
            raise WalkAborted("degenerate containing facet") from exc
        U, val = self._combine(f, c)
        return WarmStartResult(U, _facet_key(F, "xJ"), self._nearest(f, x), val, f, c, True)

    def _nearest(self, E, x):
        E = list(E)
        dist = np.linalg.norm(self._X[E] - x, axis=1)
        order = sorted(range(len(E)), key=lambda j: (dist[j], E[j]))
        return E[order[0]]

    def _outside_at_vertex(self, x, i):
        sides = [(self.relative_side(Fx, x, "x"), Fx) for Fx in self.G["x"][i]]
        if not sides:
            raise WalkAborted("no facet at the start vertex contains the query")
        best, Fx = max(sides, key=lambda t: (t[0], -t[1]))
        if best < -TOL_AUDIT:
            raise WalkAborted("no facet at the start vertex contains or excludes the query")
        f = self.facets["x"][Fx]
        j = self._nearest(f, x)
        return WarmStartResult(self.D_U[j].copy(), _facet_key(Fx, "x"), j, float(self._Jv[j]),
                               (j,), np.array([1.0]), False)

    def locate(self, x, i=0):
        return self.generate_sw(x, i)

    # ----------------------------------------------------------------- update
    def _check_location(self, x, z, F):
        if F > 0:
            Fs = F - 1
            if Fs >= len(self.facets["xJ"]) or self.facets["xJ"][Fs] is None:
                raise StaleLocation(f"lower facet {Fs} is not live")
            c = self.find_conv_comb(self.facets["xJ"][Fs], x)
            if np.any(c < -TOL_AUDIT) or np.any(c > 1 + TOL_AUDIT):
                raise StaleLocation("state is not in the projection of the given facet")
            if self.relative_side(Fs, z, "xJ") < -TOL_BRANCH:
                raise StaleLocation("point lies above the lower hull and would not change it")
            return "xJ", Fs
        if F < 0:
            Fs = -F - 1
            if Fs >= len(self.facets["x"]) or self.facets["x"][Fs] is None:
                raise StaleLocation(f"state-hull facet {Fs} is not live")
            if self.relative_side(Fs, x, "x") <= TOL_BRANCH:
                raise StaleLocation("state is not beyond the given state-hull facet")
            return "x", Fs
        raise StaleLocation("facet index 0 is not a location result")

    def update_ch(self, x, U, J, F):
        """Insert (x, U, J) given its location F from ``generate_sw`` and repair both hulls."""
        x = np.asarray(x, dtype=float).reshape(-1)
        J = float(J)
        z = np.append(x, J)
        seed_kind, seed = self._check_location(x, z, F)

        vis_low, vis_wall = set(), set()
        hidden_low, hidden_wall = set(), set()

        def low_visible(T):
            if T in vis_low:
                return True
            if T in hidden_low:
                return False
            if self.relative_side(T, z, "xJ") > TOL_BRANCH:
                return True
            hidden_low.add(T)
            return False

        def wall_visible(W):
            if W in vis_wall:
                return True
            if W in hidden_wall:
                return False
            if self.relative_side(W, x, "x") > TOL_BRANCH:
                return True
            hidden_wall.add(W)
            return False

        queue = deque()
        if seed_kind == "xJ":
            vis_low.add(seed)
            queue.append(("xJ", seed))
        else:
            vis_wall.add(seed)
            queue.append(("x", seed))
        new_low, new_x = [], []

        while queue:
            kind, T = queue.popleft()
            f = self.facets[kind][T]
            if kind == "xJ":
                for j in range(len(f)):
                    E = f[:j] + f[j + 1:]
                    other = [S for S in self.get_facets(E, "xJ") if S != T]
                    if other:
                        S = other[0]
                        if S in vis_low:
                            continue
                        if low_visible(S):
                            vis_low.add(S)
                            queue.append(("xJ", S))
                        else:
                            new_low.append(E)
                        continue
                    walls = self.get_facets(E, "x")
                    if not walls:
                        new_low.append(E)
                        continue
                    W = walls[0]
                    if W in vis_wall:
                        continue
                    if wall_visible(W):
                        vis_wall.add(W)
                        queue.append(("x", W))
                    else:
                        new_low.append(E)
            else:
                lows = self.get_facets(f, "xJ")
                if lows:
                    S = lows[0]
                    if S not in vis_low:
                        if low_visible(S):
                            vis_low.add(S)
                            queue.append(("xJ", S))
                        else:
                            new_low.append(f)
                for j in range(len(f)):
                    R = f[:j] + f[j + 1:]
                    other = [W for W in self.get_facets(R, "x") if W != T]
                    if other:
                        W = other[0]
                        if W in vis_wall:
                            continue
                        if wall_visible(W):
                            vis_wall.add(W)
                            queue.append(("x", W))
                        else:
                            new_x.append(R)
                    else:
                        new_x.append(R)

        if not new_low:
            raise DegenerateGeometry("new point would not become a hull vertex")
        # planes of the new facets are computed before any mutation so that a
        # degenerate facet leaves the object untouched
        Jv = self.D_J
        ref_xJ = self._orient_ref("xJ")
        ref_xJ[-1] += max(0.0, J - float(Jv.max())) + max(0.0, float(Jv.min()) - J)
        ref_x = self.c_x.copy()
        try:
            planes_low = [_plane(np.vstack([self.D_xJ[list(E)], z]), ref_xJ) for E in new_low]
            planes_x = [_plane(np.vstack([self.D_x[list(R)], x]) if R else x[None], ref_x)
                        for R in new_x]
        except DegenerateGeometry as exc:
            raise DegenerateGeometry("insertion would produce a flat facet") from exc

        k = self._append(x, U, J)
        touched = [self.facets["xJ"][T] for T in vis_low]
        for T in sorted(vis_low):
            self.remove_facet(T, k, "xJ")
        for W in sorted(vis_wall):
            self.remove_facet(W, k, "x")
        for E, plane in zip(new_low, planes_low):
            self.add_facet(tuple(E) + (k,), k, "xJ", plane)
        for R, plane in zip(new_x, planes_x):
            self.add_facet(tuple(R) + (k,), k, "x", plane)
        for T in touched:
            for p in T:
                if self.G["xJ"][p] and self.absorbed_by[p] == k:
                    self.absorbed_by[p] = -1
        self.version += 1
        return self

    def insert(self, x, U, J, i=0):
        """Locate x and insert the point if it changes the hull.

        Returns ``(inserted, location)``.  In-hull points at or above the current
        interpolation are skipped.
        """
        loc = self.generate_sw(x, i)
        if loc.inside:
            z = np.append(np.asarray(x, dtype=float), float(J))
            if self.relative_side(loc.F - 1, z, "xJ") < -TOL_BRANCH:
                return False, loc
        self.update_ch(x, U, J, loc.F)
        return True, loc

    def snapshot(self):
        return copy.deepcopy(self)

    # ----------------------------------------------------------------- audit
    def audit(self, tol=TOL_AUDIT):
        """List of invariant violations (empty when the object is consistent)."""
        problems = []
        for which in ("xJ", "x"):
            facets, G = self.facets[which], self.G[which]
            free = set(self.free[which])
            for F, f in enumerate(facets):
                if (f is None) != (F in free):
                    problems.append(f"{which} slot {F}: free list mismatch")
                if f is None:
                    continue
                for p in f:
                    if F not in G[p]:
                        problems.append(f"{which} facet {F} missing from G of vertex {p}")
            for p, lst in enumerate(G):
                for F in lst:
                    if F >= len(facets) or facets[F] is None or p not in facets[F]:
                        problems.append(f"{which} G of vertex {p} lists bad facet {F}")
        for which in ("xJ", "x"):
            for F in self.live_facets(which):
                if self._planes[which][F] is None:
                    problems.append(f"{which} facet {F} has affinely dependent vertices")
        Z = self.D_xJ
        for F in self.live_facets("xJ"):
            if self._planes["xJ"][F] is None:
                continue
            d, off = self._planes["xJ"][F]
            if d[-1] >= 0:
                problems.append(f"lower facet {F} normal not oriented downward")
            worst = _worst_side(Z, d, off)
            if worst > tol:
                problems.append(f"lower facet {F} has a point below it ({worst:.3e})")
        X = self.D_x
        for F in self.live_facets("x"):
            if self._planes["x"][F] is None:
                continue
            d, off = self._planes["x"][F]
            worst = _worst_side(X, d, off)
            if worst > tol:
                problems.append(f"state facet {F} excludes a point ({worst:.3e})")
            if float(d @ self.c_x) - off >= 0:
                problems.append(f"state facet {F} not oriented away from the centroid")
        if self.count:
            mean = X.mean(axis=0)
            # running-mean rounding grows slowly with the number of updates
            tol_mean = 1e-12 * max(1.0, float(np.abs(mean).max())) * max(1.0, math.log2(self.count + 1))
            if np.abs(mean - self.c_x).max() > tol_mean:
                problems.append("running centroid drifted from the data mean")
        for p in range(self.count):
            if not self.G["xJ"][p] and self.absorbed_by[p] < 0:
                problems.append(f"vertex {p} off the hull without a redirect")
        return problems

    # ------------------------------------------------------------ dump/load
    def dump(self, fh):
        """Write a line-oriented text dump."""
        w = fh.write
        w("memmpc-hull 1\n")
        w(f"n {self.n}\n")
        for p in range(self.count):
            xs = " ".join(repr(float(v)) for v in self._X[p])
            us = " ".join(repr(float(v)) for v in self.D_U[p])
            w(f"point {p} {xs} | {float(self._Jv[p])!r} | {us}\n")
        for which in ("xJ", "x"):
            for F, f in enumerate(self.facets[which]):
                body = "free" if f is None else " ".join(map(str, f))
                w(f"facet_{which} {F} {body}\n")
        for p in range(self.count):
            w(f"g_xJ {p} {' '.join(map(str, self.G['xJ'][p]))}\n".replace("  \n", "\n"))
            w(f"g_x {p} {' '.join(map(str, self.G['x'][p]))}\n")
            if self.absorbed_by[p] >= 0:
                w(f"absorbed {p} {self.absorbed_by[p]}\n")
        w("center_x " + " ".join(repr(float(v)) for v in self.c_x) + "\n")
        w("center_xJ " + " ".join(repr(float(v)) for v in self.c_xJ) + "\n")
        w("end\n")

    def dumps(self):
        import io
        buf = io.StringIO()
        self.dump(buf)
        return buf.getvalue()

    @classmethod
    def load(cls, fh):
        lines = [ln.rstrip("\n") for ln in fh]
        if not lines or not lines[0].startswith("memmpc-hull"):
            raise ValueError("not a hull dump")
        n = int(lines[1].split()[1])
        hull = cls(n)
        pending_facets = {"xJ": {}, "x": {}}
        pending_G = {"xJ": {}, "x": {}}
        centers = {}
        for ln in lines[2:]:
            if not ln or ln == "end":
                continue
            tag, rest = (ln.split(" ", 1) + [""])[:2]
            if tag == "point":
                head, J, us = rest.split("|")
                parts = head.split()
                x = np.array([float(v) for v in parts[1:]])
                U = np.array([float(v) for v in us.split()])
                hull._append(x, U, float(J))
            elif tag.startswith("facet_"):
                which = tag[len("facet_"):]
                parts = rest.split()
                F = int(parts[0])
                pending_facets[which][F] = None if parts[1:] == ["free"] else tuple(int(v) for v in parts[1:])
            elif tag in ("g_xJ", "g_x"):
                parts = rest.split()
                pending_G[tag[2:]][int(parts[0])] = [int(v) for v in parts[1:]]
            elif tag == "absorbed":
                p, k = map(int, rest.split())
                hull.absorbed_by[p] = k
            elif tag.startswith("center_"):
                centers[tag] = np.array([float(v) for v in rest.split()])
        for which, table in pending_facets.items():
            size = max(table) + 1 if table else 0
            hull.facets[which] = [None] * size
            hull._planes[which] = [None] * size
            for F in range(size):
                f = table.get(F)
                if f is None:
                    hull.free[which].append(F)
                    continue
                hull.facets[which][F] = f
                try:
                    hull._planes[which][F] = hull._compute_plane(f, which)
                except DegenerateGeometry:
                    # kept so audit() can report it instead of failing to load
                    hull._planes[which][F] = None
                if not pending_G[which]:
                    for p in f:
                        hull.G[which][p].append(F)
            # incidence lists are restored as written so the walk order survives a
            # round trip; audit() reports any disagreement with the facet table
            for p, lst in pending_G[which].items():
                hull.G[which][p] = list(lst)
            hull.free[which].reverse()
        if "center_x" in centers:
            hull.c_x = centers["center_x"]
            hull.c_xJ = centers["center_xJ"]
        return hull


def init_hull(xs, Us, Js):
    """Hull over n+1 affinely independent points; raises DegenerateGeometry otherwise."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    n = xs.shape[1]
    if xs.shape[0] != n + 1:
        raise ValueError(f"need exactly {n + 1} points to initialize a hull in R^{n}")
    D = xs[1:] - xs[0]
    sv = np.linalg.svd(D, compute_uv=False)
    scale = max(1.0, float(np.abs(xs).max()))
    if sv.min() <= 1e-10 * scale:
        raise DegenerateGeometry("initial states are affinely dependent")
    hull = ConvexHullObject(n)
    for x, U, J in zip(xs, Us, Js):
        hull._append(x, U, J)
    all_idx = tuple(range(n + 1))
    hull.add_facet(all_idx, None, "xJ")
    for j in range(n + 1):
        hull.add_facet(all_idx[:j] + all_idx[j + 1:], None, "x")
    return hull


class HullLearner:
    """Buffers points until n+1 affinely independent states exist, then grows a hull."""

    def __init__(self, n):
        self.n = n
        self.hull = None
        self._buffer = []
        self.guess = 0

    @property
    def ready(self):
        return self.hull is not None

    @property
    def size(self):
        return self.hull.count if self.hull is not None else len(self._buffer)

    def _try_init(self):
        n = self.n
        for combo in itertools.combinations(range(len(self._buffer)), n + 1):
            pts = [self._buffer[c] for c in combo]
            try:
                self.hull = init_hull([p[0] for p in pts], [p[1] for p in pts], [p[2] for p in pts])
            except DegenerateGeometry:
                continue
            rest = [p for c, p in enumerate(self._buffer) if c not in combo]
            self._buffer = []
            for x, U, J in rest:
                try:
                    self.hull.insert(x, U, J)
                except (WalkAborted, DegenerateGeometry, StaleLocation):
                    pass
            return True
        return False

    def add(self, x, U, J, location=None):
        """Insert a point.  ``location`` is a prior ``generate_sw`` result at x."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if self.hull is None:
            self._buffer.append((x.copy(), np.array(U, dtype=float), float(J)))
            self._try_init()
            return True
        if location is not None:
            try:
                self.hull.update_ch(x, U, J, location.F)
                return True
            except StaleLocation:
                pass
        ok, _ = self.hull.insert(x, U, J, self.guess)
        return ok

    def query(self, x):
        if self.hull is None:
            raise WalkAborted("hull not yet initialized")
        res = self.hull.generate_sw(x, self.guess)
        self.guess = res.i
        return res


# ------------------------------------------------------------ references
def _hyperplanes(P, combos):
    """Normals (rows) and offsets for every subset in ``combos`` (generalized cross product)."""
    pts = P[combos]                      # (m, p, p)
    D = pts[:, 1:, :] - pts[:, :1, :]    # (m, p-1, p)
    m, _, p = pts.shape
    N = np.empty((m, p))
    for j in range(p):
        minor = np.delete(D, j, axis=2)
        N[:, j] = ((-1) ** j) * (np.linalg.det(minor) if p > 1 else 1.0)
    off = np.einsum("mp,mp->m", N, pts[:, 0, :])
    return N, off


def brute_force_lower_hull(Z, tol=TOL_AUDIT):
    """Lower-hull facets of lifted points Z (rows (x, J)) by enumerating all (n+1)-subsets."""
    Z = np.asarray(Z, dtype=float)
    P, p = Z.shape
    combos = np.array(list(itertools.combinations(range(P), p)), dtype=int)
    if len(combos) == 0:
        return set()
    N, off = _hyperplanes(Z, combos)
    keep = np.abs(N[:, -1]) > 1e-12 * np.linalg.norm(N, axis=1)
    N, off, combos = N[keep], off[keep], combos[keep]
    flip = N[:, -1] > 0
    N[flip] *= -1
    off[flip] *= -1
    norm = np.linalg.norm(N, axis=1)
    scale = max(1.0, float(np.abs(Z).max()))
    side = (Z @ N.T - off) / norm      # positive = below the plane
    ok = np.all(side <= tol * scale, axis=0)
    return {tuple(sorted(map(int, c))) for c in combos[ok]}


def brute_force_outer_hull(X, tol=TOL_AUDIT):
    """Facets of conv X by enumerating all n-subsets (n = 1 gives the two extreme points)."""
    X = np.asarray(X, dtype=float)
    P, n = X.shape
    if n == 1:
        lo, hi = int(np.argmin(X[:, 0])), int(np.argmax(X[:, 0]))
        return {(lo,), (hi,)}
    combos = np.array(list(itertools.combinations(range(P), n)), dtype=int)
    N, off = _hyperplanes(X, combos)
    norm = np.linalg.norm(N, axis=1)
    good = norm > 1e-12
    N, off, combos, norm = N[good], off[good], combos[good], norm[good]
    side = (X @ N.T - off) / norm
    scale = max(1.0, float(np.abs(X).max()))
    ok = np.all(side <= tol * scale, axis=0) | np.all(side >= -tol * scale, axis=0)
    return {tuple(sorted(map(int, c))) for c in combos[ok]}


def qhull_lower_hull(Z):
    """Lower-hull facets via scipy's Qhull (for data sets too large to enumerate)."""
    from scipy.spatial import ConvexHull
    h = ConvexHull(np.asarray(Z, dtype=float), qhull_options="Qt")
    out = set()
    for simplex, eq in zip(h.simplices, h.equations):
        if eq[-2] < -1e-12:
            out.add(tuple(sorted(map(int, simplex))))
    return out


def live_facet_sets(hull):
    return ({tuple(sorted(f)) for f in hull.facets["xJ"] if f is not None},
            {tuple(sorted(f)) for f in hull.facets["x"] if f is not None})
