"""Lipschitz-cone warm starts for nonconvex costs.

Each stored record (U, x, J, L) certifies J_N(U, y) <= J + L |x - y|, so the
lower envelope of these cones is an upper bound on the value function.
"""

import math
from typing import NamedTuple

import numpy as np


class ConeResult(NamedTuple):
    U: np.ndarray
    x: np.ndarray
    J: float
    value: float
    index: int


class LipschitzDataset:
    def __init__(self, n):
        self.n = n
        self._X = np.empty((16, n))
        self._J = np.empty(16)
        self._L = np.empty(16)
        self.D_U = []
        self.count = 0
        self.L_max = 0.0
        self.rejected = 0
        self.version = 0

    def __len__(self):
        return self.count

    @property
    def D_x(self):
        return self._X[:self.count]

    @property
    def D_J(self):
        return self._J[:self.count]

    @property
    def D_L(self):
        return self._L[:self.count]

    def insert(self, U, x, J, L):
        """Append a record; returns False (and counts a rejection) for invalid input."""
        x = np.asarray(x, dtype=float).reshape(-1)
        U = np.asarray(U, dtype=float)
        if (x.shape[0] != self.n or not math.isfinite(J) or not math.isfinite(L) or not L > 0
                or not np.all(np.isfinite(x)) or not np.all(np.isfinite(U))):
            self.rejected += 1
            return False
        if self.count == self._X.shape[0]:
            grow = 2 * self.count
            self._X = np.resize(self._X, (grow, self.n))
            self._J = np.resize(self._J, grow)
            self._L = np.resize(self._L, grow)
        k = self.count
        self._X[k], self._J[k], self._L[k] = x, J, L
        self.D_U.append(U.copy())
        self.count += 1
        self.L_max = max(self.L_max, float(L))
        self.version += 1
        return True

    def cone_values(self, xq):
        xq = np.asarray(xq, dtype=float).reshape(-1)
        return self.D_J + self.D_L * np.linalg.norm(self.D_x - xq, axis=1)

    def approx(self, xq):
        """Lower envelope of the cones at xq (inf for an empty set)."""
        if self.count == 0:
            return math.inf
        return float(self.cone_values(xq).min())

    def warm_start(self, xq):
        """Record minimizing J + L |x - xq| (first one on ties), or None if empty."""
        if self.count == 0:
            return None
        vals = self.cone_values(xq)
        j = int(np.argmin(vals))
        return ConeResult(self.D_U[j].copy(), self._X[j].copy(), float(self._J[j]),
                          float(vals[j]), j)

    def snapshot(self):
        other = LipschitzDataset(self.n)
        other._X, other._J, other._L = self._X.copy(), self._J.copy(), self._L.copy()
        other.D_U = list(self.D_U)
        other.count, other.L_max, other.rejected, other.version = (
            self.count, self.L_max, self.rejected, self.version)
        return other

    def dump(self, fh):
        fh.write(f"memmpc-cones 1 n {self.n}\n")
        for j in range(self.count):
            xs = " ".join(repr(float(v)) for v in self._X[j])
            us = " ".join(repr(float(v)) for v in self.D_U[j])
            fh.write(f"{j} | {xs} | {float(self._J[j])!r} | {float(self._L[j])!r} | {us}\n")

    @classmethod
    def load(cls, fh):
        head = fh.readline().split()
        if head[:2] != ["memmpc-cones", "1"]:
            raise ValueError("not a cone dataset dump")
        data = cls(int(head[3]))
        for line in fh:
            if not line.strip():
                continue
            _, xs, J, L, us = line.split("|")
            data.insert(np.array(us.split(), dtype=float), np.array(xs.split(), dtype=float),
                        float(J), float(L))
        return data


def lipschitz_warm_start(data, xq):
    return data.warm_start(xq)
