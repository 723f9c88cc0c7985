"""Hybrid state space X = Y x I and the metric rho_c on it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StatePoint:
    """A hybrid state: continuous coordinate ``y`` in R^d and regime ``i`` in {1..N}."""

    y: np.ndarray
    i: int

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=float)).copy()
        if y.ndim != 1:
            raise ValueError("StatePoint.y must be a vector")
        if not np.all(np.isfinite(y)):
            raise ValueError(f"StatePoint.y must be finite, got {y.tolist()}")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        if int(self.i) != self.i or self.i < 1:
            raise ValueError(f"regime index must be a positive integer, got {self.i}")
        object.__setattr__(self, "i", int(self.i))

    @property
    def dim(self) -> int:
        return self.y.shape[0]

    def __eq__(self, other):
        if not isinstance(other, StatePoint):
            return NotImplemented
        return self.i == other.i and np.array_equal(self.y, other.y)

    def __hash__(self):
        return hash((self.i, self.y.tobytes()))

    def __repr__(self):
        return f"StatePoint(y={self.y.tolist()}, i={self.i})"


def state(y, i: int) -> StatePoint:
    return StatePoint(np.asarray(y, dtype=float), i)


@dataclass(frozen=True)
class HybridMetric:
    """rho_c((y1,i),(y2,j)) = |y1 - y2| + c * [i != j]."""

    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"regime-mismatch weight c must be positive, got {self.c}")

    def __call__(self, x1: StatePoint, x2: StatePoint) -> float:
        return rho_c(self, x1, x2)


def rho_c(m: HybridMetric, x1: StatePoint, x2: StatePoint) -> float:
    return float(np.linalg.norm(x1.y - x2.y)) + (m.c if x1.i != x2.i else 0.0)


def rho_c_batch(c: float, y1, i1, y2, i2) -> np.ndarray:
    """Vectorised rho_c for arrays ``y`` of shape (n, d) and regimes of shape (n,)."""
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    d = np.linalg.norm(y1 - y2, axis=-1)
    return d + c * (np.asarray(i1) != np.asarray(i2))


def pairwise_rho_c(c: float, y: np.ndarray, i: np.ndarray) -> np.ndarray:
    """Dense matrix of rho_c over a list of points."""
    y = np.asarray(y, dtype=float)
    diff = y[:, None, :] - y[None, :, :]
    d = np.sqrt(np.einsum("abk,abk->ab", diff, diff))
    return d + c * (i[:, None] != i[None, :])


def stack_states(points) -> tuple[np.ndarray, np.ndarray]:
    """Turn a sequence of StatePoints into ``(y, i)`` arrays."""
    points = list(points)
    if not points:
        raise ValueError("empty state list")
    y = np.stack([p.y for p in points])
    i = np.array([p.i for p in points], dtype=np.int64)
    return y, i
