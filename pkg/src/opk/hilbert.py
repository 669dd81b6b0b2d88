"""Output spaces: finite-dimensional vectors and quadrature-discretized L2(I).

Every space carries a vector of quadrature weights ``w`` so that the inner
product is always ``sum(w * a * b)``.  For finite-dimensional spaces the
weights are all ones; for discretized L2 they are composite trapezoid weights
over the grid, which makes norms approximately independent of resolution.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

FINITE = "finite"
L2 = "l2"


class DimensionError(ValueError):
    """Raised when vectors from different output spaces are combined."""


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    h = np.diff(grid)
    w = np.zeros_like(grid, dtype=float)
    w[:-1] += h / 2.0
    w[1:] += h / 2.0
    return w


@dataclass(frozen=True, eq=False)
class OutputSpace:
    kind: str
    dim: int
    grid: np.ndarray | None = None
    weights: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        if self.kind not in (FINITE, L2):
            raise ValueError(f"unknown output space kind {self.kind!r}")
        if int(self.dim) < 1:
            raise ValueError("dim must be a positive integer")
        object.__setattr__(self, "dim", int(self.dim))
        if self.kind == FINITE:
            if self.grid is not None:
                raise ValueError("finite-dimensional spaces have no grid")
            w = np.ones(self.dim)
        else:
            if self.grid is None:
                raise ValueError("discretized L2 space needs a grid")
            grid = np.array(self.grid, dtype=float)
            if grid.ndim != 1 or grid.size != self.dim or grid.size < 2:
                raise ValueError("grid must be 1-D with dim >= 2 points")
            if np.any(np.diff(grid) <= 0):
                raise ValueError("grid must be strictly increasing")
            grid.setflags(write=False)
            object.__setattr__(self, "grid", grid)
            w = trapezoid_weights(grid)
            length = grid[-1] - grid[0]
            if abs(w.sum() - length) > 1e-12 * length:
                raise ValueError("quadrature weights do not sum to interval length")
        if np.any(w <= 0):
            raise ValueError("quadrature weights must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def finite(cls, dim: int) -> "OutputSpace":
        return cls(FINITE, dim)

    @classmethod
    def l2(cls, a: float = 0.0, b: float = 1.0, n: int = 101) -> "OutputSpace":
        """Uniform ``n``-point grid on ``[a, b]`` with trapezoid weights."""
        return cls(L2, n, np.linspace(a, b, n))

    @property
    def interval(self) -> tuple[float, float] | None:
        if self.grid is None:
            return None
        return float(self.grid[0]), float(self.grid[-1])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, OutputSpace):
            return NotImplemented
        if self is other:
            return True
        if self.kind != other.kind or self.dim != other.dim:
            return False
        if self.grid is None:
            return True
        return bool(np.array_equal(self.grid, other.grid))

    def __hash__(self) -> int:
        if self.grid is None:
            return hash((self.kind, self.dim))
        return hash((self.kind, self.dim, self.grid.tobytes()))

    # -- array-level helpers used by the numerical modules -------------------
    def dot(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Weighted inner product along the last axis (broadcasting)."""
        return np.sum(self.weights * a * b, axis=-1)

    def norms(self, a: np.ndarray) -> np.ndarray:
        return np.sqrt(np.maximum(self.dot(a, a), 0.0))

    def vec(self, values: Any) -> "OutVec":
        return OutVec(self, values)

    def zero(self) -> "OutVec":
        return OutVec(self, np.zeros(self.dim))

    def sample(self, fn) -> "OutVec":
        """Evaluate a callable on the grid (L2 only)."""
        if self.grid is None:
            raise ValueError("finite-dimensional space has no grid to sample on")
        return OutVec(self, np.asarray(fn(self.grid), dtype=float) * np.ones(self.dim))

    def to_dict(self) -> dict:
        if self.kind == FINITE:
            return {"kind": FINITE, "dim": self.dim}
        return {
            "kind": L2,
            "dim": self.dim,
            "grid": self.grid.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OutputSpace":
        kind = d.get("kind", L2)
        if kind == FINITE:
            return cls.finite(int(d["dim"]))
        if kind != L2:
            raise ValueError(f"unknown output space kind {kind!r}")
        if "grid" in d:
            return cls(L2, len(d["grid"]), np.asarray(d["grid"], dtype=float))
        a, b = d.get("interval", (0.0, 1.0))
        return cls.l2(float(a), float(b), int(d.get("n", d.get("dim", 101))))


class OutVec:
    """An immutable element of an :class:`OutputSpace`."""

    __slots__ = ("space", "values")

    def __init__(self, space: OutputSpace, values: Sequence[float] | np.ndarray):
        arr = np.array(values, dtype=float)
        if arr.shape != (space.dim,):
            raise DimensionError(f"expected {space.dim} values, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("OutVec values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("OutVec is immutable")

    def __repr__(self) -> str:
        return f"OutVec({self.space.kind}, dim={self.space.dim}, values={self.values!r})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, OutVec):
            return NotImplemented
        return self.space == other.space and bool(np.array_equal(self.values, other.values))

    def __hash__(self) -> int:
        return hash((self.space, self.values.tobytes()))

    def __add__(self, other: "OutVec") -> "OutVec":
        return axpy(1.0, other, self)

    def __sub__(self, other: "OutVec") -> "OutVec":
        return axpy(-1.0, other, self)

    def __mul__(self, alpha: float) -> "OutVec":
        return OutVec(self.space, alpha * self.values)

    __rmul__ = __mul__

    def __neg__(self) -> "OutVec":
        return OutVec(self.space, -self.values)

    def __reduce__(self):
        return (OutVec, (self.space, np.array(self.values)))


def _check_same(a: OutVec, b: OutVec) -> None:
    if a.space != b.space:
        raise DimensionError("vectors belong to different output spaces")


def inner(a: OutVec, b: OutVec) -> float:
    _check_same(a, b)
    return float(a.space.dot(a.values, b.values))


def norm(a: OutVec) -> float:
    return float(np.sqrt(max(inner(a, a), 0.0)))


def axpy(alpha: float, a: OutVec, b: OutVec) -> OutVec:
    """Return ``alpha * a + b`` as a new vector."""
    _check_same(a, b)
    return OutVec(a.space, alpha * a.values + b.values)
