"""Losses on function-valued predictions and their stability constants."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .hilbert import DimensionError, OutputSpace, OutVec

SQUARE = "square"
EPS_INSENSITIVE = "eps_insensitive"
LOGISTIC = "logistic"
LOSS_KINDS = (SQUARE, EPS_INSENSITIVE, LOGISTIC)


class MissingBoundError(ValueError):
    """The square loss needs the output bound ``C_y`` for its constants."""


@dataclass(frozen=True)
class Loss:
    kind: str
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")

    @classmethod
    def square(cls) -> "Loss":
        return cls(SQUARE)

    @classmethod
    def eps_insensitive(cls, epsilon: float) -> "Loss":
        return cls(EPS_INSENSITIVE, float(epsilon))

    @classmethod
    def logistic(cls) -> "Loss":
        return cls(LOGISTIC)

    @classmethod
    def from_spec(cls, spec: dict) -> "Loss":
        kind = spec.get("kind", SQUARE)
        eps = float(spec.get("epsilon", 0.1 if kind == EPS_INSENSITIVE else 0.0))
        return cls(kind, eps if kind == EPS_INSENSITIVE else 0.0)

    def to_spec(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == EPS_INSENSITIVE:
            d["epsilon"] = self.epsilon
        return d

    @property
    def smooth(self) -> bool:
        return self.kind != EPS_INSENSITIVE

    # -- batched array versions (rows are samples) ---------------------------
    def values(self, Y: np.ndarray, F: np.ndarray, space: OutputSpace) -> np.ndarray:
        if self.kind == SQUARE:
            R = Y - F
            return space.dot(R, R)
        if self.kind == EPS_INSENSITIVE:
            return np.maximum(space.norms(Y - F) - self.epsilon, 0.0)
        return np.logaddexp(0.0, -space.dot(Y, F))

    def grads(self, Y: np.ndarray, F: np.ndarray, space: OutputSpace) -> np.ndarray:
        """Riesz representatives (in the weighted geometry) of subgradients in ``F``."""
        if self.kind == SQUARE:
            return -2.0 * (Y - F)
        if self.kind == EPS_INSENSITIVE:
            R = Y - F
            r = space.norms(R)
            out = np.zeros_like(R)
            # zero subgradient on and inside the tube
            active = r > self.epsilon
            out[active] = -R[active] / r[active, None]
            return out
        s = expit(-space.dot(Y, F))
        return -s[..., None] * Y

    # -- single-sample public surface -----------------------------------------
    def eval(self, y: OutVec, fx: OutVec) -> float:
        _same(y, fx)
        return float(self.values(y.values, fx.values, y.space))

    def subgradient_fx(self, y: OutVec, fx: OutVec) -> OutVec:
        _same(y, fx)
        return OutVec(y.space, self.grads(y.values[None], fx.values[None], y.space)[0])

    def constants(self, C_y: float | None, kappa: float, lam: float) -> tuple[float, float]:
        """Lipschitz constant ``C`` and loss bound ``M``.

        Square: ``C = 2 C_y (1 + kappa / sqrt(lam))`` (valid on the set reachable
        by regularized fits), ``M = (C/2)^2``.  Eps-insensitive: ``C = 1``,
        ``M = C_y (1 + kappa / sqrt(lam))``.  Logistic: ``C = 1``, ``M = ln 2``.
        """
        if not (kappa > 0 and lam > 0):
            raise ValueError("kappa and lambda must be positive")
        if self.kind == LOGISTIC:
            if C_y is not None and not C_y > 0:
                raise ValueError("C_y must be positive")
            return 1.0, math.log(2.0)
        if C_y is None:
            raise MissingBoundError(f"{self.kind} loss constants need the output bound C_y")
        if not C_y > 0:
            raise ValueError("C_y must be positive")
        reach = C_y * (1.0 + kappa / math.sqrt(lam))
        if self.kind == SQUARE:
            C = 2.0 * reach
            return C, (C / 2.0) ** 2
        return 1.0, reach

    def lipschitz(self, C_y: float | None, kappa: float, lam: float) -> float:
        return self.constants(C_y, kappa, lam)[0]


def _same(a: OutVec, b: OutVec) -> None:
    if a.space != b.space:
        raise DimensionError("target and prediction live in different spaces")
