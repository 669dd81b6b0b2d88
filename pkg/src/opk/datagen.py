"""Synthetic data with bounded outputs.

Random streams are labelled: the dataset, probe and Monte Carlo draws for a
master seed come from ``SeedSequence([seed, label])`` with distinct labels, so
harness components never share a stream.  Outputs are rescaled onto the ball
of radius ``clip_C_y`` when they leave it, inputs onto ``sup |x| <= input_bound``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Any

import numpy as np

from .dataset import Dataset
from .hilbert import FINITE, L2, OutputSpace

STREAMS = {"dataset": 0, "probe": 1, "mc": 2}

GENERATOR_KINDS = ("linear_functional", "nonlinear_functional", "multitask_vector", "logistic_pairs")


def stream(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS[label]]))


def random_curves(space: OutputSpace, rng: np.random.Generator, count: int, sup_bound: float = 1.0, harmonics: int = 3) -> np.ndarray:
    """Low-order Fourier sums on the grid, rescaled so that ``max |x| <= sup_bound``."""
    a, b = space.interval
    u = (space.grid - a) / (b - a)
    k = np.arange(1, harmonics + 1)
    A = rng.uniform(-1, 1, size=(count, harmonics)) / k
    B = rng.uniform(-1, 1, size=(count, harmonics)) / k
    c0 = rng.uniform(-1, 1, size=(count, 1))
    phase = 2 * np.pi * np.outer(k, u)
    X = c0 + A @ np.sin(phase) + B @ np.cos(phase)
    return clip_sup(X, sup_bound)


_SHRINK = 1.0 - 4.0 * np.finfo(float).eps


def clip_sup(X: np.ndarray, bound: float) -> np.ndarray:
    s = np.max(np.abs(X), axis=1, keepdims=True)
    X = X * np.minimum(1.0, bound / np.where(s > 0, s, 1.0))
    # rescaling can land one ulp outside; the bound must hold exactly
    over = np.max(np.abs(X), axis=1) > bound
    X[over] *= _SHRINK
    return X


def clip_ball(Y: np.ndarray, space: OutputSpace, radius: float) -> np.ndarray:
    r = space.norms(Y)[:, None]
    Y = Y * np.minimum(1.0, radius / np.where(r > 0, r, 1.0))
    over = space.norms(Y) > radius
    Y[over] *= _SHRINK
    return Y


def _as_function(v: Any, space: OutputSpace) -> np.ndarray:
    if np.isscalar(v):
        return np.full(space.dim, float(v))
    arr = np.asarray(v, dtype=float)
    if arr.shape != (space.dim,):
        raise ValueError(f"function parameter needs {space.dim} grid values")
    return arr


@dataclass
class GeneratorSpec:
    """Parameters of one synthetic law.

    ``linear_functional``: ``y(t) = alpha(t) + beta(t) x(t) + noise(t)``.
    ``nonlinear_functional``: ``y(t) = sin(pi x(t)) / 2 + x(t)^2 / 2 + noise(t)``.
    ``multitask_vector``: vector inputs, ``dim`` correlated sine tasks.
    ``logistic_pairs``: ``y = s * d(x)`` with a label ``s = +1`` with
    probability ``sigmoid(margin)``, so ``<y, d(x)>`` is positive at that rate.
    """

    kind: str = "linear_functional"
    m: int = 50
    seed: int = 0
    clip_C_y: float = 1.0
    noise_sd: float = 0.1
    alpha: Any = 0.0
    beta: Any = 0.8
    input_bound: float = 1.0
    input_dim: int = 3
    task_correlation: float = 0.5
    margin: float = 2.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ValueError(f"unknown generator {self.kind!r}; expected one of {GENERATOR_KINDS}")
        if int(self.m) < 1:
            raise ValueError("m must be >= 1")
        if not self.clip_C_y > 0:
            raise ValueError("clip_C_y must be positive")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        if not self.input_bound > 0:
            raise ValueError("input_bound must be positive")
        if not 0.0 <= self.task_correlation <= 1.0:
            raise ValueError("task_correlation must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("alpha", "beta"):
            if isinstance(d[key], np.ndarray):
                d[key] = d[key].tolist()
        return d

    def input_space(self, space: OutputSpace) -> OutputSpace:
        if self.kind == "multitask_vector" or space.kind == FINITE:
            return OutputSpace.finite(self.input_dim)
        return space

    def check_space(self, space: OutputSpace) -> None:
        functional = self.kind in ("linear_functional", "nonlinear_functional")
        if functional and space.kind != L2:
            raise ValueError(f"{self.kind} needs a discretized L2 output space")
        if self.kind == "multitask_vector" and space.kind != FINITE:
            raise ValueError("multitask_vector needs a finite-dimensional output space")


def _draw(spec: GeneratorSpec, space: OutputSpace, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    spec.check_space(space)
    if spec.kind in ("linear_functional", "nonlinear_functional"):
        X = random_curves(space, rng, n, spec.input_bound)
        noise = spec.noise_sd * random_curves(space, rng, n, 1.0)
        if spec.kind == "linear_functional":
            Y = _as_function(spec.alpha, space) + _as_function(spec.beta, space) * X
        else:
            Y = 0.5 * np.sin(np.pi * X) + 0.5 * X**2
        Y = Y + noise
    elif spec.kind == "multitask_vector":
        p, d = spec.input_dim, space.dim
        trng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 99]))
        shared = trng.standard_normal((1, p))
        own = trng.standard_normal((d, p))
        W = np.sqrt(spec.task_correlation) * shared + np.sqrt(1.0 - spec.task_correlation) * own
        X = clip_ball(rng.uniform(-1, 1, size=(n, p)), OutputSpace.finite(p), spec.input_bound)
        Y = np.sin(X @ W.T) + spec.noise_sd * rng.standard_normal((n, d))
    else:
        if space.kind == L2:
            X = random_curves(space, rng, n, spec.input_bound)
            D = X + 0.5 * spec.input_bound
        else:
            p = spec.input_dim
            X = clip_ball(rng.uniform(-1, 1, size=(n, p)), OutputSpace.finite(p), spec.input_bound)
            D = np.cos(np.outer(X.sum(axis=1), np.arange(1, space.dim + 1)))
        prob = 1.0 / (1.0 + np.exp(-spec.margin))
        s = np.where(rng.uniform(size=n) < prob, 1.0, -1.0)
        Y = s[:, None] * D
    return X, clip_ball(Y, space, spec.clip_C_y)


def generate(spec: GeneratorSpec, space: OutputSpace) -> Dataset:
    X, Y = _draw(spec, space, int(spec.m), stream(spec.seed, "dataset"))
    meta = {"seed": int(spec.seed), "generator": spec.to_dict(), "stream": "dataset"}
    return Dataset(X, Y, space, spec.input_space(space), float(spec.clip_C_y), meta)


def fresh_probes(spec: GeneratorSpec, space: OutputSpace, n: int, seed: int | None = None, label: str = "probe") -> tuple[np.ndarray, np.ndarray]:
    """``n`` independent draws ``(X, Y)`` from the same law on the probe stream."""
    if int(n) < 1:
        raise ValueError("need n >= 1 probes")
    seed = spec.seed if seed is None else seed
    return _draw(spec, space, int(n), stream(seed, label))
