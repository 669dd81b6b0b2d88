"""Sampled checks of the kernel axioms and of the ``kappa`` bound."""
from __future__ import annotations

import math

import numpy as np

from .datagen import random_curves
from .hilbert import L2
from .kernels import (
    GramOperator,
    NonSeparableMultiplication,
    OperatorKernel,
    hilbert_schmidt_audit,
    operator_norm_numeric,
    bump_multiplier,
)


def random_inputs(K: OperatorKernel, rng: np.random.Generator, count: int) -> np.ndarray:
    """Inputs valid for ``K``: bounded curves or vectors in the unit ball."""
    space = K.input_space
    if space.kind == L2:
        bound = K.B if isinstance(K, NonSeparableMultiplication) else 1.0
        return random_curves(space, rng, count, bound)
    X = rng.standard_normal((count, space.dim))
    radius = getattr(getattr(K, "scalar", None), "radius", None) or 1.0
    r = space.norms(X)[:, None]
    return X * (radius * rng.uniform(size=(count, 1)) ** (1.0 / space.dim) / r)


def random_outputs(K: OperatorKernel, rng: np.random.Generator, count: int) -> np.ndarray:
    space = K.output_space
    if space.kind == L2:
        return random_curves(space, rng, count, 1.0, harmonics=6)
    return rng.standard_normal((count, space.dim))


def hermitian_check(K: OperatorKernel, rng: np.random.Generator, trials: int = 100) -> float:
    """Worst relative gap in ``<K(x1,x2) y, y'> = <y, K(x2,x1) y'>``."""
    space = K.output_space
    worst = 0.0
    X1 = random_inputs(K, rng, trials)
    X2 = random_inputs(K, rng, trials)
    Y = random_outputs(K, rng, trials)
    Yp = random_outputs(K, rng, trials)
    for x1, x2, y, yp in zip(X1, X2, Y, Yp):
        a = K.apply(x1, x2, y).values
        b = K.apply(x2, x1, yp).values
        lhs = float(space.dot(a, yp))
        rhs = float(space.dot(y, b))
        scale = max(float(space.norms(a) * space.norms(yp)), float(space.norms(y) * space.norms(b)), 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


def psd_check(K: OperatorKernel, rng: np.random.Generator, trials: int = 20, m_max: int = 5) -> float:
    """Smallest ``lambda_min / lambda_max`` over dense Grams of random families."""
    worst = np.inf
    for t in range(trials):
        m = 1 + t % m_max
        G = GramOperator(K, random_inputs(K, rng, m))
        ev = G.eigvalsh()
        top = max(float(ev[-1]), 1e-300)
        worst = min(worst, float(ev[0]) / top)
    return float(worst)


def kappa_check(K: OperatorKernel, rng: np.random.Generator, count: int = 100, tol: float = 1e-8) -> dict:
    """Numeric operator norms of ``K(x, x)`` against the analytic ``kappa^2``."""
    results = [operator_norm_numeric(K, x, tol=tol) for x in random_inputs(K, rng, count)]
    values = np.array([r.value for r in results])
    return {
        "kappa_sq": K.kappa_sq,
        "max_norm": float(values.max()),
        "max_ratio": float(values.max() / K.kappa_sq),
        "converged": int(sum(r.converged for r in results)),
        "count": count,
    }


def pointwise_bound_check(K: OperatorKernel, rng: np.random.Generator, count: int = 1000, m_max: int = 5) -> float:
    """Largest ``||f(x)|| - kappa ||f||_H`` over random representer functions and probes."""
    space = K.output_space
    worst = -np.inf
    for t in range(count):
        m = 1 + t % m_max
        X = random_inputs(K, rng, m)
        C = random_outputs(K, rng, m) * rng.standard_normal((m, 1))
        probe = random_inputs(K, rng, 1)
        fx = K.cross(probe, X, C)[0]
        fnorm = math.sqrt(max(GramOperator(K, X).quad(C), 0.0))
        worst = max(worst, float(space.norms(fx)) - K.kappa * fnorm)
    return float(worst)


def audit_kernel(K: OperatorKernel, seed: int = 0, trials: int = 100, resolutions=(32, 64, 128, 256)) -> dict:
    rng = np.random.default_rng(seed)
    report = {
        "kind": K.kind,
        "kappa_sq": K.kappa_sq,
        "hermitian_max_rel_error": hermitian_check(K, rng, trials),
        "psd_min_ratio": psd_check(K, rng),
        "kappa": kappa_check(K, rng, trials),
        "pointwise_max_excess": pointwise_bound_check(K, rng, 10 * trials),
    }
    report["hermitian_ok"] = report["hermitian_max_rel_error"] <= 1e-10
    report["psd_ok"] = report["psd_min_ratio"] >= -1e-8
    report["kappa_ok"] = report["kappa"]["max_ratio"] <= 1 + 1e-6
    report["pointwise_ok"] = report["pointwise_max_excess"] <= 1e-8
    if K.output_space.kind == L2:
        x = random_inputs(K, rng, 1)[0]
        if isinstance(K, NonSeparableMultiplication):
            x = bump_multiplier(K.output_space.grid, K.B)
        v = hilbert_schmidt_audit(K, x, resolutions)
        report["hilbert_schmidt"] = {
            "verdict": v.verdict,
            "slope": v.slope,
            "resolutions": v.resolutions,
            "traces": v.traces,
        }
    return report
