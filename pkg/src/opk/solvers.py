"""Regularized empirical risk minimization over the operator-valued RKHS.

The objective is ``R_emp(f) + lam * ||f||_H^2`` with ``R_emp`` the mean loss,
so the square-loss normal equations read ``(G + m lam) c = y``.  Fitted
functions are kept in representer form ``f = sum_j K(., x_j) c_j``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .dataset import Dataset
from .hilbert import OutVec
from .kernels import (
    GramOperator,
    NonSeparableMultiplication,
    OperatorKernel,
    RankOneSum,
    ScalarTimesIdentity,
    SeparableMultiplication,
    kernel_from_spec,
)
from .losses import LOGISTIC, SQUARE, Loss

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when an iterative fit diverges beyond recovery."""


@dataclass
class RepresenterModel:
    kernel: OperatorKernel
    anchors: np.ndarray
    coeffs: np.ndarray
    lam: float
    loss: Loss
    solver_log: dict = field(default_factory=dict)

    def __post_init__(self):
        self.anchors = np.atleast_2d(np.asarray(self.anchors, dtype=float))
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if self.anchors.shape[0] != self.coeffs.shape[0]:
            raise ValueError("need one coefficient vector per anchor")

    @property
    def space(self):
        return self.kernel.output_space

    def predict_batch(self, X) -> np.ndarray:
        X = self.kernel.inputs(X)
        return self.kernel.cross(X, self.anchors, self.coeffs)

    def predict(self, x) -> OutVec:
        F = self.predict_batch(x)
        if F.shape[0] != 1:
            raise ValueError("predict takes a single input; use predict_batch")
        return OutVec(self.space, F[0])

    def rkhs_norm_sq(self) -> float:
        return max(GramOperator(self.kernel, self.anchors).quad(self.coeffs), 0.0)

    def rkhs_norm(self) -> float:
        return math.sqrt(self.rkhs_norm_sq())

    def losses(self, X, Y) -> np.ndarray:
        return self.loss.values(np.atleast_2d(Y), self.predict_batch(X), self.space)

    def empirical_risk(self, Z: Dataset) -> float:
        return float(np.mean(self.losses(Z.inputs, Z.outputs)))

    def objective(self, Z: Dataset) -> float:
        return self.empirical_risk(Z) + self.lam * self.rkhs_norm_sq()

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.to_spec(),
            "anchors": self.anchors.tolist(),
            "coeffs": self.coeffs.tolist(),
            "lambda": self.lam,
            "loss": self.loss.to_spec(),
            "solver_log": self.solver_log,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RepresenterModel":
        return cls(
            kernel_from_spec(d["kernel"]),
            np.asarray(d["anchors"]),
            np.asarray(d["coeffs"]),
            float(d["lambda"]),
            Loss.from_spec(d["loss"]),
            dict(d.get("solver_log", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "RepresenterModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def predict(model: RepresenterModel, x) -> OutVec:
    return model.predict(x)


def rkhs_norm(model: RepresenterModel) -> float:
    return model.rkhs_norm()


def empirical_risk(model: RepresenterModel, Z: Dataset) -> float:
    return model.empirical_risk(Z)


def zero_objective(loss: Loss, Z: Dataset) -> float:
    """``R_reg(0, Z)``."""
    return float(np.mean(loss.values(Z.outputs, np.zeros_like(Z.outputs), Z.space)))


def _objective(loss, Y, F, C, lam, space) -> float:
    return float(np.mean(loss.values(Y, F, space)) + lam * np.sum(space.weights * C * F))


def _check_lam(lam: float) -> None:
    if not lam > 0:
        raise ValueError("lambda must be positive")


# -- square loss ----------------------------------------------------------------


def _spd_solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return cho_solve(cho_factor(A, lower=True), B)


def _solve_structured(K: OperatorKernel, gram: GramOperator, Y: np.ndarray, a: float) -> np.ndarray:
    """Solve ``(G + a) C = Y`` using the kernel's structure."""
    m = Y.shape[0]
    eye = np.eye(m)
    if isinstance(K, ScalarTimesIdentity):
        return _spd_solve(gram.scalar + a * eye, Y)
    if isinstance(K, SeparableMultiplication):
        # one m x m system per grid point, all sharing the eigenvectors of [k_ij]
        lam_k, U = np.linalg.eigh(gram.scalar)
        lam_k = np.maximum(lam_k, 0.0)
        Yh = U.T @ Y
        return U @ (Yh / (lam_k[:, None] * K._f2[None, :] + a))
    if isinstance(K, RankOneSum):
        space = K.output_space
        if K.y0_norm_sq == 0.0:
            return _spd_solve(K.identity_weight * gram.scalar + a * eye, Y)
        e = K.y0 / math.sqrt(K.y0_norm_sq)
        p = Y @ (space.weights * e)
        Y_perp = Y - np.outer(p, e)
        along = _spd_solve((K.identity_weight + K.y0_norm_sq) * gram.scalar + a * eye, p)
        if K.identity_weight > 0:
            perp = _spd_solve(K.identity_weight * gram.scalar + a * eye, Y_perp)
        else:
            perp = Y_perp / a
        return perp + np.outer(along, e)
    if isinstance(K, NonSeparableMultiplication):
        # per grid point the system is  (v v^T + a I) c = y  with v = x_.(t)
        X = gram.X
        s = np.sum(X * Y, axis=0)
        q = np.sum(X * X, axis=0)
        return (Y - X * (s / (a + q))) / a
    raise TypeError(f"no structured solver for {type(K).__name__}")


def solve_dense(gram: GramOperator, Y: np.ndarray, a: float) -> np.ndarray:
    """Dense block solve of ``(G + a) C = Y`` in the symmetrized coordinates."""
    m, n = Y.shape
    s = np.tile(np.sqrt(gram.kernel.output_space.weights), m)
    B = gram.dense_symmetric()
    B[np.diag_indices_from(B)] += a
    c = _spd_solve(B, s * Y.ravel()) / s
    return c.reshape(m, n)


def fit_square(K: OperatorKernel, Z: Dataset, lam: float, method: str = "structured", gram: GramOperator | None = None) -> RepresenterModel:
    """Kernel ridge regression with function-valued outputs.

    ``method="dense"`` solves the full ``(m dim) x (m dim)`` block system and
    serves as the reference for the structured solvers.  ``gram`` may pass a
    precomputed Gram over ``Z.inputs``.
    """
    _check_lam(lam)
    X = K.inputs(Z.inputs) if gram is None else gram.X
    Y = Z.outputs
    m = Z.m
    a = m * lam
    gram = gram or GramOperator(K, X)
    if method == "structured":
        C = _solve_structured(K, gram, Y, a)
    elif method == "dense":
        C = solve_dense(gram, Y, a)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(C)):
        raise SolverError("normal equations produced non-finite coefficients")
    F = gram.matvec(C)
    space = K.output_space
    R = F + a * C - Y
    rel = math.sqrt(float(np.sum(space.weights * R * R))) / max(
        math.sqrt(float(np.sum(space.weights * Y * Y))), np.finfo(float).tiny
    )
    loss = Loss.square()
    solver_log = {
        "method": f"square_{method}",
        "iterations": 1,
        "converged": True,
        "objective": _objective(loss, Y, F, C, lam, space),
        "residual": rel,
    }
    return RepresenterModel(K, X, C, lam, loss, solver_log)


# -- iterative solvers ----------------------------------------------------------


@dataclass
class SolverOptions:
    max_iters: int = 5000
    step0: float = 1.0
    tol: float = 1e-7
    method: str = "auto"
    history: bool = False

    @classmethod
    def from_dict(cls, d: dict | None) -> "SolverOptions":
        d = dict(d or {})
        return cls(
            max_iters=int(d.get("max_iters", 5000)),
            step0=float(d.get("step0", 1.0)),
            tol=float(d.get("tol", 1e-7)),
            method=str(d.get("method", "auto")),
            history=bool(d.get("history", False)),
        )

    def to_dict(self) -> dict:
        d = {"max_iters": self.max_iters, "step0": self.step0, "tol": self.tol, "method": self.method}
        if self.history:
            d["history"] = True
        return d


def fit_subgradient(
    K: OperatorKernel,
    Z: Dataset,
    lam: float,
    loss: Loss,
    opts: SolverOptions | None = None,
    init=None,
    gram: GramOperator | None = None,
) -> RepresenterModel:
    """First-order fit for the eps-insensitive and logistic losses.

    Logistic: gradient descent in the RKHS geometry with backtracking.
    Eps-insensitive: ``method="dual"`` (default) runs accelerated projected
    proximal gradient on the coefficients, which the optimality conditions
    confine to balls of radius ``1 / (2 lam m)``, and stops on the duality gap;
    ``method="subgradient"`` is the plain projected subgradient method with
    ``step0 / sqrt(t)`` steps and best-so-far tracking.

    ``init`` optionally warm-starts from a coefficient matrix.
    """
    _check_lam(lam)
    opts = opts or SolverOptions()
    if loss.kind == SQUARE:
        raise ValueError("use fit_square for the square loss")
    X = K.inputs(Z.inputs) if gram is None else gram.X
    gram = gram or GramOperator(K, X)
    C0 = np.zeros_like(Z.outputs) if init is None else np.array(init, dtype=float)
    if C0.shape != Z.outputs.shape:
        raise ValueError("init has the wrong shape")
    r0 = zero_objective(loss, Z)
    step0 = opts.step0
    for restart in range(4):
        try:
            if loss.kind == LOGISTIC:
                C, info = _gd_logistic(gram, Z.outputs, lam, loss, opts, step0, r0, C0)
            elif opts.method in ("auto", "dual"):
                C, info = _svr_dual(gram, Z.outputs, lam, loss, opts, r0, C0)
            elif opts.method == "subgradient":
                C, info = _svr_subgradient(gram, Z.outputs, lam, loss, opts, step0, r0, C0)
            else:
                raise ValueError(f"unknown method {opts.method!r}")
        except _Diverged:
            step0 /= 2.0
            log.warning("objective exceeded 10 R_reg(0); restarting with step0=%g", step0)
            continue
        info["restarts"] = restart
        return RepresenterModel(K, X, C, lam, loss, info)
    raise SolverError("iterative solver diverged after 3 step-size restarts")


class _Diverged(Exception):
    pass


def _gd_logistic(gram, Y, lam, loss, opts, step0, r0, C0):
    space = gram.kernel.output_space
    w = space.weights
    m = Y.shape[0]
    C = C0.copy()
    F = gram.matvec(C)
    J = _objective(loss, Y, F, C, lam, space)
    step = step0
    gnorm = np.inf
    converged = False
    hist = [J]
    it = 0
    for it in range(1, opts.max_iters + 1):
        g = loss.grads(Y, F, space) / m + 2.0 * lam * C
        Gg = gram.matvec(g)
        gnorm2 = max(float(np.sum(w * g * Gg)), 0.0)
        gnorm = math.sqrt(gnorm2)
        if gnorm <= opts.tol * (1.0 + abs(J)):
            converged = True
            break
        t = step
        while True:
            Cn = C - t * g
            Fn = F - t * Gg
            Jn = _objective(loss, Y, Fn, Cn, lam, space)
            if Jn <= J - 0.5 * t * gnorm2:
                break
            t *= 0.5
            if t < 1e-30:
                break
        if not Jn <= J:
            # no further decrease representable in floating point
            converged = gnorm <= 1e3 * opts.tol * (1.0 + abs(J))
            break
        if Jn > 10.0 * r0:
            raise _Diverged
        C, F, J = Cn, Fn, Jn
        hist.append(J)
        step = 2.0 * t
    info = {
        "method": "logistic_gd",
        "iterations": it,
        "objective": J,
        "grad_norm": gnorm,
        "converged": bool(converged),
    }
    if opts.history:
        info["history"] = hist
    return C, info


def _row_prox(Z, shrink, radius, space):
    """Block soft-threshold each row by ``shrink`` then project onto the ball."""
    r = space.norms(Z)
    scale = np.where(r > shrink, (r - shrink) / np.where(r > 0, r, 1.0), 0.0)
    scale = np.minimum(scale, np.where(r > 0, radius / np.where(r > 0, r, 1.0), 0.0))
    return Z * scale[:, None]


def _svr_primal(loss, Y, F, C, lam, space):
    return _objective(loss, Y, F, C, lam, space)


def _svr_dual_value(Y, F, C, lam, eps, space):
    return 2.0 * lam * (float(np.sum(space.weights * C * Y)) - eps * float(np.sum(space.norms(C)))) - lam * float(
        np.sum(space.weights * C * F)
    )


def _gram_top_eig(gram, space, iters=50):
    v = np.ones((gram.m, gram.dim))
    lam_max = 0.0
    for _ in range(iters):
        u = gram.matvec(v)
        nv = math.sqrt(float(np.sum(space.weights * v * v)))
        lam_max = float(np.sum(space.weights * v * u)) / nv**2
        nu = math.sqrt(float(np.sum(space.weights * u * u)))
        if nu == 0.0:
            return 0.0
        v = u / nu
    return lam_max


def _svr_dual(gram, Y, lam, loss, opts, r0, C0):
    space = gram.kernel.output_space
    w = space.weights
    m = Y.shape[0]
    eps = loss.epsilon
    radius = 1.0 / (2.0 * lam * m)
    L = 2.0 * max(_gram_top_eig(gram, space), 1e-12) * 1.05

    def smooth(C, GC):
        return float(np.sum(w * C * GC)) - 2.0 * float(np.sum(w * C * Y))

    def h(C, GC):
        return smooth(C, GC) + 2.0 * eps * float(np.sum(space.norms(C)))

    C = _row_prox(C0, 0.0, radius, space)
    GC = gram.matvec(C)
    best = (_svr_primal(loss, Y, GC, C, lam, space), C, GC)
    V, GV = C, GC
    hC = h(C, GC)
    t_mom = 1.0
    gap = np.inf
    converged = False
    hist = [best[0]]
    it = 0
    for it in range(1, opts.max_iters + 1):
        grad = 2.0 * (GV - Y)
        sV = smooth(V, GV)
        while True:
            Cn = _row_prox(V - grad / L, 2.0 * eps / L, radius, space)
            GCn = gram.matvec(Cn)
            D = Cn - V
            if smooth(Cn, GCn) <= sV + float(np.sum(w * grad * D)) + 0.5 * L * float(np.sum(w * D * D)) + 1e-14 * abs(sV):
                break
            L *= 2.0
        hn = h(Cn, GCn)
        if hn > hC:
            # function-value restart of the momentum
            t_mom = 1.0
            V, GV = C, GC
            continue
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
        beta = (t_mom - 1.0) / t_next
        V = Cn + beta * (Cn - C)
        GV = GCn + beta * (GCn - GC)
        C, GC, hC, t_mom = Cn, GCn, hn, t_next
        P = _svr_primal(loss, Y, GC, C, lam, space)
        if P > 10.0 * r0 + 1e-12:
            raise _Diverged
        if P < best[0]:
            best = (P, C, GC)
        hist.append(best[0])
        gap = best[0] - _svr_dual_value(Y, GC, C, lam, eps, space)
        if gap <= opts.tol * (1.0 + abs(best[0])):
            converged = True
            break
    P, C, GC = best
    info = {
        "method": "svr_dual_fista",
        "iterations": it,
        "objective": P,
        "duality_gap": float(max(gap, 0.0)),
        "converged": bool(converged),
    }
    if opts.history:
        info["history"] = hist
    return C, info


def _svr_subgradient(gram, Y, lam, loss, opts, step0, r0, C0):
    space = gram.kernel.output_space
    w = space.weights
    m = Y.shape[0]
    radius = 1.0 / (2.0 * lam * m)
    C = _row_prox(C0, 0.0, radius, space)
    F = gram.matvec(C)
    best = (_objective(loss, Y, F, C, lam, space), C)
    # progress is judged over windows: single steps shrink like 1/sqrt(t)
    window = 500
    mark = best[0]
    converged = False
    hist = [best[0]]
    it = 0
    for it in range(1, opts.max_iters + 1):
        d = gram.matvec(loss.grads(Y, F, space) / m + 2.0 * lam * C)
        dn = math.sqrt(float(np.sum(w * d * d)))
        if dn == 0.0:
            converged = True
            break
        C = _row_prox(C - (step0 / math.sqrt(it)) * d / dn, 0.0, radius, space)
        F = gram.matvec(C)
        J = _objective(loss, Y, F, C, lam, space)
        if J > 10.0 * r0 + 1e-12:
            raise _Diverged
        if J < best[0]:
            best = (J, C)
        hist.append(best[0])
        if it % window == 0:
            if mark - best[0] <= opts.tol * (1.0 + abs(best[0])):
                converged = True
                break
            mark = best[0]
    info = {
        "method": "svr_subgradient",
        "iterations": it,
        "objective": best[0],
        "converged": converged,
    }
    if opts.history:
        info["history"] = hist
    return best[1], info


def fit(K: OperatorKernel, Z: Dataset, lam: float, loss: Loss, opts: SolverOptions | None = None, init=None, gram: GramOperator | None = None) -> RepresenterModel:
    if loss.kind == SQUARE:
        return fit_square(K, Z, lam, gram=gram)
    return fit_subgradient(K, Z, lam, loss, opts, init=init, gram=gram)
