"""Uniform-stability measurement and generalization-bound checks.

The empirical stability of a fit is measured by leave-one-out retraining:
for every ``i`` the model is refit on the training set without pair ``i``
and the largest loss change over the training pairs plus a probe sample is
recorded.  Theoretical constants follow ``beta = C^2 kappa^2 / (2 m lam)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import Dataset
from .datagen import GeneratorSpec, fresh_probes, generate
from .hilbert import OutputSpace
from .kernels import GramOperator, OperatorKernel, SeparableKernel
from .losses import LOGISTIC, SQUARE, Loss, MissingBoundError
from .solvers import SolverOptions, fit

EXACT_SLACK = 1e-8


def theoretical_beta(kind: str, kappa: float, m: int, lam: float, C_y: float | None = None) -> float:
    """Uniform-stability constant for the regularized fit with ``m`` samples.

    Square: ``2 C_y^2 kappa^2 (1 + kappa/sqrt(lam))^2 / (m lam)``.
    Eps-insensitive and logistic: ``kappa^2 / (2 m lam)``.
    """
    if not (kappa > 0 and m > 0 and lam > 0):
        raise ValueError("kappa, m and lambda must be positive")
    if kind == SQUARE and C_y is None:
        raise MissingBoundError("square-loss stability needs the output bound C_y")
    C, _ = Loss(kind, 0.0).constants(C_y if C_y is not None else 1.0, kappa, lam)
    return C * C * kappa * kappa / (2.0 * m * lam)


def generalization_bound(R_emp: float, beta: float, M: float, m: int, delta: float) -> float:
    """``R_emp + 2 beta + (4 m beta + M) sqrt(ln(1/delta) / (2 m))``."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if R_emp < 0 or beta < 0 or M < 0 or m < 1:
        raise ValueError("R_emp, beta, M must be nonnegative and m >= 1")
    return R_emp + 2.0 * beta + (4.0 * m * beta + M) * math.sqrt(math.log(1.0 / delta) / (2.0 * m))


@dataclass
class StabilityReport:
    algo: str
    m: int
    lam: float
    kappa: float
    C_y: float
    C: float
    beta_theoretical: float
    beta_empirical: float
    per_i_deviations: list[float]
    perturbation_norms: list[float]
    perturbation_bound: float
    probe_count: int
    slack: float
    valid: bool
    seeds: list[int] = field(default_factory=list)
    loo_scaling: str = "m-1"

    @property
    def holds(self) -> bool:
        return self.beta_empirical <= self.beta_theoretical + self.slack

    @property
    def perturbation_holds(self) -> bool:
        return max(self.perturbation_norms) <= self.perturbation_bound + self.slack

    def to_dict(self) -> dict:
        d = asdict(self)
        d["holds"] = self.holds
        d["perturbation_holds"] = self.perturbation_holds
        return d


def _loo_fit(args):
    K, Zi, lam, loss, opts, init, gram = args
    return fit(K, Zi, lam, loss, opts, init=init, gram=gram)


def solver_slack(loss: Loss, opts: SolverOptions, C: float) -> float:
    if loss.kind == SQUARE:
        return EXACT_SLACK
    return 10.0 * opts.tol * C


def measure_beta(
    K: OperatorKernel,
    Z: Dataset,
    lam: float,
    loss: Loss,
    probes: tuple[np.ndarray, np.ndarray],
    opts: SolverOptions | None = None,
    workers: int = 1,
    warm_start: bool = True,
    loo_scaling: str = "m-1",
    seeds: list[int] | None = None,
) -> StabilityReport:
    """Empirical stability of ``Z -> f_Z`` against the theoretical constant.

    ``loo_scaling="m-1"`` refits each ``Z\\i`` with its own mean loss and the
    same ``lam``; ``"m"`` keeps the ``1/m`` normalization of the full set,
    i.e. uses ``lam * m / (m - 1)`` on the mean over ``m - 1`` pairs.
    """
    if Z.m < 2:
        raise ValueError("need m >= 2 for leave-one-out retraining")
    if loo_scaling not in ("m-1", "m"):
        raise ValueError("loo_scaling must be 'm-1' or 'm'")
    opts = opts or SolverOptions()
    PX, PY = probes
    PX = np.atleast_2d(PX)
    PY = np.atleast_2d(PY)
    if np.max(Z.space.norms(PY)) > Z.C_y * (1 + 1e-12):
        raise ValueError("probe outputs exceed C_y")
    m = Z.m
    X = K.inputs(Z.inputs)
    gram = GramOperator(K, X)
    full = fit(K, Z, lam, loss, opts, gram=gram)
    Xe = np.vstack([X, K.inputs(PX)])
    Ye = np.vstack([Z.outputs, PY])
    # one scalar cross matrix serves every leave-one-out prediction
    kcross = K.scalar.matrix(Xe, X) if isinstance(K, SeparableKernel) else None

    def losses(keep, coeffs):
        kmat = None if kcross is None else kcross[:, keep]
        return loss.values(Ye, K.cross(Xe, X[keep], coeffs, kmat), Z.space)

    base = losses(np.arange(m), full.coeffs)
    lam_loo = lam if loo_scaling == "m-1" else lam * m / (m - 1)
    tasks = []
    for i in range(m):
        keep = np.arange(m) != i
        init = full.coeffs[keep] if warm_start and loss.kind != SQUARE else None
        tasks.append((K, Z.without(i), lam_loo, loss, opts, init, gram.subset(keep)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            loo = list(pool.map(_loo_fit, tasks))
    else:
        loo = [_loo_fit(t) for t in tasks]

    deviations, perturb = [], []
    valid = bool(full.solver_log.get("converged", True))
    for i, model in enumerate(loo):
        keep = np.arange(m) != i
        valid &= bool(model.solver_log.get("converged", True))
        deviations.append(float(np.max(np.abs(losses(keep, model.coeffs) - base))))
        D = full.coeffs.copy()
        D[keep] -= model.coeffs
        perturb.append(math.sqrt(max(gram.quad(D), 0.0)))

    kappa = K.kappa
    C, _ = loss.constants(Z.C_y, kappa, lam)
    return StabilityReport(
        algo=loss.kind,
        m=m,
        lam=float(lam),
        kappa=kappa,
        C_y=float(Z.C_y),
        C=C,
        beta_theoretical=theoretical_beta(loss.kind, kappa, m, lam, Z.C_y),
        beta_empirical=max(deviations),
        per_i_deviations=deviations,
        perturbation_norms=perturb,
        perturbation_bound=C * kappa / (2.0 * m * lam),
        probe_count=int(PX.shape[0]),
        slack=solver_slack(loss, opts, C),
        valid=valid,
        seeds=list(seeds or []),
        loo_scaling=loo_scaling,
    )


def default_generator(loss: Loss, m: int, seed: int, **kw) -> GeneratorSpec:
    kind = "logistic_pairs" if loss.kind == LOGISTIC else "linear_functional"
    return GeneratorSpec(kind=kind, m=m, seed=seed, **kw)


def stability_run(K: OperatorKernel, gen: GeneratorSpec, space: OutputSpace, loss: Loss, lam: float, probe_count: int = 200, opts: SolverOptions | None = None, **kw) -> StabilityReport:
    """Generate a dataset and probes for ``gen`` and measure stability on them."""
    Z = generate(gen, space)
    probes = fresh_probes(gen, space, probe_count)
    return measure_beta(K, Z, lam, loss, probes, opts, seeds=[gen.seed], **kw)


@dataclass
class ScalingCurve:
    m_list: list[int]
    medians: list[float]
    slope: float
    per_seed: list[list[float]]


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


def beta_scaling_curve(
    K: OperatorKernel,
    gen: GeneratorSpec,
    space: OutputSpace,
    loss: Loss,
    lam: float,
    m_list,
    seeds,
    probe_count: int = 200,
    opts: SolverOptions | None = None,
    workers: int = 1,
) -> ScalingCurve:
    """Median empirical beta over seeds for each ``m``, with its log-log slope."""
    m_list = [int(m) for m in m_list]
    if len(m_list) < 3 or any(b <= a for a, b in zip(m_list, m_list[1:])):
        raise ValueError("m_list must be increasing with at least 3 values")
    jobs = [(K, _with(gen, m=m, seed=s), space, loss, lam, probe_count, opts) for m in m_list for s in seeds]
    betas = run_jobs(_scaling_job, jobs, workers)
    per_m = [betas[k * len(seeds) : (k + 1) * len(seeds)] for k in range(len(m_list))]
    medians = [float(np.median(b)) for b in per_m]
    return ScalingCurve(m_list, medians, loglog_slope(m_list, medians), per_m)


def _scaling_job(args) -> float:
    K, gen, space, loss, lam, probe_count, opts = args
    return stability_run(K, gen, space, loss, lam, probe_count, opts).beta_empirical


def _with(gen: GeneratorSpec, **changes) -> GeneratorSpec:
    d = gen.to_dict()
    d.update(changes)
    return GeneratorSpec.from_dict(d)


def run_jobs(fn, jobs, workers):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


@dataclass
class BoundReport:
    delta: float
    m: int
    R_emp: float
    beta: float
    M: float
    bound_value: float
    risk_mc_estimate: float
    mc_se: float
    mc_samples: int
    holds: bool
    violation: bool
    seed: int

    def recompute(self) -> float:
        return generalization_bound(self.R_emp, self.beta, self.M, self.m, self.delta)

    def to_dict(self) -> dict:
        return asdict(self)


def bound_rep(K: OperatorKernel, gen: GeneratorSpec, space: OutputSpace, loss: Loss, lam: float, delta: float, mc_samples: int, opts: SolverOptions | None = None, beta_override: float | None = None) -> BoundReport:
    """One replication: fit, evaluate the bound, estimate the true risk by Monte Carlo."""
    Z = generate(gen, space)
    model = fit(K, Z, lam, loss, opts)
    R_emp = model.empirical_risk(Z)
    kappa = K.kappa
    beta = theoretical_beta(loss.kind, kappa, Z.m, lam, Z.C_y) if beta_override is None else float(beta_override)
    _, M = loss.constants(Z.C_y, kappa, lam)
    bound = generalization_bound(R_emp, beta, M, Z.m, delta)
    X, Y = fresh_probes(gen, space, mc_samples, label="mc")
    losses = model.losses(X, Y)
    risk = float(np.mean(losses))
    se = float(np.std(losses, ddof=1) / math.sqrt(len(losses))) if len(losses) > 1 else 0.0
    return BoundReport(
        delta=float(delta),
        m=Z.m,
        R_emp=R_emp,
        beta=beta,
        M=M,
        bound_value=bound,
        risk_mc_estimate=risk,
        mc_se=se,
        mc_samples=int(mc_samples),
        holds=risk <= bound,
        violation=risk - bound > 2.0 * se,
        seed=int(gen.seed),
    )


def _bound_job(args) -> BoundReport:
    return bound_rep(*args)


def bound_check(
    K: OperatorKernel,
    gen: GeneratorSpec,
    space: OutputSpace,
    loss: Loss,
    lam: float,
    delta: float,
    reps: int,
    mc_samples: int,
    opts: SolverOptions | None = None,
    workers: int = 1,
    beta_override: float | None = None,
) -> list[BoundReport]:
    """``reps`` independent datasets (seeds ``gen.seed + r``), one report each."""
    if reps < 1 or mc_samples < 2:
        raise ValueError("need reps >= 1 and mc_samples >= 2")
    jobs = [(K, _with(gen, seed=gen.seed + r), space, loss, lam, delta, mc_samples, opts, beta_override) for r in range(reps)]
    return run_jobs(_bound_job, jobs, workers)


def holds_fraction(reports: list[BoundReport]) -> float:
    return float(np.mean([r.holds for r in reports]))
