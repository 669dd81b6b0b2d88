"""Operator-valued kernel regression with function-valued outputs, plus a
uniform-stability and generalization-bound harness."""
from .dataset import Dataset
from .datagen import GeneratorSpec, fresh_probes, generate
from .hilbert import OutputSpace, OutVec, axpy, inner, norm
from .kernels import (
    NonSeparableMultiplication,
    RankOneSum,
    ScalarKernel,
    ScalarTimesIdentity,
    SeparableMultiplication,
    build_kernel,
    hilbert_schmidt_audit,
    operator_norm_numeric,
    rank_one,
    reproducing_norm_sq,
    trace_discretized,
)
from .losses import Loss
from .solvers import RepresenterModel, SolverOptions, fit, fit_square, fit_subgradient
from .stability import (
    bound_check,
    beta_scaling_curve,
    generalization_bound,
    measure_beta,
    theoretical_beta,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "GeneratorSpec",
    "Loss",
    "NonSeparableMultiplication",
    "OutVec",
    "OutputSpace",
    "RankOneSum",
    "RepresenterModel",
    "ScalarKernel",
    "ScalarTimesIdentity",
    "SeparableMultiplication",
    "SolverOptions",
    "axpy",
    "beta_scaling_curve",
    "bound_check",
    "build_kernel",
    "fit",
    "fit_square",
    "fit_subgradient",
    "fresh_probes",
    "generalization_bound",
    "generate",
    "hilbert_schmidt_audit",
    "inner",
    "measure_beta",
    "norm",
    "operator_norm_numeric",
    "rank_one",
    "reproducing_norm_sq",
    "theoretical_beta",
    "trace_discretized",
]
