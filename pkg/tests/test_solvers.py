import itertools
import math

import numpy as np
import pytest

from opk.audit import random_inputs, random_outputs
from opk.datagen import GeneratorSpec, generate, random_curves
from opk.dataset import Dataset
from opk.hilbert import OutputSpace
from opk.kernels import GramOperator, NonSeparableMultiplication, build_kernel
from opk.losses import Loss
from opk.solvers import (
    RepresenterModel,
    SolverError,
    SolverOptions,
    empirical_risk,
    fit,
    fit_square,
    fit_subgradient,
    predict,
    rkhs_norm,
    zero_objective,
)

from conftest import FOUR_KINDS
from oracles import EPS, dense_oracle, logistic_oracle_a, svr_grid_polish


def dataset(X, Y, space, input_space=None, C_y=None):
    C_y = C_y or float(np.max(space.norms(np.atleast_2d(Y)))) + 1e-9
    return Dataset(X, Y, space, input_space or space, C_y)


def random_dataset(K, rng, m):
    Y = random_outputs(K, rng, m)
    return dataset(random_inputs(K, rng, m), Y, K.output_space, K.input_space)


# -- square loss -------------------------------------------------------------------


@pytest.mark.parametrize("lam", [1e-3, 0.1, 0.5, 7.0])
def test_single_sample_closed_form(lam, l2_space, rng):
    K = build_kernel({"kind": "identity"}, l2_space)
    x = random_curves(l2_space, rng, 1)
    y = random_curves(l2_space, rng, 1)
    model = fit_square(K, dataset(x, y, l2_space), lam)
    expected = y[0] / (1 + lam)
    np.testing.assert_allclose(model.coeffs[0], expected, rtol=4 * EPS, atol=0)
    np.testing.assert_allclose(predict(model, x[0]).values, expected, rtol=4 * EPS, atol=0)
    assert rkhs_norm(model) == pytest.approx(l2_space.norms(y[0]) / (1 + lam), rel=1e-14)
    risk = (lam / (1 + lam)) ** 2 * l2_space.dot(y[0], y[0])
    assert empirical_risk(model, dataset(x, y, l2_space)) == pytest.approx(risk, rel=1e-12)


def test_duplicated_sample(l2_space, rng):
    lam = 0.3
    K = build_kernel({"kind": "identity"}, l2_space)
    x = random_curves(l2_space, rng, 1)
    y = random_curves(l2_space, rng, 1)
    Z = dataset(np.vstack([x, x]), np.vstack([y, y]), l2_space)
    model = fit_square(K, Z, lam)
    np.testing.assert_allclose(model.coeffs, np.vstack([y, y]) / (2 + 2 * lam), rtol=1e-14)
    np.testing.assert_allclose(model.predict(x[0]).values, y[0] / (1 + lam), rtol=1e-14)
    np.testing.assert_allclose(model.coeffs, dense_oracle(K, Z, lam), rtol=1e-12)


def structured_cases():
    kinds = FOUR_KINDS + ("rank_one",)
    for idx, (kind, m, n) in enumerate(itertools.product(kinds, (1, 2, 3, 5), (4, 8, 13))):
        yield idx, kind, m, n


@pytest.mark.parametrize("idx,kind,m,n", list(structured_cases()))
def test_structured_matches_dense(idx, kind, m, n):
    rng = np.random.default_rng(1000 + idx)
    space = OutputSpace.l2(0, 1, n)
    K = build_kernel({"kind": kind}, space)
    Z = random_dataset(K, rng, m)
    lam = 10 ** rng.uniform(-3, 0.5)
    C = fit_square(K, Z, lam).coeffs
    ref = dense_oracle(K, Z, lam)
    assert np.linalg.norm(C - ref) <= 1e-8 * np.linalg.norm(ref)
    Cd = fit_square(K, Z, lam, method="dense").coeffs
    assert np.linalg.norm(Cd - ref) <= 1e-8 * np.linalg.norm(ref)


@pytest.mark.parametrize("kind", ["identity", "separable_multiplication", "rank_one_sum"])
def test_finite_dim_structured_matches_dense(kind, rng):
    out = OutputSpace.finite(4)
    K = build_kernel({"kind": kind}, out, OutputSpace.finite(3))
    Z = random_dataset(K, rng, 5)
    C = fit_square(K, Z, 0.05).coeffs
    ref = dense_oracle(K, Z, 0.05)
    assert np.linalg.norm(C - ref) <= 1e-8 * np.linalg.norm(ref)


@pytest.mark.parametrize("kind", FOUR_KINDS)
def test_square_certificates(kind, l2_space, rng):
    K = build_kernel({"kind": kind}, l2_space)
    Z = random_dataset(K, rng, 6)
    lam = 0.25
    model = fit_square(K, Z, lam)
    assert model.solver_log["residual"] <= 1e-8
    # lam ||f||^2 <= R_reg(f) <= R_reg(0) <= C_y^2
    reg = lam * model.rkhs_norm_sq()
    obj = model.objective(Z)
    assert reg <= obj + 1e-14
    assert obj <= zero_objective(Loss.square(), Z) + 1e-14
    assert zero_objective(Loss.square(), Z) <= Z.C_y**2 * (1 + 1e-12)
    assert model.rkhs_norm() <= Z.C_y / math.sqrt(lam) * (1 + 1e-12)


def test_rkhs_norm_bound_example(l2_space):
    K = build_kernel({"kind": "identity"}, l2_space)
    Z = generate(GeneratorSpec(m=30, clip_C_y=1.0), l2_space)
    assert fit_square(K, Z, 0.25).rkhs_norm() <= 2.0


@pytest.mark.parametrize("kind", FOUR_KINDS)
def test_prediction_bound(kind, l2_space, rng):
    K = build_kernel({"kind": kind}, l2_space)
    Z = random_dataset(K, rng, 5)
    model = fit_square(K, Z, 0.01)
    P = model.predict_batch(random_inputs(K, rng, 50))
    assert np.all(l2_space.norms(P) <= K.kappa * model.rkhs_norm() + 1e-8)


def test_lambda_monotone_norm(l2_space):
    K = build_kernel({"kind": "separable_multiplication"}, l2_space)
    Z = generate(GeneratorSpec(m=20), l2_space)
    norms = [fit_square(K, Z, lam).rkhs_norm() for lam in np.logspace(-4, 1, 12)]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))


def test_predict_is_sum_of_apply(l2_space, rng):
    K = build_kernel({"kind": "rank_one_sum"}, l2_space)
    Z = random_dataset(K, rng, 2)
    model = fit_square(K, Z, 0.1)
    x = random_curves(l2_space, rng, 1)[0]
    direct = K.apply(x, Z.inputs[0], model.coeffs[0]).values + K.apply(x, Z.inputs[1], model.coeffs[1]).values
    np.testing.assert_allclose(model.predict(x).values, direct, rtol=1e-13, atol=1e-15)


def test_zero_model(l2_space, rng):
    K = build_kernel({"kind": "identity"}, l2_space)
    X = random_curves(l2_space, rng, 3)
    Y = random_curves(l2_space, rng, 3)
    model = RepresenterModel(K, X, np.zeros_like(Y), 0.1, Loss.square())
    assert np.all(model.predict(X[0]).values == 0.0)
    assert model.rkhs_norm() == 0.0
    assert model.empirical_risk(dataset(X, Y, l2_space)) == pytest.approx(np.mean(l2_space.dot(Y, Y)))


def test_perfect_interpolation_zero_risk(l2_space, rng):
    K = NonSeparableMultiplication(l2_space, 1.0)
    X = random_curves(l2_space, rng, 1)
    model = RepresenterModel(K, X, np.ones_like(X), 0.1, Loss.square())
    Y = model.predict_batch(X)
    assert model.empirical_risk(dataset(X, Y, l2_space)) == 0.0


def test_invalid_lambda(l2_space, rng):
    K = build_kernel({"kind": "identity"}, l2_space)
    Z = random_dataset(K, rng, 2)
    for lam in (0.0, -1.0):
        with pytest.raises(ValueError):
            fit_square(K, Z, lam)
        with pytest.raises(ValueError):
            fit_subgradient(K, Z, lam, Loss.logistic())


def test_square_rejected_by_iterative_solver(l2_space, rng):
    K = build_kernel({"kind": "identity"}, l2_space)
    with pytest.raises(ValueError):
        fit_subgradient(K, random_dataset(K, rng, 2), 0.1, Loss.square())


def test_dense_size_refusal():
    space = OutputSpace.l2(0, 1, 200)
    K = build_kernel({"kind": "identity"}, space)
    Z = generate(GeneratorSpec(m=25), space)
    with pytest.raises(MemoryError):
        fit_square(K, Z, 0.1, method="dense")
    assert fit_square(K, Z, 0.1).solver_log["residual"] <= 1e-8


@pytest.mark.parametrize("kind", FOUR_KINDS)
def test_permutation_equivariance(kind, l2_space, rng):
    K = build_kernel({"kind": kind}, l2_space)
    Z = random_dataset(K, rng, 5)
    perm = rng.permutation(5)
    a = fit_square(K, Z, 0.1).coeffs[perm]
    b = fit_square(K, Z.permuted(perm), 0.1).coeffs
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)


def test_model_json_roundtrip(tmp_path, l2_space, rng):
    K = build_kernel({"kind": "separable_multiplication"}, l2_space)
    Z = random_dataset(K, rng, 4)
    model = fit(K, Z, 0.1, Loss.eps_insensitive(0.05))
    path = tmp_path / "model.json"
    model.save(path)
    back = RepresenterModel.load(path)
    X = random_inputs(K, rng, 3)
    np.testing.assert_array_equal(back.predict_batch(X), model.predict_batch(X))
    assert back.loss == model.loss and back.lam == model.lam
    assert back.solver_log == model.solver_log


# -- iterative solvers ------------------------------------------------------------------


def test_eps_tube_covers_targets(l2_space, rng):
    K = build_kernel({"kind": "identity"}, l2_space)
    Z = random_dataset(K, rng, 6)
    eps = float(np.max(l2_space.norms(Z.outputs)))
    for method in ("dual", "subgradient"):
        model = fit(K, Z, 0.1, Loss.eps_insensitive(eps), SolverOptions(method=method))
        assert model.rkhs_norm() <= 1e-6


@pytest.mark.parametrize("lam", [0.01, 0.1, 1.0])
@pytest.mark.parametrize("kernel", ["identity", "nonseparable"])
def test_logistic_single_sample_oracle(lam, kernel, l2_space, rng):
    y = random_curves(l2_space, rng, 1)
    if kernel == "identity":
        K = build_kernel({"kind": "identity"}, l2_space)
        x = random_curves(l2_space, rng, 1)
    else:
        K = NonSeparableMultiplication(l2_space, 1.0)
        x = np.ones((1, l2_space.dim))
    Z = dataset(x, y, l2_space)
    model = fit(K, Z, lam, Loss.logistic(), SolverOptions(tol=1e-10))
    a = logistic_oracle_a(lam, 1.0, float(l2_space.dot(y[0], y[0])))
    np.testing.assert_allclose(model.coeffs[0], a * y[0], atol=1e-5)
    c = a * y[0]
    obj = math.log1p(math.exp(-float(l2_space.dot(y[0], c)))) + lam * float(l2_space.dot(c, c))
    assert model.objective(Z) == pytest.approx(obj, abs=1e-4)
    assert model.solver_log["converged"]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_svr_small_instance_oracle(seed):
    rng = np.random.default_rng(seed)
    out = OutputSpace.finite(2)
    inp = OutputSpace.finite(2)
    K = build_kernel({"kind": "identity"}, out, inp)
    X = rng.uniform(-1, 1, (3, 2))
    Y = rng.uniform(-1, 1, (3, 2))
    lam, eps = 0.2, 0.1
    Z = dataset(X, Y, out, inp)
    G = K.scalar.matrix(X, X)
    oracle = svr_grid_polish(G, Y, lam, eps, r=1.0)
    model = fit(K, Z, lam, Loss.eps_insensitive(eps), SolverOptions(tol=1e-9))
    assert abs(model.objective(Z) - oracle) <= 1e-4
    # the plain subgradient method only has the slow O(1/sqrt(t)) guarantee
    sub = fit(K, Z, lam, Loss.eps_insensitive(eps), SolverOptions(method="subgradient", max_iters=20000, tol=1e-9))
    assert oracle - 1e-4 <= sub.objective(Z) <= oracle + 5e-3


@pytest.mark.parametrize("kind", FOUR_KINDS)
def test_logistic_monotone_and_converged(kind, l2_space):
    K = build_kernel({"kind": kind}, l2_space)
    Z = generate(GeneratorSpec(kind="logistic_pairs", m=15, seed=3), l2_space)
    model = fit(K, Z, 0.05, Loss.logistic(), SolverOptions(history=True))
    h = model.solver_log["history"]
    assert all(b <= a for a, b in zip(h, h[1:]))
    assert model.solver_log["converged"]
    assert model.solver_log["grad_norm"] <= 1e-7 * (1 + abs(model.solver_log["objective"]))
    assert model.objective(Z) <= zero_objective(Loss.logistic(), Z) + 1e-12


@pytest.mark.parametrize("method", ["dual", "subgradient"])
def test_svr_best_so_far_monotone(method, l2_space):
    K = build_kernel({"kind": "rank_one_sum"}, l2_space)
    Z = generate(GeneratorSpec(m=12, seed=4), l2_space)
    model = fit(K, Z, 0.1, Loss.eps_insensitive(0.05), SolverOptions(method=method, history=True))
    h = model.solver_log["history"]
    assert all(b <= a for a, b in zip(h, h[1:]))
    assert model.objective(Z) <= zero_objective(Loss.eps_insensitive(0.05), Z) + 1e-12
    assert model.solver_log["objective"] == pytest.approx(model.objective(Z), rel=1e-10)


def test_svr_methods_agree(l2_space):
    K = build_kernel({"kind": "identity"}, l2_space)
    Z = generate(GeneratorSpec(m=10, seed=5), l2_space)
    loss = Loss.eps_insensitive(0.1)
    dual = fit(K, Z, 0.1, loss)
    sub = fit(K, Z, 0.1, loss, SolverOptions(method="subgradient", max_iters=20000))
    assert dual.solver_log["converged"]
    assert dual.solver_log["duality_gap"] <= 1e-7 * (1 + dual.objective(Z))
    assert dual.objective(Z) <= sub.objective(Z) + 1e-9
    assert sub.objective(Z) - dual.objective(Z) <= 1e-3


def test_svr_coefficients_in_dual_ball(l2_space):
    K = build_kernel({"kind": "identity"}, l2_space)
    Z = generate(GeneratorSpec(m=10, seed=6), l2_space)
    lam = 0.05
    model = fit(K, Z, lam, Loss.eps_insensitive(0.0))
    assert np.all(l2_space.norms(model.coeffs) <= 1 / (2 * lam * Z.m) * (1 + 1e-12))


def test_warm_start_reaches_same_optimum(l2_space):
    K = build_kernel({"kind": "identity"}, l2_space)
    Z = generate(GeneratorSpec(kind="logistic_pairs", m=10, seed=7), l2_space)
    cold = fit(K, Z, 0.1, Loss.logistic(), SolverOptions(tol=1e-10))
    warm = fit(K, Z, 0.1, Loss.logistic(), SolverOptions(tol=1e-10), init=cold.coeffs * 0.5)
    assert warm.objective(Z) == pytest.approx(cold.objective(Z), abs=1e-12)
    with pytest.raises(ValueError):
        fit(K, Z, 0.1, Loss.logistic(), init=np.zeros((3, 3)))


def test_divergence_guard_raises(l2_space, rng):
    K = build_kernel({"kind": "identity"}, l2_space)
    Z = random_dataset(K, rng, 4)
    eps = 0.95 * float(np.max(l2_space.norms(Z.outputs)))
    opts = SolverOptions(method="subgradient", step0=1e9)
    with pytest.raises(SolverError):
        fit(K, Z, 0.001, Loss.eps_insensitive(eps), opts)


def test_unknown_method(l2_space, rng):
    K = build_kernel({"kind": "identity"}, l2_space)
    with pytest.raises(ValueError):
        fit(K, random_dataset(K, rng, 2), 0.1, Loss.eps_insensitive(0.1), SolverOptions(method="newton"))


def test_fits_are_deterministic(l2_space):
    K = build_kernel({"kind": "separable_multiplication"}, l2_space)
    Z = generate(GeneratorSpec(m=12, seed=8), l2_space)
    for loss in (Loss.square(), Loss.eps_insensitive(0.1), Loss.logistic()):
        a, b = fit(K, Z, 0.1, loss), fit(K, Z, 0.1, loss)
        assert np.array_equal(a.coeffs, b.coeffs)
        assert a.solver_log == b.solver_log


def test_options_roundtrip():
    opts = SolverOptions(max_iters=10, step0=0.5, tol=1e-5, method="subgradient")
    assert SolverOptions.from_dict(opts.to_dict()) == opts
    assert SolverOptions.from_dict(None) == SolverOptions()


def test_precomputed_gram_gives_same_fit(l2_space):
    K = build_kernel({"kind": "identity"}, l2_space)
    Z = generate(GeneratorSpec(m=8, seed=9), l2_space)
    G = GramOperator(K, Z.inputs)
    for loss in (Loss.square(), Loss.logistic()):
        assert np.array_equal(fit(K, Z, 0.1, loss).coeffs, fit(K, Z, 0.1, loss, gram=G).coeffs)
