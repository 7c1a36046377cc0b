import numpy as np
import pytest
from scipy import optimize

from engine.datamod import Dataset
from engine.models import (
    ConvergenceError,
    ModelError,
    ModelKind,
    ModelSpec,
    accuracy,
    constants,
    grad,
    local_minimize,
    loss,
    predict,
)


def test_logistic_dimension_layout(logistic_spec):
    assert logistic_spec.kind is ModelKind.LOGISTIC
    assert logistic_spec.dim == 3 * (5 + 1)
    assert logistic_spec.feature_dim == 5
    assert logistic_spec.strongly_convex


def test_logistic_spec_rejects_one_class():
    with pytest.raises(ModelError):
        ModelSpec.logistic(4, 1)


def test_quadratic_gradient_matches_finite_differences(quadratic_spec, quadratic_problem, rng):
    w = rng.standard_normal(quadratic_spec.dim)
    idx = quadratic_problem.client_indices(1)[:4]
    error = optimize.check_grad(
        lambda v: loss(quadratic_spec, v, quadratic_problem, idx),
        lambda v: grad(quadratic_spec, v, quadratic_problem, idx),
        w,
    )
    assert error < 1e-5


def test_logistic_gradient_matches_finite_differences(logistic_spec, blobs, rng):
    w = 0.1 * rng.standard_normal(logistic_spec.dim)
    idx = np.arange(50)
    error = optimize.check_grad(
        lambda v: loss(logistic_spec, v, blobs, idx),
        lambda v: grad(logistic_spec, v, blobs, idx),
        w,
    )
    assert error < 1e-5


def test_label_override_changes_the_objective(logistic_spec, blobs):
    idx = np.arange(30)
    w = np.zeros(logistic_spec.dim)
    w[0] = 1.0
    flipped = 2 - blobs.labels[idx]
    assert loss(logistic_spec, w, blobs, idx) != pytest.approx(loss(logistic_spec, w, blobs, idx, flipped))


def test_zero_weights_give_log_k_loss(blobs):
    spec = ModelSpec.logistic(blobs.feature_dim, 3)
    assert loss(spec, np.zeros(spec.dim), blobs) == pytest.approx(np.log(3))


def test_quadratic_constants_come_from_the_spectrum(quadratic_spec, quadratic_problem):
    c = constants(quadratic_spec, quadratic_problem)
    assert c.lam == pytest.approx(1.0)
    assert c.L == pytest.approx(4.0)


def test_logistic_constants_bound_the_hessian(logistic_spec, blobs, rng):
    c = constants(logistic_spec, blobs)
    assert c.lam == logistic_spec.l2_reg
    w = rng.standard_normal(logistic_spec.dim)
    v = rng.standard_normal(logistic_spec.dim)
    h = 1e-5
    curvature = (grad(logistic_spec, w + h * v, blobs) - grad(logistic_spec, w, blobs)) @ v / (h * v @ v)
    assert curvature <= c.L + 1e-6


def test_quadratic_local_minimum_has_zero_gradient(quadratic_spec, quadratic_problem):
    idx = quadratic_problem.client_indices(2)
    w_star, f_star = local_minimize(quadratic_spec, quadratic_problem, idx)
    np.testing.assert_allclose(grad(quadratic_spec, w_star, quadratic_problem, idx), 0.0, atol=1e-10)
    assert f_star == pytest.approx(loss(quadratic_spec, w_star, quadratic_problem, idx))


@pytest.mark.parametrize("solver", ["gd", "lbfgs"])
def test_logistic_local_minimum_reaches_tolerance(logistic_spec, blobs, solver):
    idx = np.arange(80)
    w_star, f_star = local_minimize(logistic_spec, blobs, idx, tol=1e-6, solver=solver)
    assert np.linalg.norm(grad(logistic_spec, w_star, blobs, idx)) <= 1e-6
    assert f_star <= loss(logistic_spec, np.zeros(logistic_spec.dim), blobs, idx)


def test_unregularized_logistic_cannot_be_minimized(blobs):
    spec = ModelSpec.logistic(blobs.feature_dim, 3)
    with pytest.raises(ModelError):
        local_minimize(spec, blobs, np.arange(20))


def test_iteration_cap_raises_convergence_error(logistic_spec, blobs):
    with pytest.raises(ConvergenceError) as info:
        local_minimize(logistic_spec, blobs, np.arange(80), tol=1e-12, max_iters=3)
    assert info.value.grad_norm > 1e-12


def test_unknown_solver(logistic_spec, blobs):
    with pytest.raises(ModelError):
        local_minimize(logistic_spec, blobs, np.arange(10), solver="newton")


def test_model_and_data_must_match(quadratic_spec, blobs):
    with pytest.raises(ModelError):
        loss(quadratic_spec, np.zeros(quadratic_spec.dim), blobs)


def test_trained_model_separates_well_spaced_blobs(logistic_spec, blobs):
    w_star, _ = local_minimize(logistic_spec, blobs, tol=1e-5)
    assert accuracy(logistic_spec, w_star, blobs) > 0.9
    assert predict(logistic_spec, w_star, blobs.features[:5]).shape == (5,)


def test_predict_needs_logistic_model(quadratic_spec):
    with pytest.raises(ModelError):
        predict(quadratic_spec, np.zeros(quadratic_spec.dim), np.zeros((1, 4)))


def test_accuracy_on_a_toy_dataset():
    data = Dataset(np.array([[1.0], [-1.0]]), np.array([1, 0]), 2)
    spec = ModelSpec.logistic(1, 2)
    w = np.array([-1.0, 0.0, 1.0, 0.0])  # class 1 prefers positive x
    assert accuracy(spec, w, data) == 1.0
