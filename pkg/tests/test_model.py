import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poisson_hotspots.basis import default_basis_set
from poisson_hotspots.model import (
    DivergenceError,
    ModelParams,
    ProblemData,
    expected_counts,
    fitted_tensors,
    grad_theta_h,
    grad_theta_m,
    neg_log_likelihood,
    objective,
)
from conftest import small_problem


def random_params(data, rng, scale=0.3):
    return ModelParams(rng.normal(0, scale, data.basis.p), rng.normal(0, scale, data.basis.q))


def central_diff(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def loop_nll(data, params):
    X = data.basis.X.toarray()
    total = 0.0
    for idx in range(data.basis.n):
        eta = X[idx] @ params.theta_m + params.theta_h[idx]
        total += data.n_vec[idx] * np.exp(eta) - data.y_vec[idx] * eta
    return total


def test_nll_matches_loop(problem):
    params = random_params(problem, np.random.default_rng(1))
    assert neg_log_likelihood(problem, params) == pytest.approx(loop_nll(problem, params), rel=1e-12)


def test_objective_adds_l1():
    data = small_problem()
    params = random_params(data, np.random.default_rng(2))
    lam = 3.5
    assert objective(data, params, lam) == pytest.approx(
        neg_log_likelihood(data, params) + lam * np.abs(params.theta_h).sum(), rel=1e-14
    )


def test_gradients_match_finite_differences_on_20_instances():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        dims = tuple(int(d) for d in rng.integers(1, 4, size=3))
        data = small_problem(dims, seed=seed, pop_scale=5.0)
        params = random_params(data, rng)

        def f_m(v):
            return neg_log_likelihood(data, ModelParams(v, params.theta_h))

        def f_h(v):
            return neg_log_likelihood(data, ModelParams(params.theta_m, v))

        for analytic, fd in (
            (grad_theta_m(data, params), central_diff(f_m, params.theta_m)),
            (grad_theta_h(data, params), central_diff(f_h, params.theta_h)),
        ):
            rel = np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12)
            worst = max(worst, rel)
    assert worst < 1e-5


@given(st.integers(0, 2**31), st.floats(0.0, 1.0))
@settings(max_examples=30, deadline=None)
def test_nll_is_convex_along_segments(seed, a):
    data = small_problem((3, 2, 3), seed=seed % 100)
    rng = np.random.default_rng(seed)
    p0, p1 = random_params(data, rng), random_params(data, rng)
    mid = ModelParams(a * p0.theta_m + (1 - a) * p1.theta_m, a * p0.theta_h + (1 - a) * p1.theta_h)
    lhs = neg_log_likelihood(data, mid)
    rhs = a * neg_log_likelihood(data, p0) + (1 - a) * neg_log_likelihood(data, p1)
    assert lhs <= rhs + 1e-9 * max(1.0, abs(rhs))


def test_predictor_is_clamped(problem):
    p = ModelParams(np.full(problem.basis.p, 100.0), np.zeros(problem.basis.q))
    mu = expected_counts(problem, p)
    np.testing.assert_allclose(mu, problem.n_vec * np.exp(30.0))


def test_fitted_tensors_shapes_and_background(problem):
    p = random_params(problem, np.random.default_rng(4))
    fit = fitted_tensors(problem, p, 1.0)
    assert fit.u_hat.shape == problem.dims
    np.testing.assert_allclose(fit.mu_hat_counts, problem.pop * np.exp(fit.u_hat + fit.h_hat))
    np.testing.assert_allclose(fit.background_counts, problem.pop * np.exp(fit.u_hat))
    assert not fit.u_hat.flags.writeable


@pytest.mark.parametrize(
    "y,pop",
    [
        (np.full((2, 2, 2), -1.0), np.ones((2, 2, 2))),
        (np.full((2, 2, 2), 1.5), np.ones((2, 2, 2))),
        (np.ones((2, 2, 2)), np.zeros((2, 2, 2))),
        (np.ones((2, 2, 2)), np.ones((2, 2, 3))),
    ],
)
def test_problem_data_validation(y, pop):
    with pytest.raises(ValueError):
        ProblemData(y, pop, default_basis_set((2, 2, 2)))


def test_params_validation(problem):
    with pytest.raises(DivergenceError):
        ModelParams(np.array([np.nan]), np.zeros(1))
    with pytest.raises(ValueError):
        ModelParams(np.zeros(3), np.zeros(3)).check(problem.basis)
