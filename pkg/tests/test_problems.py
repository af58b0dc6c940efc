"""Gradient oracles checked against finite differences, plus the noise and
validation contracts of the problem classes."""

import numpy as np
import pytest

from asyncfl.data import DataShard
from asyncfl.errors import DimensionMismatchError, NonFiniteError
from asyncfl.problems import (
    LogisticProblem,
    MLPProblem,
    QuadraticProblem,
    check_same_dim,
    check_vector,
)
from asyncfl.rng import substream


def finite_difference_grad(f, w, h=1e-6):
    g = np.zeros_like(w)
    for k in range(len(w)):
        e = np.zeros_like(w)
        e[k] = h
        g[k] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def make_shards(rng, n=3, m=12, features=4, classes=3):
    shards = []
    for i in range(n):
        x = rng.standard_normal((m, features))
        y = rng.integers(0, classes, size=m)
        shards.append(DataShard(owner=i, ids=np.arange(i * m, (i + 1) * m),
                                features=x, labels=y))
    return shards


def test_check_vector_rejects_matrix():
    with pytest.raises(DimensionMismatchError):
        check_vector(np.zeros((2, 2)))


def test_check_vector_rejects_nan():
    with pytest.raises(NonFiniteError):
        check_vector(np.array([1.0, np.nan]))


def test_check_vector_enforces_dimension():
    with pytest.raises(DimensionMismatchError):
        check_vector(np.zeros(3), dim=4)


def test_check_same_dim():
    assert check_same_dim(np.zeros(3), np.ones(3)) == 3
    with pytest.raises(DimensionMismatchError):
        check_same_dim(np.zeros(3), np.zeros(4))


def test_quadratic_minimizer_has_zero_gradient():
    rng = substream(11, "quad")
    problem = QuadraticProblem(
        centers=rng.standard_normal((4, 3)),
        curvatures=1.0 + rng.random((4, 3)),
    )
    g = problem.grad(problem.minimizer())
    assert np.linalg.norm(g) < 1e-12


def test_quadratic_grad_matches_finite_differences():
    rng = substream(12, "quad")
    problem = QuadraticProblem(centers=rng.standard_normal((3, 4)))
    w = rng.standard_normal(4)
    for i in range(problem.n):
        fd = finite_difference_grad(lambda v: problem.client_loss(i, v), w)
        assert np.allclose(problem.client_grad(i, w), fd, atol=1e-6)


def test_quadratic_f_star_is_global_minimum():
    rng = substream(13, "quad")
    problem = QuadraticProblem(centers=rng.standard_normal((5, 2)))
    f_star = problem.f_star()
    for _ in range(20):
        assert problem.loss(rng.standard_normal(2)) >= f_star - 1e-12


def test_quadratic_dissimilarity_closed_form():
    rng = substream(14, "quad")
    problem = QuadraticProblem.heterogeneous(6, 3, rng)
    g_const, b_const = problem.dissimilarity()
    assert b_const == 1.0
    # direct evaluation of the dispersion of client gradients at any w
    w = rng.standard_normal(3)
    grads = np.stack([problem.client_grad(i, w) for i in range(6)])
    mean_sq = float(np.mean(np.sum(grads**2, axis=1)))
    global_sq = float(np.sum(problem.grad(w) ** 2))
    assert mean_sq - global_sq == pytest.approx(g_const**2, rel=1e-10)


def test_quadratic_rejects_nonpositive_curvature():
    with pytest.raises(ValueError):
        QuadraticProblem(centers=np.zeros((2, 2)), curvatures=np.zeros((2, 2)))


def test_stochastic_gradient_unbiased_with_exact_noise_norm():
    rng = substream(15, "noise")
    problem = QuadraticProblem(
        centers=rng.standard_normal((2, 6)), noise_sigma=0.7
    )
    w = rng.standard_normal(6)
    exact = problem.client_grad(0, w)
    trials = 20000
    noise_sq = np.empty(trials)
    acc = np.zeros(6)
    for j in range(trials):
        g = problem.stochastic_gradient(0, w, rng)
        acc += g
        noise_sq[j] = np.sum((g - exact) ** 2)
    assert np.allclose(acc / trials, exact, atol=4 * 0.7 / np.sqrt(trials) + 1e-3)
    se = noise_sq.std(ddof=1) / np.sqrt(trials)
    assert abs(noise_sq.mean() - 0.7**2) < 4 * se


def test_stochastic_gradient_noise_free_is_exact():
    rng = substream(16, "noise")
    problem = QuadraticProblem(centers=rng.standard_normal((2, 3)))
    w = rng.standard_normal(3)
    assert np.array_equal(
        problem.stochastic_gradient(1, w, rng), problem.client_grad(1, w)
    )


def test_stochastic_gradient_checks_client_range():
    problem = QuadraticProblem(centers=np.zeros((2, 3)))
    with pytest.raises(IndexError):
        problem.stochastic_gradient(2, np.zeros(3), substream(0, "x"))


def test_logistic_grad_matches_finite_differences():
    rng = substream(17, "logit")
    problem = LogisticProblem(shards=make_shards(rng), num_classes=3, l2=0.01)
    w = 0.1 * rng.standard_normal(problem.dim)
    for i in range(problem.n):
        fd = finite_difference_grad(lambda v: problem.client_loss(i, v), w)
        assert np.allclose(problem.client_grad(i, w), fd, atol=1e-5)


def test_logistic_accuracy_on_separable_toy():
    x = np.array([[2.0, 0.0], [-2.0, 0.0]] * 10)
    y = np.array([0, 1] * 10)
    shard = DataShard(owner=0, ids=np.arange(20), features=x, labels=y)
    problem = LogisticProblem(shards=[shard], num_classes=2)
    w = np.zeros(problem.dim)
    rng = substream(18, "logit")
    for _ in range(200):
        w = w - 0.5 * problem.client_grad(0, w)
    assert problem.accuracy(w, x, y) == 1.0
    assert problem.test_loss(w, x, y) < 0.1


def test_mlp_grad_matches_finite_differences():
    rng = substream(19, "mlp")
    problem = MLPProblem(shards=make_shards(rng, m=8), num_classes=3, hidden=5)
    w = problem.init_params(rng)
    for i in range(problem.n):
        fd = finite_difference_grad(lambda v: problem.client_loss(i, v), w, h=1e-5)
        assert np.allclose(problem.client_grad(i, w), fd, atol=1e-4)


def test_mlp_parameter_count():
    rng = substream(20, "mlp")
    problem = MLPProblem(shards=make_shards(rng, features=4), num_classes=3, hidden=5)
    assert problem.dim == 4 * 5 + 5 + 5 * 3 + 3
    assert problem.init_params(rng).shape == (problem.dim,)


def test_global_loss_is_mean_of_client_losses():
    rng = substream(21, "mean")
    problem = QuadraticProblem(centers=rng.standard_normal((4, 2)))
    w = rng.standard_normal(2)
    direct = np.mean([problem.client_loss(i, w) for i in range(4)])
    assert problem.loss(w) == pytest.approx(direct, rel=1e-14)
