import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onestep_glm import (
    DataShard,
    DerivativeBundle,
    Family,
    chol_solve,
    derivatives,
    fit_mle,
    log_lik_kernel,
    mean,
    variance_fn,
)
from onestep_glm.errors import (
    DomainError,
    NotPositiveDefiniteError,
    ShapeError,
    SingularInformationError,
)
from onestep_glm.glm import PoissonClampWarning

L, P = Family.LOGISTIC, Family.POISSON


def sym4():
    """Four rows x=(-1,-1,1,1), y=(0,1,0,1): MLE is exactly 0."""
    return DataShard(np.array([0.0, 1, 0, 1]), np.array([[-1.0], [-1], [1], [1]]))


def random_shard(rng, family, m, d):
    X = rng.standard_normal((m, d)) * 0.7
    beta = rng.standard_normal(d) * 0.5
    eta = X @ beta
    if family is L:
        y = (rng.random(m) < 1 / (1 + np.exp(-eta))).astype(float)
    else:
        y = rng.poisson(np.exp(eta)).astype(float)
    return DataShard(y, X), beta


# ---------------------------------------------------------------- mean / variance


def test_mean_examples():
    assert mean(L, 0.0) == 0.5
    assert mean(P, 0.0) == 1.0
    v = mean(L, 40.0)
    assert 1 - 1e-15 < v <= 1.0


def test_mean_rejects_non_finite():
    with pytest.raises(DomainError):
        mean(L, float("nan"))
    with pytest.raises(DomainError):
        mean(P, np.array([0.0, np.inf]))


def test_logistic_mean_is_stable_at_extremes():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = mean(L, np.array([-800.0, 800.0]))
    assert out[0] == 0.0 and out[1] == 1.0


def test_poisson_mean_clamps_with_warning():
    with pytest.warns(PoissonClampWarning):
        out = mean(P, 800.0)
    assert out == pytest.approx(math.exp(700.0))


def test_variance_examples():
    assert variance_fn(L, 0.5) == 0.25
    assert variance_fn(P, 3.0) == 3.0
    assert variance_fn(L, 0.0) == 0.0


@pytest.mark.parametrize("family,mu", [(L, -0.1), (L, 1.5), (P, -1.0), (L, float("nan"))])
def test_variance_domain(family, mu):
    with pytest.raises(DomainError):
        variance_fn(family, mu)


# ---------------------------------------------------------------- log-likelihood


def test_log_lik_examples():
    one = DataShard(np.array([1.0]), np.zeros((1, 3)))
    assert log_lik_kernel(L, one, np.array([5.0, -2.0, 1.0])) == pytest.approx(-math.log(2), abs=1e-12)
    pois = DataShard(np.array([0.0]), np.array([[0.0]]))
    assert log_lik_kernel(P, pois, np.array([0.0])) == pytest.approx(-1.0, abs=1e-15)
    assert log_lik_kernel(L, sym4(), np.array([0.0])) == pytest.approx(-2.772589, abs=1e-6)


def test_log_lik_shape_error():
    with pytest.raises(ShapeError):
        log_lik_kernel(L, sym4(), np.zeros(2))


def test_logistic_log_lik_matches_naive_formula():
    rng = np.random.default_rng(3)
    shard, beta = random_shard(rng, L, 40, 3)
    eta = shard.X @ beta
    p = 1 / (1 + np.exp(-eta))
    naive = np.sum(shard.y * np.log(p) + (1 - shard.y) * np.log(1 - p))
    assert log_lik_kernel(L, shard, beta) == pytest.approx(naive, rel=1e-12)


# ---------------------------------------------------------------- derivatives


def test_derivative_examples():
    b = derivatives(L, sym4(), np.array([0.0]))
    assert b.score.tolist() == [0.0]
    assert b.info.tolist() == [[1.0]]
    assert b.count == 4

    b = derivatives(P, DataShard(np.array([2.0]), np.array([[1.0]])), np.array([math.log(2)]))
    assert b.score[0] == pytest.approx(0.0, abs=1e-15)
    assert b.info[0, 0] == pytest.approx(2.0, rel=1e-15)


@pytest.mark.parametrize("family", [L, P])
def test_empty_shard_gives_zero_bundle(family):
    empty = DataShard(np.zeros(0), np.zeros((0, 3)))
    b = derivatives(family, empty, np.array([1.0, -2.0, 0.5]))
    assert not b.score.any() and not b.info.any()
    assert b.log_lik == 0.0 and b.count == 0


def _fd_score(family, shard, beta, h=1e-6):
    g = np.empty_like(beta)
    for j in range(beta.size):
        e = np.zeros_like(beta)
        e[j] = h
        g[j] = (log_lik_kernel(family, shard, beta + e) - log_lik_kernel(family, shard, beta - e)) / (2 * h)
    return g


def _fd_info(family, shard, beta, h=1e-6):
    d = beta.size
    H = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        H[:, j] = -(derivatives(family, shard, beta + e).score - derivatives(family, shard, beta - e).score) / (2 * h)
    return H


@pytest.mark.parametrize("family", [L, P])
def test_score_and_info_match_finite_differences(family):
    rng = np.random.default_rng(11)
    for _ in range(20):
        shard, beta = random_shard(rng, family, int(rng.integers(5, 51)), int(rng.integers(1, 5)))
        b = derivatives(family, shard, beta)
        scale = max(1.0, np.abs(b.score).max())
        np.testing.assert_allclose(b.score, _fd_score(family, shard, beta), rtol=1e-5, atol=1e-5 * scale)
        iscale = np.abs(b.info).max()
        np.testing.assert_allclose(b.info, _fd_info(family, shard, beta), rtol=1e-4, atol=1e-4 * iscale)


def test_info_is_symmetric():
    rng = np.random.default_rng(2)
    shard, beta = random_shard(rng, P, 30, 4)
    info = derivatives(P, shard, beta).info
    assert np.array_equal(info, info.T)


@pytest.mark.parametrize("family", [L, P])
def test_additivity(family):
    rng = np.random.default_rng(5)
    shard, beta = random_shard(rng, family, 200, 3)
    a, b = shard.take(np.arange(0, 120)), shard.take(np.arange(120, 200))
    whole = derivatives(family, shard, beta)
    parts = derivatives(family, a, beta) + derivatives(family, b, beta)
    np.testing.assert_allclose(parts.score, whole.score, rtol=1e-12, atol=1e-12 * np.abs(whole.score).max())
    np.testing.assert_allclose(parts.info, whole.info, rtol=1e-12)
    assert parts.log_lik == pytest.approx(whole.log_lik, rel=1e-12)
    assert parts.count == whole.count


def test_bundle_restrict_deletes_rows_and_columns():
    b = DerivativeBundle(np.array([1.0, 2.0]), np.array([[4.0, 1.0], [1.0, 9.0]]), -3.0, 10)
    r = b.restrict([0])
    assert r.info.tolist() == [[4.0]] and r.score.tolist() == [1.0]


def test_bundle_addition_checks_dimension():
    with pytest.raises(ShapeError):
        DerivativeBundle.zeros(2) + DerivativeBundle.zeros(3)


# ---------------------------------------------------------------- chol_solve


def test_chol_solve_examples():
    np.testing.assert_array_equal(chol_solve(np.eye(3), np.array([1.0, 2, 3])), [1, 2, 3])
    np.testing.assert_allclose(chol_solve(np.diag([4.0, 9.0]), np.array([8.0, 27.0])), [2, 3], rtol=1e-15)
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    x = chol_solve(A, np.array([3.0, 3.0]))
    np.testing.assert_allclose(x, [1, 1], rtol=1e-14)
    np.testing.assert_allclose(A @ x, [3, 3], rtol=1e-14)


@pytest.mark.parametrize("A", [np.array([[1.0, 2.0], [2.0, 1.0]]), np.zeros((2, 2)), -np.eye(2)])
def test_chol_solve_rejects_non_pd(A):
    with pytest.raises(NotPositiveDefiniteError):
        chol_solve(A, np.ones(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_chol_solve_agrees_with_numpy(d, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((d, d))
    A = M @ M.T + d * np.eye(d)
    b = rng.standard_normal(d)
    np.testing.assert_allclose(chol_solve(A, b), np.linalg.solve(A, b), rtol=1e-9, atol=1e-12)


# ---------------------------------------------------------------- fit_mle


def test_fit_examples():
    r = fit_mle(L, sym4(), np.zeros(1))
    assert r.converged and r.beta.tolist() == [0.0]

    pois = DataShard(np.full(4, 2.0), np.ones((4, 1)))
    r = fit_mle(P, pois)
    assert r.converged
    assert r.beta[0] == pytest.approx(math.log(2), abs=1e-10)


def test_separation_is_signalled():
    sep = DataShard(np.array([0.0, 1.0]), np.array([[-1.0], [1.0]]))
    try:
        r = fit_mle(L, sep, np.zeros(1), max_iter=100)
    except SingularInformationError as exc:
        assert exc.iteration is not None
    else:
        assert not r.converged


def test_rank_deficient_design_raises():
    X = np.column_stack([np.ones(6), np.arange(6.0), 2 * np.arange(6.0)])
    shard = DataShard(np.array([0.0, 1, 0, 1, 1, 0]), X)
    with pytest.raises(SingularInformationError):
        fit_mle(L, shard)


@pytest.mark.parametrize("family", [L, P])
def test_converged_score_is_small(family):
    rng = np.random.default_rng(8)
    shard, _ = random_shard(rng, family, 500, 3)
    tol = 1e-8
    r = fit_mle(family, shard, tol=tol)
    b = derivatives(family, shard, r.beta)
    assert r.converged
    assert np.abs(b.score).max() <= 10 * tol * np.abs(np.diag(b.info)).max()
    assert r.log_lik == pytest.approx(b.log_lik)


@pytest.mark.parametrize("family", [L, P])
def test_fit_is_permutation_invariant(family):
    rng = np.random.default_rng(21)
    shard, _ = random_shard(rng, family, 300, 3)
    perm = rng.permutation(shard.m)
    a = fit_mle(family, shard)
    b = fit_mle(family, shard.take(perm))
    np.testing.assert_allclose(a.beta, b.beta, atol=1e-8)


def test_restricted_fit_moves_only_free_coordinates():
    rng = np.random.default_rng(4)
    shard, _ = random_shard(rng, L, 400, 3)
    init = np.array([0.0, 0.25, 0.0])
    r = fit_mle(L, shard, init, free=[0, 2])
    assert r.beta[1] == 0.25
    score = derivatives(L, shard, r.beta).score
    assert np.abs(score[[0, 2]]).max() < 1e-6


def test_max_iter_exhaustion_is_not_an_error():
    rng = np.random.default_rng(1)
    shard, _ = random_shard(rng, P, 200, 2)
    r = fit_mle(P, shard, max_iter=1)
    assert not r.converged and r.iterations == 1


def test_datashard_validation():
    with pytest.raises(ShapeError):
        DataShard(np.zeros(3), np.zeros((2, 1)))
    with pytest.raises(DomainError):
        DataShard(np.array([np.nan]), np.zeros((1, 1)))
