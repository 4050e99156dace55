import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_toy, schur_oracle
from seqgp.errors import SingularCovarianceError
from seqgp.explicit import (DataStage, condition_batch, condition_sequential_explicit,
                            condition_via_representing_sequence, explicit_prior, representing_sequence,
                            update_stage_explicit)
from seqgp.grid import build_grid
from seqgp.kernels import Kernel, PriorModel, prior_cov_dense
from seqgp.operators import pointwise_operator, weighted_operator

MODEL = PriorModel(Kernel("matern52", 1.4, 1.5), 0.7)
GRID = build_grid(1, [8], [0.6])


def test_noiseless_dirac_interpolates():
    post = condition_batch(MODEL, GRID, DataStage(pointwise_operator(GRID, [3]), [2.5], 0.0))
    assert post.mean[3] == pytest.approx(2.5, abs=1e-12)
    assert abs(post.cov[3, 3]) <= 1e-10 * MODEL.variance


def test_huge_noise_keeps_prior():
    tau2 = 1e12 * MODEL.variance
    G = pointwise_operator(GRID, [1, 5])
    y = np.array([4.0, -3.0])
    post = condition_batch(MODEL, GRID, DataStage(G, y, tau2))
    innov = y - G @ np.full(GRID.m, MODEL.m0)
    shift = post.mean - MODEL.m0
    # first order in 1/tau2: K G^T innov / tau2
    first_order = prior_cov_dense(MODEL, GRID) @ G.dense().T @ innov / tau2
    np.testing.assert_allclose(shift, first_order, rtol=1e-3)  # shift sits ~1e-12 below m0
    assert np.abs(shift).max() <= MODEL.variance * np.abs(innov).sum() / tau2
    np.testing.assert_allclose(post.cov, prior_cov_dense(MODEL, GRID), atol=1e-10)


def test_batch_matches_schur_oracle():
    rng = np.random.default_rng(5)
    g = build_grid(1, [6], [1.0])
    G = weighted_operator(g, [[(j, rng.normal()) for j in range(6)] for _ in range(2)])
    stage = DataStage(G, rng.normal(size=2), 0.05)
    post = condition_batch(MODEL, g, stage)
    mean, cov = schur_oracle(MODEL, g, [stage])
    np.testing.assert_allclose(post.mean, mean, atol=1e-10)
    np.testing.assert_allclose(post.cov, cov, atol=1e-10)


def test_noiseless_mean_reproduces_data():
    rng = np.random.default_rng(1)
    G = weighted_operator(GRID, [[(j, rng.uniform(0.2, 1)) for j in rng.choice(8, 3, replace=False)]
                                 for _ in range(3)])
    y = rng.normal(size=3)
    post = condition_batch(MODEL, GRID, DataStage(G, y, 0.0))
    np.testing.assert_allclose(G @ post.mean, y, atol=1e-8)


def test_singular_noiseless_reports_rank():
    G = weighted_operator(GRID, [[(0, 1.0), (1, 1.0)], [(0, 2.0), (1, 2.0)]])
    with pytest.raises(SingularCovarianceError, match="rank 1 of 2"):
        condition_batch(MODEL, GRID, DataStage(G, [1.0, 2.0], 0.0))


def test_one_stage_update_equals_batch():
    stage = DataStage(pointwise_operator(GRID, [0, 6]), [1.0, -1.0], 0.1)
    a = update_stage_explicit(explicit_prior(MODEL, GRID), stage)
    b = condition_batch(MODEL, GRID, stage)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-10)
    np.testing.assert_allclose(a.cov, b.cov, atol=1e-10)
    assert a.stage == 1


def test_two_stages_equal_stacked_batch():
    s1 = DataStage(pointwise_operator(GRID, [0, 6]), [1.0, -1.0], 0.1)
    s2 = DataStage(weighted_operator(GRID, [[(2, 0.5), (3, 0.5)]]), [0.3], 0.1)
    seq = condition_sequential_explicit(MODEL, GRID, [s1, s2])
    bat = condition_batch(MODEL, GRID, DataStage.stack([s1, s2]))
    assert np.abs(seq.mean - bat.mean).max() < 1e-8
    assert np.abs(seq.cov - bat.cov).max() < 1e-8


def test_zero_innovation_keeps_mean_and_shrinks_cov():
    post = condition_batch(MODEL, GRID, DataStage(pointwise_operator(GRID, [2]), [0.0], 0.01))
    G = pointwise_operator(GRID, [5])
    nxt = update_stage_explicit(post, DataStage(G, G @ post.mean, 0.01))
    np.testing.assert_allclose(nxt.mean, post.mean, atol=1e-14)
    assert nxt.cov[5, 5] < post.cov[5, 5]


def test_representing_sequence_single_row():
    c = np.array([[2.5]])
    Y = representing_sequence(c)
    assert (c @ Y)[0, 0] * Y[0, 0] == pytest.approx(1.0)


def test_representing_sequence_matches_batch():
    rng = np.random.default_rng(2)
    g = build_grid(1, [8], [0.5])
    G = weighted_operator(g, [[(j, rng.normal()) for j in range(8)] for _ in range(3)])
    y = rng.normal(size=3)
    a = condition_via_representing_sequence(MODEL, g, G, y)
    b = condition_batch(MODEL, g, DataStage(G, y, 0.0))
    assert np.abs(a.mean - b.mean).max() < 1e-8
    assert np.abs(a.cov - b.cov).max() < 1e-8


@settings(max_examples=25)
@given(st.integers(0, 100_000), st.integers(1, 6))
def test_representing_sequence_orthonormal(seed, p):
    A = np.random.default_rng(seed).normal(size=(p, p + 2))
    C = A @ A.T + 0.1 * np.eye(p)
    Y = representing_sequence(C)
    np.testing.assert_allclose(Y.T @ C @ Y, np.eye(p), atol=1e-10)


def test_representing_sequence_rank_deficient():
    with pytest.raises(SingularCovarianceError):
        representing_sequence(np.array([[1.0, 1.0], [1.0, 1.0]]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000))
def test_posterior_properties(seed):
    rng = np.random.default_rng(seed)
    toy = random_toy(rng)
    prior = explicit_prior(toy.model, toy.grid)
    post, prev_var = prior, prior.variance
    tol = 1e-10 * toy.model.variance
    for st_ in toy.stages:
        post = update_stage_explicit(post, st_)
        assert np.all(post.variance <= prev_var + tol)
        assert np.abs(post.cov - post.cov.T).max() <= tol
        assert post.variance.min() >= -1e-8 * toy.model.variance
        prev_var = post.variance
    # covariance does not depend on the data values
    shifted = [DataStage(s.G, s.y + rng.normal(size=s.p), s.tau2) for s in toy.stages]
    other = condition_sequential_explicit(toy.model, toy.grid, shifted)
    assert np.abs(other.cov - post.cov).max() < 1e-10
    # stage order does not matter
    rev = condition_sequential_explicit(toy.model, toy.grid, toy.stages[::-1])
    assert np.abs(rev.mean - post.mean).max() < 1e-8
    assert np.abs(rev.cov - post.cov).max() < 1e-8


def test_data_stage_validation():
    G = pointwise_operator(GRID, [0])
    with pytest.raises(ValueError):
        DataStage(G, [1.0, 2.0])
    with pytest.raises(ValueError):
        DataStage(G, [1.0], -0.1)
