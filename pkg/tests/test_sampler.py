import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajcodec.errors import InvalidInput
from trajcodec.sampler import (
    BudgetConfig,
    SparseInstance,
    SparseTrajectorySet,
    dequantize_center,
    keypoint_budget,
    kmeans,
    kmeans_sample,
    quantize,
    quantize_points,
    random_sample,
    round_half_away,
)

# -- budget -------------------------------------------------------------------------------


def test_budget_saturates():
    assert keypoint_budget(1.0, 100, 100, BudgetConfig()) == 15


def test_budget_floor_example():
    # round(0.05 * 15) = round(0.75) = 1
    assert keypoint_budget(0.0, 10, 100, BudgetConfig()) == 1


def test_budget_zero_is_lifted_to_one():
    assert keypoint_budget(0.0, 1, 10_000, BudgetConfig()) == 1


def test_budget_normalizes_scores():
    cfg = BudgetConfig(alpha=1.0, beta=0.0, K_max=10)
    assert keypoint_budget(2.0, 1, 10, cfg, score_norm=4.0) == 5
    assert keypoint_budget(9.0, 1, 10, cfg, score_norm=4.0) == 10


def test_budget_argument_checks():
    with pytest.raises(InvalidInput):
        keypoint_budget(1.0, 0, 10, BudgetConfig())
    with pytest.raises(InvalidInput):
        keypoint_budget(1.0, 11, 10, BudgetConfig())
    with pytest.raises(InvalidInput):
        keypoint_budget(1.0, 1, 10, BudgetConfig(), score_norm=0.0)


def test_round_half_away():
    assert [round_half_away(v) for v in (0.5, 1.5, 2.5, -0.5, 0.49)] == [1, 2, 3, -1, 0]


@settings(max_examples=300, deadline=None)
@given(
    st.floats(0, 5),
    st.floats(0, 5),
    st.integers(1, 500),
    st.integers(1, 500),
    st.floats(0, 1),
    st.floats(0, 1),
)
def test_budget_monotone(s1, s2, n1, n2, alpha, beta):
    cfg = BudgetConfig(alpha=alpha, beta=beta)
    total = 500
    lo_s, hi_s = sorted((s1, s2))
    lo_n, hi_n = sorted((n1, n2))
    assert keypoint_budget(lo_s, lo_n, total, cfg) <= keypoint_budget(hi_s, lo_n, total, cfg)
    assert keypoint_budget(lo_s, lo_n, total, cfg) <= keypoint_budget(lo_s, hi_n, total, cfg)


# -- k-means -------------------------------------------------------------------------------


def brute_force_two_means(X):
    """Optimal 2-partition by exhaustive search."""
    n = len(X)
    best, best_cost = None, np.inf
    for mask in itertools.product([0, 1], repeat=n - 1):
        labels = np.array((0,) + mask)
        if labels.all() or not labels.any():
            continue
        cost = sum(((X[labels == k] - X[labels == k].mean(axis=0)) ** 2).sum() for k in (0, 1))
        if cost < best_cost:
            best, best_cost = labels, cost
    return best


@settings(max_examples=25, deadline=None)
@given(st.integers(4, 12), st.integers(0, 10_000))
def test_two_groups_one_representative_each(n, seed):
    rng = np.random.default_rng(seed)
    split = int(rng.integers(1, n))
    X = np.concatenate([rng.normal(0, 0.1, (split, 6)), rng.normal(5, 0.1, (n - split, 6))])
    perm = rng.permutation(n)
    X = X[perm]
    truth = brute_force_two_means(X)
    picks = kmeans_sample(X, 2, seed=seed)
    assert len(picks) == 2
    assert truth[picks[0]] != truth[picks[1]]


def test_k_equals_n_returns_everything():
    X = np.random.default_rng(1).normal(size=(9, 6))
    assert kmeans_sample(X, 9).tolist() == list(range(9))


def test_k_one_on_identical_members():
    X = np.tile(np.arange(6.0), (5, 1))
    (pick,) = kmeans_sample(X, 1)
    assert 0 <= pick < 5


def test_k_clamped_to_n():
    X = np.random.default_rng(2).normal(size=(4, 6))
    assert len(kmeans_sample(X, 10)) == 4


def test_kmeans_deterministic_and_converged():
    X = np.random.default_rng(3).normal(size=(60, 6))
    c1, l1 = kmeans(X, 4, seed=7)
    c2, l2 = kmeans(X, 4, seed=7)
    assert np.array_equal(c1, c2) and np.array_equal(l1, l2)
    # every center is the mean of its members at convergence
    for k in range(4):
        assert np.allclose(c1[k], X[l1 == k].mean(axis=0), atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(1, 20), st.integers(0, 1000))
def test_sample_is_subset_of_members(n, K, seed):
    X = np.random.default_rng(seed).normal(size=(n, 6))
    picks = kmeans_sample(X, K, seed)
    assert len(picks) == min(K, n)
    assert len(set(picks.tolist())) == len(picks)
    assert picks.min() >= 0 and picks.max() < n
    assert np.array_equal(picks, kmeans_sample(X, K, seed))


def test_random_sample():
    a = random_sample(20, 5, seed=4)
    assert len(a) == 5 and len(set(a.tolist())) == 5
    assert np.array_equal(a, random_sample(20, 5, seed=4))
    assert len(random_sample(3, 5)) == 3


# -- quantization --------------------------------------------------------------------------


def test_quantize_examples():
    q = quantize_points(np.array([[511.9, 319.9], [0.0, 0.0], [128.0, 80.0]]), 512, 320)
    assert q.tolist() == [[63, 39], [0, 0], [16, 10]]


def test_quantize_clamps_outside_points():
    q = quantize_points(np.array([[-3.0, 900.0]]), 512, 320)
    assert q.tolist() == [[0, 39]]


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 511.999), st.floats(0, 319.999), st.integers(1, 16))
def test_quantize_idempotent_through_centers(x, y, factor):
    q = quantize_points(np.array([[x, y]]), 512, 320, factor)
    assert np.array_equal(quantize_points(dequantize_center(q, factor), 512, 320, factor), q)


def test_quantize_builds_set():
    xy = np.array([[[10.0, 10.0], [20.0, 12.0]]])
    s = quantize([(xy, np.ones((1, 2), bool))], 64, 40, 2)
    assert (s.latent_w, s.latent_h, s.L) == (8, 5, 2)
    assert s.instances[0].xy.tolist() == [[[1, 1], [2, 1]]]


def test_sparse_set_validation():
    with pytest.raises(InvalidInput):
        SparseTrajectorySet(2, 4, 4, (SparseInstance(np.full((1, 2, 2), 4), np.ones((1, 2), bool)),))
    with pytest.raises(InvalidInput):
        SparseTrajectorySet(3, 4, 4, (SparseInstance(np.zeros((1, 2, 2)), np.ones((1, 2), bool)),))


def test_frames_slice():
    inst = SparseInstance(np.arange(12).reshape(1, 6, 2) % 4, np.ones((1, 6), bool))
    s = SparseTrajectorySet(6, 4, 4, (inst,))
    part = s.frames(2, 5)
    assert part.L == 3
    assert np.array_equal(part.instances[0].xy, inst.xy[:, 2:5])
