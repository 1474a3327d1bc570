import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajcodec.errors import InvalidInput
from trajcodec.guidance import (
    GuidanceConfig,
    grad_Lm,
    guided_epsilon,
    keyframe_weights,
    loss_grad_x0,
    loss_Lm,
    misalignment,
    predict_x0,
    sample_feature,
)
from trajcodec.sampler import SparseInstance, SparseTrajectorySet


class FloatInstance(SparseInstance):
    """Sparse instance that keeps sub-cell coordinates, for probing the bilinear path."""

    def __init__(self, xy, vis):
        object.__setattr__(self, "xy", np.asarray(xy, dtype=np.float64))
        object.__setattr__(self, "vis", np.asarray(vis, dtype=bool))


def random_sparse(rng, L, w, h, n_inst=2, k=3, integer=False):
    insts = []
    for _ in range(n_inst):
        xy = np.stack([rng.uniform(0, w - 1, (k, L)), rng.uniform(0, h - 1, (k, L))], axis=-1)
        vis = rng.random((k, L)) < 0.85
        if integer:
            insts.append(SparseInstance(np.round(xy).astype(np.int64), vis))
        else:
            insts.append(FloatInstance(xy, vis))
    return SparseTrajectorySet(L, w, h, tuple(insts))


def oracle_loss(z0, sparse, mode="linear"):
    """The alignment loss with scalar loops and a hand-written bilinear lookup."""
    L, h, w, c = z0.shape

    def feat(t, x, y):
        x0, y0 = int(np.floor(x)), int(np.floor(y))
        fx, fy = x - x0, y - y0
        x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
        return (
            (1 - fx) * (1 - fy) * z0[t, y0, x0]
            + fx * (1 - fy) * z0[t, y0, x1]
            + (1 - fx) * fy * z0[t, y1, x0]
            + fx * fy * z0[t, y1, x1]
        )

    total = 0.0
    for i in range(1, L - 1):
        a = (L - 1 - i) / (L - 1) if mode == "linear" else 0.5
        b = i / (L - 1) if mode == "linear" else 0.5
        for inst in sparse.instances:
            for j in range(inst.xy.shape[0]):
                xy, vis = inst.xy[j], inst.vis[j]
                for ref, wt in ((0, a), (L - 1, b)):
                    if vis[ref] and vis[i]:
                        total += wt * np.abs(feat(ref, *xy[ref]) - feat(i, *xy[i])).sum()
    return total


def oracle_fd(z_t, eps, alpha, sparse, h=1e-4):
    g = np.zeros_like(z_t)
    for idx in np.ndindex(z_t.shape):
        up, down = z_t.copy(), z_t.copy()
        up[idx] += h
        down[idx] -= h
        x_up = (up - np.sqrt(1 - alpha) * eps) / np.sqrt(alpha)
        x_down = (down - np.sqrt(1 - alpha) * eps) / np.sqrt(alpha)
        g[idx] = (oracle_loss(x_up, sparse) - oracle_loss(x_down, sparse)) / (2 * h)
    return g


def rel_err(a, n, floor=1e-6):
    # entries that cancel to exactly zero are compared against round-off at the gradient's scale
    scale = max(1.0, np.abs(a).max(), np.abs(n).max())
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * scale)


# -- sampling --------------------------------------------------------------------------------


def test_integer_point_on_one_hot():
    z = np.zeros((4, 5, 3))
    z[2, 3] = [1.0, 0.0, 1.0]
    assert sample_feature(z, [(3, 2)]).tolist() == [[1.0, 0.0, 1.0]]


def test_midpoint_is_average():
    z = np.zeros((1, 2, 1))
    z[0, 1, 0] = 1.0
    assert sample_feature(z, [(0.5, 0.0)])[0, 0] == pytest.approx(0.5)


def test_all_occluded_is_empty():
    z = np.ones((3, 3, 2))
    out = sample_feature(z, [(1, 1), (0, 2)], visible=[False, False])
    assert out.shape == (0, 2)


def test_out_of_bounds_point():
    with pytest.raises(InvalidInput):
        sample_feature(np.zeros((3, 3, 1)), [(3, 0)])


# -- loss --------------------------------------------------------------------------------------


def test_identical_frames_zero_loss_and_gradient():
    rng = np.random.default_rng(0)
    # spatially uniform frames, so moving tracks still see equal features
    z = np.broadcast_to(rng.normal(size=2), (6, 4, 4, 2)).copy()
    sparse = random_sparse(rng, 6, 4, 4, integer=True)
    loss, g = loss_grad_x0(z, sparse)
    assert loss == 0.0
    assert not g.any()


def test_hand_computed_three_frame_loss():
    z = np.zeros((3, 1, 1, 1))
    z[1] = 1.0
    sparse = SparseTrajectorySet(3, 1, 1, (SparseInstance(np.zeros((1, 3, 2), np.int64), np.ones((1, 3), bool)),))
    assert keyframe_weights(3)[0][1] == keyframe_weights(3)[1][1] == 0.5
    assert loss_Lm(z, sparse) == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-50, 50))
def test_constant_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(5, 4, 4, 2))
    sparse = random_sparse(rng, 5, 4, 4)
    assert loss_Lm(z + shift, sparse) == pytest.approx(loss_Lm(z, sparse), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["linear", "uniform"]))
def test_loss_matches_loop_oracle(seed, mode):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(5, 4, 3, 2))
    sparse = random_sparse(rng, 5, 3, 4)
    got = loss_Lm(z, sparse, GuidanceConfig(weight_mode=mode))
    assert got >= 0
    assert got == pytest.approx(oracle_loss(z, sparse, mode), rel=1e-12, abs=1e-12)


def test_misalignment_normalizes_by_weight():
    z = np.zeros((3, 1, 1, 2))
    z[1] = 1.0
    sparse = SparseTrajectorySet(3, 1, 1, (SparseInstance(np.zeros((1, 3, 2), np.int64), np.ones((1, 3), bool)),))
    # loss 2.0 over total weight 1.0 and 2 channels
    assert misalignment(z, sparse) == pytest.approx(1.0)


# -- gradient ------------------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    L, h, w, c = 6, 4, 4, 2
    z_t = rng.normal(size=(L, h, w, c))
    eps = rng.normal(size=(L, h, w, c))
    alpha = float(rng.uniform(0.1, 0.9))
    sparse = random_sparse(rng, L, w, h, integer=bool(seed % 2))
    analytic = grad_Lm(z_t, eps, alpha, sparse)
    numeric = oracle_fd(z_t, eps, alpha, sparse)
    assert rel_err(analytic, numeric).max() < 1e-4


def test_gradient_locality():
    rng = np.random.default_rng(3)
    L, h, w = 5, 6, 6
    xy = np.array([[[1, 1], [1, 2], [2, 2], [2, 1], [1, 1]]])
    sparse = SparseTrajectorySet(L, w, h, (SparseInstance(xy, np.ones((1, L), bool)),))
    g = grad_Lm(rng.normal(size=(L, h, w, 2)), rng.normal(size=(L, h, w, 2)), 0.5, sparse)
    support = np.zeros((L, h, w), bool)
    for t in range(L):
        x, y = xy[0, t]
        support[t, y : y + 2, x : x + 2] = True
    assert not g[~support].any()
    assert g[support].any()


# -- predict_x0 and guided eps ---------------------------------------------------------------------


def test_predict_x0_examples():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(2, 3, 3, 1))
    assert np.array_equal(predict_x0(z, rng.normal(size=z.shape), 1.0), z)
    assert np.allclose(predict_x0(z, np.zeros_like(z), 0.25), 2 * z)
    x, e, a = rng.normal(size=z.shape), rng.normal(size=z.shape), 0.3
    assert np.allclose(predict_x0(np.sqrt(a) * x + np.sqrt(1 - a) * e, e, a), x)
    with pytest.raises(InvalidInput):
        predict_x0(z, z, 0.0)


def test_guided_epsilon_examples():
    rng = np.random.default_rng(2)
    eps, grad = rng.normal(size=(3, 2, 2, 1)), rng.normal(size=(3, 2, 2, 1))
    assert guided_epsilon(eps, grad, 0, 0.5, GuidanceConfig(scale_coeff=0.0)) is eps
    assert guided_epsilon(eps, grad, 0, 0.5, GuidanceConfig(enabled=False)) is eps
    assert guided_epsilon(eps, grad, 0, 1.0, GuidanceConfig()) is eps
    assert GuidanceConfig().scale(0.75) == pytest.approx(15.0)
    assert np.allclose(guided_epsilon(eps, grad, 0, 0.75, GuidanceConfig()), eps + 15 * grad)
    with pytest.raises(InvalidInput):
        guided_epsilon(eps, grad[:2], 0, 0.5, GuidanceConfig())


def test_config_validation():
    with pytest.raises(InvalidInput):
        GuidanceConfig(scale_coeff=-1)
    with pytest.raises(InvalidInput):
        GuidanceConfig(weight_mode="cubic")
