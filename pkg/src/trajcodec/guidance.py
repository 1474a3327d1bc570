"""Trajectory-alignment loss on predicted clean latents, its gradient, and guided noise.

Latent sequences are plain ``(L, latent_h, latent_w, C)`` float arrays. A
trajectory point ``(x, y)`` is in latent-cell units, with integer values at
cell centers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .sampler import SparseTrajectorySet

WEIGHT_MODES = ("linear", "uniform")


@dataclass(frozen=True)
class GuidanceConfig:
    scale_coeff: float = 30.0
    weight_mode: str = "linear"
    enabled: bool = True

    def __post_init__(self):
        if self.scale_coeff < 0:
            raise InvalidInput("scale_coeff must be >= 0")
        if self.weight_mode not in WEIGHT_MODES:
            raise InvalidInput(f"unknown weight_mode {self.weight_mode!r}")

    def scale(self, alpha_t: float) -> float:
        return self.scale_coeff * float(np.sqrt(1.0 - alpha_t))


def keyframe_weights(L: int, mode: str = "linear") -> tuple[np.ndarray, np.ndarray]:
    """Per-frame weights on the first- and last-keyframe comparisons."""
    i = np.arange(L, dtype=np.float64)
    if mode == "linear":
        denom = max(L - 1, 1)
        return (L - 1 - i) / denom, i / denom
    if mode == "uniform":
        return np.full(L, 0.5), np.full(L, 0.5)
    raise InvalidInput(f"unknown weight_mode {mode!r}")


def _bilinear(points: np.ndarray, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat cell indices ``(P, 4)`` and weights ``(P, 4)`` for bilinear sampling."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    if np.any(x < 0) or np.any(x > w - 1) or np.any(y < 0) or np.any(y > h - 1):
        raise InvalidInput(f"trajectory point outside the {w}x{h} latent grid")
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    idx = np.stack([y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1], axis=1)
    wts = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    return idx, wts


def sample_feature(z_frame: np.ndarray, points: np.ndarray, visible: np.ndarray | None = None) -> np.ndarray:
    """Bilinearly sampled ``C``-vectors at ``points``; rows for invisible points are dropped."""
    z_frame = np.asarray(z_frame, dtype=np.float64)
    h, w, c = z_frame.shape
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if visible is not None:
        pts = pts[np.asarray(visible, dtype=bool)]
    if len(pts) == 0:
        return np.zeros((0, c))
    idx, wts = _bilinear(pts, h, w)
    flat = z_frame.reshape(h * w, c)
    return (flat[idx] * wts[..., None]).sum(axis=1)


def _tracks(sparse: SparseTrajectorySet) -> tuple[np.ndarray, np.ndarray]:
    if not sparse.instances:
        return np.zeros((0, sparse.L, 2)), np.zeros((0, sparse.L), bool)
    xy = np.concatenate([inst.xy for inst in sparse.instances]).astype(np.float64)
    vis = np.concatenate([inst.vis for inst in sparse.instances])
    return xy, vis


def _loss_and_feature_grad(z0: np.ndarray, sparse: SparseTrajectorySet, cfg: GuidanceConfig, want_grad: bool):
    z0 = np.asarray(z0, dtype=np.float64)
    L, h, w, c = z0.shape
    if L != sparse.L:
        raise InvalidInput(f"latent has {L} frames, trajectories have {sparse.L}")
    if (w, h) != (sparse.latent_w, sparse.latent_h):
        raise InvalidInput(f"latent is {w}x{h}, trajectories are on {sparse.latent_w}x{sparse.latent_h}")
    xy, vis = _tracks(sparse)
    grad = np.zeros_like(z0) if want_grad else None
    if L < 3 or len(xy) == 0:
        return 0.0, grad

    alpha, beta = keyframe_weights(L, cfg.weight_mode)
    n = len(xy)
    idx = np.empty((L, n, 4), dtype=np.int64)
    wts = np.empty((L, n, 4))
    feats = np.empty((L, n, c))
    for t in range(L):
        idx[t], wts[t] = _bilinear(xy[:, t], h, w)
        feats[t] = (z0[t].reshape(h * w, c)[idx[t]] * wts[t][..., None]).sum(axis=1)

    loss = 0.0
    dfeat = np.zeros_like(feats) if want_grad else None
    for i in range(1, L - 1):
        for ref, weight in ((0, alpha[i]), (L - 1, beta[i])):
            active = vis[:, ref] & vis[:, i]
            if weight == 0 or not active.any():
                continue
            diff = feats[ref] - feats[i]
            loss += weight * float(np.abs(diff[active]).sum())
            if want_grad:
                g = weight * np.sign(diff) * active[:, None]
                dfeat[ref] += g
                dfeat[i] -= g
    if want_grad:
        for t in range(L):
            flat = grad[t].reshape(h * w, c)
            np.add.at(flat, idx[t].ravel(), (wts[t][..., None] * dfeat[t][:, None, :]).reshape(-1, c))
    return loss, grad


def loss_Lm(z0_hat: np.ndarray, sparse: SparseTrajectorySet, cfg: GuidanceConfig = GuidanceConfig()) -> float:
    """Weighted L1 mismatch between interior-frame features and both keyframes along each track.

    A comparison is skipped when the track is invisible at either of its two frames.
    """
    return _loss_and_feature_grad(z0_hat, sparse, cfg, want_grad=False)[0]


def loss_grad_x0(z0_hat: np.ndarray, sparse: SparseTrajectorySet, cfg: GuidanceConfig = GuidanceConfig()):
    """``(loss, dloss/dz0_hat)``."""
    return _loss_and_feature_grad(z0_hat, sparse, cfg, want_grad=True)


def predict_x0(z_t: np.ndarray, eps: np.ndarray, alpha_t: float) -> np.ndarray:
    if not 0 < alpha_t <= 1:
        raise InvalidInput(f"alpha_t must lie in (0, 1], got {alpha_t}")
    return (np.asarray(z_t) - np.sqrt(1.0 - alpha_t) * np.asarray(eps)) / np.sqrt(alpha_t)


def grad_Lm(
    z_t: np.ndarray, eps: np.ndarray, alpha_t: float, sparse: SparseTrajectorySet, cfg: GuidanceConfig = GuidanceConfig()
) -> np.ndarray:
    """Gradient of ``loss_Lm(predict_x0(z_t, eps))`` in ``z_t`` with ``eps`` held fixed."""
    z0 = predict_x0(z_t, eps, alpha_t)
    _, g = loss_grad_x0(z0, sparse, cfg)
    return g / np.sqrt(alpha_t)


def guided_epsilon(eps: np.ndarray, grad: np.ndarray, t, alpha_t: float, cfg: GuidanceConfig) -> np.ndarray:
    """``eps + s(t) * grad`` with ``s(t) = scale_coeff * sqrt(1 - alpha_t)``.

    Returns ``eps`` itself when guidance is off, so results stay bit-identical.
    """
    del t
    if np.shape(eps) != np.shape(grad):
        raise InvalidInput("eps and grad shapes differ")
    s = cfg.scale(alpha_t) if cfg.enabled else 0.0
    if s == 0.0:
        return eps
    return eps + s * grad


def misalignment(z: np.ndarray, sparse: SparseTrajectorySet, cfg: GuidanceConfig = GuidanceConfig()) -> float:
    """``loss_Lm`` divided by the total weight of the comparisons it made, per channel."""
    xy, vis = _tracks(sparse)
    L = sparse.L
    if L < 3 or len(xy) == 0:
        return 0.0
    alpha, beta = keyframe_weights(L, cfg.weight_mode)
    total = 0.0
    for i in range(1, L - 1):
        total += alpha[i] * np.count_nonzero(vis[:, 0] & vis[:, i])
        total += beta[i] * np.count_nonzero(vis[:, L - 1] & vis[:, i])
    if total == 0:
        return 0.0
    return loss_Lm(z, sparse, cfg) / (total * np.shape(z)[-1])


def finite_difference_grad(
    z_t: np.ndarray, eps: np.ndarray, alpha_t: float, sparse: SparseTrajectorySet, cfg: GuidanceConfig, h: float = 1e-4
) -> np.ndarray:
    """Central differences of the frozen-eps composite loss, one coordinate at a time."""
    z = np.array(z_t, dtype=np.float64)
    out = np.zeros_like(z)
    flat = z.reshape(-1)
    gflat = out.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = loss_Lm(predict_x0(z, eps, alpha_t), sparse, cfg)
        flat[k] = orig - h
        down = loss_Lm(predict_x0(z, eps, alpha_t), sparse, cfg)
        flat[k] = orig
        gflat[k] = (up - down) / (2 * h)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, f)`` with ``f = floor * max(1, max|a|, max|n|)``.

    The floor scales with the gradient so that entries which cancel to zero
    analytically are judged against finite-difference round-off, not against 0.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(1.0, float(np.abs(a).max(initial=0.0)), float(np.abs(n).max(initial=0.0)))
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * scale)
