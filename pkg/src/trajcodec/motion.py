"""Motion instances: trajectory features, density clustering, masks and semantic scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage
from sklearn.cluster import HDBSCAN

from .core import Clip, Frame, HistogramSimilarity, SimilarityProvider
from .errors import DegenerateTrajectory, InvalidInput
from .tracker import Trajectory, TrajectorySet

_MIN_STEP = 1e-6
FEATURE_NAMES = ("x0", "y0", "dx", "dy", "d", "mean_dtheta")


@dataclass(frozen=True)
class TrajectoryFeature:
    x0: float
    y0: float
    dx: float
    dy: float
    d: float
    mean_dtheta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x0, self.y0, self.dx, self.dy, self.d, self.mean_dtheta])


def trajectory_features(t: Trajectory) -> TrajectoryFeature:
    """Features of the visible part of ``t``; invisible points are dropped first."""
    pts = np.asarray(t.xy, dtype=np.float64)[np.asarray(t.vis, dtype=bool)]
    if len(pts) < 2:
        raise DegenerateTrajectory(f"trajectory has {len(pts)} visible points, need 2")
    steps = np.diff(pts, axis=0)
    lengths = np.hypot(steps[:, 0], steps[:, 1])
    moving = steps[lengths >= _MIN_STEP]
    if len(moving) >= 2:
        a, b = moving[:-1], moving[1:]
        cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        dot = (a * b).sum(axis=1)
        mean_dtheta = float(np.abs(np.arctan2(cross, dot)).mean())
    else:
        mean_dtheta = 0.0
    net = pts[-1] - pts[0]
    return TrajectoryFeature(
        float(pts[0, 0]), float(pts[0, 1]), float(net[0]), float(net[1]), float(lengths.sum()), mean_dtheta
    )


def feature_matrix(ts: TrajectorySet) -> tuple[np.ndarray, np.ndarray]:
    """Raw (unnormalized) features for every track with >= 2 visible points.

    Returns the ``(M, 6)`` feature array and the indices of those tracks.
    """
    rows, idx = [], []
    for i in range(len(ts)):
        if ts.vis[i].sum() < 2:
            continue
        rows.append(trajectory_features(ts[i]).as_array())
        idx.append(i)
    return np.asarray(rows, dtype=np.float64).reshape(-1, 6), np.asarray(idx, dtype=np.int64)


def default_feature_scales(width: float, height: float) -> tuple[float, ...]:
    diag = math.hypot(width, height)
    return (diag, diag, diag, diag, diag, math.pi)


@dataclass(frozen=True)
class ClusterConfig:
    min_cluster_size: int = 16
    min_samples: int = 8
    # per-feature divisors; None means frame diagonal for lengths and pi for angles
    feature_scales: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.min_cluster_size < 2:
            raise InvalidInput("min_cluster_size must be >= 2")
        if self.min_samples < 1:
            raise InvalidInput("min_samples must be >= 1")
        if self.feature_scales is not None and (
            len(self.feature_scales) != 6 or any(s <= 0 for s in self.feature_scales)
        ):
            raise InvalidInput("feature_scales needs 6 positive divisors")

    def scales_for(self, width: float, height: float) -> np.ndarray:
        if self.feature_scales is not None:
            return np.asarray(self.feature_scales, dtype=np.float64)
        return np.asarray(default_feature_scales(width, height))


@dataclass
class MotionInstance:
    id: int
    member_indices: np.ndarray
    masks: np.ndarray | None = None  # (L, latent_h, latent_w) bool
    s_intra: float | None = None
    s_inter: float | None = None

    @property
    def N(self) -> int:
        return len(self.member_indices)


def _as_matrix(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        return np.asarray(features, dtype=np.float64).reshape(-1, 6)
    return np.asarray([f.as_array() if isinstance(f, TrajectoryFeature) else f for f in features], dtype=np.float64).reshape(-1, 6)


def cluster_instances(
    features, cfg: ClusterConfig = ClusterConfig(), seed: int = 0, scales=None
) -> tuple[np.ndarray, list[MotionInstance]]:
    """HDBSCAN over (scaled) features.

    ``member_indices`` index into ``features``. Labels are renumbered in order
    of first appearance, so instance ids do not depend on library internals.
    HDBSCAN itself is deterministic; ``seed`` is accepted so callers can treat
    every stage uniformly.
    """
    del seed
    X = _as_matrix(features)
    if scales is None and cfg.feature_scales is not None:
        scales = cfg.feature_scales
    if scales is not None:
        X = X / np.asarray(scales, dtype=np.float64)
    n = len(X)
    if n < cfg.min_cluster_size:
        raise InvalidInput(f"{n} features, need at least min_cluster_size={cfg.min_cluster_size}")
    if np.all(X == X[0]):
        # HDBSCAN never returns the root cluster, which for a set of identical points is the only one
        raw = np.zeros(n, dtype=np.int64)
    else:
        raw = HDBSCAN(
            min_cluster_size=cfg.min_cluster_size, min_samples=min(cfg.min_samples, n), copy=True
        ).fit(X).labels_

    labels = np.full(n, -1, dtype=np.int64)
    mapping: dict[int, int] = {}
    for i, lab in enumerate(raw):
        if lab < 0:
            continue
        if lab not in mapping:
            mapping[lab] = len(mapping)
        labels[i] = mapping[lab]
    instances = [MotionInstance(k, np.flatnonzero(labels == k)) for k in range(len(mapping))]
    return labels, instances


def instance_masks(instance: MotionInstance, ts: TrajectorySet, latent_w: int, latent_h: int) -> np.ndarray:
    """Per-frame latent-grid masks: cells holding a visible member point, dilated by one cell."""
    if ts.width is None or ts.height is None:
        raise InvalidInput("trajectory set needs frame dimensions to build masks")
    members = np.asarray(instance.member_indices, dtype=np.int64)
    if len(members) and (members.min() < 0 or members.max() >= len(ts)):
        raise InvalidInput("member index out of range")
    masks = np.zeros((ts.L, latent_h, latent_w), dtype=bool)
    xy = ts.xy[members]
    vis = ts.vis[members]
    cx = np.clip(np.floor(xy[..., 0] * latent_w / ts.width).astype(np.int64), 0, latent_w - 1)
    cy = np.clip(np.floor(xy[..., 1] * latent_h / ts.height).astype(np.int64), 0, latent_h - 1)
    for t in range(ts.L):
        seen = vis[:, t]
        masks[t, cy[seen, t], cx[seen, t]] = True
    grow = np.ones((3, 3), dtype=bool)
    for t in range(ts.L):
        if masks[t].any():
            masks[t] = ndimage.binary_dilation(masks[t], structure=grow)
    return masks


def upsample_mask(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape == (height, width):
        return mask
    mh, mw = mask.shape
    rows = np.minimum((np.arange(height) * mh) // height, mh - 1)
    cols = np.minimum((np.arange(width) * mw) // width, mw - 1)
    return mask[rows][:, cols]


def occlude_region(frame: Frame, mask: np.ndarray, ring: int = 2) -> Frame:
    """Fill the masked region with the mean color of a ``ring``-pixel band around it.

    ``mask`` may be at pixel or latent resolution; latent masks are upsampled
    by nearest neighbour.
    """
    m = upsample_mask(mask, frame.height, frame.width)
    if not m.any():
        return frame
    if m.all():
        raise InvalidInput("mask covers the whole frame; nothing to fill from")
    band = ndimage.binary_dilation(m, structure=np.ones((3, 3), bool), iterations=ring) & ~m
    fill = frame.data[band].astype(np.float64).mean(axis=0)
    out = frame.data.copy()
    out[m] = np.round(fill).astype(np.uint8)
    return Frame(out, index=frame.index)


def _occlude_for_scoring(frame: Frame, mask: np.ndarray) -> Frame:
    """``occlude_region``, except that a full-frame mask blanks the frame to its mean color."""
    if upsample_mask(mask, frame.height, frame.width).all():
        fill = frame.data.reshape(-1, frame.channels).astype(np.float64).mean(axis=0)
        return Frame(np.broadcast_to(np.round(fill).astype(np.uint8), frame.data.shape).copy(), index=frame.index)
    return occlude_region(frame, mask)


def intra_score(clip: Clip, instance: MotionInstance, provider: SimilarityProvider = HistogramSimilarity()) -> float:
    """Summed change in adjacent-frame similarity caused by occluding the instance.

    Frame ``j`` is occluded with the instance's own frame-``j`` mask. An
    instance whose mask covers a whole frame blanks that frame instead.
    """
    masks = instance.masks
    if masks is None:
        raise InvalidInput("instance masks have not been computed")
    if len(masks) != clip.L:
        raise InvalidInput(f"{len(masks)} masks for a clip of {clip.L} frames")
    occluded = [_occlude_for_scoring(f, m) for f, m in zip(clip.frames, masks)]
    total = 0.0
    for j in range(clip.L - 1):
        a, b = clip.frames[j], clip.frames[j + 1]
        pa, pb = occluded[j], occluded[j + 1]
        base = provider.score(a, b)
        if pa is a and pb is b:
            continue
        total += abs(base - provider.score(pa, pb))
    return total


def inter_score(s_intra: float, instance: MotionInstance, ts: TrajectorySet, length_mode: str = "path") -> float:
    """``s_intra`` scaled by the instance's mean trajectory length.

    ``length_mode`` "path" uses the mean travelled distance of the members,
    "temporal" the mean number of visible frames.
    """
    if s_intra < 0:
        raise InvalidInput("s_intra must be non-negative")
    members = np.asarray(instance.member_indices, dtype=np.int64)
    if s_intra == 0 or len(members) == 0:
        return 0.0
    if length_mode == "path":
        lengths = []
        for i in members:
            pts = ts.xy[i][ts.vis[i]]
            steps = np.diff(pts, axis=0)
            lengths.append(float(np.hypot(steps[:, 0], steps[:, 1]).sum()))
        return s_intra * float(np.mean(lengths))
    if length_mode == "temporal":
        return s_intra * float(ts.vis[members].sum(axis=1).mean())
    raise InvalidInput(f"unknown length_mode {length_mode!r}")


@dataclass(frozen=True)
class ScoringConfig:
    selection_threshold: float = 0.0
    length_mode: str = "path"
    provider: SimilarityProvider = field(default_factory=HistogramSimilarity)

    def __post_init__(self):
        if self.selection_threshold < 0:
            raise InvalidInput("selection_threshold must be >= 0")
        if self.length_mode not in ("path", "temporal"):
            raise InvalidInput(f"unknown length_mode {self.length_mode!r}")


def select_instances(scores: Mapping[int, float] | Sequence[float], cfg: ScoringConfig = ScoringConfig()) -> list[int]:
    """Ids whose score strictly exceeds the threshold, highest score first, ties by id."""
    items = scores.items() if isinstance(scores, Mapping) else enumerate(scores)
    passing = [(i, s) for i, s in items if s > cfg.selection_threshold]
    passing.sort(key=lambda p: (-p[1], p[0]))
    return [i for i, _ in passing]


def instance_report(instances: Sequence[MotionInstance], selected: Sequence[int]) -> list[dict]:
    chosen = set(selected)
    return [
        {
            "id": inst.id,
            "N": inst.N,
            "s_intra": inst.s_intra,
            "s_inter": inst.s_inter,
            "selected": inst.id in chosen,
        }
        for inst in instances
    ]
