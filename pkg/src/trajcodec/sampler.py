"""Sparse keypoint extraction: per-instance budget, k-means representatives, latent quantization."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from .errors import InvalidInput

SAMPLING_MODES = ("sparse", "random", "dense")


@dataclass(frozen=True)
class BudgetConfig:
    alpha: float = 0.5
    beta: float = 0.5
    K_max: int = 15
    # None: the pipeline normalizes by the largest selected score in the clip;
    # direct callers get 1.0
    score_norm: float | None = None

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise InvalidInput("alpha and beta must be non-negative")
        if self.K_max < 1:
            raise InvalidInput("K_max must be >= 1")


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def keypoint_budget(s_inter: float, n_i: int, n_total: int, cfg: BudgetConfig, score_norm: float | None = None) -> int:
    """Number of keypoints to transmit for one selected instance, in ``[1, K_max]``."""
    if not n_total >= n_i >= 1:
        raise InvalidInput(f"need n_total >= n_i >= 1, got n_i={n_i}, n_total={n_total}")
    norm = cfg.score_norm if score_norm is None else score_norm
    if norm is None:
        norm = 1.0
    if norm <= 0:
        raise InvalidInput("score_norm must be positive")
    s_hat = min(max(s_inter, 0.0) / norm, 1.0)
    raw = (cfg.alpha * s_hat + cfg.beta * (n_i / n_total)) * cfg.K_max
    return max(1, min(round_half_away(raw), cfg.K_max))


def kmeans(X: np.ndarray, k: int, seed: int, max_iter: int = 300, tol: float = 1e-8):
    """Lloyd iterations from one k-means++ seeding. Returns ``(centers, labels)``."""
    X = np.asarray(X, dtype=np.float64)
    km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=max_iter, tol=tol, random_state=seed)
    with warnings.catch_warnings():
        # fewer distinct points than clusters is expected for near-static instances
        warnings.simplefilter("ignore", ConvergenceWarning)
        km.fit(X)
    return km.cluster_centers_, km.labels_.astype(np.int64)


def kmeans_sample(features: np.ndarray, K: int, seed: int = 0) -> np.ndarray:
    """Positions (into ``features``) of ``K`` real members standing in for ``K`` clusters.

    Each cluster emits its member nearest the center; a cluster left empty
    emits the nearest member not already emitted. The result is sorted.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = len(X)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    K = max(1, min(int(K), n))
    centers, labels = kmeans(X, K, seed)
    taken = np.zeros(n, dtype=bool)
    out = []
    for c in range(K):
        d2 = ((X - centers[c]) ** 2).sum(axis=1)
        pool = np.flatnonzero((labels == c) & ~taken)
        if len(pool) == 0:
            pool = np.flatnonzero(~taken)
        pick = int(pool[np.argmin(d2[pool])])
        taken[pick] = True
        out.append(pick)
    return np.sort(np.asarray(out, dtype=np.int64))


def random_sample(n: int, K: int, seed: int = 0) -> np.ndarray:
    K = max(1, min(int(K), n))
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=K, replace=False))


@dataclass(frozen=True, eq=False)
class SparseInstance:
    """``K`` quantized trajectories: ``xy`` is ``(K, L, 2)`` int, ``vis`` is ``(K, L)`` bool."""

    xy: np.ndarray
    vis: np.ndarray

    def __post_init__(self):
        xy = np.asarray(self.xy, dtype=np.int64)
        vis = np.asarray(self.vis, dtype=bool)
        if xy.ndim != 3 or xy.shape[2] != 2 or vis.shape != xy.shape[:2]:
            raise InvalidInput(f"bad sparse instance shapes {xy.shape} / {vis.shape}")
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "vis", vis)

    @property
    def K(self) -> int:
        return self.xy.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SparseInstance):
            return NotImplemented
        return np.array_equal(self.xy, other.xy) and np.array_equal(self.vis, other.vis)


@dataclass(frozen=True, eq=False)
class SparseTrajectorySet:
    L: int
    latent_w: int
    latent_h: int
    instances: tuple[SparseInstance, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        if self.L < 1 or self.latent_w < 1 or self.latent_h < 1:
            raise InvalidInput("L and latent dimensions must be positive")
        for inst in self.instances:
            if inst.xy.shape[1] != self.L:
                raise InvalidInput(f"instance trajectories have length {inst.xy.shape[1]}, expected {self.L}")
            if inst.K and (
                inst.xy[..., 0].min() < 0
                or inst.xy[..., 0].max() >= self.latent_w
                or inst.xy[..., 1].min() < 0
                or inst.xy[..., 1].max() >= self.latent_h
            ):
                raise InvalidInput("sparse coordinate outside the latent grid")

    def __eq__(self, other):
        if not isinstance(other, SparseTrajectorySet):
            return NotImplemented
        return (
            (self.L, self.latent_w, self.latent_h) == (other.L, other.latent_w, other.latent_h)
            and len(self.instances) == len(other.instances)
            and all(a == b for a, b in zip(self.instances, other.instances))
        )

    @property
    def n_trajectories(self) -> int:
        return sum(inst.K for inst in self.instances)

    def frames(self, start: int, stop: int) -> "SparseTrajectorySet":
        """Temporal slice ``[start, stop)`` of every trajectory."""
        return SparseTrajectorySet(
            stop - start,
            self.latent_w,
            self.latent_h,
            tuple(SparseInstance(i.xy[:, start:stop], i.vis[:, start:stop]) for i in self.instances),
        )


def quantize_points(xy: np.ndarray, width: int, height: int, factor: int = 8) -> np.ndarray:
    if factor < 1:
        raise InvalidInput("factor must be >= 1")
    lw, lh = math.ceil(width / factor), math.ceil(height / factor)
    xy = np.asarray(xy, dtype=np.float64)
    q = np.floor(xy / factor).astype(np.int64)
    q[..., 0] = np.clip(q[..., 0], 0, lw - 1)
    q[..., 1] = np.clip(q[..., 1], 0, lh - 1)
    return q


def dequantize_center(q: np.ndarray, factor: int = 8) -> np.ndarray:
    return (np.asarray(q, dtype=np.float64) + 0.5) * factor


def quantize(
    groups: Sequence[tuple[np.ndarray, np.ndarray]], width: int, height: int, L: int, factor: int = 8
) -> SparseTrajectorySet:
    """Map per-instance pixel trajectories ``(xy, vis)`` onto the latent grid."""
    if factor < 1:
        raise InvalidInput("factor must be >= 1")
    lw, lh = math.ceil(width / factor), math.ceil(height / factor)
    insts = []
    for xy, vis in groups:
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, L, 2)
        insts.append(SparseInstance(quantize_points(xy, width, height, factor), np.asarray(vis, bool).reshape(-1, L)))
    return SparseTrajectorySet(L, lw, lh, tuple(insts))
