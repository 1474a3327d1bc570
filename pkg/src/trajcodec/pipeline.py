"""Encoder side end to end: keyframes, clips, tracks, instances, budgets, streams."""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import bitstream
from .config import PipelineConfig
from .core import Clip, EmbeddingSimilarity, Frame, HistogramSimilarity, segment_into_clips, select_keyframes
from .errors import InvariantViolation
from .motion import (
    MotionInstance,
    cluster_instances,
    feature_matrix,
    instance_masks,
    instance_report,
    inter_score,
    intra_score,
    select_instances,
)
from .sampler import SparseTrajectorySet, keypoint_budget, kmeans_sample, quantize, random_sample
from .tracker import TrajectorySet, dense_trajectories


@dataclass
class ClipResult:
    index: int
    start: int
    end: int
    stream: bytes
    sparse: SparseTrajectorySet
    instances: list[MotionInstance]
    selected: list[int]
    budgets: list[int]
    n_tracks: int

    @property
    def L(self) -> int:
        return self.end - self.start + 1

    def report(self) -> list[dict]:
        rows = instance_report(self.instances, self.selected)
        k_of = dict(zip(self.selected, self.budgets))
        for row in rows:
            row["K"] = k_of.get(row["id"], 0)
        return rows


def provider_for(cfg: PipelineConfig):
    if cfg.run.embeddings:
        return EmbeddingSimilarity.from_file(cfg.run.embeddings)
    return cfg.scoring.provider if cfg.scoring.provider is not None else HistogramSimilarity()


def find_instances(clip: Clip, ts: TrajectorySet, cfg: PipelineConfig, seed: int, provider):
    """Cluster the clip's tracks and score every instance.

    Returns the instances (member indices into ``ts``), the feature matrix
    rows for tracks that have features, and the map from track index to row.
    """
    feats, idx = feature_matrix(ts)
    row_of = {int(t): r for r, t in enumerate(idx)}
    if len(feats) < cfg.cluster.min_cluster_size:
        return [], feats, row_of
    scales = cfg.cluster.scales_for(clip.width, clip.height)
    _, instances = cluster_instances(feats, cfg.cluster, seed=seed, scales=scales)
    lw, lh = (-(-clip.width // cfg.run.latent_factor), -(-clip.height // cfg.run.latent_factor))
    for inst in instances:
        inst.member_indices = idx[inst.member_indices]
        inst.masks = instance_masks(inst, ts, lw, lh)
        inst.s_intra = intra_score(clip, inst, provider)
        inst.s_inter = inter_score(inst.s_intra, inst, ts, cfg.scoring.length_mode)
    return instances, feats, row_of


def choose_members(
    inst: MotionInstance, K: int, mode: str, feats: np.ndarray, row_of: dict, scales: np.ndarray, seed: int
) -> np.ndarray:
    members = np.asarray(inst.member_indices, dtype=np.int64)
    if mode == "dense":
        return members
    if mode == "random":
        return members[random_sample(len(members), K, seed)]
    rows = np.array([row_of[int(m)] for m in members])
    return members[kmeans_sample(feats[rows] / scales, K, seed)]


def encode_clip(clip: Clip, cfg: PipelineConfig, index: int = 0, provider=None) -> ClipResult:
    seed = cfg.run.seed + index
    provider = provider or provider_for(cfg)
    tracker_cfg = cfg.tracker
    ts = dense_trajectories(clip, tracker_cfg)
    instances, feats, row_of = find_instances(clip, ts, cfg, seed, provider)

    scores = {inst.id: inst.s_inter for inst in instances}
    selected = select_instances(scores, cfg.scoring)
    by_id = {inst.id: inst for inst in instances}
    norm = cfg.budget.score_norm
    if norm is None and selected:
        norm = max(scores[i] for i in selected)
    n_total = tracker_cfg.grid_size**2

    scales = cfg.cluster.scales_for(clip.width, clip.height)
    groups, budgets = [], []
    for iid in selected:
        inst = by_id[iid]
        K = keypoint_budget(inst.s_inter, inst.N, max(n_total, inst.N), cfg.budget, score_norm=norm)
        chosen = choose_members(inst, K, cfg.run.sampling, feats, row_of, scales, seed * 1000 + iid)
        if cfg.run.sampling != "dense" and len(chosen) > cfg.budget.K_max:
            raise InvariantViolation(f"instance {iid} emitted {len(chosen)} > K_max trajectories")
        groups.append((ts.xy[chosen], ts.vis[chosen]))
        budgets.append(len(chosen))
    sparse = quantize(groups, clip.width, clip.height, clip.L, cfg.run.latent_factor)
    stream = bitstream.encode(sparse)
    return ClipResult(index, clip.start, clip.end, stream, sparse, instances, selected, budgets, len(ts))


def encode_video(frames: Sequence[Frame], cfg: PipelineConfig, jobs: int = 1) -> tuple[list[int], list[ClipResult]]:
    provider = provider_for(cfg)
    keys = select_keyframes(frames, provider, cfg.segmentation)
    clips = segment_into_clips(frames, keys, cfg.segmentation.max_clip_len)
    if jobs <= 1:
        results = [encode_clip(c, cfg, i, provider) for i, c in enumerate(clips)]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda ic: encode_clip(ic[1], cfg, ic[0], provider), enumerate(clips)))
    if results[0].start != 0 or results[-1].end != len(frames) - 1:
        raise InvariantViolation("clips do not cover the video")
    if any(a.end != b.start for a, b in zip(results, results[1:])):
        raise InvariantViolation("clip frame ranges do not tile the video")
    return keys, results


def with_sampling(cfg: PipelineConfig, mode: str) -> PipelineConfig:
    return dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, sampling=mode))
