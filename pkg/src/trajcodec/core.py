"""Frames, clips, frame similarity, keyframe selection and clip segmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import InvalidInput, ParseError, SpanTooLong

MAX_CLIP_LEN = 30
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True, eq=False)
class Frame:
    """One 8-bit frame stored as an ``(height, width, channels)`` array.

    ``index`` is the frame's position in its source video; only the
    precomputed-embedding similarity provider needs it.
    """

    data: np.ndarray
    index: int | None = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise InvalidInput(f"frame must be HxW, HxWx1 or HxWx3, got {data.shape}")
        if data.shape[0] < 8 or data.shape[1] < 8:
            raise InvalidInput(f"frame must be at least 8x8, got {data.shape[1]}x{data.shape[0]}")
        if data.dtype != np.uint8:
            if np.any(data < 0) or np.any(data > 255):
                raise InvalidInput("frame samples must lie in [0, 255]")
            data = data.astype(np.uint8)
        data = np.ascontiguousarray(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def gray(self) -> np.ndarray:
        if self.channels == 1:
            return self.data[:, :, 0].astype(np.float64)
        return self.data.astype(np.float64) @ _LUMA

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))

    @classmethod
    def from_bytes(cls, raw: bytes, width: int, height: int, channels: int, index=None) -> "Frame":
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, channels)
        return cls(arr, index=index)


@dataclass(frozen=True)
class Clip:
    """Consecutive frames whose first and last frames are the keyframe pair."""

    frames: tuple[Frame, ...]
    start: int = 0

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        if len(frames) < 2:
            raise InvalidInput(f"a clip needs at least 2 frames, got {len(frames)}")
        shape = frames[0].shape
        if any(f.shape != shape for f in frames):
            raise InvalidInput("all frames of a clip must share width/height/channels")

    @property
    def L(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def end(self) -> int:
        return self.start + self.L - 1

    def reversed(self) -> "Clip":
        return Clip(tuple(reversed(self.frames)), start=self.start)

    def stack(self) -> np.ndarray:
        return np.stack([f.data for f in self.frames])


class SimilarityProvider(Protocol):
    def score(self, a: Frame, b: Frame) -> float: ...


def _check_same_dims(a: Frame, b: Frame):
    if a.shape != b.shape:
        raise InvalidInput(f"frame dimensions differ: {a.shape} vs {b.shape}")


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 1.0 if nu == nv else 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), 0.0, 1.0))


@dataclass(frozen=True)
class HistogramSimilarity:
    """Default provider: mean-pooled grayscale grid plus per-channel histograms.

    Both parts are concatenated and unit-normalized; the score is the cosine of
    the two embeddings. All entries are non-negative, so scores fall in [0, 1].
    """

    grid: int = 8
    bins: int = 32

    def embed(self, frame: Frame) -> np.ndarray:
        gray = frame.gray()
        h, w = gray.shape
        rows = (np.arange(self.grid) * h) // self.grid
        cols = (np.arange(self.grid) * w) // self.grid
        sums = np.add.reduceat(np.add.reduceat(gray, rows, axis=0), cols, axis=1)
        counts = np.diff(np.append(rows, h))[:, None] * np.diff(np.append(cols, w))[None, :]
        pooled = (sums / counts).ravel() / 255.0

        n = h * w
        hists = [
            np.bincount((frame.data[:, :, c].ravel().astype(np.int64) * self.bins) >> 8, minlength=self.bins) / n
            for c in range(frame.channels)
        ]
        vec = np.concatenate([pooled, *hists])
        return vec / np.linalg.norm(vec)

    def score(self, a: Frame, b: Frame) -> float:
        _check_same_dims(a, b)
        if a is b:
            return 1.0
        return _cosine(self.embed(a), self.embed(b))


@dataclass(frozen=True)
class EmbeddingSimilarity:
    """Cosine similarity of externally computed per-frame embeddings.

    Frames are looked up by ``Frame.index``; negative cosines clamp to 0.
    """

    vectors: np.ndarray

    def embed(self, frame: Frame) -> np.ndarray:
        if frame.index is None or not 0 <= frame.index < len(self.vectors):
            raise InvalidInput(f"no embedding for frame index {frame.index}")
        return self.vectors[frame.index]

    def score(self, a: Frame, b: Frame) -> float:
        _check_same_dims(a, b)
        return _cosine(self.embed(a), self.embed(b))

    @classmethod
    def from_file(cls, path: str | Path) -> "EmbeddingSimilarity":
        rows = []
        dim = None
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                vec = [float(tok) for tok in line.split()]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise ParseError(f"expected {dim} values, got {len(vec)}", line=lineno)
            rows.append(vec)
        if not rows:
            raise ParseError("embedding file is empty")
        return cls(np.asarray(rows, dtype=np.float64))


def frame_similarity(provider: SimilarityProvider, a: Frame, b: Frame) -> float:
    _check_same_dims(a, b)
    return provider.score(a, b)


def similarity_matrix(provider: SimilarityProvider, frames: Sequence[Frame]) -> np.ndarray:
    n = len(frames)
    embed = getattr(provider, "embed", None)
    if embed is not None:
        for f in frames[1:]:
            _check_same_dims(frames[0], f)
        emb = np.stack([embed(f) for f in frames])
        norms = np.linalg.norm(emb, axis=1)
        norms[norms == 0] = 1.0
        unit = emb / norms[:, None]
        sim = np.clip(unit @ unit.T, 0.0, 1.0)
        np.fill_diagonal(sim, 1.0)
        return (sim + sim.T) / 2
    sim = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            sim[i, j] = sim[j, i] = provider.score(frames[i], frames[j])
    return sim


@dataclass(frozen=True)
class SegmentationConfig:
    cut_threshold: float = 0.5
    max_clip_len: int = MAX_CLIP_LEN
    target_clip_len: int = 16

    def __post_init__(self):
        if not 2 <= self.target_clip_len <= self.max_clip_len <= MAX_CLIP_LEN:
            raise InvalidInput(
                "need 2 <= target_clip_len <= max_clip_len <= 30, got "
                f"{self.target_clip_len}, {self.max_clip_len}"
            )
        if not 0.0 <= self.cut_threshold <= 1.0:
            raise InvalidInput("cut_threshold must lie in [0, 1]")


def provisional_segments(n: int, target_len: int) -> list[tuple[int, int]]:
    """Fixed tiling of ``n`` frames into inclusive spans of ``target_len`` frames sharing endpoints."""
    step = target_len - 1
    return [(s, min(s + step, n - 1)) for s in range(0, n - 1, step)]


def _least_similar(sim: np.ndarray, lo: int, hi: int, candidates: range) -> int | None:
    """Candidate with the smallest mean similarity to the other frames of ``[lo, hi]``."""
    if len(candidates) == 0:
        return None
    block = sim[lo : hi + 1, lo : hi + 1]
    means = (block.sum(axis=1) - np.diag(block)) / (hi - lo)
    offsets = np.array(candidates) - lo
    # argmin picks the lowest index among ties
    return int(candidates[int(np.argmin(means[offsets]))])


def select_keyframes(
    video: Sequence[Frame], provider: SimilarityProvider, cfg: SegmentationConfig = SegmentationConfig()
) -> list[int]:
    """Keyframe indices for ``video``.

    The endpoints are always keyframes. Each provisional segment of
    ``target_clip_len`` frames contributes its interior frame with the smallest
    mean similarity to the rest of the segment. Both frames of every adjacent
    pair scoring below ``cut_threshold`` are keyframes. Spans still longer than
    ``max_clip_len`` are split greedily at the least similar admissible frame.
    """
    n = len(video)
    if n == 0:
        raise InvalidInput("empty video")
    if n < 2:
        raise InvalidInput("video needs at least 2 frames")
    sim = similarity_matrix(provider, video)

    keys = {0, n - 1}
    for lo, hi in provisional_segments(n, cfg.target_clip_len):
        pick = _least_similar(sim, lo, hi, range(lo + 1, hi))
        if pick is not None:
            keys.add(pick)
    for i in range(n - 1):
        if sim[i, i + 1] < cfg.cut_threshold:
            keys.update((i, i + 1))

    ordered = sorted(keys)
    out = [ordered[0]]
    for b in ordered[1:]:
        a = out[-1]
        while b - a + 1 > cfg.max_clip_len:
            a = _least_similar(sim, a, b, range(a + 1, a + cfg.max_clip_len))
            out.append(a)
        out.append(b)
    return out


def segment_into_clips(
    video: Sequence[Frame], keyframe_indices: Sequence[int], max_clip_len: int = MAX_CLIP_LEN
) -> list[Clip]:
    idx = list(keyframe_indices)
    n = len(video)
    if len(idx) < 2 or idx[0] != 0 or idx[-1] != n - 1:
        raise InvalidInput("keyframe indices must include the first and last frame")
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise InvalidInput("keyframe indices must be strictly increasing")
    clips = []
    for a, b in zip(idx, idx[1:]):
        if b - a + 1 > max_clip_len:
            raise SpanTooLong(a, b, max_clip_len)
        clips.append(Clip(tuple(video[a : b + 1]), start=a))
    return clips


def concat_clips(clips: Sequence[Clip]) -> list[Frame]:
    frames = list(clips[0].frames)
    for c in clips[1:]:
        frames.extend(c.frames[1:])
    return frames


def read_raw_video(path: str | Path, width: int, height: int, channels: int) -> list[Frame]:
    raw = Path(path).read_bytes()
    frame_size = width * height * channels
    if width < 8 or height < 8 or channels not in (1, 3):
        raise InvalidInput(f"bad dimensions {width}x{height}x{channels}")
    if len(raw) == 0 or len(raw) % frame_size:
        raise InvalidInput(
            f"{path}: {len(raw)} bytes is not a whole number of {width}x{height}x{channels} frames"
        )
    count = len(raw) // frame_size
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(count, height, width, channels)
    return [Frame(arr[i], index=i) for i in range(count)]


def write_raw_video(path: str | Path, frames: Sequence[Frame]) -> None:
    Path(path).write_bytes(b"".join(f.data.tobytes() for f in frames))


def latent_dims(width: int, height: int, factor: int = 8) -> tuple[int, int]:
    return math.ceil(width / factor), math.ceil(height / factor)
