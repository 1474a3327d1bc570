"""Dense grid-initialized trajectories by bidirectional block matching.

The built-in tracker matches integer-pixel blocks by sum of absolute
differences. Better tracks from an external point tracker can be brought in
through the JSON track interchange format (``import_tracks``/``export_tracks``).
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Clip
from .errors import InvalidInput, InvariantViolation, ParseError

FORWARD = "forward"
BACKWARD = "backward"
BACKWARD_FLIPPED = "backward-flipped"
_DIRECTIONS = (FORWARD, BACKWARD, BACKWARD_FLIPPED)
_DIR_CODES = {BACKWARD: "bwd", BACKWARD_FLIPPED: "bwd-flipped"}


@dataclass(frozen=True)
class TrackerConfig:
    grid_size: int = 64
    block_radius: int = 2
    search_radius: int = 3
    # mean absolute difference per sample, on the 0..255 scale
    visibility_threshold: float = 24.0

    def __post_init__(self):
        if self.grid_size < 2:
            raise InvalidInput("grid_size must be >= 2")
        if self.search_radius < 1:
            raise InvalidInput("search_radius must be >= 1")
        if self.block_radius < 0:
            raise InvalidInput("block_radius must be >= 0")


@dataclass(frozen=True, eq=False)
class Trajectory:
    xy: np.ndarray  # (L, 2) float
    vis: np.ndarray  # (L,) bool
    origin: tuple[int, int] = (0, 0)
    direction: str = FORWARD

    @property
    def L(self) -> int:
        return len(self.vis)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            np.array_equal(self.xy, other.xy)
            and np.array_equal(self.vis, other.vis)
            and tuple(self.origin) == tuple(other.origin)
            and self.direction == other.direction
        )


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    """Column-oriented storage for trajectories sharing one clip length.

    ``instance`` is only set for decoded sparse sets, where it records which
    motion instance each track belongs to.
    """

    xy: np.ndarray  # (N, L, 2) float64
    vis: np.ndarray  # (N, L) bool
    origins: np.ndarray  # (N, 2) int
    directions: tuple[str, ...]
    L: int
    grid_size: int
    width: int | None = None
    height: int | None = None
    instance: np.ndarray | None = None

    def __post_init__(self):
        xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, self.L, 2)
        vis = np.asarray(self.vis, dtype=bool).reshape(-1, self.L)
        origins = np.asarray(self.origins, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "vis", vis)
        object.__setattr__(self, "origins", origins)
        object.__setattr__(self, "directions", tuple(self.directions))
        if self.instance is not None:
            object.__setattr__(self, "instance", np.asarray(self.instance, dtype=np.int64).reshape(-1))
        n = len(xy)
        if len(vis) != n or len(origins) != n or len(self.directions) != n:
            raise InvalidInput("trajectory arrays disagree in length")
        if any(d not in _DIRECTIONS for d in self.directions):
            raise InvalidInput("unknown trajectory direction tag")

    @classmethod
    def empty(cls, L: int, grid_size: int, width=None, height=None) -> "TrajectorySet":
        return cls(np.zeros((0, L, 2)), np.zeros((0, L), bool), np.zeros((0, 2), int), (), L, grid_size, width, height)

    def __len__(self) -> int:
        return len(self.xy)

    def __getitem__(self, i: int) -> Trajectory:
        return Trajectory(self.xy[i], self.vis[i], tuple(int(v) for v in self.origins[i]), self.directions[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, TrajectorySet):
            return NotImplemented
        same_instance = (self.instance is None and other.instance is None) or (
            self.instance is not None
            and other.instance is not None
            and np.array_equal(self.instance, other.instance)
        )
        return (
            self.L == other.L
            and self.grid_size == other.grid_size
            and self.width == other.width
            and self.height == other.height
            and self.directions == other.directions
            and np.array_equal(self.xy, other.xy)
            and np.array_equal(self.vis, other.vis)
            and np.array_equal(self.origins, other.origins)
            and same_instance
        )

    def subset(self, indices: Sequence[int]) -> "TrajectorySet":
        idx = np.asarray(indices, dtype=np.int64)
        return TrajectorySet(
            self.xy[idx],
            self.vis[idx],
            self.origins[idx],
            tuple(self.directions[i] for i in idx),
            self.L,
            self.grid_size,
            self.width,
            self.height,
            None if self.instance is None else self.instance[idx],
        )

    def cell_size(self) -> tuple[float, float]:
        if self.width is None or self.height is None or self.grid_size <= 0:
            return 1.0, 1.0
        return self.width / self.grid_size, self.height / self.grid_size


def grid_points(width: int, height: int, grid_size: int) -> np.ndarray:
    """Row-major ``(grid_size**2, 2)`` array of (x, y) cell centers."""
    if grid_size < 1 or grid_size > min(width, height):
        raise InvalidInput(f"grid_size {grid_size} must lie in [1, min({width}, {height})]")
    xs = (np.arange(grid_size) + 0.5) * (width / grid_size)
    ys = (np.arange(grid_size) + 0.5) * (height / grid_size)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def _candidate_offsets(radius: int) -> np.ndarray:
    d = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(d, d, indexing="ij")
    offs = np.stack([dx.ravel(), dy.ravel()], axis=1)
    # zero motion first, then by distance; argmin keeps the first minimum
    order = np.lexsort((offs[:, 0], offs[:, 1], offs[:, 0] ** 2 + offs[:, 1] ** 2))
    return offs[order]


def track_points(clip: Clip, points: np.ndarray, cfg: TrackerConfig) -> tuple[np.ndarray, np.ndarray]:
    """Track arbitrary start points through ``clip``.

    Each point is matched frame to frame against the block last seen where it
    was visible. When the best SAD cost exceeds the threshold the point is
    marked invisible and keeps its last matched position; its template is kept
    so it can be re-acquired later.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    L, w, h = clip.L, clip.width, clip.height
    r = cfg.block_radius
    frames = clip.stack().astype(np.float32)
    padded = np.pad(frames, ((0, 0), (r, r), (r, r), (0, 0)), mode="edge")

    base = np.floor(points).astype(np.int64)
    base[:, 0] = np.clip(base[:, 0], 0, w - 1)
    base[:, 1] = np.clip(base[:, 1], 0, h - 1)
    frac = points - base

    by, bx = np.meshgrid(np.arange(2 * r + 1), np.arange(2 * r + 1), indexing="ij")
    by = by.ravel()
    bx = bx.ravel()

    def blocks(t: int, pos: np.ndarray) -> np.ndarray:
        ys = pos[:, 1, None] + by[None, :]
        xs = pos[:, 0, None] + bx[None, :]
        return padded[t][ys, xs]  # (N, B, C)

    n = len(points)
    pos = base.copy()
    xy = np.empty((n, L, 2))
    vis = np.ones((n, L), dtype=bool)
    xy[:, 0] = pos + frac
    template = blocks(0, pos)
    offsets = _candidate_offsets(cfg.search_radius)
    scale = 1.0 / (template.shape[1] * template.shape[2]) if n else 1.0

    for t in range(1, L):
        best_cost = np.full(n, np.inf)
        best_pos = pos.copy()
        best_block = template.copy()
        for d in offsets:
            cand = pos + d
            ok = (cand[:, 0] >= 0) & (cand[:, 0] < w) & (cand[:, 1] >= 0) & (cand[:, 1] < h)
            cand[:, 0] = np.clip(cand[:, 0], 0, w - 1)
            cand[:, 1] = np.clip(cand[:, 1], 0, h - 1)
            blk = blocks(t, cand)
            cost = np.abs(blk - template).sum(axis=(1, 2)) * scale
            cost[~ok] = np.inf
            better = cost < best_cost
            best_cost[better] = cost[better]
            best_pos[better] = cand[better]
            best_block[better] = blk[better]
        seen = best_cost <= cfg.visibility_threshold
        pos[seen] = best_pos[seen]
        template[seen] = best_block[seen]
        vis[:, t] = seen
        xy[:, t] = pos + frac
    return xy, vis


def _grid_origins(grid_size: int) -> np.ndarray:
    rows, cols = np.divmod(np.arange(grid_size * grid_size), grid_size)
    return np.stack([rows, cols], axis=1)


def track_forward(clip: Clip, cfg: TrackerConfig = TrackerConfig()) -> TrajectorySet:
    pts = grid_points(clip.width, clip.height, cfg.grid_size)
    xy, vis = track_points(clip, pts, cfg)
    n = len(pts)
    return TrajectorySet(
        xy, vis, _grid_origins(cfg.grid_size), (FORWARD,) * n, clip.L, cfg.grid_size, clip.width, clip.height
    )


def track_backward(clip: Clip, cfg: TrackerConfig = TrackerConfig()) -> TrajectorySet:
    """Forward tracking on the time-reversed clip; time runs backwards in the result."""
    fwd = track_forward(clip.reversed(), cfg)
    return TrajectorySet(
        fwd.xy, fwd.vis, fwd.origins, (BACKWARD,) * len(fwd), fwd.L, fwd.grid_size, fwd.width, fwd.height
    )


def flip(ts: TrajectorySet) -> TrajectorySet:
    return TrajectorySet(
        ts.xy[:, ::-1].copy(),
        ts.vis[:, ::-1].copy(),
        ts.origins,
        (BACKWARD_FLIPPED,) * len(ts),
        ts.L,
        ts.grid_size,
        ts.width,
        ts.height,
    )


def fuse_bidirectional(fwd: TrajectorySet, bwd: TrajectorySet) -> TrajectorySet:
    """Union of forward tracks and time-flipped backward tracks.

    A flipped backward track is dropped as a duplicate when some forward track
    starts within one grid cell of it and the two stay within one cell on every
    frame where both are visible, provided there is at least one such frame.
    """
    if fwd.L != bwd.L:
        raise InvalidInput(f"cannot fuse sets of length {fwd.L} and {bwd.L}")
    if len(bwd) and len(fwd) and fwd.grid_size != bwd.grid_size:
        raise InvalidInput("cannot fuse sets built on different grids")
    flipped = flip(bwd) if any(d == BACKWARD for d in bwd.directions) else bwd
    cw, ch = fwd.cell_size() if fwd.width is not None else flipped.cell_size()

    buckets: dict[tuple[int, int], list[int]] = defaultdict(list)
    for i, (x, y) in enumerate(fwd.xy[:, 0]):
        buckets[(math.floor(x / cw), math.floor(y / ch))].append(i)

    keep = []
    for j in range(len(flipped)):
        bx, by = flipped.xy[j, 0]
        kx, ky = math.floor(bx / cw), math.floor(by / ch)
        near = [i for dx in (-1, 0, 1) for dy in (-1, 0, 1) for i in buckets.get((kx + dx, ky + dy), ())]
        duplicate = False
        if near:
            cand = np.asarray(near)
            start = np.abs(fwd.xy[cand, 0] - flipped.xy[j, 0])
            cand = cand[(start[:, 0] <= cw) & (start[:, 1] <= ch)]
            if len(cand):
                mutual = fwd.vis[cand] & flipped.vis[j][None, :]
                diff = np.abs(fwd.xy[cand] - flipped.xy[j][None])
                close = (diff[..., 0] <= cw) & (diff[..., 1] <= ch)
                agree = np.all(close | ~mutual, axis=1) & mutual.any(axis=1)
                duplicate = bool(agree.any())
        if not duplicate:
            keep.append(j)

    kept = flipped.subset(keep)
    out = TrajectorySet(
        np.concatenate([fwd.xy, kept.xy]),
        np.concatenate([fwd.vis, kept.vis]),
        np.concatenate([fwd.origins, kept.origins]),
        fwd.directions + kept.directions,
        fwd.L,
        fwd.grid_size if len(fwd) else flipped.grid_size,
        fwd.width if fwd.width is not None else flipped.width,
        fwd.height if fwd.height is not None else flipped.height,
    )
    if out.grid_size and len(out) > 2 * out.grid_size**2:
        raise InvariantViolation(f"{len(out)} fused tracks exceed 2 x grid_size^2")
    return out


def dense_trajectories(clip: Clip, cfg: TrackerConfig = TrackerConfig()) -> TrajectorySet:
    return fuse_bidirectional(track_forward(clip, cfg), track_backward(clip, cfg))


# -- interchange format ---------------------------------------------------


def export_tracks(ts: TrajectorySet) -> str:
    """Canonical JSON text, one track per line."""
    head = {"L": ts.L, "grid_size": ts.grid_size}
    if ts.width is not None:
        head["width"] = ts.width
    if ts.height is not None:
        head["height"] = ts.height
    lines = []
    for i in range(len(ts)):
        doc = {
            "origin": [int(ts.origins[i, 0]), int(ts.origins[i, 1])],
            "xy": [[float(x), float(y)] for x, y in ts.xy[i]],
            "vis": [int(v) for v in ts.vis[i]],
        }
        if ts.directions[i] != FORWARD:
            doc["dir"] = _DIR_CODES[ts.directions[i]]
        if ts.instance is not None:
            doc["instance"] = int(ts.instance[i])
        lines.append(json.dumps(doc, separators=(", ", ": ")))
    head_text = json.dumps(head, separators=(", ", ": "))[:-1]
    if not lines:
        return head_text + ', "tracks": []}\n'
    return head_text + ', "tracks": [\n' + ",\n".join(lines) + "\n]}\n"


def _require_int(value, field: str, lo: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"expected an integer, got {value!r}", field=field)
    if lo is not None and value < lo:
        raise ParseError(f"must be >= {lo}, got {value}", field=field)
    return value


def _require_number(value, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ParseError(f"expected a finite number, got {value!r}", field=field)
    return float(value)


def import_tracks(source: str | Path) -> TrajectorySet:
    """Parse the track interchange format from text or a file path."""
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        text = Path(source).read_text()
    else:
        text = source
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object")
    for key in ("L", "grid_size", "tracks"):
        if key not in doc:
            raise ParseError("missing field", field=key)
    L = _require_int(doc["L"], "L", lo=1)
    grid_size = _require_int(doc["grid_size"], "grid_size", lo=0)
    width = _require_int(doc["width"], "width", lo=1) if "width" in doc else None
    height = _require_int(doc["height"], "height", lo=1) if "height" in doc else None
    tracks = doc["tracks"]
    if not isinstance(tracks, list):
        raise ParseError("expected a list", field="tracks")

    n = len(tracks)
    xy = np.empty((n, L, 2))
    vis = np.empty((n, L), dtype=bool)
    origins = np.empty((n, 2), dtype=np.int64)
    directions = []
    instances = []
    reverse_codes = {v: k for k, v in _DIR_CODES.items()}
    for i, tr in enumerate(tracks):
        where = f"tracks[{i}]"
        if not isinstance(tr, dict):
            raise ParseError("expected an object", field=where)
        for key in ("origin", "xy", "vis"):
            if key not in tr:
                raise ParseError("missing field", field=f"{where}.{key}")
        org = tr["origin"]
        if not isinstance(org, list) or len(org) != 2:
            raise ParseError("expected [row, col]", field=f"{where}.origin")
        origins[i] = [_require_int(v, f"{where}.origin[{k}]") for k, v in enumerate(org)]
        pts = tr["xy"]
        if not isinstance(pts, list) or len(pts) != L:
            raise ParseError(f"expected {L} [x, y] pairs", field=f"{where}.xy")
        for t, p in enumerate(pts):
            if not isinstance(p, list) or len(p) != 2:
                raise ParseError("expected [x, y]", field=f"{where}.xy[{t}]")
            xy[i, t, 0] = _require_number(p[0], f"{where}.xy[{t}][0]")
            xy[i, t, 1] = _require_number(p[1], f"{where}.xy[{t}][1]")
        flags = tr["vis"]
        if not isinstance(flags, list) or len(flags) != L:
            raise ParseError(f"expected {L} visibility flags", field=f"{where}.vis")
        for t, v in enumerate(flags):
            if isinstance(v, bool) or v not in (0, 1):
                raise ParseError(f"visibility must be 0 or 1, got {v!r}", field=f"{where}.vis[{t}]")
            vis[i, t] = v == 1
        code = tr.get("dir")
        if code is None:
            directions.append(FORWARD)
        elif code in reverse_codes:
            directions.append(reverse_codes[code])
        else:
            raise ParseError(f"unknown direction {code!r}", field=f"{where}.dir")
        if "instance" in tr:
            instances.append(_require_int(tr["instance"], f"{where}.instance", lo=0))
        if width is not None and height is not None:
            seen = vis[i]
            px, py = xy[i, seen, 0], xy[i, seen, 1]
            if np.any(px < 0) or np.any(px >= width) or np.any(py < 0) or np.any(py >= height):
                raise ParseError("visible point outside the frame", field=f"{where}.xy")
    if instances and len(instances) != n:
        raise ParseError("either all tracks carry an instance id or none do", field="tracks")
    return TrajectorySet(
        xy, vis, origins, tuple(directions), L, grid_size, width, height, np.asarray(instances) if instances else None
    )
