"""Synthetic test videos: static scenes, global shifts, moving blobs, cuts."""

from __future__ import annotations

import numpy as np

from .core import Clip, Frame


def texture(width: int, height: int, seed: int = 0, channels: int = 1, smooth: int = 2) -> np.ndarray:
    """Random texture with enough local structure for block matching to lock on."""
    rng = np.random.default_rng(seed)
    img = rng.uniform(0, 255, size=(height, width, channels))
    for _ in range(smooth):
        img = (img + np.roll(img, 1, axis=0) + np.roll(img, 1, axis=1) + np.roll(img, (1, 1), axis=(0, 1))) / 4
    img -= img.min()
    img *= 255.0 / max(img.max(), 1e-9)
    return img.round().astype(np.uint8)


def gradient_image(width: int, height: int, channels: int = 1) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width]
    img = 255.0 * (xs / max(width - 1, 1) * 0.7 + ys / max(height - 1, 1) * 0.3)
    return np.repeat(img[:, :, None], channels, axis=2).round().astype(np.uint8)


def static_video(n: int, width: int = 64, height: int = 48, seed: int = 0) -> list[Frame]:
    img = texture(width, height, seed)
    return [Frame(img, index=i) for i in range(n)]


def shift_video(
    n: int, width: int = 64, height: int = 48, dx: int = 2, dy: int = 0, seed: int = 0
) -> list[Frame]:
    """Frames cropped from a larger texture so that content moves by (dx, dy) per frame."""
    pad_x = abs(dx) * n + 1
    pad_y = abs(dy) * n + 1
    big = texture(width + 2 * pad_x, height + 2 * pad_y, seed)
    frames = []
    for t in range(n):
        ox = pad_x - dx * t
        oy = pad_y - dy * t
        frames.append(Frame(big[oy : oy + height, ox : ox + width], index=t))
    return frames


def blob_video(
    n: int,
    width: int = 64,
    height: int = 48,
    start=(16.0, 24.0),
    velocity=(2.0, 0.0),
    radius: float = 8.0,
    seed: int = 0,
    textured_blob: bool = True,
) -> list[Frame]:
    """A textured disc moving over a static textured background."""
    bg = texture(width, height, seed) // 2
    fg = texture(width, height, seed + 1) // 2 + 128
    frames = []
    for t in range(n):
        img = bg.copy()
        cx = start[0] + velocity[0] * t
        cy = start[1] + velocity[1] * t
        ys, xs = np.mgrid[0:height, 0:width]
        inside = (xs + 0.5 - cx) ** 2 + (ys + 0.5 - cy) ** 2 <= radius**2
        if textured_blob:
            # the blob carries its own texture along with it
            sx = int(round(velocity[0] * t))
            sy = int(round(velocity[1] * t))
            moved = np.roll(fg, (sy, sx), axis=(0, 1))
            img[inside] = moved[inside]
        else:
            img[inside] = 255
        frames.append(Frame(img, index=t))
    return frames


def late_entry_video(n: int, width: int = 64, height: int = 48, seed: int = 0) -> list[Frame]:
    """Static background; a bright textured square appears only in the last frame."""
    bg = texture(width, height, seed) // 2
    fg = texture(width, height, seed + 7) // 2 + 128
    frames = [Frame(bg, index=t) for t in range(n - 1)]
    last = bg.copy()
    last[12:36, 20:44] = fg[12:36, 20:44]
    frames.append(Frame(last, index=n - 1))
    return frames


def exit_video(n: int = 12, width: int = 64, height: int = 48, x0: int = 40, speed: int = 3, seed: int = 5) -> list[Frame]:
    """A bright textured 16x16 square sliding right over black until it leaves the frame."""
    tex = texture(16, 16, seed) // 2 + 128
    frames = []
    for t in range(n):
        img = np.zeros((height, width, 1), np.uint8)
        left = x0 + speed * t
        lo, hi = max(left, 0), min(left + 16, width)
        if hi > lo:
            img[16:32, lo:hi] = tex[:, lo - left : hi - left]
        frames.append(Frame(img, index=t))
    return frames


def opposing_halves_video(n: int = 11, width: int = 96, height: int = 64, speed: int = 1, seed: int = 0) -> list[Frame]:
    """Top half slides right and bottom half slides left, ``speed`` px per frame each."""
    pad = speed * n + 1
    top = texture(width + 2 * pad, height // 2, seed)
    bottom = texture(width + 2 * pad, height - height // 2, seed + 1)
    frames = []
    for t in range(n):
        img = np.concatenate([top[:, pad - speed * t : pad - speed * t + width], bottom[:, pad + speed * t : pad + speed * t + width]])
        frames.append(Frame(img, index=t))
    return frames


def cut_video(n: int, cut_at: int, width: int = 32, height: int = 32) -> list[Frame]:
    black = np.zeros((height, width, 1), np.uint8)
    white = np.full((height, width, 1), 255, np.uint8)
    return [Frame(black if t < cut_at else white, index=t) for t in range(n)]


def as_clip(frames) -> Clip:
    return Clip(tuple(frames))
