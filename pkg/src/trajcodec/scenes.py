"""Latent-space toy scenes for the guided sampler.

Each scene has two clean keyframe latents, a sparse trajectory set saying how
content moves between them, and a denoiser whose target clip disagrees: it
keeps every object parked at its frame-0 position until the final frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import ToyDenoiser
from .errors import InvalidInput
from .sampler import SparseInstance, SparseTrajectorySet

SCENES = ("blob", "two-blob", "shear")
LATENT_W, LATENT_H, CHANNELS = 16, 10, 4
# object contrast has to exceed the fixed per-step push of sign-gradient
# guidance, and the prior spread must be small enough that pushes made at
# high noise are forgotten; these two values were calibrated together
DEFAULT_PRIOR_STD = 0.05
DEFAULT_AMPLITUDE = 20.0


@dataclass(frozen=True, eq=False)
class Scene:
    name: str
    key_latents: tuple[np.ndarray, np.ndarray]
    sparse: SparseTrajectorySet
    denoiser: ToyDenoiser
    truth: np.ndarray  # (L, h, w, C) clip consistent with the trajectories


def _background(seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return 0.1 * rng.standard_normal((LATENT_H, LATENT_W, CHANNELS))


def _stamp(frame: np.ndarray, cx: float, cy: float, signature: np.ndarray, radius: float = 0.8) -> None:
    yy, xx = np.mgrid[0:LATENT_H, 0:LATENT_W]
    bump = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * radius**2))
    frame += bump[..., None] * signature[None, None, :]


def _paths(name: str, L: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Object centre paths ``(L, 2)`` and signatures, in latent cells."""
    u = np.linspace(0.0, 1.0, L)[:, None]
    sig_a = np.array([1.5, -1.0, 1.2, 0.6])
    sig_b = np.array([-1.2, 1.4, 0.5, -1.0])
    if name == "blob":
        return [(np.array([2.0, 4.0]) + u * np.array([11.0, 2.0]), sig_a)]
    if name == "two-blob":
        return [
            (np.array([2.0, 3.0]) + u * np.array([11.0, 0.0]), sig_a),
            (np.array([13.0, 7.0]) + u * np.array([-11.0, 0.0]), sig_b),
        ]
    if name == "shear":
        # a column of objects, each row sliding right at its own speed
        sigs = [sig_a, sig_b, 0.5 * (sig_a - sig_b)]
        return [(np.array([2.0, 2.0 + 3 * r]) + u * np.array([4.0 + 4 * r, 0.0]), sigs[r]) for r in range(3)]
    raise InvalidInput(f"unknown scene {name!r}; choose from {SCENES}")


def _render(objects, L: int, seed: int, positions) -> np.ndarray:
    bg = _background(seed)
    out = np.repeat(bg[None], L, axis=0)
    for t in range(L):
        for path, sig in objects:
            cx, cy = positions(path, t)
            _stamp(out[t], cx, cy, sig)
    return out


def make_scene(
    name: str, L: int = 16, seed: int = 0, prior_std: float = DEFAULT_PRIOR_STD, amplitude: float = DEFAULT_AMPLITUDE
) -> Scene:
    if L < 2:
        raise InvalidInput("scene needs at least 2 frames")
    objects = [(p, amplitude * s) for p, s in _paths(name, L)]
    truth = _render(objects, L, seed, lambda p, t: p[t])
    # the denoiser's belief: nothing moves until the last frame
    target = _render(objects, L, seed, lambda p, t: p[0] if t < L - 1 else p[-1])

    insts = []
    for path, _ in objects:
        centre = np.floor(path + 0.5).astype(np.int64)
        offsets = np.array([[0, 0], [-1, 0], [1, 0], [0, -1], [0, 1]])
        xy = centre[None, :, :] + offsets[:, None, :]
        xy[..., 0] = np.clip(xy[..., 0], 0, LATENT_W - 1)
        xy[..., 1] = np.clip(xy[..., 1], 0, LATENT_H - 1)
        insts.append(SparseInstance(xy, np.ones(xy.shape[:2], dtype=bool)))
    sparse = SparseTrajectorySet(L, LATENT_W, LATENT_H, tuple(insts))
    return Scene(name, (truth[0], truth[-1]), sparse, ToyDenoiser(target, prior_std), truth)
