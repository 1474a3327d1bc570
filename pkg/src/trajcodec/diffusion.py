"""Desk-scale DDIM sampling with trajectory guidance and variable-length generation.

The denoiser is analytic: it is the exact posterior-mean predictor for a
Gaussian data distribution centred on a known clean latent clip. With zero
spread that distribution is a point mass and unguided sampling lands on the
target exactly, which makes the effect of guidance easy to isolate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, InvariantViolation
from .guidance import GuidanceConfig, grad_Lm, guided_epsilon, predict_x0
from .sampler import SparseInstance, SparseTrajectorySet, round_half_away

CANONICAL_LEN = 16
MAX_GENERATED_LEN = 30


@dataclass(frozen=True, eq=False)
class DDIMSchedule:
    """``alpha_bar[t]`` for ``t = 0 .. steps-1``; index 0 is the least noisy level."""

    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.ndim != 1 or len(ab) < 1:
            raise InvalidInput("schedule needs at least one step")
        if np.any(ab <= 0) or np.any(ab > 1) or np.any(np.diff(ab) >= 0):
            raise InvalidInput("alpha_bar must be strictly decreasing within (0, 1]")
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def steps(self) -> int:
        return len(self.alpha_bar)

    def prev(self, t: int) -> float:
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


def make_schedule(steps: int = 10) -> DDIMSchedule:
    """Cosine schedule sampled at ``t / steps`` for ``t = 0 .. steps-1``."""
    if steps < 1:
        raise InvalidInput("steps must be >= 1")
    u = np.arange(steps) / steps
    ab = np.cos((u + 0.008) / 1.008 * math.pi / 2) ** 2
    return DDIMSchedule(np.clip(ab, 1e-4, 1.0))


@dataclass(frozen=True, eq=False)
class ToyDenoiser:
    """Optimal noise predictor for clean latents drawn from ``N(target, prior_std**2 I)``.

    ``target`` is a full clip ``(L, h, w, C)``; for a generation stage it is
    linearly resampled at the stage's (fractional) clip-frame positions.
    """

    target: np.ndarray
    prior_std: float = 0.0

    def __post_init__(self):
        tgt = np.asarray(self.target, dtype=np.float64)
        if tgt.ndim != 4 or not np.all(np.isfinite(tgt)):
            raise InvalidInput("target must be a finite (L, h, w, C) array")
        if self.prior_std < 0:
            raise InvalidInput("prior_std must be >= 0")
        object.__setattr__(self, "target", tgt)

    def target_at(self, positions=None) -> np.ndarray:
        if positions is None:
            return self.target
        pos = np.asarray(positions, dtype=np.float64)
        lo = np.clip(np.floor(pos).astype(np.int64), 0, len(self.target) - 1)
        hi = np.minimum(lo + 1, len(self.target) - 1)
        frac = (pos - lo)[:, None, None, None]
        out = self.target[lo] * (1 - frac) + self.target[hi] * frac
        exact = frac[:, 0, 0, 0] == 0
        out[exact] = self.target[lo[exact]]
        return out

    def clean_estimate(self, z_t: np.ndarray, alpha_bar_t: float, positions=None) -> np.ndarray:
        target = self.target_at(positions)
        if self.prior_std == 0:
            return target
        var = self.prior_std**2
        gain = math.sqrt(alpha_bar_t) * var / (alpha_bar_t * var + 1.0 - alpha_bar_t)
        return target + gain * (z_t - math.sqrt(alpha_bar_t) * target)

    def eps(self, z_t: np.ndarray, alpha_bar_t: float, positions=None) -> np.ndarray:
        if alpha_bar_t >= 1.0:
            raise InvalidInput("alpha_bar_t = 1 leaves no noise to predict")
        if alpha_bar_t <= 0:
            raise InvalidInput("alpha_bar_t must be positive")
        x0 = self.clean_estimate(z_t, alpha_bar_t, positions)
        if np.shape(x0) != np.shape(z_t):
            raise InvalidInput(f"latent shape {np.shape(z_t)} does not match target {np.shape(x0)}")
        return (z_t - math.sqrt(alpha_bar_t) * x0) / math.sqrt(1.0 - alpha_bar_t)


def toy_eps(denoiser: ToyDenoiser, z_t: np.ndarray, alpha_bar_t: float, positions=None) -> np.ndarray:
    return denoiser.eps(z_t, alpha_bar_t, positions)


def ddim_step(z_t: np.ndarray, eps_hat: np.ndarray, alpha_bar_t: float, alpha_bar_prev: float) -> np.ndarray:
    """Deterministic (eta = 0) DDIM update."""
    x0 = predict_x0(z_t, eps_hat, alpha_bar_t)
    return math.sqrt(alpha_bar_prev) * x0 + math.sqrt(1.0 - alpha_bar_prev) * eps_hat


def marker_positions(L: int, L_hat: int = CANONICAL_LEN) -> np.ndarray:
    """Canonical-grid slots holding the ``L`` real frames."""
    if not 2 <= L <= L_hat:
        raise InvalidInput(f"L must lie in [2, {L_hat}], got {L}")
    m = np.array([round_half_away(k * (L_hat - 1) / (L - 1)) for k in range(L)], dtype=np.int64)
    if np.any(np.diff(m) <= 0):
        raise InvariantViolation(f"duplicate markers for L={L}: {m}")
    return m


def interpolate_trajectories(
    sparse: SparseTrajectorySet, L_hat: int = CANONICAL_LEN
) -> tuple[SparseTrajectorySet, np.ndarray]:
    """Stretch every trajectory to ``L_hat`` frames.

    Real frames sit at the marker slots unchanged; slots in between get the
    linearly interpolated position rounded to the nearest cell, visible only
    when both neighbouring real frames are visible.
    """
    L = sparse.L
    if L > L_hat:
        raise InvalidInput(f"L={L} exceeds {L_hat}; use plan_generation for a dual-stage split")
    markers = marker_positions(L, L_hat)
    slots = np.arange(L_hat)
    k = np.clip(np.searchsorted(markers, slots, side="right") - 1, 0, L - 2)
    lo, hi = markers[k], markers[k + 1]
    frac = (slots - lo) / (hi - lo)
    insts = []
    for inst in sparse.instances:
        a = inst.xy[:, k].astype(np.float64)
        b = inst.xy[:, k + 1].astype(np.float64)
        pos = a + (b - a) * frac[None, :, None]
        q = np.floor(pos + 0.5).astype(np.int64)
        vis = inst.vis[:, k] & inst.vis[:, k + 1]
        q[:, markers] = inst.xy
        vis[:, markers] = inst.vis
        insts.append(SparseInstance(q, vis))
    return SparseTrajectorySet(L_hat, sparse.latent_w, sparse.latent_h, tuple(insts)), markers


@dataclass(frozen=True)
class GenerationPlan:
    """How a clip of ``L`` frames maps onto one or two canonical 16-frame generations.

    ``segments`` are inclusive clip-frame ranges; ``marker_positions[s]`` are
    the canonical slots of segment ``s`` and ``emit[s]`` the slots actually
    written to the output (the shared boundary frame is written once).
    """

    L: int
    segments: tuple[tuple[int, int], ...]
    marker_positions: tuple[np.ndarray, ...] = field(compare=False)
    emit: tuple[np.ndarray, ...] = field(compare=False)

    @property
    def stages(self) -> int:
        return len(self.segments)


def plan_generation(L: int) -> GenerationPlan:
    if not 2 <= L <= MAX_GENERATED_LEN:
        raise InvalidInput(f"clip length must lie in [2, {MAX_GENERATED_LEN}], got {L}")
    if L <= CANONICAL_LEN:
        m = marker_positions(L)
        return GenerationPlan(L, ((0, L - 1),), (m,), (m,))
    mid = math.ceil(L / 2)
    ma = marker_positions(mid + 1)
    mb = marker_positions(L - mid)
    plan = GenerationPlan(L, ((0, mid), (mid, L - 1)), (ma, mb), (ma, mb[1:]))
    if sum(len(e) for e in plan.emit) != L:
        raise InvariantViolation("generation plan does not emit exactly L frames")
    return plan


def _stage_positions(start: int, markers: np.ndarray) -> np.ndarray:
    """Fractional clip-frame position of every canonical slot."""
    return np.interp(np.arange(CANONICAL_LEN), markers, start + np.arange(len(markers)))


def run_stage(
    key_first: np.ndarray,
    key_last: np.ndarray | None,
    sparse_hat: SparseTrajectorySet | None,
    positions: np.ndarray,
    schedule: DDIMSchedule,
    cfg: GuidanceConfig | None,
    denoiser: ToyDenoiser,
    rng: np.random.Generator,
    trace: list | None = None,
) -> np.ndarray:
    """One 16-frame DDIM generation; returns the clean latent sequence.

    Keyframe slots are re-noised from the clean keyframe each step so that the
    predicted clean latent holds them exactly; their guidance gradient is dropped.
    ``cfg=None`` bypasses guidance entirely.
    """
    h, w, c = key_first.shape
    z = rng.standard_normal((CANONICAL_LEN, h, w, c))
    fixed = [(0, np.asarray(key_first, dtype=np.float64))]
    if key_last is not None:
        fixed.append((CANONICAL_LEN - 1, np.asarray(key_last, dtype=np.float64)))

    for t in range(schedule.steps - 1, -1, -1):
        ab = float(schedule.alpha_bar[t])
        ab_prev = schedule.prev(t)
        eps = denoiser.eps(z, ab, positions)
        for slot, key in fixed:
            z[slot] = math.sqrt(ab) * key + math.sqrt(1.0 - ab) * eps[slot]
        if cfg is not None and sparse_hat is not None:
            grad = grad_Lm(z, eps, ab, sparse_hat, cfg)
            for slot, _ in fixed:
                grad[slot] = 0.0
            eps_hat = guided_epsilon(eps, grad, t, ab, cfg)
        else:
            eps_hat = eps
        z = ddim_step(z, eps_hat, ab, ab_prev)
        if trace is not None:
            trace.append(z.copy())
    return z


def generate_clip(
    key_latents: tuple[np.ndarray, np.ndarray],
    sparse: SparseTrajectorySet | None,
    plan: GenerationPlan,
    schedule: DDIMSchedule,
    cfg: GuidanceConfig | None,
    denoiser: ToyDenoiser,
    seed: int,
    trace: list | None = None,
) -> np.ndarray:
    """Generate ``plan.L`` latent frames between two clean keyframe latents.

    For a two-stage plan the first stage has only its opening keyframe fixed;
    its final frame becomes the opening keyframe of the second stage. Each
    stage draws fresh noise from the same seeded generator.
    """
    first, last = (np.asarray(k, dtype=np.float64) for k in key_latents)
    if first.shape != last.shape or first.ndim != 3:
        raise InvalidInput("key latents must be two (h, w, C) arrays of equal shape")
    if sparse is not None:
        if sparse.L != plan.L:
            raise InvalidInput(f"trajectories have {sparse.L} frames, plan has {plan.L}")
        if (sparse.latent_w, sparse.latent_h) != (first.shape[1], first.shape[0]):
            raise InvalidInput("trajectory grid does not match latent size")
    rng = np.random.default_rng(seed)
    out = []
    opening = first
    for s, ((a, b), markers, emit) in enumerate(zip(plan.segments, plan.marker_positions, plan.emit)):
        final_stage = s == plan.stages - 1
        sparse_hat = None
        if sparse is not None:
            sparse_hat, _ = interpolate_trajectories(sparse.frames(a, b + 1))
        z = run_stage(
            opening,
            last if final_stage else None,
            sparse_hat,
            _stage_positions(a, markers),
            schedule,
            cfg,
            denoiser,
            rng,
            trace,
        )
        out.extend(z[emit])
        opening = z[markers[-1]]
    result = np.stack(out)
    if len(result) != plan.L:
        raise InvariantViolation(f"generated {len(result)} frames, expected {plan.L}")
    return result
