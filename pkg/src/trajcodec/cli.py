"""``trajcodec`` command line: encode, decode, inspect, simulate, gradcheck, metrics.

Exit codes: 0 success, 2 bad input, 3 internal invariant violation (or a
failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import os
import struct
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import bitstream
from .config import config_digest, dump_config, load_config
from .core import read_raw_video
from .diffusion import generate_clip, make_schedule, plan_generation
from .errors import CodecError, InvariantViolation
from .guidance import GuidanceConfig, finite_difference_grad, grad_Lm, misalignment, relative_error
from .sampler import SparseInstance, SparseTrajectorySet
from .scenes import SCENES, make_scene
from .tracker import TrajectorySet, export_tracks

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 2, 3
GRADCHECK_TOL = 1e-4


def atomic_write(path: Path, data: bytes | str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- encode -----------------------------------------------------------------


def _config_from_args(args):
    overrides = list(args.set or [])
    for flag, key in (
        ("kmax", "budget.K_max"),
        ("alpha", "budget.alpha"),
        ("beta", "budget.beta"),
        ("sampling", "run.sampling"),
        ("seed", "run.seed"),
        ("grid_size", "tracker.grid_size"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return load_config(args.config, overrides)


def build_manifest(frames_shape, keys, results, cfg) -> dict:
    n, height, width, channels = frames_shape
    return {
        "width": width,
        "height": height,
        "channels": channels,
        "total_frames": n,
        "latent_factor": cfg.run.latent_factor,
        "config_digest": config_digest(cfg),
        "keyframes": [int(k) for k in keys],
        "clips": [
            {
                "index": r.index,
                "frames": [r.start, r.end],
                "keyframes": [r.start, r.end],
                "file": f"clip_{r.index:03d}.tgvc",
                "bytes": len(r.stream),
                "instances": len(r.selected),
                "K": r.budgets,
            }
            for r in results
        ],
    }


def cmd_encode(args) -> int:
    from .pipeline import encode_video

    cfg = _config_from_args(args)
    try:
        frames = read_raw_video(args.input, args.width, args.height, args.channels)
    except OSError as exc:
        raise CodecError(f"cannot read {args.input}: {exc.strerror}") from None
    keys, results = encode_video(frames, cfg, jobs=args.jobs)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for r in results:
        atomic_write(out / f"clip_{r.index:03d}.tgvc", r.stream)
        atomic_write(out / f"clip_{r.index:03d}.instances.json", json.dumps(r.report(), indent=1) + "\n")
    atomic_write(out / "config.txt", dump_config(cfg))
    shape = (len(frames), frames[0].height, frames[0].width, frames[0].channels)
    manifest = build_manifest(shape, keys, results, cfg)
    atomic_write(out / "manifest.json", json.dumps(manifest, indent=1) + "\n")
    total = sum(len(r.stream) for r in results)
    print(f"{len(results)} clips, keyframes {keys}, {total} motion bytes -> {out}")
    return EXIT_OK


# -- decode / inspect -----------------------------------------------------------


def _read_stream(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CodecError(f"cannot read {path}: {exc.strerror}") from None


def sparse_to_tracks(s: SparseTrajectorySet) -> TrajectorySet:
    """Decoded trajectories in the interchange format; coordinates are latent cells."""
    xy, vis, origins, inst = [], [], [], []
    for i, si in enumerate(s.instances):
        for k in range(si.K):
            xy.append(si.xy[k])
            vis.append(si.vis[k])
            origins.append((i, k))
            inst.append(i)
    n = len(xy)
    return TrajectorySet(
        np.asarray(xy, dtype=np.float64).reshape(n, s.L, 2),
        np.asarray(vis, dtype=bool).reshape(n, s.L),
        np.asarray(origins, dtype=np.int64).reshape(n, 2),
        ("forward",) * n,
        s.L,
        0,
        s.latent_w,
        s.latent_h,
        np.asarray(inst, dtype=np.int64),
    )


def tracks_to_sparse(ts: TrajectorySet) -> SparseTrajectorySet:
    """Inverse of :func:`sparse_to_tracks`."""
    if ts.instance is None or ts.width is None or ts.height is None:
        raise CodecError("track file lacks instance ids or latent dimensions")
    n_inst = int(ts.instance.max()) + 1 if len(ts) else 0
    insts = []
    for i in range(n_inst):
        rows = np.flatnonzero(ts.instance == i)
        insts.append(SparseInstance(np.round(ts.xy[rows]).astype(np.int64), ts.vis[rows]))
    return SparseTrajectorySet(ts.L, ts.width, ts.height, tuple(insts))


def cmd_decode(args) -> int:
    s = bitstream.decode(_read_stream(args.stream))
    text = export_tracks(sparse_to_tracks(s))
    if args.output:
        atomic_write(Path(args.output), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if path.suffix == ".json":
        try:
            manifest = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CodecError(f"cannot read manifest {path}: {exc}") from None
        print(f"{manifest['width']}x{manifest['height']}, {manifest['total_frames']} frames, config {manifest['config_digest'][:12]}")
        for c in manifest["clips"]:
            print(f"clip {c['index']:3d} frames {c['frames'][0]}-{c['frames'][1]} bytes {c['bytes']} instances {c['instances']} K {c['K']}")
        return EXIT_OK
    data = _read_stream(path)
    s = bitstream.decode(data)
    print(f"L={s.L} latent={s.latent_w}x{s.latent_h} instances={len(s.instances)} bytes={len(data)}")
    for i, inst in enumerate(s.instances):
        visible = int(inst.vis.sum())
        print(f"  instance {i}: K={inst.K} visible points={visible}")
    return EXIT_OK


# -- simulate -------------------------------------------------------------------


def write_tensor(path: Path, z: np.ndarray) -> None:
    L, h, w, c = z.shape
    header = struct.pack("<4H", L, h, w, c)
    atomic_write(path, header + np.ascontiguousarray(z, dtype="<f4").tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise CodecError("tensor dump shorter than its header")
    L, h, w, c = struct.unpack_from("<4H", raw, 0)
    body = np.frombuffer(raw, dtype="<f4", offset=8)
    if body.size != L * h * w * c:
        raise CodecError(f"tensor dump holds {body.size} values, header says {L * h * w * c}")
    return body.reshape(L, h, w, c).astype(np.float64)


def simulate(scene_name: str, L: int, steps: int, scale: float, seed: int, prior_std=None):
    kwargs = {} if prior_std is None else {"prior_std": prior_std}
    scene = make_scene(scene_name, L, seed=0, **kwargs)
    plan = plan_generation(L)
    schedule = make_schedule(steps)
    cfg = GuidanceConfig(scale_coeff=scale)
    base = generate_clip(scene.key_latents, scene.sparse, plan, schedule, None, scene.denoiser, seed)
    guided = generate_clip(scene.key_latents, scene.sparse, plan, schedule, cfg, scene.denoiser, seed)
    return scene, base, guided


def cmd_simulate(args) -> int:
    scene, base, guided = simulate(args.scene, args.frames, args.steps, args.scale, args.seed, args.prior_std)
    before = misalignment(base, scene.sparse)
    after = misalignment(guided, scene.sparse)
    if args.output:
        write_tensor(Path(args.output), guided)
    ratio = after / before if before > 0 else float("nan")
    print(f"misalignment unguided={before:.6f} guided={after:.6f} ratio={ratio:.4f}")
    return EXIT_OK


# -- gradcheck --------------------------------------------------------------------


def random_config(rng: np.random.Generator, L: int, h: int, w: int, c: int, identical: bool = False):
    n_inst = int(rng.integers(1, 4))
    insts = []
    for _ in range(n_inst):
        K = int(rng.integers(1, 4))
        xy = np.stack([rng.integers(0, w, (K, L)), rng.integers(0, h, (K, L))], axis=-1)
        if identical:
            # a point that stays put on identical frames sees the same feature everywhere
            xy[:] = xy[:, :1]
        vis = rng.random((K, L)) < 0.85
        insts.append(SparseInstance(xy, vis))
    sparse = SparseTrajectorySet(L, w, h, tuple(insts))
    if identical:
        z = np.repeat(rng.standard_normal((1, h, w, c)), L, axis=0)
        eps = np.zeros_like(z)
    else:
        z = rng.standard_normal((L, h, w, c))
        eps = rng.standard_normal((L, h, w, c))
    alpha = float(rng.uniform(0.05, 0.95)) if not identical else 1.0
    return z, eps, alpha, sparse


def gradcheck(seed: int, trials: int, L: int, h: int, w: int, c: int, identical: bool = False):
    """Per-frame max relative error over ``trials`` random configurations."""
    rng = np.random.default_rng(seed)
    cfg = GuidanceConfig()
    per_frame = np.zeros(L)
    for _ in range(trials):
        z, eps, alpha, sparse = random_config(rng, L, h, w, c, identical)
        analytic = grad_Lm(z, eps, alpha, sparse, cfg)
        numeric = finite_difference_grad(z, eps, alpha, sparse, cfg, h=1e-4)
        err = relative_error(analytic, numeric)
        per_frame = np.maximum(per_frame, err.reshape(L, -1).max(axis=1))
    return per_frame


def cmd_gradcheck(args) -> int:
    per_frame = gradcheck(args.seed, args.trials, args.frames, args.height, args.width, args.channels, args.identical)
    for t, e in enumerate(per_frame):
        print(f"frame {t}: max relative error {e:.3e}")
    worst = float(per_frame.max())
    ok = worst < GRADCHECK_TOL
    print(f"max relative error {worst:.3e} over {args.trials} configurations: {'ok' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_INVARIANT


# -- metrics ------------------------------------------------------------------------


def metrics_rows(manifest: dict, keyframe_bits: int) -> list[dict]:
    w, h = manifest["width"], manifest["height"]
    rows = []
    for c in manifest["clips"]:
        L = c["frames"][1] - c["frames"][0] + 1
        rep = bitstream.rate_report(c["bytes"], w, h, L)
        rows.append({"clip": c["index"], "frames": L, "motion_bits": rep.motion_bits, "bpp_motion": rep.bpp_with_motion})
    total = bitstream.rate_report(
        sum(c["bytes"] for c in manifest["clips"]), w, h, manifest["total_frames"], keyframe_bits
    )
    rows.append(
        {
            "clip": "total",
            "frames": manifest["total_frames"],
            "motion_bits": total.motion_bits,
            "keyframe_bits": keyframe_bits,
            "bpp_with_motion": total.bpp_with_motion,
            "bpp_without_motion": total.bpp_without_motion,
        }
    )
    return rows


def cmd_metrics(args) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CodecError(f"cannot read manifest {args.manifest}: {exc}") from None
    if args.keyframe_bits < 0:
        raise CodecError("keyframe bits must be >= 0")
    rows = metrics_rows(manifest, args.keyframe_bits)
    print(f"{'clip':>6} {'frames':>6} {'motion_bits':>12} {'bpp':>22}")
    for r in rows[:-1]:
        print(f"{r['clip']:>6} {r['frames']:>6} {r['motion_bits']:>12} {r['bpp_motion']!r:>22}")
    t = rows[-1]
    print(f"{'total':>6} {t['frames']:>6} {t['motion_bits']:>12} {t['bpp_with_motion']!r:>22}")
    print(f"keyframe_bits {t['keyframe_bits']}  bpp without motion {t['bpp_without_motion']!r}  with motion {t['bpp_with_motion']!r}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trajcodec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("encode", help="raw video -> per-clip trajectory streams + manifest")
    e.add_argument("input")
    e.add_argument("--width", type=int, required=True)
    e.add_argument("--height", type=int, required=True)
    e.add_argument("--channels", type=int, default=3)
    e.add_argument("-o", "--output", required=True, help="output directory")
    e.add_argument("--config", help="flat key = value config file")
    e.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
    e.add_argument("--kmax", type=int)
    e.add_argument("--alpha", type=float)
    e.add_argument("--beta", type=float)
    e.add_argument("--sampling", choices=("sparse", "random", "dense"))
    e.add_argument("--seed", type=int)
    e.add_argument("--grid-size", dest="grid_size", type=int)
    e.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="stream -> track interchange file")
    d.add_argument("stream")
    d.add_argument("-o", "--output")
    d.set_defaults(func=cmd_decode)

    i = sub.add_parser("inspect", help="summarize a stream or a manifest")
    i.add_argument("path")
    i.set_defaults(func=cmd_inspect)

    s = sub.add_parser("simulate", help="guided toy-diffusion run on a latent scene")
    s.add_argument("--frames", type=int, default=16)
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--scale", type=float, default=30.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scene", choices=SCENES, default="two-blob")
    s.add_argument("--prior-std", dest="prior_std", type=float)
    s.add_argument("-o", "--output", help="raw tensor dump of the guided latents")
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("gradcheck", help="analytic vs finite-difference guidance gradient")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--trials", type=int, default=50)
    g.add_argument("--frames", type=int, default=6)
    g.add_argument("--width", type=int, default=4)
    g.add_argument("--height", type=int, default=4)
    g.add_argument("--channels", type=int, default=2)
    g.add_argument("--identical", action="store_true", help="use identical frames (zero gradient)")
    g.set_defaults(func=cmd_gradcheck)

    m = sub.add_parser("metrics", help="rate table from a manifest")
    m.add_argument("manifest")
    m.add_argument("--keyframe-bits", dest="keyframe_bits", type=int, default=0)
    m.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except CodecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
