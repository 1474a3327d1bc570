"""Motion bits and transmitted track count as the per-instance keypoint cap K_max varies."""

import argparse

from trajcodec.bitstream import rate_report
from trajcodec.config import load_config
from trajcodec.pipeline import encode_video
from trajcodec.synthetic import blob_video


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--grid-size", type=int, default=16)
    p.add_argument("--kmax", type=int, nargs="+", default=[1, 2, 4, 8, 15, 30])
    args = p.parse_args()

    frames = blob_video(args.frames, 96, 64, start=(20, 32), velocity=(3, 0.5), radius=12)
    w, h, n = frames[0].width, frames[0].height, len(frames)
    print(f"{'K_max':>5} {'K per instance':>16} {'bytes':>6} {'bpp':>12}")
    for kmax in args.kmax:
        cfg = load_config(None, [f"tracker.grid_size={args.grid_size}", f"budget.K_max={kmax}"])
        _, results = encode_video(frames, cfg)
        ks = [k for r in results for k in r.budgets]
        n_bytes = sum(len(r.stream) for r in results)
        print(f"{kmax:>5} {str(ks):>16} {n_bytes:>6} {rate_report(n_bytes, w, h, n).bpp_with_motion:>12.3e}")


if __name__ == "__main__":
    main()
