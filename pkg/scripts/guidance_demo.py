"""Trajectory misalignment with and without guidance on the toy latent scenes.

Sweeps the guidance scale and clip length; each cell is the mean over seeds of
guided / unguided misalignment (lower is better, 1.0 means no effect).
"""

import argparse

import numpy as np

from trajcodec.cli import simulate
from trajcodec.guidance import misalignment
from trajcodec.scenes import SCENES


def ratio(scene, L, steps, scale, seeds, prior_std):
    before, after = [], []
    for seed in range(seeds):
        sc, base, guided = simulate(scene, L, steps, scale, seed, prior_std)
        before.append(misalignment(base, sc.sparse))
        after.append(misalignment(guided, sc.sparse))
    return np.mean(after) / np.mean(before)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--scales", type=float, nargs="+", default=[0.0, 10.0, 30.0, 60.0])
    p.add_argument("--lengths", type=int, nargs="+", default=[10, 16, 21, 30])
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--prior-std", type=float)
    args = p.parse_args()

    for scene in SCENES:
        print(f"scene {scene}")
        print("  " + "scale".rjust(6) + "".join(f"{'L=' + str(L):>9}" for L in args.lengths))
        for scale in args.scales:
            cells = [ratio(scene, L, args.steps, scale, args.seeds, args.prior_std) for L in args.lengths]
            print("  " + f"{scale:6.1f}" + "".join(f"{c:9.3f}" for c in cells))


if __name__ == "__main__":
    main()
