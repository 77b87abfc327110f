"""How many weights does the latent actually need? Sweep k and measure.

For each weight count the terminal latent is truncated to its k strongest
basis coefficients, regenerated, and scored. The projection residual falls
monotonically with k; the perceptual scores saturate much earlier, which is
the whole reason the link can ship a handful of floats instead of a frame.
"""

import numpy as np

from common import quick_model
from diffcomm.cli import evaluate_at_k
from diffcomm.metrics import downstream_miou, rmse
from diffcomm.numerics import mix_seeds
from diffcomm.scenes import SceneConfig, generate_scene

SCENE_SEEDS = (5001, 5002, 5003, 5004, 5005)
KS = (1, 4, 8, 16, 32, 64, 128)


def main():
    params, basis, sched = quick_model()
    cfg = SceneConfig()

    rows = []
    for k in KS:
        res, err, mi = [], [], []
        for seed in SCENE_SEEDS:
            scene = generate_scene(seed, cfg)
            residual, cand = evaluate_at_k(params, basis, sched, scene, k,
                                           mix_seeds(seed, 0xF0D))
            res.append(residual)
            err.append(rmse(cand, scene.image).value)
            mi.append(downstream_miou(cand, scene.label_map).value)
        rows.append((k, np.mean(res), np.mean(err), np.mean(mi)))

    print(f"\nmeans over {len(SCENE_SEEDS)} scenes "
          f"(miou score is 1 - mean IoU, lower is better):")
    print(f"{'k':>4s} {'latent residual':>16s} {'rmse':>8s} {'miou score':>11s}")
    for k, r, e, m in rows:
        print(f"{k:4d} {r:16.4f} {e:8.4f} {m:11.4f}")

    drop = (rows[0][1] - rows[-1][1]) / rows[0][1]
    print(f"\nresidual falls {100 * drop:.0f}% from k={KS[0]} to k={KS[-1]}, "
          f"while the scores move on a much smaller scale:")
    print("past the first few dozen weights the conditions, not the latent,"
          " carry most of the goal-relevant information.")


if __name__ == "__main__":
    main()
