"""Shared helper for the link demos: a small model trained in ~30 seconds.

The stock config trains for 26000 steps to hit the quality bar; demos only
need a model good enough to show the moving parts, so this trains a short
run and caches the checkpoint under demos/out/.
"""

from pathlib import Path

from diffcomm.codec import build_basis
from diffcomm.diffusion import (TrainConfig, default_schedule, load_checkpoint,
                                save_checkpoint, train_diffgo)
from diffcomm.scenes import SceneConfig, generate_scene, make_conditions

OUT = Path(__file__).resolve().parent / "out"
BASIS_SEEDS = list(range(1001, 1129))
TRAIN_SEEDS = list(range(2001, 2081))
QUICK_STEPS = 2500


def quick_model(verbose=True):
    """(params, basis, sched): cached short training run on 80 scenes."""
    basis = build_basis(BASIS_SEEDS, 1024)
    sched = default_schedule()
    ckpt = OUT / "quick.dgm1"
    if ckpt.exists():
        if verbose:
            print(f"using cached model {ckpt}")
        return load_checkpoint(ckpt), basis, sched
    scene_cfg = SceneConfig()
    dataset = [(sc.image, make_conditions(sc))
               for sc in (generate_scene(s, scene_cfg) for s in TRAIN_SEEDS)]
    if verbose:
        print(f"training quick model: {QUICK_STEPS} steps on {len(dataset)} scenes "
              f"(about half a minute)...")
    losses = []
    params = train_diffgo(dataset, basis, sched,
                          TrainConfig(steps=QUICK_STEPS, train_seed=7, lr=3e-4),
                          loss_out=losses)
    if verbose:
        head = sum(losses[:50]) / 50
        tail = sum(losses[-50:]) / 50
        print(f"loss {head:.3f} -> {tail:.3f} over {QUICK_STEPS} steps")
    OUT.mkdir(exist_ok=True)
    save_checkpoint(params, ckpt)
    return params, basis, sched
