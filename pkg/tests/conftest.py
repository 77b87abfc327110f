"""Shared fixtures: one trained model per session plus its evaluation grid.

Training and the scene-level evaluations dominate the suite's runtime, so
they run once here and every test reads from the cached results.
"""

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from diffcomm import cli
from diffcomm.codec import build_basis, project_exact, project_gd, reconstruct, truncate_topk
from diffcomm.diffusion import forward_diffuse, load_checkpoint, make_linear_schedule, reverse_sample
from diffcomm.metrics import rmse, segment_by_levels
from diffcomm.numerics import gaussian_stream, mix_seeds
from diffcomm.scenes import ConditionSet, generate_scene, make_conditions, write_manifest

SESSION_T0 = time.monotonic()

TRAIN_SEEDS = range(2001, 2201)
ABLATION_KS = (1, 8, 32, 128)

# criterion number -> (description, passed, detail); filled by the acceptance
# tests and echoed after the run so every verdict is visible in one block
ACCEPTANCE_RESULTS = {}


def session_elapsed():
    return time.monotonic() - SESSION_T0


def record_acceptance(num, description, passed, detail=""):
    ACCEPTANCE_RESULTS[num] = (description, bool(passed), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    if 12 in ACCEPTANCE_RESULTS:
        # The runtime criterion is judged on the whole run, known only here.
        description = ACCEPTANCE_RESULTS[12][0]
        total = session_elapsed()
        ACCEPTANCE_RESULTS[12] = (description, total <= 900.0, f"{total:.1f}s total")
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        description, passed, detail = ACCEPTANCE_RESULTS[num]
        verdict = "PASS" if passed else "FAIL"
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(
            f"[ACCEPTANCE] criterion {num:2d} {verdict} {description}{suffix}")
    terminalreporter.write_line(
        f"[ACCEPTANCE] suite elapsed {session_elapsed():.1f}s")


@dataclass(eq=False)
class TrainedBundle:
    cfg: object
    params: object
    basis: object
    sched: object
    losses: np.ndarray
    out_dir: Path


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    """Model trained through the command driver on the stock config."""
    work = tmp_path_factory.mktemp("trained")
    manifest = work / "manifest.json"
    write_manifest(manifest, TRAIN_SEEDS)
    config = work / "config.json"
    config.write_text(json.dumps(cli.default_config_dict(manifest, work / "out")))
    cfg = cli.load_config(config)
    rc = cli.cmd_train(cfg)
    assert rc == 0
    params = load_checkpoint(cfg.checkpoint_path)
    basis, sched = cli._bundle(cfg)
    rows = (cfg.out_dir / "loss.csv").read_text().strip().splitlines()[1:]
    losses = np.array([float(r.split(",")[1]) for r in rows])
    return TrainedBundle(cfg, params, basis, sched, losses, cfg.out_dir)


@dataclass(eq=False)
class SceneEval:
    scene: object
    x_T: np.ndarray
    w_full: object
    residuals: dict      # k -> ||x_T - x_hat_k||
    candidates: dict     # k -> reconstruction through exactly k weights
    od_image: np.ndarray
    rn_image: np.ndarray
    gesco_image: np.ndarray


def _evaluate_scene(bundle, seed):
    cfg, params, basis, sched = bundle.cfg, bundle.params, bundle.basis, bundle.sched
    scene = generate_scene(seed, cfg.scene_cfg)
    cond = make_conditions(scene)
    d = basis.dim
    eps = gaussian_stream(mix_seeds(seed, cli.FORWARD_SALT), d)
    x_T = forward_diffuse(scene.image.reshape(-1), sched.T, eps, sched)
    w_full = project_gd(x_T, basis)
    residuals, candidates = {}, {}
    for k in ABLATION_KS:
        w_k = truncate_topk(w_full, k)
        x_hat = reconstruct(w_k, basis)
        residuals[k] = float(np.linalg.norm(x_T.astype(np.float64) - x_hat.astype(np.float64)))
        candidates[k] = reverse_sample(params, x_hat, cond, sched).reshape(scene.image.shape)
    od_latent = reconstruct(project_exact(x_T, basis), basis)
    od_image = reverse_sample(params, od_latent, cond, sched).reshape(scene.image.shape)
    rand_latent = gaussian_stream(mix_seeds(seed, cli.RANDOM_LATENT_SALT), d)
    rn_image = reverse_sample(params, rand_latent, cond, sched).reshape(scene.image.shape)
    bare = ConditionSet(cond.label_map, np.zeros_like(cond.edge_map), cond.num_labels)
    gesco_image = reverse_sample(params, rand_latent, bare, sched).reshape(scene.image.shape)
    return SceneEval(scene, x_T, w_full, residuals, candidates, od_image, rn_image, gesco_image)


@pytest.fixture(scope="session")
def eval_grid(trained):
    """Per-scene reconstructions for every method over the evaluation set."""
    return {seed: _evaluate_scene(trained, seed) for seed in trained.cfg.eval_seeds}


@pytest.fixture(scope="session")
def stop_rule_grid(trained, eval_grid):
    """Feedback scores per weight count for the stop-rule scenes.

    Maps seed -> {k: rmse vs the source image}, including the full basis,
    so tests can brute-force the smallest passing count for any threshold.
    """
    cfg, params, basis, sched = trained.cfg, trained.params, trained.basis, trained.sched
    grid = {}
    for seed in cfg.eval_seeds[:20]:
        ev = eval_grid[seed]
        scores = {k: rmse(ev.candidates[k], ev.scene.image).value for k in ABLATION_KS}
        cond = make_conditions(ev.scene)
        full = reverse_sample(params, reconstruct(ev.w_full, basis), cond,
                              sched).reshape(ev.scene.image.shape)
        scores[basis.n] = rmse(full, ev.scene.image).value
        grid[seed] = scores
    return grid


@pytest.fixture(scope="session")
def transmissions(trained):
    """Full transmit results (message, feedback log) for every eval scene."""
    from diffcomm.metrics import feedback_metric
    from diffcomm.protocol import transmit_pipeline

    cfg, params, basis, sched = trained.cfg, trained.params, trained.basis, trained.sched
    metric = feedback_metric(cfg.feedback_metric)
    tau = cfg.tau[cfg.feedback_metric]
    out = {}
    for seed in cfg.eval_seeds:
        scene = generate_scene(seed, cfg.scene_cfg)
        msg, log = transmit_pipeline(scene, params, basis, sched, metric, tau,
                                     cfg.hierarchy, mix_seeds(seed, cli.FORWARD_SALT))
        out[seed] = (scene, msg, log)
    return out


@pytest.fixture()
def tiny_setup(tmp_path):
    """Small config that trains in well under a second, for driver tests."""
    manifest = tmp_path / "manifest.json"
    write_manifest(manifest, range(2001, 2006))
    doc = cli.default_config_dict(manifest, tmp_path / "out")
    doc["basis_seeds"] = list(range(1001, 1033))
    doc["schedule"] = {"steps": 5, "beta_start": 1e-4, "beta_end": 0.1}
    doc["train"] = {"steps": 8, "seed": 7, "lr": 1e-3}
    doc["hierarchy"] = [1, 4]
    doc["eval_seeds"] = [5001, 5002]
    config = tmp_path / "config.json"
    config.write_text(json.dumps(doc))
    return config, doc
