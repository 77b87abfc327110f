"""Command-line driver: train the toy model, run the link, sweep weight counts.

Every command is a deterministic function of its config file, so reruns
produce byte-identical artifacts. Reports are CSV on stdout plus files under
the output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import (ConvergenceError, WeightVector, build_basis, project_exact, project_gd,
                    reconstruct, truncate_topk)
from .diffusion import (ConditionSet, TrainConfig, forward_diffuse, load_checkpoint,
                        make_linear_schedule, reverse_sample, save_checkpoint, train_diffgo)
from .metrics import (downstream_miou, edge_iou, feedback_metric, rmse, segment_by_levels,
                      toy_fid)
from .numerics import gaussian_stream, mix_seeds
from .protocol import (DiffGoMessage, decode_message, encode_message, floats_transmitted,
                       in_memory_transport, receive_pipeline, transmit_pipeline)
from .scenes import SceneConfig, extract_edges, generate_scene, load_manifest, make_conditions

FORWARD_SALT = 0xF0D
RANDOM_LATENT_SALT = 0x12A2D07
REPORT_METRICS = ("rmse", "edge_iou", "downstream_miou", "toy_fid")
METHODS = ("diffgo", "od", "rn", "gesco")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    manifest_path: Path
    scene_seeds: list
    scene_cfg: SceneConfig
    basis_seeds: list
    schedule_steps: int
    beta_start: float
    beta_end: float
    train_steps: int
    train_seed: int
    train_lr: float
    train_lr_hold: int
    train_lr_final: float
    hierarchy: list
    feedback_metric: str
    tau: dict
    eval_seeds: list
    out_dir: Path
    config_sha256: str

    @property
    def checkpoint_path(self):
        return self.out_dir / "model.dgm1"


def default_config_dict(manifest_path, out_dir):
    """The stock desk-scale experiment; tau values frozen from a calibration run."""
    return {
        "manifest": str(manifest_path),
        "basis_seeds": list(range(1001, 1001 + 256)),
        "schedule": {"steps": 100, "beta_start": 1e-4, "beta_end": 0.1},
        "train": {"steps": 26000, "seed": 7, "lr": 3e-4, "lr_hold": 14000, "lr_final": 3e-5},
        "hierarchy": [1, 8, 32, 128],
        "feedback_metric": "rmse",
        "tau": {"rmse": 0.64, "edge_iou": 0.84, "downstream_miou": 0.90, "toy_fid": 1.15},
        "eval_seeds": list(range(5001, 5001 + 50)),
        "out_dir": str(out_dir),
    }


def load_config(path, override_out=None):
    path = Path(path)
    try:
        raw = path.read_bytes()
        doc = json.loads(raw)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        manifest_path = Path(doc["manifest"])
        if not manifest_path.is_absolute():
            manifest_path = path.parent / manifest_path
        scene_seeds, scene_cfg = load_manifest(manifest_path)
        sched = doc["schedule"]
        train = doc["train"]
        out_dir = Path(override_out) if override_out else Path(doc["out_dir"])
        if not out_dir.is_absolute():
            out_dir = path.parent / out_dir
        cfg = ExperimentConfig(
            manifest_path=manifest_path,
            scene_seeds=scene_seeds,
            scene_cfg=scene_cfg,
            basis_seeds=[int(s) for s in doc["basis_seeds"]],
            schedule_steps=int(sched["steps"]),
            beta_start=float(sched["beta_start"]),
            beta_end=float(sched["beta_end"]),
            train_steps=int(train["steps"]),
            train_seed=int(train["seed"]),
            train_lr=float(train.get("lr", 1e-3)),
            train_lr_hold=int(train.get("lr_hold", 0)),
            train_lr_final=(float(train["lr_final"])
                            if train.get("lr_final") is not None else None),
            hierarchy=[int(k) for k in doc["hierarchy"]],
            feedback_metric=str(doc["feedback_metric"]),
            tau={str(k): float(v) for k, v in doc["tau"].items()},
            eval_seeds=[int(s) for s in doc.get("eval_seeds", [])],
            out_dir=out_dir,
            config_sha256=hashlib.sha256(raw).hexdigest(),
        )
    except (KeyError, TypeError, ValueError, OSError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc
    if cfg.feedback_metric not in cfg.tau:
        raise ConfigError(f"no tau entry for feedback metric {cfg.feedback_metric!r}")
    if not cfg.scene_seeds:
        raise ConfigError("manifest has no scene seeds")
    try:
        make_linear_schedule(cfg.schedule_steps, cfg.beta_start, cfg.beta_end)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _bundle(cfg):
    dim = cfg.scene_cfg.size ** 2
    basis = build_basis(cfg.basis_seeds, dim)
    sched = make_linear_schedule(cfg.schedule_steps, cfg.beta_start, cfg.beta_end)
    return basis, sched


def _forward_seed(scene_seed):
    return mix_seeds(scene_seed, FORWARD_SALT)


def cmd_train(cfg):
    basis, sched = _bundle(cfg)
    dataset = []
    for seed in cfg.scene_seeds:
        scene = generate_scene(seed, cfg.scene_cfg)
        dataset.append((scene.image, make_conditions(scene)))
    losses = []
    params = train_diffgo(dataset, basis, sched,
                          TrainConfig(steps=cfg.train_steps, train_seed=cfg.train_seed,
                                      lr=cfg.train_lr, lr_hold=cfg.train_lr_hold,
                                      lr_final=cfg.train_lr_final),
                          loss_out=losses)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, cfg.checkpoint_path)
    shared = {"basis_seeds": cfg.basis_seeds, "config_sha256": cfg.config_sha256}
    (cfg.out_dir / "shared.json").write_text(json.dumps(shared, indent=2))
    lines = ["step,loss"] + [f"{i + 1},{v:.8f}" for i, v in enumerate(losses)]
    (cfg.out_dir / "loss.csv").write_text("\n".join(lines) + "\n")
    # initial = early running mean, final = trailing mean; the drop is what a
    # monitoring job checks, so persist it next to the checkpoint
    if losses:
        initial = float(np.mean(losses[:min(10, len(losses))]))
        final = float(np.mean(losses[-min(100, len(losses)):]))
        summary = {"steps": len(losses), "initial_loss": initial, "final_loss": final,
                   "drop_fraction": (initial - final) / initial if initial > 0 else 0.0}
    else:
        summary = {"steps": 0, "initial_loss": None, "final_loss": None,
                   "drop_fraction": None}
    (cfg.out_dir / "train_summary.json").write_text(json.dumps(summary, indent=2))
    print("\n".join(lines))
    return 0


def _load_params(cfg):
    # FileNotFoundError propagates: the caller maps it to the missing-artifact exit code
    return load_checkpoint(cfg.checkpoint_path)


def _zero_weights(basis):
    return WeightVector(basis.n, np.empty(0, dtype=np.int32), np.empty(0, dtype=np.float32))


def _metric_rows(image, scene, k_column, scene_seed):
    rows = []
    for metric_id in REPORT_METRICS:
        score = feedback_metric(metric_id)(image, scene)
        rows.append(f"{metric_id},{score.value:.6f},{k_column},{scene_seed}")
    return rows


def run_method(cfg, params, basis, sched, scene, method):
    """One link simulation; returns (output image, message, extra rows)."""
    d = basis.dim
    cond = make_conditions(scene)
    extra_rows = []
    if method == "diffgo":
        metric = feedback_metric(cfg.feedback_metric)
        tau = cfg.tau[cfg.feedback_metric]
        msg, log = transmit_pipeline(scene, params, basis, sched, metric, tau,
                                     cfg.hierarchy, _forward_seed(scene.scene_seed))
        link = in_memory_transport()
        link.send(encode_message(msg))
        received = decode_message(link.receive())
        out = receive_pipeline(received, params, basis, sched)
        byte_equal = out.tobytes() == log[-1].candidate.tobytes()
        extra_rows.append(f"byte_equal,{str(byte_equal).lower()},{msg.k_used},{scene.scene_seed}")
    elif method == "od":
        eps = gaussian_stream(_forward_seed(scene.scene_seed), d)
        x_T = forward_diffuse(scene.image.reshape(-1), sched.T, eps, sched)
        w = project_exact(x_T, basis)
        msg = DiffGoMessage(basis.fingerprint, w, cond)
        out = receive_pipeline(msg, params, basis, sched)
    elif method == "rn":
        latent = gaussian_stream(mix_seeds(scene.scene_seed, RANDOM_LATENT_SALT), d)
        msg = DiffGoMessage(basis.fingerprint, _zero_weights(basis), cond)
        out = reverse_sample(params, latent, cond, sched).reshape(scene.image.shape)
    elif method == "gesco":
        bare = ConditionSet(cond.label_map, np.zeros_like(cond.edge_map), cond.num_labels)
        latent = gaussian_stream(mix_seeds(scene.scene_seed, RANDOM_LATENT_SALT), d)
        msg = DiffGoMessage(basis.fingerprint, _zero_weights(basis), bare)
        out = reverse_sample(params, latent, bare, sched).reshape(scene.image.shape)
    else:
        raise ConfigError(f"unknown method {method!r}")
    return out, msg, extra_rows


def cmd_run(cfg, scene_seed, method):
    params = _load_params(cfg)
    basis, sched = _bundle(cfg)
    scene = generate_scene(scene_seed, cfg.scene_cfg)
    out, msg, extra_rows = run_method(cfg, params, basis, sched, scene, method)
    acct = floats_transmitted(msg, method)
    k_column = {"diffgo": msg.k_used, "od": basis.dim}.get(method, 0)
    rows = ["metric_id,value,k,scene_seed"]
    rows += _metric_rows(out, scene, k_column, scene_seed)
    rows += extra_rows
    rows.append("method,condition_floats,edge_floats,extra_floats,total_floats,wire_bytes")
    rows.append(f"{acct.method},{acct.condition_floats:.1f},{acct.edge_floats:.1f},"
                f"{acct.extra_floats:.1f},{acct.total_floats:.1f},{acct.wire_bytes}")
    report = "\n".join(rows)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    (cfg.out_dir / f"run_{method}_{scene_seed}.csv").write_text(report + "\n")
    print(report)
    return 0


def evaluate_at_k(params, basis, sched, scene, k, forward_seed):
    """Reconstruction through exactly k weights: (residual norm, candidate image)."""
    d = basis.dim
    eps = gaussian_stream(forward_seed, d)
    x_T = forward_diffuse(scene.image.reshape(-1), sched.T, eps, sched)
    w_k = truncate_topk(project_gd(x_T, basis), k)
    x_hat = reconstruct(w_k, basis)
    residual = float(np.linalg.norm(x_T.astype(np.float64) - x_hat.astype(np.float64)))
    cond = make_conditions(scene)
    cand = reverse_sample(params, x_hat, cond, sched).reshape(scene.image.shape)
    return residual, cand


def cmd_ablate(cfg, k_list):
    params = _load_params(cfg)
    basis, sched = _bundle(cfg)
    if not cfg.eval_seeds:
        raise ConfigError("config has no eval_seeds for the ablation sweep")
    for k in k_list:
        if not 1 <= k <= basis.n:
            raise ConfigError(f"k={k} outside [1, {basis.n}]")
    scenes_ = [generate_scene(s, cfg.scene_cfg) for s in cfg.eval_seeds]
    truth_set = [(sc.image, sc.label_map) for sc in scenes_]
    rows = ["k,residual_norm,toy_fid,edge_iou,downstream_miou"]
    for k in k_list:
        residuals, e_scores, m_scores, recon_set = [], [], [], []
        for sc in scenes_:
            residual, cand = evaluate_at_k(params, basis, sched, sc, k,
                                           _forward_seed(sc.scene_seed))
            residuals.append(residual)
            e_scores.append(edge_iou(extract_edges(segment_by_levels(cand)),
                                     extract_edges(sc.label_map)).value)
            m_scores.append(downstream_miou(cand, sc.label_map).value)
            recon_set.append((cand, segment_by_levels(cand)))
        fid = toy_fid(recon_set, truth_set).value
        rows.append(f"{k},{np.mean(residuals):.6f},{fid:.6f},"
                    f"{np.mean(e_scores):.6f},{np.mean(m_scores):.6f}")
    report = "\n".join(rows)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    (cfg.out_dir / "ablation.csv").write_text(report + "\n")
    print(report)
    return 0


def _parser():
    p = argparse.ArgumentParser(prog="diffcomm",
                                description="goal-oriented image link at desk scale")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("train", "run", "ablate"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", default=None)
        if name == "run":
            sp.add_argument("--scene-seed", type=int, required=True)
            sp.add_argument("--method", choices=METHODS, required=True)
        if name == "ablate":
            sp.add_argument("--k-list", required=True,
                            help="comma-separated weight counts, e.g. 1,8,32,128")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, override_out=args.out)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "run":
            return cmd_run(cfg, args.scene_seed, args.method)
        try:
            k_list = [int(v) for v in args.k_list.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --k-list: {exc}") from exc
        return cmd_ablate(cfg, k_list)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return 3
    except (ConvergenceError, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
