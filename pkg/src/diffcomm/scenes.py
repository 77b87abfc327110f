"""Synthetic street scenes with ground-truth segmentation.

Each scene is a 32x32 single-channel image built from a horizontal road
band, a few vehicle rectangles on the road, and small sign discs above it,
all placed by seeded draws so a scene seed fully determines every byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .diffusion import ConditionSet
from .numerics import gaussian_stream, mix_seeds, splitmix64_bulk

LABEL_BACKGROUND, LABEL_ROAD, LABEL_VEHICLE, LABEL_SIGN = 0, 1, 2, 3
CLASS_LEVELS = (-0.6, -0.2, 0.4, 0.8)


@dataclass(frozen=True)
class SceneConfig:
    size: int = 32
    max_vehicles: int = 3
    max_signs: int = 2
    texture_scale: float = 0.08

    def __post_init__(self):
        # vehicles span up to 8 columns and signs up to radius 2, so the
        # placement modulos below need at least an 8-pixel canvas
        if self.size < 8:
            raise ValueError(f"size must be >= 8, got {self.size}")


@dataclass(eq=False)
class Scene:
    image: np.ndarray      # float32 in [-1, 1]
    label_map: np.ndarray  # uint8, {0 background, 1 road, 2 vehicle, 3 sign}
    scene_seed: int


def generate_scene(scene_seed, cfg=SceneConfig()):
    size = cfg.size
    draws = splitmix64_bulk(mix_seeds(scene_seed, 2), 8 + 4 * cfg.max_vehicles + 3 * cfg.max_signs)
    it = iter(int(d) for d in draws)

    labels = np.full((size, size), LABEL_BACKGROUND, dtype=np.uint8)
    road_top = 10 + next(it) % 9
    road_h = 6 + next(it) % 7
    labels[road_top:road_top + road_h, :] = LABEL_ROAD

    n_veh = next(it) % (cfg.max_vehicles + 1) if cfg.max_vehicles else 0
    for _ in range(n_veh):
        vw = 3 + next(it) % 6
        vh = 2 + next(it) % 3
        vx = next(it) % (size - vw + 1)
        vy = road_top + next(it) % max(1, road_h - vh + 1)
        labels[vy:vy + vh, vx:vx + vw] = LABEL_VEHICLE

    n_signs = next(it) % (cfg.max_signs + 1) if cfg.max_signs else 0
    for _ in range(n_signs):
        rad = 1 + next(it) % 2
        cy = rad + next(it) % max(1, road_top - 2 * rad)
        cx = rad + next(it) % (size - 2 * rad)
        yy, xx = np.ogrid[:size, :size]
        disc = (yy - cy) ** 2 + (xx - cx) ** 2 <= rad * rad
        labels[disc] = LABEL_SIGN

    texture = gaussian_stream(mix_seeds(scene_seed, 1), size * size).reshape(size, size)
    levels = np.asarray(CLASS_LEVELS, dtype=np.float64)
    image = levels[labels] + cfg.texture_scale * texture.astype(np.float64)
    image = np.clip(image, -1.0, 1.0).astype(np.float32)
    return Scene(image, labels, scene_seed)


def extract_edges(label_map):
    """Binary map of label boundaries: 1 where any 4-neighbor label differs."""
    lab = np.asarray(label_map)
    edges = np.zeros(lab.shape, dtype=np.uint8)
    vert = lab[:-1, :] != lab[1:, :]
    edges[:-1, :] |= vert
    edges[1:, :] |= vert
    horiz = lab[:, :-1] != lab[:, 1:]
    edges[:, :-1] |= horiz
    edges[:, 1:] |= horiz
    return edges


def make_conditions(scene, num_labels=4):
    return ConditionSet(scene.label_map, extract_edges(scene.label_map), num_labels)


def write_manifest(path, scene_seeds, cfg=SceneConfig()):
    """Dataset manifest: the scene seeds plus generator config, as JSON."""
    with open(path, "w") as f:
        json.dump({"scene_seeds": [int(s) for s in scene_seeds],
                   "scene": asdict(cfg)}, f, indent=2)


def load_manifest(path):
    with open(path) as f:
        doc = json.load(f)
    return [int(s) for s in doc["scene_seeds"]], SceneConfig(**doc.get("scene", {}))


def dump_scene(scene, path):
    # flat binary for inspection: image as 32-bit reals, label bytes, packed edge bits
    with open(path, "wb") as f:
        f.write(scene.image.astype("<f4").tobytes())
        f.write(scene.label_map.astype(np.uint8).tobytes())
        f.write(np.packbits(extract_edges(scene.label_map)).tobytes())
