"""The desk-scale scene generator: seeded road scenes with labels and edges.

Every scene is a pure function of its seed, so a manifest of seeds stands in
for a dataset on disk. This renders a few scenes as ASCII and shows the side
information (label map, edge map) that rides along with every transmission.
"""

import numpy as np

from diffcomm.scenes import SceneConfig, extract_edges, generate_scene, make_conditions

GLYPHS = " .:-=+*#%@"
LABEL_GLYPHS = {0: ".", 1: "r", 2: "V", 3: "s"}


def ascii_image(img):
    idx = np.clip(((img + 1.0) / 2.0) * (len(GLYPHS) - 1), 0, len(GLYPHS) - 1)
    return "\n".join("".join(GLYPHS[int(v)] for v in row) for row in idx.astype(int))


def ascii_labels(labels):
    return "\n".join("".join(LABEL_GLYPHS[int(v)] for v in row) for row in labels)


def main():
    cfg = SceneConfig()
    for seed in (5001, 5007):
        sc = generate_scene(seed, cfg)
        print(f"scene {seed}: image {sc.image.shape}, "
              f"intensity [{sc.image.min():.2f}, {sc.image.max():.2f}]")
        print(ascii_labels(sc.label_map))
        counts = np.bincount(sc.label_map.reshape(-1), minlength=4)
        frac = counts / counts.sum()
        print(f"class fractions: background {frac[0]:.2f}, road {frac[1]:.2f}, "
              f"vehicle {frac[2]:.2f}, sign {frac[3]:.2f}")
        edges = extract_edges(sc.label_map)
        print(f"edge pixels: {int(edges.sum())} of {edges.size}")
        cond = make_conditions(sc)
        print(f"conditions: labels {cond.label_map.shape}, edges {cond.edge_map.shape}\n")

    again = generate_scene(5001, cfg)
    base = generate_scene(5001, cfg)
    print(f"same seed, same bytes: {again.image.tobytes() == base.image.tobytes()}")


if __name__ == "__main__":
    main()
