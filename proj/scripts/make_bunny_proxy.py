#!/usr/bin/env python3
"""Writes data/bunny_proxy.ply: a closed bunny-like surface (body, head, ears, tail).

Smooth union of ellipsoids, triangulated with marching cubes. Used when the
Stanford bunny (scripts/fetch_bunny.sh) is not available.
"""
import argparse
import pathlib

import numpy as np
from skimage import measure

# center (x, y, z), semi-axes (a, b, c)
PARTS = [
    ((0.00, 0.00, 0.00), (0.55, 0.40, 0.42)),   # body
    ((0.45, 0.00, 0.30), (0.28, 0.24, 0.24)),   # head
    ((0.40, -0.09, 0.72), (0.07, 0.05, 0.30)),  # ear
    ((0.46, 0.10, 0.70), (0.07, 0.05, 0.28)),   # ear
    ((-0.58, 0.00, 0.05), (0.12, 0.12, 0.12)),  # tail
    ((0.25, -0.20, -0.35), (0.18, 0.10, 0.10)),  # front paw
    ((0.25, 0.20, -0.35), (0.18, 0.10, 0.10)),  # front paw
]
SMOOTHING = 0.06


def field(x, y, z):
    d = []
    for (cx, cy, cz), (a, b, c) in PARTS:
        r = np.sqrt(((x - cx) / a) ** 2 + ((y - cy) / b) ** 2 + ((z - cz) / c) ** 2)
        d.append((r - 1.0) * min(a, b, c))
    d = np.stack(d)
    # soft minimum
    return -SMOOTHING * np.log(np.sum(np.exp(-d / SMOOTHING), axis=0))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data" / "bunny_proxy.ply"))
    ap.add_argument("--resolution", type=int, default=72)
    args = ap.parse_args()
    g = np.linspace(-1.1, 1.1, args.resolution)
    x, y, z = np.meshgrid(g, g, g, indexing="ij")
    verts, faces, _, _ = measure.marching_cubes(field(x, y, z), level=0.0, spacing=(g[1] - g[0],) * 3)
    verts += g[0]
    with open(args.out, "w") as fh:
        fh.write("ply\nformat ascii 1.0\ncomment bunny proxy: smooth union of ellipsoids\n")
        fh.write(f"element vertex {len(verts)}\nproperty float x\nproperty float y\nproperty float z\n")
        fh.write(f"element face {len(faces)}\nproperty list uchar int vertex_indices\nend_header\n")
        for v in verts:
            fh.write(f"{v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
        for f in faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")
    print(f"wrote {len(verts)} vertices, {len(faces)} faces to {args.out}")


if __name__ == "__main__":
    main()
