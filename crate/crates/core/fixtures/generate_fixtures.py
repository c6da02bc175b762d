#!/usr/bin/env python3
"""Generate the committed porescale mesh fixtures.

2D: a unit flow cell with three circular solid grains removed; vertices on
grain surfaces are tagged 1 (initial-biofilm region).
3D: a ball with two spherical holes, built from a Kuhn tetrahedralization
of a structured grid; vertices near the hole surfaces are tagged 1.

Plain-text format: `dim n_vertices n_cells`, one vertex per line
(coords + tag), one cell per line (0-based indices + tag).
"""

import math

GRAINS_2D = [(0.30, 0.62, 0.17), (0.68, 0.38, 0.15), (0.55, 0.80, 0.10)]
BALL = (0.5, 0.5, 0.5, 0.47)
HOLES_3D = [(0.36, 0.5, 0.5, 0.13), (0.64, 0.5, 0.5, 0.13)]


def inside_grain_2d(x, y, pad=0.0):
    return any((x - cx) ** 2 + (y - cy) ** 2 <= (r + pad) ** 2 for cx, cy, r in GRAINS_2D)


def write_mesh(path, dim, verts, tags, cells, ctags):
    used = sorted({v for c in cells for v in c})
    remap = {v: i for i, v in enumerate(used)}
    with open(path, "w") as f:
        f.write(f"{dim} {len(used)} {len(cells)}\n")
        for v in used:
            coords = " ".join(f"{c:.12g}" for c in verts[v])
            f.write(f"{coords} {tags[v]}\n")
        for c, t in zip(cells, ctags):
            f.write(" ".join(str(remap[v]) for v in c) + f" {t}\n")
    print(f"{path}: {len(used)} vertices, {len(cells)} cells")


def gen_2d(m=36):
    h = 1.0 / m
    verts, tags = [], []
    for j in range(m + 1):
        for i in range(m + 1):
            x, y = i * h, j * h
            verts.append((x, y))
            tags.append(1 if inside_grain_2d(x, y, pad=0.045) and not inside_grain_2d(x, y) else 0)
    idx = lambda i, j: j * (m + 1) + i
    cells, ctags = [], []
    for j in range(m):
        for i in range(m):
            for tri in ([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)],
                        [idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]):
                cx = sum(verts[v][0] for v in tri) / 3.0
                cy = sum(verts[v][1] for v in tri) / 3.0
                if not inside_grain_2d(cx, cy):
                    cells.append(tri)
                    ctags.append(0)
    # Drop biofilm tags on vertices that lost all their cells.
    write_mesh("porescale_2d.txt", 2, verts, tags, cells, ctags)


KUHN = [
    (0, 1, 3, 7), (0, 1, 5, 7), (0, 2, 3, 7),
    (0, 2, 6, 7), (0, 4, 5, 7), (0, 4, 6, 7),
]


def gen_3d(n=9):
    h = 1.0 / n
    verts, tags = [], []
    for k in range(n + 1):
        for j in range(n + 1):
            for i in range(n + 1):
                x, y, z = i * h, j * h, k * h
                verts.append((x, y, z))
                near_hole = any(
                    (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= (r + 0.12) ** 2
                    for cx, cy, cz, r in HOLES_3D
                )
                in_hole = any(
                    (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 < r ** 2
                    for cx, cy, cz, r in HOLES_3D
                )
                tags.append(1 if near_hole and not in_hole else 0)
    idx = lambda i, j, k: k * (n + 1) * (n + 1) + j * (n + 1) + i
    corners = lambda i, j, k: [
        idx(i, j, k), idx(i + 1, j, k), idx(i, j + 1, k), idx(i + 1, j + 1, k),
        idx(i, j, k + 1), idx(i + 1, j, k + 1), idx(i, j + 1, k + 1), idx(i + 1, j + 1, k + 1),
    ]

    def keep(centroid):
        x, y, z = centroid
        bx, by, bz, br = BALL
        if (x - bx) ** 2 + (y - by) ** 2 + (z - bz) ** 2 > br ** 2:
            return False
        return not any(
            (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= r ** 2
            for cx, cy, cz, r in HOLES_3D
        )

    def signed_vol(t):
        a, b, c, d = (verts[v] for v in t)
        e = [[b[i] - a[i] for i in range(3)],
             [c[i] - a[i] for i in range(3)],
             [d[i] - a[i] for i in range(3)]]
        det = (e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[2][1])
               - e[0][1] * (e[1][0] * e[2][2] - e[1][2] * e[2][0])
               + e[0][2] * (e[1][0] * e[2][1] - e[1][1] * e[2][0]))
        return det / 6.0

    cells, ctags = [], []
    for k in range(n):
        for j in range(n):
            for i in range(n):
                cube = corners(i, j, k)
                for tet in KUHN:
                    t = [cube[v] for v in tet]
                    cx = tuple(sum(verts[v][d] for v in t) / 4.0 for d in range(3))
                    if not keep(cx):
                        continue
                    if signed_vol(t) < 0:
                        t[0], t[1] = t[1], t[0]
                    assert signed_vol(t) > 0
                    cells.append(t)
                    ctags.append(0)
    write_mesh("ball_two_holes_3d.txt", 3, verts, tags, cells, ctags)


if __name__ == "__main__":
    gen_2d()
    gen_3d()
