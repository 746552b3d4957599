"""Synthetic target fields: gradient noise and hue patchworks."""

from __future__ import annotations

import numpy as np

from meshfield.errors import ConstantField, ShapeMismatch
from meshfield.mesh import TriangleMesh, VertexField, VertexPartition

# gradient directions of the improved noise: the 12 cube edge midpoints,
# padded to 16 entries so the hash can be masked with 15
_GRAD3 = np.array(
    [
        [1, 1, 0], [-1, 1, 0], [1, -1, 0], [-1, -1, 0],
        [1, 0, 1], [-1, 0, 1], [1, 0, -1], [-1, 0, -1],
        [0, 1, 1], [0, -1, 1], [0, 1, -1], [0, -1, -1],
        [1, 1, 0], [0, -1, 1], [-1, 1, 0], [0, -1, -1],
    ],
    dtype=np.float64,
)


def _fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


def perlin3(points, seed: int = 0) -> np.ndarray:
    """Classic 3D gradient noise at ``points`` (k x 3), one octave."""
    p = np.asarray(points, dtype=np.float64)
    perm = np.random.default_rng(seed).permutation(256)
    perm = np.concatenate([perm, perm])
    cell = np.floor(p)
    frac = p - cell
    ci = cell.astype(np.int64) & 255
    u, v, w = (_fade(frac[:, k]) for k in range(3))

    def corner(dx, dy, dz):
        h = perm[perm[perm[ci[:, 0] + dx] + ci[:, 1] + dy] + ci[:, 2] + dz] & 15
        offset = frac - np.array([dx, dy, dz], dtype=np.float64)
        return (_GRAD3[h] * offset).sum(1)

    def lerp(t, a, b):
        return a + t * (b - a)

    x00 = lerp(u, corner(0, 0, 0), corner(1, 0, 0))
    x10 = lerp(u, corner(0, 1, 0), corner(1, 1, 0))
    x01 = lerp(u, corner(0, 0, 1), corner(1, 0, 1))
    x11 = lerp(u, corner(0, 1, 1), corner(1, 1, 1))
    out = lerp(w, lerp(v, x00, x10), lerp(v, x01, x11))
    return np.clip(out, -1.0, 1.0)


def perlin_scalar(mesh: TriangleMesh, frequency: float, seed: int = 0) -> VertexField:
    if not frequency > 0:
        raise ValueError("frequency must be positive")
    return VertexField(perlin3(mesh.vertices * frequency, seed), "scalar")


def hsv_to_rgb(h, s=1.0, v=1.0) -> np.ndarray:
    """Vectorized HSV to RGB; ``h`` in [0, 1] (1 wraps to red)."""
    h = np.asarray(h, dtype=np.float64)
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), h.shape)
    v = np.broadcast_to(np.asarray(v, dtype=np.float64), h.shape)
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    table = np.stack(
        [
            np.stack([v, t, p], -1),
            np.stack([q, v, p], -1),
            np.stack([p, v, t], -1),
            np.stack([p, q, v], -1),
            np.stack([t, p, v], -1),
            np.stack([v, p, q], -1),
        ]
    )
    return np.take_along_axis(table, i[None, ..., None], axis=0)[0]


def patchwork(partition: VertexPartition, group_fields) -> np.ndarray:
    """Piecewise scalar function taking group ``i``'s values on group ``i``."""
    if len(group_fields) != partition.group_count:
        raise ShapeMismatch(f"need {partition.group_count} group fields, got {len(group_fields)}")
    q = np.empty(len(partition.labels))
    for i, g in enumerate(group_fields):
        vals = np.asarray(getattr(g, "values", g), dtype=np.float64).reshape(len(q), -1)
        if vals.shape[1] != 1:
            raise ShapeMismatch("group fields must be scalar")
        idx = partition.group(i)
        q[idx] = vals[idx, 0]
    return q


def synth_patchwork_rgb(mesh: TriangleMesh, partition: VertexPartition, group_fields, on_constant: str = "raise") -> VertexField:
    """Map a normalized patchwork function to RGB through the hue channel.

    A patchwork with no spread (relative to its magnitude) raises
    ``ConstantField`` unless ``on_constant="uniform"``, in which case every
    vertex gets hue 0.
    """
    if len(partition.labels) != mesh.n_vertices:
        raise ShapeMismatch("partition does not match mesh")
    q = patchwork(partition, group_fields)
    lo, hi = q.min(), q.max()
    if hi - lo <= 1e-10 * max(1.0, np.abs(q).max()):
        if on_constant != "uniform":
            raise ConstantField("patchwork function is constant; hue normalization is undefined")
        hue = np.zeros_like(q)
    else:
        hue = (q - lo) / (hi - lo)
    return VertexField(np.clip(hsv_to_rgb(hue), 0.0, 1.0), "rgb")
