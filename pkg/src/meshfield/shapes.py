"""Procedural meshes used by tests, examples and the acceptance suite."""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull

from meshfield.mesh import TriangleMesh


def _outward(vertices, faces):
    # orient hull faces so normals point away from the centroid
    v = vertices
    n = np.cross(v[faces[:, 1]] - v[faces[:, 0]], v[faces[:, 2]] - v[faces[:, 0]])
    c = v[faces].mean(1) - v.mean(0)
    flip = (n * c).sum(1) < 0
    faces = faces.copy()
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


def sphere(n: int = 1000, radius: float = 1.0) -> TriangleMesh:
    """Fibonacci-lattice sphere with exactly ``n`` vertices."""
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5**0.5) * i
    v = radius * np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], 1)
    faces = ConvexHull(v).simplices.astype(np.int64)
    return TriangleMesh(v, _outward(v, faces))


def bumpy_sphere(n: int = 1000, amplitude: float = 0.15, frequency: int = 3) -> TriangleMesh:
    """Sphere with a radial bump pattern; star-shaped so the hull connectivity stays valid."""
    base = sphere(n)
    v = base.vertices
    r = 1 + amplitude * np.sin(frequency * v[:, 0] * np.pi) * np.cos(frequency * v[:, 1] * np.pi) * np.sin(frequency * v[:, 2])
    return TriangleMesh(v * r[:, None], base.faces)


def icosahedron() -> TriangleMesh:
    t = (1 + 5**0.5) / 2
    v = np.array(
        [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
         [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
         [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]],
        dtype=np.float64,
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]],
        dtype=np.int64,
    )
    return TriangleMesh(v, _outward(v, f))


def tetrahedron() -> TriangleMesh:
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=np.float64)
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]], dtype=np.int64)
    return TriangleMesh(v, f)


def torus(n_major: int = 32, n_minor: int = 16, major: float = 1.0, minor: float = 0.35) -> TriangleMesh:
    a = 2 * np.pi * np.arange(n_major) / n_major
    b = 2 * np.pi * np.arange(n_minor) / n_minor
    A, B = np.meshgrid(a, b, indexing="ij")
    v = np.stack(
        [(major + minor * np.cos(B)) * np.cos(A), (major + minor * np.cos(B)) * np.sin(A), minor * np.sin(B)], -1
    ).reshape(-1, 3)
    i, j = np.meshgrid(np.arange(n_major), np.arange(n_minor), indexing="ij")
    i2, j2 = (i + 1) % n_major, (j + 1) % n_minor
    idx = lambda p, q: (p * n_minor + q).ravel()  # noqa: E731
    f = np.concatenate(
        [np.stack([idx(i, j), idx(i2, j), idx(i2, j2)], 1), np.stack([idx(i, j), idx(i2, j2), idx(i, j2)], 1)]
    )
    return TriangleMesh(v, f)


def grid(nx: int = 10, ny: int = 10, size: float = 1.0, jitter: float = 0.0, seed: int = 0) -> TriangleMesh:
    """Flat triangulated square in the z=0 plane with counter-clockwise faces."""
    xs = np.linspace(0, size, nx)
    ys = np.linspace(0, size, ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    v = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], 1)
    if jitter:
        rng = np.random.default_rng(seed)
        inner = (X.ravel() > 0) & (X.ravel() < size) & (Y.ravel() > 0) & (Y.ravel() < size)
        v[inner, :2] += rng.uniform(-jitter, jitter, (inner.sum(), 2)) * size / max(nx, ny)
    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
    idx = lambda p, q: (p * ny + q).ravel()  # noqa: E731
    f = np.concatenate(
        [np.stack([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)], 1), np.stack([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)], 1)]
    )
    return TriangleMesh(v, f)


def union(*meshes: TriangleMesh) -> TriangleMesh:
    verts, faces, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += m.n_vertices
    return TriangleMesh(np.concatenate(verts), np.concatenate(faces))


def translated(mesh: TriangleMesh, shift) -> TriangleMesh:
    return TriangleMesh(mesh.vertices + np.asarray(shift, dtype=np.float64), mesh.faces, mesh.uv)
