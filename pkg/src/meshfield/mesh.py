"""Triangle meshes, per-vertex fields and the geometric operations on them."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from meshfield.errors import DegenerateFace, EmptyMesh, IsolatedVertex, ParseError, ShapeMismatch

# minimum face area on the unit-radius normalized mesh
MIN_FACE_AREA = 1e-12

CHANNELS = {"rgb": 3, "uv": 2, "normal": 3, "scalar": 1}


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    uv: np.ndarray | None = None
    source_path: str = ""

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ShapeMismatch(f"vertices must be n x 3, got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ShapeMismatch(f"faces must be f x 3, got {f.shape}")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.uv is not None:
            uv = np.ascontiguousarray(self.uv, dtype=np.float64)
            if uv.shape != (len(v), 2):
                raise ShapeMismatch(f"uv must be {len(v)} x 2, got {uv.shape}")
            object.__setattr__(self, "uv", uv)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def validate(self) -> "TriangleMesh":
        """Check index range, repeated indices and face areas; return self."""
        n = self.n_vertices
        f = self.faces
        if f.size and (f.min() < 0 or f.max() >= n):
            bad = int(np.nonzero((f < 0).any(1) | (f >= n).any(1))[0][0])
            raise ParseError(f"face {bad} references a vertex outside [0, {n})")
        rep = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        if rep.any():
            raise DegenerateFace(int(np.nonzero(rep)[0][0]), "repeated vertex index")
        if len(f):
            centered = self.vertices - self.vertices.mean(0)
            radius = np.sqrt((centered**2).sum(1).max())
            areas = face_areas(self) / max(radius, 1e-300) ** 2
            small = areas <= MIN_FACE_AREA
            if small.any():
                raise DegenerateFace(int(np.nonzero(small)[0][0]))
        return self

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        h.update(self.faces.tobytes())
        if self.uv is not None:
            h.update(self.uv.tobytes())
        return h.hexdigest()

    def edges(self) -> np.ndarray:
        """Unique undirected edges as an (e, 2) array with row[0] < row[1]."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def mean_edge_length(self) -> float:
        e = self.edges()
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())


@dataclass(frozen=True, eq=False)
class VertexField:
    values: np.ndarray
    channel_semantics: str = "scalar"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if self.channel_semantics not in CHANNELS:
            raise ValueError(f"unknown channel semantics {self.channel_semantics!r}")
        if vals.shape[1] != CHANNELS[self.channel_semantics]:
            raise ShapeMismatch(
                f"{self.channel_semantics} field needs {CHANNELS[self.channel_semantics]} channels, got {vals.shape[1]}"
            )
        if not np.isfinite(vals).all():
            raise ValueError("vertex field contains non-finite values")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class VertexPartition:
    labels: np.ndarray
    group_count: int = field(default=1)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= self.group_count):
            raise ValueError("labels must lie in [0, group_count)")
        object.__setattr__(self, "labels", labels)

    def group(self, i: int) -> np.ndarray:
        return np.nonzero(self.labels == i)[0]


def face_areas(mesh: TriangleMesh) -> np.ndarray:
    return 0.5 * np.linalg.norm(_face_cross(mesh), axis=1)


def _face_cross(mesh):
    v = mesh.vertices
    f = mesh.faces
    return np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])


def normalize_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Center the vertex centroid at the origin and scale to unit max radius."""
    if mesh.n_vertices < 3:
        raise EmptyMesh(f"need at least 3 vertices, got {mesh.n_vertices}")
    v = mesh.vertices - mesh.vertices.mean(axis=0)
    # second centering pass removes the rounding residue of the first
    v = v - v.mean(axis=0)
    radius = np.sqrt((v**2).sum(1).max())
    if radius == 0:
        raise EmptyMesh("all vertices coincide")
    return replace(mesh, vertices=v / radius)


def vertex_normals(mesh: TriangleMesh) -> VertexField:
    """Area-weighted vertex normals (unit length)."""
    cross = _face_cross(mesh)  # |cross| = 2 * area, so summing it weights by area
    acc = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], cross)
    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[mesh.faces.ravel()] = True
    if not used.all():
        raise IsolatedVertex(int(np.nonzero(~used)[0][0]))
    norms = np.linalg.norm(acc, axis=1, keepdims=True)
    return VertexField(acc / norms, "normal")


def subdivide_threshold(mesh: TriangleMesh, edge_threshold: float) -> TriangleMesh:
    """Midpoint-split every edge longer than ``edge_threshold``.

    Faces are retriangulated by the number of split edges (1 -> 2, 2 -> 3,
    3 -> 4). Vertex attributes such as UVs are dropped.
    """
    if not edge_threshold > 0:
        raise ValueError("edge_threshold must be positive")
    v = mesh.vertices
    edges = mesh.edges()
    lengths = np.linalg.norm(v[edges[:, 0]] - v[edges[:, 1]], axis=1)
    split = edges[lengths > edge_threshold]
    if len(split) == 0:
        return TriangleMesh(v.copy(), mesh.faces.copy(), None, mesh.source_path)

    n = mesh.n_vertices
    midpoint = {(int(a), int(b)): n + i for i, (a, b) in enumerate(split)}
    new_v = np.concatenate([v, 0.5 * (v[split[:, 0]] + v[split[:, 1]])])

    def mid(a, b):
        return midpoint.get((a, b) if a < b else (b, a))

    def d2(a, b):
        return float(((new_v[a] - new_v[b]) ** 2).sum())

    out = []
    for face in mesh.faces.tolist():
        mids = [mid(face[k], face[(k + 1) % 3]) for k in range(3)]
        count = sum(m is not None for m in mids)
        if count == 0:
            out.append(face)
            continue
        if count == 3:
            a, b, c = face
            mab, mbc, mca = mids
            out += [[a, mab, mca], [mab, b, mbc], [mca, mbc, c], [mab, mbc, mca]]
            continue
        # rotate so the pattern starts at edge 0
        if count == 1:
            r = next(k for k in range(3) if mids[k] is not None)
        else:
            r = next(k for k in range(3) if mids[k] is not None and mids[(k + 1) % 3] is not None)
        a, b, c = face[r], face[(r + 1) % 3], face[(r + 2) % 3]
        m0, m1 = mids[r], mids[(r + 1) % 3]
        if count == 1:
            out += [[a, m0, c], [m0, b, c]]
        else:
            out.append([m0, b, m1])
            # quad a, m0, m1, c: cut along the shorter diagonal
            if d2(a, m1) <= d2(m0, c):
                out += [[a, m0, m1], [a, m1, c]]
            else:
                out += [[a, m0, c], [m0, m1, c]]
    return TriangleMesh(new_v, np.asarray(out, dtype=np.int64), None, mesh.source_path)


def partition_by_x(mesh: TriangleMesh, thresholds) -> VertexPartition:
    """Label each vertex by how many thresholds lie at or below its x coordinate."""
    t = np.asarray(thresholds, dtype=np.float64).ravel()
    if len(t) > 1 and not (np.diff(t) > 0).all():
        raise ValueError("thresholds must be strictly increasing")
    labels = np.searchsorted(t, mesh.vertices[:, 0], side="right")
    return VertexPartition(labels, len(t) + 1)
