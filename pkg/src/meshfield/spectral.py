"""Cotangent Laplacian, generalized eigenbasis, banded heat diffusion and tangent gradients."""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from meshfield.errors import ConvergenceFailure, DegenerateFace, IsolatedVertex, NegativeTime, ShapeMismatch
from meshfield.mesh import TriangleMesh, face_areas, vertex_normals

log = logging.getLogger(__name__)

COT_CLAMP = 1e6
EIG_SHIFT = 1e-8
DENSE_LIMIT = 2000
CACHE_MAGIC = b"MFSB1"


@dataclass(frozen=True, eq=False)
class LaplacianPair:
    L: sp.csr_matrix
    mass: np.ndarray  # diagonal of the lumped mass matrix
    clamped: int = 0  # number of cotangents clipped to COT_CLAMP

    @property
    def M(self) -> sp.dia_matrix:
        return sp.diags(self.mass)

    @property
    def n(self) -> int:
        return len(self.mass)


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    Phi: np.ndarray
    lam: np.ndarray

    @property
    def k(self) -> int:
        return len(self.lam)


@dataclass(frozen=True)
class SpectrumBands:
    ranges: tuple

    def __len__(self):
        return len(self.ranges)

    def __getitem__(self, i):
        return self.ranges[i]


@dataclass(frozen=True, eq=False)
class TangentGradientOperator:
    frame_x: np.ndarray
    frame_y: np.ndarray
    normals: np.ndarray
    Gx: sp.csr_matrix
    Gy: sp.csr_matrix

    def apply(self, u) -> np.ndarray:
        """Tangent-plane gradient of ``u``; shape (n, 2) for a scalar field, else (n, C, 2)."""
        u = np.asarray(u, dtype=np.float64)
        return np.stack([self.Gx @ u, self.Gy @ u], axis=-1)


def assemble_laplacian(mesh: TriangleMesh) -> LaplacianPair:
    """Positive semidefinite cotangent Laplacian and lumped (one-third area) mass."""
    v, f = mesh.vertices, mesh.faces
    n = mesh.n_vertices
    areas = face_areas(mesh)
    if (areas <= 0).any():
        raise DegenerateFace(int(np.nonzero(areas <= 0)[0][0]))
    rows, cols, vals = [], [], []
    clamped = 0
    for k in range(3):
        # angle at corner k is opposite edge (k+1, k+2)
        i, j, o = f[:, (k + 1) % 3], f[:, (k + 2) % 3], f[:, k]
        a, b = v[i] - v[o], v[j] - v[o]
        cot = (a * b).sum(1) / np.linalg.norm(np.cross(a, b), axis=1)
        over = np.abs(cot) > COT_CLAMP
        clamped += int(over.sum())
        cot = np.clip(cot, -COT_CLAMP, COT_CLAMP)
        w = -0.5 * cot
        rows += [i, j]
        cols += [j, i]
        vals += [w, w]
    off = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
    off.sum_duplicates()
    L = (off - sp.diags(np.asarray(off.sum(axis=1)).ravel())).tocsr()
    if clamped:
        log.warning("clamped %d cotangent weights to |cot| <= %g", clamped, COT_CLAMP)

    mass = np.zeros(n)
    for k in range(3):
        np.add.at(mass, f[:, k], areas / 3.0)
    if (mass <= 0).any():
        raise IsolatedVertex(int(np.nonzero(mass <= 0)[0][0]))
    return LaplacianPair(L, mass, clamped)


def solve_eigs(pair: LaplacianPair, k: int, seed: int = 0, dense_limit: int = DENSE_LIMIT) -> SpectralBasis:
    """The ``k`` smallest generalized eigenpairs of (L, M), M-orthonormal and ascending."""
    n = pair.n
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if n <= dense_limit or k >= n - 1:
        lam, Phi = scipy.linalg.eigh(pair.L.toarray(), np.diag(pair.mass), subset_by_index=[0, k - 1])
    else:
        v0 = np.random.default_rng(seed).standard_normal(n)
        try:
            _, Phi = spla.eigsh(pair.L, k=k, M=pair.M.tocsc(), sigma=-EIG_SHIFT, which="LM", v0=v0, tol=0)
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceFailure(f"eigsh did not converge for k={k}", exc.eigenvalues) from exc
        # Rayleigh-Ritz in the returned subspace: exact M-orthonormality and ordering
        A = Phi.T @ (pair.L @ Phi)
        B = Phi.T @ (pair.mass[:, None] * Phi)
        lam, R = scipy.linalg.eigh(0.5 * (A + A.T), 0.5 * (B + B.T))
        Phi = Phi @ R
    # tiny negative eigenvalues are rounding noise of the zero eigenvalue
    lam = np.where((lam < 0) & (lam > -1e-8), 0.0, lam)
    Phi = _fix_signs(Phi)
    res = eig_residuals(pair, SpectralBasis(Phi, lam))
    scale = np.maximum(1.0, np.abs(lam))
    if not (res <= 1e-6 * scale).all():
        raise ConvergenceFailure(f"eigenpair residuals too large (max {res.max():.3e})", res)
    return SpectralBasis(np.ascontiguousarray(Phi), lam)


def _fix_signs(Phi):
    # deterministic orientation: largest-magnitude entry of each column positive
    idx = np.argmax(np.abs(Phi), axis=0)
    signs = np.sign(Phi[idx, np.arange(Phi.shape[1])])
    signs[signs == 0] = 1
    return Phi * signs


def eig_residuals(pair: LaplacianPair, basis: SpectralBasis) -> np.ndarray:
    R = pair.L @ basis.Phi - (pair.mass[:, None] * basis.Phi) * basis.lam
    return np.linalg.norm(R, axis=0)


def split_spectrum(k_eig: int, n_levels: int) -> SpectrumBands:
    """Evenly split eigen-indices [0, k_eig) into ``n_levels`` contiguous bands.

    Boundaries are linspace(0, k_eig, N + 1) rounded half-up, computed in
    integer arithmetic so .5 cases are exact.
    """
    if n_levels < 1 or k_eig < n_levels:
        raise ValueError(f"need 1 <= N <= k_eig, got N={n_levels}, k_eig={k_eig}")
    r = [(2 * i * k_eig + n_levels) // (2 * n_levels) for i in range(n_levels + 1)]
    return SpectrumBands(tuple((r[i], r[i + 1]) for i in range(n_levels)))


def diffuse(basis: SpectralBasis, band, u, t, mass) -> np.ndarray:
    """Heat diffusion of each column of ``u`` for its own time, restricted to ``band``."""
    u = np.asarray(u, dtype=np.float64)
    squeeze = u.ndim == 1
    if squeeze:
        u = u[:, None]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (u.shape[1],))
    if (t < 0).any():
        raise NegativeTime(f"diffusion times must be >= 0, got {t.min()}")
    if u.shape[0] != basis.Phi.shape[0]:
        raise ShapeMismatch(f"field has {u.shape[0]} rows, basis has {basis.Phi.shape[0]}")
    lo, hi = band if band is not None else (0, basis.k)
    Phi = basis.Phi[:, lo:hi]
    lam = basis.lam[lo:hi]
    coeffs = Phi.T @ (np.asarray(mass)[:, None] * u)
    out = Phi @ (np.exp(-lam[:, None] * t[None, :]) * coeffs)
    return out[:, 0] if squeeze else out


def tangent_frames(mesh: TriangleMesh):
    normals = vertex_normals(mesh).values
    # project the global x axis (y axis where x is nearly normal) into each tangent plane
    fx = np.array([1.0, 0.0, 0.0])[None, :] - normals * normals[:, [0]]
    bad = np.linalg.norm(fx, axis=1) < 1e-6
    if bad.any():
        y = np.array([0.0, 1.0, 0.0])
        fx[bad] = y[None, :] - normals[bad] * normals[bad][:, [1]]
    fx /= np.linalg.norm(fx, axis=1, keepdims=True)
    fy = np.cross(normals, fx)
    return fx, fy, normals


def tangent_gradients(mesh: TriangleMesh) -> TangentGradientOperator:
    """One-ring least-squares gradient expressed in per-vertex tangent frames."""
    fx, fy, normals = tangent_frames(mesh)
    e = mesh.edges()
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    d = mesh.vertices[dst] - mesh.vertices[src]
    p = np.stack([(d * fx[src]).sum(1), (d * fy[src]).sum(1)], 1)
    n = mesh.n_vertices
    A = np.zeros((n, 2, 2))
    np.add.at(A, src, p[:, :, None] * p[:, None, :])
    A_inv = np.linalg.inv(A)
    w = np.einsum("eij,ej->ei", A_inv[src], p)
    # grad_i = sum_j w_ij (u_j - u_i)
    rows = np.concatenate([src, src])
    cols = np.concatenate([dst, src])
    Gx = sp.coo_matrix((np.concatenate([w[:, 0], -w[:, 0]]), (rows, cols)), shape=(n, n)).tocsr()
    Gy = sp.coo_matrix((np.concatenate([w[:, 1], -w[:, 1]]), (rows, cols)), shape=(n, n)).tocsr()
    return TangentGradientOperator(fx, fy, normals, Gx, Gy)


# -- basis cache -------------------------------------------------------------


def save_basis(basis: SpectralBasis, path) -> None:
    n, k = basis.Phi.shape
    payload = CACHE_MAGIC + struct.pack("<QQ", n, k)
    payload += np.ascontiguousarray(basis.Phi, dtype="<f8").tobytes()
    payload += np.ascontiguousarray(basis.lam, dtype="<f8").tobytes()
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def load_basis(path) -> SpectralBasis:
    raw = Path(path).read_bytes()
    if raw[:5] != CACHE_MAGIC:
        raise ValueError(f"{path} is not a spectral basis cache file")
    n, k = struct.unpack_from("<QQ", raw, 5)
    off = 5 + 16
    if len(raw) != off + 8 * (n * k + k):
        raise ValueError(f"{path} is truncated")
    Phi = np.frombuffer(raw, dtype="<f8", count=n * k, offset=off).reshape(n, k).copy()
    lam = np.frombuffer(raw, dtype="<f8", count=k, offset=off + 8 * n * k).copy()
    return SpectralBasis(Phi, lam)


def cached_eigs(mesh: TriangleMesh, pair: LaplacianPair, k: int, seed: int = 0, cache_dir=None) -> SpectralBasis:
    """solve_eigs with an optional on-disk cache keyed by mesh content and k."""
    cache_dir = cache_dir or os.environ.get("MESHFIELD_CACHE_DIR")
    if not cache_dir:
        return solve_eigs(pair, k, seed=seed)
    path = Path(cache_dir) / f"{mesh.content_hash()[:32]}_k{k}.mfsb"
    if path.exists():
        try:
            basis = load_basis(path)
            if basis.Phi.shape == (mesh.n_vertices, k):
                return basis
        except ValueError:
            log.warning("ignoring unreadable cache file %s", path)
    basis = solve_eigs(pair, k, seed=seed)
    Path(cache_dir).mkdir(parents=True, exist_ok=True)
    save_basis(basis, path)
    return basis


@dataclass(frozen=True, eq=False)
class MeshOperators:
    """Everything the model needs about one mesh, precomputed once."""

    vertices: np.ndarray
    mass: np.ndarray
    basis: SpectralBasis
    gradients: TangentGradientOperator | None
    mean_edge_length: float

    @property
    def n(self) -> int:
        return len(self.mass)


def precompute_operators(mesh: TriangleMesh, k_eig: int, with_gradients: bool = False, seed: int = 0) -> MeshOperators:
    pair = assemble_laplacian(mesh)
    basis = cached_eigs(mesh, pair, k_eig, seed=seed)
    grads = tangent_gradients(mesh) if with_gradients else None
    return MeshOperators(mesh.vertices, pair.mass, basis, grads, mesh.mean_edge_length())
