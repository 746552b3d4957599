"""Training losses and evaluation metrics (vertex error CDFs, UV distortion)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from meshfield import autodiff as ad
from meshfield.errors import EmptySubset, ShapeMismatch, ZeroVector
from meshfield.mesh import TriangleMesh

DEGENERATE_UV_AREA = 1e-14


def loss_mse(y, y_target) -> ad.Node:
    """(1/n) * sum_v ||y(v) - y_target(v)||^2, averaged over vertices only."""
    y = ad.as_node(y)
    t = np.asarray(getattr(y_target, "value", y_target), dtype=np.float64)
    if y.shape != t.shape:
        raise ShapeMismatch(f"prediction {y.shape} vs target {t.shape}")
    d = ad.sub(y, t)
    return ad.mul(ad.sum(ad.mul(d, d)), 1.0 / y.shape[0])


def loss_cosine(y, y_n) -> ad.Node:
    """Mean cosine distance 1 - <y, y_n> / (|y| |y_n|) over rows; lies in [0, 2]."""
    y = ad.as_node(y)
    t = np.asarray(getattr(y_n, "value", y_n), dtype=np.float64)
    if y.shape != t.shape:
        raise ShapeMismatch(f"prediction {y.shape} vs target {t.shape}")
    tn = np.linalg.norm(t, axis=1)
    if (tn == 0).any():
        raise ZeroVector(f"target row {int(np.argmin(tn))} is the zero vector")
    yn = ad.l2_norm(y, axis=1)
    if (yn.value < 1e-12).any():
        raise ZeroVector(f"predicted row {int(np.argmin(yn.value))} has near-zero norm")
    cos = ad.div(ad.dot(y, t / tn[:, None], axis=1), yn)
    return ad.sub(1.0, ad.mean(cos))


def per_vertex_error(y, y_target) -> np.ndarray:
    """Channel-mean squared error per vertex."""
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(y_target, dtype=np.float64)
    if y.shape != t.shape:
        raise ShapeMismatch(f"prediction {y.shape} vs target {t.shape}")
    return ((y - t) ** 2).mean(axis=1)


def per_vertex_cosine(y, y_n) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    t = np.asarray(y_n, dtype=np.float64)
    return 1.0 - (y * t).sum(1) / (np.linalg.norm(y, axis=1) * np.linalg.norm(t, axis=1))


@dataclass(frozen=True)
class CdfCurve:
    x: np.ndarray  # sorted relative errors
    y: np.ndarray  # fraction of vertices with relative error <= x

    def __call__(self, value) -> np.ndarray:
        """Right-continuous step evaluation."""
        idx = np.searchsorted(self.x, value, side="right")
        return np.where(idx == 0, 0.0, self.y[np.maximum(idx - 1, 0)])


def vertex_error_cdf(errors, subsets=None, normalizer=None) -> list:
    """Empirical CDFs of ``errors / normalizer``, one per subset of vertex indices.

    ``normalizer`` is the maximal error over all compared models; it defaults
    to the maximum of ``errors`` itself.
    """
    errors = np.asarray(errors, dtype=np.float64)
    if normalizer is None:
        normalizer = float(errors.max()) if errors.size else 0.0
    if not normalizer > 0:
        raise ValueError("normalizer must be positive")
    if subsets is None:
        subsets = [np.arange(len(errors))]
    curves = []
    for s in subsets:
        e = np.sort(errors[np.asarray(s, dtype=np.int64)]) / normalizer
        if e.size == 0:
            raise EmptySubset("cannot build a CDF over an empty vertex subset")
        # duplicates collapse to the last (largest) cumulative fraction
        frac = np.arange(1, e.size + 1) / e.size
        keep = np.append(e[1:] != e[:-1], True)
        curves.append(CdfCurve(e[keep], frac[keep]))
    return curves


@dataclass(frozen=True)
class UVDistortion:
    area_d: np.ndarray
    angle_d: np.ndarray
    flipped: np.ndarray
    valid: np.ndarray  # faces with non-degenerate ground-truth UVs
    pred_degenerate: np.ndarray

    @property
    def flipped_percent(self) -> float:
        n = int(self.valid.sum())
        return 100.0 * float(self.flipped[self.valid].sum()) / n if n else 0.0

    @property
    def gt_degenerate_count(self) -> int:
        return int((~self.valid).sum())

    def summary(self) -> dict:
        ok = self.valid & ~self.pred_degenerate
        return {
            "flipped_percent": self.flipped_percent,
            "area_distortion_mean": float(self.area_d[ok].mean()) if ok.any() else 0.0,
            "area_distortion_median": float(np.median(self.area_d[ok])) if ok.any() else 0.0,
            "angle_distortion_mean": float(self.angle_d[ok].mean()) if ok.any() else 0.0,
            "angle_distortion_median": float(np.median(self.angle_d[ok])) if ok.any() else 0.0,
            "gt_degenerate_faces": self.gt_degenerate_count,
            "pred_degenerate_faces": int((self.pred_degenerate & self.valid).sum()),
        }


def _signed_areas(uv, faces):
    a, b, c = uv[faces[:, 0]], uv[faces[:, 1]], uv[faces[:, 2]]
    e1, e2 = b - a, c - a
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def triangle_angles_2d(uv, faces) -> np.ndarray:
    """Interior angles (f x 3), corner k opposite edge (k+1, k+2)."""
    out = np.empty((len(faces), 3))
    for k in range(3):
        p = uv[faces[:, k]]
        u = uv[faces[:, (k + 1) % 3]] - p
        w = uv[faces[:, (k + 2) % 3]] - p
        denom = np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1)
        cos = np.divide((u * w).sum(1), denom, out=np.ones(len(faces)), where=denom > 0)
        out[:, k] = np.arccos(np.clip(cos, -1.0, 1.0))
    return out


def uv_distortion(mesh: TriangleMesh, uv_pred, uv_gt) -> UVDistortion:
    """Per-face area distortion, angle distortion and orientation flips of a UV map.

    Faces whose predicted UV triangle has zero area count as flipped with
    infinite distortion; faces degenerate in the ground truth are excluded.
    """
    uv_pred = np.asarray(uv_pred, dtype=np.float64)
    uv_gt = np.asarray(uv_gt, dtype=np.float64)
    if uv_pred.shape != (mesh.n_vertices, 2) or uv_gt.shape != uv_pred.shape:
        raise ShapeMismatch(f"UV arrays must be {mesh.n_vertices} x 2")
    f = mesh.faces
    sa_gt = _signed_areas(uv_gt, f)
    sa_pred = _signed_areas(uv_pred, f)
    valid = np.abs(sa_gt) >= DEGENERATE_UV_AREA
    pred_deg = np.abs(sa_pred) < DEGENERATE_UV_AREA

    with np.errstate(divide="ignore", invalid="ignore"):
        area_d = np.abs(1.0 - np.abs(sa_gt) / np.abs(sa_pred))
        ratios = triangle_angles_2d(uv_gt, f) / triangle_angles_2d(uv_pred, f)
        angle_d = np.abs(1.0 - ratios.mean(axis=1))
    area_d[pred_deg] = np.inf
    angle_d[pred_deg] = np.inf
    flipped = (np.sign(sa_pred) != np.sign(sa_gt)) | pred_deg
    flipped &= valid
    return UVDistortion(area_d, angle_d, flipped, valid, pred_deg)
