"""Writing run artifacts: CSV fields and metrics, error-colored PLY, JSON summaries, manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from meshfield.mesh import TriangleMesh
from meshfield.meshio import write_ply

# viridis sampled at 0, .25, .5, .75, 1
_RAMP = np.array(
    [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]],
    dtype=np.float64,
)


def error_colors(errors, clip: float) -> np.ndarray:
    """Map errors in [0, clip] onto the ramp; larger errors saturate."""
    if not clip > 0:
        raise ValueError("clip must be positive")
    t = np.clip(np.asarray(errors, dtype=np.float64) / clip, 0.0, 1.0) * (len(_RAMP) - 1)
    i = np.minimum(np.floor(t).astype(int), len(_RAMP) - 2)
    f = (t - i)[:, None]
    return np.round(_RAMP[i] * (1 - f) + _RAMP[i + 1] * f).astype(np.uint8)


def field_colors(values) -> np.ndarray:
    """uint8 preview colors for an rgb (or any <=3-channel) field in [0, 1]."""
    v = np.asarray(values, dtype=np.float64)
    if v.shape[1] < 3:
        v = np.concatenate([v, np.zeros((len(v), 3 - v.shape[1]))], axis=1)
    return np.round(np.clip(v[:, :3], 0, 1) * 255).astype(np.uint8)


def write_field_csv(path, values) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vertex_id"] + [f"c{i}" for i in range(values.shape[1])])
        for i, row in enumerate(values.tolist()):
            w.writerow([i] + [repr(x) for x in row])


def read_field_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.asarray([[float(x) for x in r[1:]] for r in rows[1:]], dtype=np.float64)


def write_vertex_errors(path, errors) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vertex_id", "error"])
        for i, e in enumerate(np.asarray(errors, dtype=np.float64).tolist()):
            w.writerow([i, repr(e)])


def write_face_metrics(path, uv) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["face_id", "area_d", "angle_d", "flipped"])
        for i, (a, g, f, ok) in enumerate(zip(uv.area_d.tolist(), uv.angle_d.tolist(), uv.flipped.tolist(), uv.valid.tolist())):
            if ok:
                w.writerow([i, repr(a), repr(g), int(f)])


def write_losses(path, losses) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])


def write_json(path, data) -> None:
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.generic, np.ndarray)):
        return _jsonable(obj.tolist())
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_error_ply(path, mesh: TriangleMesh, errors, clip: float) -> None:
    write_ply(mesh, path, colors=error_colors(errors, clip), binary=True)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, config: dict, seed, inputs, outputs, timings: dict) -> Path:
    """Write manifest.json last, via atomic rename, listing every emitted artifact."""
    out_dir = Path(out_dir)
    entries = []
    for p in outputs:
        p = Path(p)
        entries.append({"path": p.name if p.parent == out_dir else str(p), "sha256": sha256_file(p), "bytes": p.stat().st_size})
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": entries,
        "timings": timings,
    }
    path = out_dir / "manifest.json"
    write_json(path, manifest)
    return path
