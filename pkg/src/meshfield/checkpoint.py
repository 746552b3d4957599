"""MFCK1 checkpoint container.

Layout (little-endian)::

    b"MFCK1"
    u32 metadata length, UTF-8 JSON metadata (sorted keys)
    u32 tensor count
    per tensor: u16 name length, name, u8 rank, rank x u32 dims, float64 values

Tensors are the model parameters followed by the Adam moments, stored under
``adam.m/<name>`` and ``adam.v/<name>``.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from meshfield.autodiff import Parameter
from meshfield.errors import CheckpointError, MeshFieldError
from meshfield.model import FieldModel, ModelConfig
from meshfield.optim import AdamState
from meshfield.spectral import SpectrumBands

MAGIC = b"MFCK1"


def _pack_tensor(name, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    raw = name.encode("utf-8")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def dumps(model: FieldModel, adam: AdamState | None = None, iteration: int = 0, extra: dict | None = None) -> bytes:
    adam = adam or AdamState()
    meta = {
        "format": "MFCK1",
        "model": model.config.to_dict(),
        "bands": [list(b) for b in model.bands.ranges],
        "t_base": model.t_base,
        "seed": model.seed,
        "iteration": int(iteration),
        "adam": {"beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps, "step": adam.step},
        "parameters": list(model.params),
        "extra": extra or {},
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    tensors = [(name, p.value) for name, p in model.params.items()]
    for name in model.params:
        if name in adam.m:
            tensors += [(f"adam.m/{name}", adam.m[name]), (f"adam.v/{name}", adam.v[name])]
    out = [MAGIC, struct.pack("<I", len(blob)), blob, struct.pack("<I", len(tensors))]
    out += [_pack_tensor(n, a) for n, a in tensors]
    return b"".join(out)


def save_checkpoint(path, model: FieldModel, adam: AdamState | None = None, iteration: int = 0, extra: dict | None = None) -> None:
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(dumps(model, adam, iteration, extra))
    os.replace(tmp, path)


def loads(raw: bytes):
    """Return (model, adam_state, iteration, metadata)."""
    if raw[:5] != MAGIC:
        raise CheckpointError("not an MFCK1 checkpoint")
    try:
        (mlen,) = struct.unpack_from("<I", raw, 5)
        off = 9
        meta = json.loads(raw[off : off + mlen].decode("utf-8"))
        off += mlen
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off : off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", raw, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", raw, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if off + 8 * size > len(raw):
                raise CheckpointError(f"tensor {name!r} is truncated")
            tensors[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).copy()
            off += 8 * size
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc

    try:
        return _rebuild(meta, tensors)
    except (KeyError, TypeError, ValueError, MeshFieldError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"inconsistent checkpoint metadata: {exc!r}") from exc


def _rebuild(meta, tensors):
    config = ModelConfig.from_dict(meta["model"]).validate()
    params = {}
    for name in meta["parameters"]:
        if name not in tensors:
            raise CheckpointError(f"missing tensor {name!r}")
        params[name] = Parameter(tensors[name], name)
    a = meta["adam"]
    adam = AdamState(beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=a["step"])
    for name in params:
        if f"adam.m/{name}" in tensors:
            adam.m[name] = tensors[f"adam.m/{name}"]
            adam.v[name] = tensors[f"adam.v/{name}"]
    bands = SpectrumBands(tuple(tuple(b) for b in meta["bands"]))
    model = FieldModel(config, params, bands, meta["t_base"], meta["seed"], meta.get("extra", {}))
    return model, adam, meta["iteration"], meta


def load_checkpoint(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
    return loads(raw)
