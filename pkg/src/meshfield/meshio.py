"""OBJ and PLY readers/writers."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from meshfield.errors import ParseError
from meshfield.mesh import TriangleMesh


def load_mesh(path, format: str | None = None, validate: bool = True) -> TriangleMesh:
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "obj":
        mesh = read_obj(path)
    elif fmt == "ply":
        mesh = read_ply(path)
    else:
        raise ParseError(f"unsupported mesh format {fmt!r}")
    return mesh.validate() if validate else mesh


def save_mesh(mesh: TriangleMesh, path, colors=None, binary: bool = True) -> None:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        write_obj(mesh, path)
    elif path.suffix.lower() == ".ply":
        write_ply(mesh, path, colors=colors, binary=binary)
    else:
        raise ValueError(f"cannot infer mesh format from {path}")


# -- OBJ ---------------------------------------------------------------------


def _obj_index(token, count, line_no):
    try:
        i = int(token)
    except ValueError:
        raise ParseError(f"bad index {token!r}", line_no) from None
    if i == 0:
        raise ParseError("OBJ indices are one-based; got 0", line_no)
    i = i - 1 if i > 0 else count + i
    if not 0 <= i < count:
        raise ParseError(f"index {token} out of range (have {count})", line_no)
    return i


def read_obj(path) -> TriangleMesh:
    verts, tex, corners = [], [], []
    with open(path, encoding="utf-8", errors="replace") as fh:
        for line_no, raw in enumerate(fh, 1):
            parts = raw.split("#", 1)[0].split()
            if not parts:
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    verts.append([float(x) for x in parts[1:4]])
                    if len(verts[-1]) != 3:
                        raise ValueError
                elif tag == "vt":
                    tex.append([float(x) for x in parts[1:3]])
                    if len(tex[-1]) != 2:
                        raise ValueError
                elif tag == "f":
                    poly = []
                    for tok in parts[1:]:
                        sub = tok.split("/")
                        vi = _obj_index(sub[0], len(verts), line_no)
                        ti = _obj_index(sub[1], len(tex), line_no) if len(sub) > 1 and sub[1] else None
                        poly.append((vi, ti))
                    if len(poly) < 3:
                        raise ParseError("face with fewer than 3 vertices", line_no)
                    for k in range(1, len(poly) - 1):
                        corners.append((poly[0], poly[k], poly[k + 1]))
            except ValueError:
                raise ParseError(f"malformed {tag!r} record", line_no) from None

    vertices = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    has_vt = [c[1] is not None for face in corners for c in face]
    if not any(has_vt):
        faces = np.asarray([[c[0] for c in face] for face in corners], dtype=np.int64).reshape(-1, 3)
        return TriangleMesh(vertices, faces, None, str(path))
    if not all(has_vt):
        raise ParseError("some face corners carry texture indices and some do not")

    # seam splitting: one output vertex per distinct (v, vt) pair; the first
    # pair seen for a vertex keeps its index, later ones are appended
    first_vt = {}
    extra = {}
    extra_src = []
    faces = []
    for face in corners:
        row = []
        for vi, ti in face:
            if vi not in first_vt:
                first_vt[vi] = ti
            if first_vt[vi] == ti:
                row.append(vi)
            else:
                key = (vi, ti)
                if key not in extra:
                    extra[key] = len(vertices) + len(extra_src)
                    extra_src.append(key)
                row.append(extra[key])
        faces.append(row)
    tex = np.asarray(tex, dtype=np.float64).reshape(-1, 2)
    uv = np.zeros((len(vertices) + len(extra_src), 2))
    for vi, ti in first_vt.items():
        uv[vi] = tex[ti]
    if extra_src:
        src = np.asarray(extra_src, dtype=np.int64)
        vertices = np.concatenate([vertices, vertices[src[:, 0]]])
        uv[len(verts):] = tex[src[:, 1]]
    return TriangleMesh(vertices, np.asarray(faces, dtype=np.int64), uv, str(path))


def write_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    if mesh.uv is not None:
        lines += [f"vt {u!r} {v!r}" for u, v in mesh.uv.tolist()]
        lines += [f"f {a}/{a} {b}/{b} {c}/{c}" for a, b, c in (mesh.faces + 1).tolist()]
    else:
        lines += [f"f {a} {b} {c}" for a, b, c in (mesh.faces + 1).tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- PLY ---------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_header(fh):
    if fh.readline().strip() != b"ply":
        raise ParseError("missing 'ply' magic", 1)
    fmt = None
    elements = []
    line_no = 1
    while True:
        raw = fh.readline()
        line_no += 1
        if not raw:
            raise ParseError("unterminated PLY header", line_no)
        parts = raw.decode("ascii", "replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "end_header":
            break
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise ParseError("property before element", line_no)
            if parts[1] == "list":
                elements[-1][2].append((parts[4], _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]]))
            else:
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]], None))
        else:
            raise ParseError(f"unknown header keyword {parts[0]!r}", line_no)
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise ParseError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def _read_binary_element(fh, count, props, endian):
    if all(p[2] is None for p in props):
        dt = np.dtype([(name, endian + t) for name, t, _ in props])
        buf = fh.read(dt.itemsize * count)
        if len(buf) != dt.itemsize * count:
            raise ParseError("truncated binary PLY body")
        data = np.frombuffer(buf, dtype=dt)
        return {name: data[name] for name, _, _ in props}
    out = {name: [] for name, _, _ in props}
    for _ in range(count):
        for name, t, item_t in props:
            if item_t is None:
                dt = np.dtype(endian + t)
                out[name].append(np.frombuffer(fh.read(dt.itemsize), dt)[0])
            else:
                cdt = np.dtype(endian + t)
                k = int(np.frombuffer(fh.read(cdt.itemsize), cdt)[0])
                idt = np.dtype(endian + item_t)
                out[name].append(np.frombuffer(fh.read(idt.itemsize * k), idt).tolist())
    return out


def read_ply(path) -> TriangleMesh:
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh)
        data = {}
        if fmt == "ascii":
            tokens = iter(fh.read().decode("ascii", "replace").split())
            for name, count, props in elements:
                cols = {p[0]: [] for p in props}
                try:
                    for _ in range(count):
                        for pname, _t, item_t in props:
                            if item_t is None:
                                cols[pname].append(float(next(tokens)))
                            else:
                                k = int(next(tokens))
                                cols[pname].append([int(next(tokens)) for _ in range(k)])
                except (StopIteration, ValueError):
                    raise ParseError(f"truncated or malformed ascii element {name!r}") from None
                data[name] = cols
        else:
            endian = "<" if fmt == "binary_little_endian" else ">"
            for name, count, props in elements:
                data[name] = _read_binary_element(fh, count, props, endian)

    if "vertex" not in data:
        raise ParseError("PLY file has no vertex element")
    vx = data["vertex"]
    try:
        vertices = np.stack([np.asarray(vx[c], dtype=np.float64) for c in "xyz"], axis=1)
    except KeyError:
        raise ParseError("vertex element lacks x/y/z") from None
    uv = None
    for a, b in (("u", "v"), ("s", "t"), ("texture_u", "texture_v")):
        if a in vx and b in vx:
            uv = np.stack([np.asarray(vx[a], dtype=np.float64), np.asarray(vx[b], dtype=np.float64)], axis=1)
            break
    faces = []
    fdata = data.get("face", {})
    key = "vertex_indices" if "vertex_indices" in fdata else "vertex_index"
    for poly in fdata.get(key, []):
        poly = [int(i) for i in poly]
        if len(poly) < 3:
            raise ParseError("face with fewer than 3 vertices")
        for k in range(1, len(poly) - 1):
            faces.append([poly[0], poly[k], poly[k + 1]])
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
        raise ParseError("face index out of range")
    return TriangleMesh(vertices, faces, uv, str(path))


def write_ply(mesh: TriangleMesh, path, colors=None, binary: bool = True) -> None:
    """Write x, y, z (and u, v if present) as float32, optional uint8 colors,
    uint8-count/int32 face lists."""
    n, f = mesh.n_vertices, mesh.n_faces
    fcols = ["x", "y", "z"] + (["u", "v"] if mesh.uv is not None else [])
    fvals = mesh.vertices if mesh.uv is None else np.hstack([mesh.vertices, mesh.uv])
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0", f"element vertex {n}"]
    header += [f"property float {c}" for c in fcols]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8)
        if colors.shape != (n, 3):
            raise ValueError(f"colors must be {n} x 3")
        header += [f"property uchar {c}" for c in ("red", "green", "blue")]
    header += [f"element face {f}", "property list uchar int vertex_indices", "end_header"]
    head = ("\n".join(header) + "\n").encode("ascii")

    if binary:
        vdt = [(c, "<f4") for c in fcols]
        if colors is not None:
            vdt += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        vbuf = np.empty(n, dtype=vdt)
        for i, c in enumerate(fcols):
            vbuf[c] = fvals[:, i]
        if colors is not None:
            for i, c in enumerate(("red", "green", "blue")):
                vbuf[c] = colors[:, i]
        fbuf = np.empty(f, dtype=[("n", "u1"), ("i", "<i4", (3,))])
        fbuf["n"] = 3
        fbuf["i"] = mesh.faces
        body = vbuf.tobytes() + fbuf.tobytes()
    else:
        v32 = fvals.astype(np.float32)
        rows = []
        for i in range(n):
            row = " ".join(repr(float(x)) for x in v32[i])
            if colors is not None:
                row += " " + " ".join(str(int(c)) for c in colors[i])
            rows.append(row)
        rows += [f"3 {a} {b} {c}" for a, b, c in mesh.faces.tolist()]
        body = ("\n".join(rows) + "\n").encode("ascii")
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(head + body)
    os.replace(tmp, path)

