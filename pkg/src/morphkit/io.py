"""OBJ / PLY readers and writers.

Only the subset needed here is supported: OBJ ``v``/``f`` records (with an
optional ``v x y z r g b`` colour extension) and PLY in ``ascii`` or
``binary_little_endian`` encoding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshParseError(ValueError):
    """Raised when a mesh or point file cannot be parsed.

    ``line`` is set for text formats (1-based), ``offset`` for binary payloads.
    """

    def __init__(self, message: str, path=None, line: int | None = None, offset: int | None = None):
        self.path = str(path) if path is not None else None
        self.line = line
        self.offset = offset
        where = []
        if self.path:
            where.append(self.path)
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


def fan_triangulate(poly):
    """Split a polygon into triangles sharing its first vertex."""
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


# --------------------------------------------------------------------------- OBJ


def read_obj(path):
    """Return ``(vertices, faces, colors)``; ``colors`` is None unless every vertex has RGB."""
    path = Path(path)
    verts, cols, faces = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            if tok[0] == "v":
                try:
                    vals = [float(x) for x in tok[1:]]
                except ValueError:
                    raise MeshParseError("malformed vertex record", path, line=lineno) from None
                if len(vals) not in (3, 4, 6, 7):
                    raise MeshParseError(f"vertex record has {len(vals)} values", path, line=lineno)
                verts.append(vals[:3])
                cols.append(vals[3:6] if len(vals) in (6, 7) else None)
            elif tok[0] == "f":
                if len(tok) - 1 < 3:
                    raise MeshParseError(f"face with {len(tok) - 1} indices (need >= 3)", path, line=lineno)
                idx = []
                for t in tok[1:]:
                    try:
                        k = int(t.split("/", 1)[0])
                    except ValueError:
                        raise MeshParseError(f"bad face index {t!r}", path, line=lineno) from None
                    # negative indices are relative to the current vertex count
                    k = k - 1 if k > 0 else len(verts) + k
                    if k < 0:
                        raise MeshParseError(f"face index {t} out of range", path, line=lineno)
                    idx.append(k)
                for tri in fan_triangulate(idx):
                    if len(set(tri)) != 3:
                        raise MeshParseError("degenerate face (repeated index)", path, line=lineno)
                    faces.append((tri, lineno))
            # vt, vn, o, g, s, usemtl, mtllib ... are ignored
    n = len(verts)
    for tri, lineno in faces:
        if max(tri) >= n:
            raise MeshParseError(f"face index {max(tri) + 1} exceeds vertex count {n}", path, line=lineno)
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    f = np.asarray([t for t, _ in faces], dtype=np.int64).reshape(-1, 3)
    colors = None
    if n and all(c is not None for c in cols):
        colors = np.asarray(cols, dtype=np.float64)
    return v, f, colors


def write_obj(path, vertices, faces, colors=None):
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    lines = []
    if colors is None:
        for x, y, z in vertices.tolist():
            lines.append(f"v {x!r} {y!r} {z!r}")
    else:
        colors = np.asarray(colors, dtype=np.float64)
        for (x, y, z), (r, g, b) in zip(vertices.tolist(), colors.tolist()):
            lines.append(f"v {x!r} {y!r} {z!r} {r!r} {g!r} {b!r}")
    for a, b, c in (faces + 1).tolist():
        lines.append(f"f {a} {b} {c}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------- PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_PLY_NAMES = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort",
              "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}


@dataclass
class PlyProperty:
    name: str
    dtype: str  # numpy kind code, e.g. "f4"
    list_count_dtype: str | None = None  # set for list properties


@dataclass
class PlyElement:
    name: str
    count: int
    properties: list[PlyProperty] = field(default_factory=list)


@dataclass
class PlyData:
    fmt: str
    elements: list[PlyElement]
    data: dict  # element name -> dict(property name -> ndarray or list of arrays)
    comments: list[str] = field(default_factory=list)

    def element(self, name):
        for el in self.elements:
            if el.name == name:
                return el
        return None


def _parse_ply_header(buf: bytes, path):
    if not buf.startswith(b"ply"):
        raise MeshParseError("missing 'ply' magic", path, line=1)
    end = buf.find(b"end_header")
    if end < 0:
        raise MeshParseError("missing end_header", path)
    nl = buf.find(b"\n", end)
    body_start = len(buf) if nl < 0 else nl + 1
    header = buf[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements: list[PlyElement] = []
    comments = []
    for lineno, line in enumerate(header, start=1):
        tok = line.split()
        if not tok or tok[0] == "ply":
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise MeshParseError(f"unknown format {' '.join(tok[1:])!r}", path, line=lineno)
            if tok[1] == "binary_big_endian":
                raise MeshParseError("binary_big_endian PLY is not supported", path, line=lineno)
            fmt = tok[1]
        elif tok[0] in ("comment", "obj_info"):
            comments.append(line.partition(" ")[2])
        elif tok[0] == "element":
            try:
                elements.append(PlyElement(tok[1], int(tok[2])))
            except (IndexError, ValueError):
                raise MeshParseError("malformed element line", path, line=lineno) from None
        elif tok[0] == "property":
            if not elements:
                raise MeshParseError("property before element", path, line=lineno)
            try:
                if tok[1] == "list":
                    prop = PlyProperty(tok[4], _PLY_TYPES[tok[3]], _PLY_TYPES[tok[2]])
                else:
                    prop = PlyProperty(tok[2], _PLY_TYPES[tok[1]])
            except (IndexError, KeyError):
                raise MeshParseError("malformed property line", path, line=lineno) from None
            elements[-1].properties.append(prop)
        else:
            raise MeshParseError(f"unexpected header keyword {tok[0]!r}", path, line=lineno)
    if fmt is None:
        raise MeshParseError("missing format line", path)
    return fmt, elements, comments, body_start, len(header) + 1


def read_ply(path) -> PlyData:
    path = Path(path)
    buf = path.read_bytes()
    fmt, elements, comments, pos, header_lines = _parse_ply_header(buf, path)
    data = {}
    if fmt == "ascii":
        lines = buf[pos:].decode("ascii", errors="replace").splitlines()
        li = 0
        for el in elements:
            cols = {p.name: [] for p in el.properties}
            for _ in range(el.count):
                while li < len(lines) and not lines[li].strip():
                    li += 1
                if li >= len(lines):
                    raise MeshParseError(f"unexpected end of file in element {el.name!r}", path,
                                         line=header_lines + li + 1)
                tok = lines[li].split()
                lineno = header_lines + li + 1
                k = 0
                try:
                    for p in el.properties:
                        if p.list_count_dtype:
                            cnt = int(tok[k])
                            cols[p.name].append(np.asarray(tok[k + 1:k + 1 + cnt], dtype=p.dtype))
                            if len(cols[p.name][-1]) != cnt:
                                raise IndexError
                            k += 1 + cnt
                        else:
                            cols[p.name].append(tok[k])
                            k += 1
                except (IndexError, ValueError):
                    raise MeshParseError(f"malformed {el.name} record", path, line=lineno) from None
                li += 1
            out = {}
            for p in el.properties:
                if p.list_count_dtype:
                    out[p.name] = cols[p.name]
                else:
                    try:
                        out[p.name] = np.asarray(cols[p.name], dtype=np.float64).astype(p.dtype)
                    except ValueError:
                        raise MeshParseError(f"non-numeric value in property {p.name!r}", path) from None
            data[el.name] = out
    else:
        for el in elements:
            if all(p.list_count_dtype is None for p in el.properties):
                dt = np.dtype([(p.name, "<" + p.dtype) for p in el.properties])
                nbytes = dt.itemsize * el.count
                if pos + nbytes > len(buf):
                    raise MeshParseError(f"truncated element {el.name!r}", path, offset=len(buf))
                arr = np.frombuffer(buf, dtype=dt, count=el.count, offset=pos)
                data[el.name] = {p.name: arr[p.name].copy() for p in el.properties}
                pos += nbytes
                continue
            cols = {p.name: [] for p in el.properties}

            def take(dtype, count):
                nonlocal pos
                dt = np.dtype("<" + dtype)
                if pos + count * dt.itemsize > len(buf):
                    raise MeshParseError(f"truncated element {el.name!r}", path, offset=pos)
                arr = np.frombuffer(buf, dtype=dt, count=count, offset=pos)
                pos += count * dt.itemsize
                return arr

            for _ in range(el.count):
                for p in el.properties:
                    if p.list_count_dtype:
                        cnt = int(take(p.list_count_dtype, 1)[0])
                        cols[p.name].append(take(p.dtype, cnt).copy())
                    else:
                        cols[p.name].append(take(p.dtype, 1)[0])
            data[el.name] = {
                p.name: cols[p.name] if p.list_count_dtype else np.asarray(cols[p.name], dtype=p.dtype)
                for p in el.properties
            }
    return PlyData(fmt, elements, data, comments)


def write_ply(path, elements: list[tuple[str, dict]], fmt="binary_little_endian", comments=()):
    """Write PLY elements given as ``(name, {prop: array})``.

    Arrays of dtype object (or lists of arrays) are written as ``uchar``-counted
    ``int`` lists. Property order follows dict order.
    """
    head = ["ply", f"format {fmt} 1.0"]
    head += [f"comment {c}" for c in comments]
    bodies = []
    for name, props in elements:
        count = len(next(iter(props.values()))) if props else 0
        head.append(f"element {name} {count}")
        plain = {}
        lists = {}
        for pname, arr in props.items():
            if isinstance(arr, list) or (isinstance(arr, np.ndarray) and arr.dtype == object):
                lists[pname] = arr
                head.append(f"property list uchar int {pname}")
            else:
                arr = np.asarray(arr)
                plain[pname] = arr
                head.append(f"property {_PLY_NAMES[arr.dtype.str[1:]]} {pname}")
        bodies.append((count, props, plain, lists))
    head.append("end_header")
    out = bytearray(("\n".join(head) + "\n").encode("ascii"))
    for count, props, plain, lists in bodies:
        if fmt == "ascii":
            rows = []
            for i in range(count):
                parts = []
                for pname, arr in props.items():
                    if pname in lists:
                        vals = [int(x) for x in arr[i]]
                        parts.append(" ".join([str(len(vals))] + [str(x) for x in vals]))
                    else:
                        v = arr[i]
                        parts.append(repr(float(v)) if arr.dtype.kind == "f" else str(int(v)))
                rows.append(" ".join(parts))
            out += ("\n".join(rows) + ("\n" if rows else "")).encode("ascii")
        elif not lists:
            dt = np.dtype([(k, "<" + a.dtype.str[1:]) for k, a in plain.items()])
            rec = np.empty(count, dtype=dt)
            for k, a in plain.items():
                rec[k] = a
            out += rec.tobytes()
        else:
            for i in range(count):
                for pname, arr in props.items():
                    if pname in lists:
                        vals = np.asarray(arr[i], dtype="<i4")
                        out += struct.pack("<B", len(vals)) + vals.tobytes()
                    else:
                        out += np.asarray(arr[i], dtype="<" + arr.dtype.str[1:]).tobytes()
    Path(path).write_bytes(bytes(out))


def read_ply_mesh(path):
    """Return ``(vertices, faces, colors)`` from a PLY mesh (faces fan-triangulated)."""
    ply = read_ply(path)
    vert = ply.data.get("vertex")
    if vert is None:
        raise MeshParseError("no vertex element", path)
    for k in ("x", "y", "z"):
        if k not in vert:
            raise MeshParseError(f"missing property {k}", path)
    v = np.stack([np.asarray(vert[k], dtype=np.float64) for k in ("x", "y", "z")], axis=1)
    colors = None
    if all(k in vert for k in ("red", "green", "blue")):
        c = np.stack([np.asarray(vert[k], dtype=np.float64) for k in ("red", "green", "blue")], axis=1)
        kind = np.asarray(vert["red"]).dtype.kind
        colors = c / 255.0 if kind in "iu" else c
    faces = []
    face_el = ply.data.get("face", {})
    polys = face_el.get("vertex_indices", face_el.get("vertex_index", []))
    for fi, poly in enumerate(polys):
        poly = [int(x) for x in poly]
        if len(poly) < 3:
            raise MeshParseError(f"face {fi} has {len(poly)} indices (need >= 3)", path)
        for tri in fan_triangulate(poly):
            if len(set(tri)) != 3:
                raise MeshParseError(f"face {fi} is degenerate (repeated index)", path)
            if max(tri) >= len(v) or min(tri) < 0:
                raise MeshParseError(f"face {fi} index out of range", path)
            faces.append(tri)
    return v, np.asarray(faces, dtype=np.int64).reshape(-1, 3), colors
