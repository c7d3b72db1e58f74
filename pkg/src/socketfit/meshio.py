"""Reading and writing OBJ, PLY and STL triangle meshes."""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import MeshIOError, ParseError
from .mesh import TriMesh

FORMATS = ("OBJ", "PLY", "STL")

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


def _num(x):
    # shortest round-tripping decimal
    return repr(float(x))


def _resolve_format(path, format):
    if format is None:
        format = Path(path).suffix.lstrip(".")
    format = str(format).upper()
    if format not in FORMATS:
        raise ValueError(f"unsupported mesh format {format!r}")
    return format


def load_mesh(path, format=None) -> TriMesh:
    """Load a triangle mesh; the format defaults to the file suffix."""
    format = _resolve_format(path, format)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if format == "OBJ":
        return _load_obj(path)
    if format == "PLY":
        return load_ply(path)[0]
    return _load_stl(path)


def save_mesh(mesh: TriMesh, path, format=None, quality=None, binary=True):
    """Write ``mesh`` as OBJ or PLY.

    ``quality`` is an optional per-vertex scalar, written as the PLY vertex
    property ``quality``.
    """
    format = _resolve_format(path, format)
    try:
        if format == "OBJ":
            if quality is not None:
                raise ValueError("OBJ cannot carry per-vertex scalars")
            _save_obj(mesh, path)
        elif format == "PLY":
            _save_ply(mesh, path, quality=quality, binary=binary)
        else:
            raise ValueError("STL output is not supported")
    except OSError as exc:
        raise MeshIOError(f"cannot write {path}: {exc}") from exc


# -- OBJ ---------------------------------------------------------------------

def _load_obj(path) -> TriMesh:
    verts, faces = [], []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            if tokens[0] == "v":
                try:
                    verts.append([float(t) for t in tokens[1:4]])
                except ValueError as exc:
                    raise ParseError(str(exc), f"line {lineno}") from exc
                if len(verts[-1]) != 3:
                    raise ParseError("vertex needs three coordinates", f"line {lineno}")
            elif tokens[0] == "f":
                try:
                    idx = [int(t.split("/")[0]) for t in tokens[1:]]
                except ValueError as exc:
                    raise ParseError(str(exc), f"line {lineno}") from exc
                if len(idx) < 3:
                    raise ParseError("face needs at least three vertices", f"line {lineno}")
                # 1-based, negative indices count back from the current vertex
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return TriMesh(np.array(verts, dtype=float).reshape(-1, 3),
                   np.array(faces, dtype=np.int64).reshape(-1, 3))


def _save_obj(mesh, path):
    with open(path, "w") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {_num(x)} {_num(y)} {_num(z)}\n")
        for a, b, c in mesh.faces + 1:
            fh.write(f"f {a} {b} {c}\n")


# -- PLY ---------------------------------------------------------------------

def _read_ply_header(fh):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise ParseError("missing 'ply' magic", "line 1")
    fmt = None
    elements = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise ParseError("unterminated header", f"line {lineno}")
        tokens = raw.decode("ascii", errors="replace").split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            elements.append({"name": tokens[1], "count": int(tokens[2]), "props": []})
        elif tokens[0] == "property":
            if not elements:
                raise ParseError("property before element", f"line {lineno}")
            if tokens[1] == "list":
                elements[-1]["props"].append(
                    (tokens[4], ("list", _PLY_TYPES[tokens[2]], _PLY_TYPES[tokens[3]]))
                )
            else:
                if tokens[1] not in _PLY_TYPES:
                    raise ParseError(f"unknown type {tokens[1]}", f"line {lineno}")
                elements[-1]["props"].append((tokens[2], _PLY_TYPES[tokens[1]]))
        elif tokens[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
        raise ParseError(f"unsupported PLY format {fmt!r}", "header")
    return fmt, elements


def load_ply(path):
    """Load a PLY mesh and its extra per-vertex scalar properties.

    Returns ``(mesh, props)`` where ``props`` maps property names other than
    x/y/z (for instance ``quality``) to arrays.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        fmt, elements = _read_ply_header(fh)
        body = fh.read()
    data = {}
    if fmt == "ascii":
        lines = iter(body.decode("ascii").split("\n"))
        for el in elements:
            data[el["name"]] = _read_ascii_element(el, lines)
    else:
        order = "<" if fmt == "binary_little_endian" else ">"
        offset = 0
        for el in elements:
            data[el["name"]], offset = _read_binary_element(el, body, offset, order)

    vertex = data.get("vertex")
    if vertex is None:
        raise ParseError("no vertex element", "header")
    try:
        verts = np.column_stack([vertex["x"], vertex["y"], vertex["z"]]).astype(float)
    except KeyError as exc:
        raise ParseError(f"vertex property {exc} missing", "header") from exc
    props = {k: np.asarray(v, dtype=float) for k, v in vertex.items() if k not in "xyz"}
    faces = np.zeros((0, 3), dtype=np.int64)
    face = data.get("face")
    if face is not None:
        key = "vertex_indices" if "vertex_indices" in face else "vertex_index"
        tris = []
        for poly in face.get(key, []):
            for k in range(1, len(poly) - 1):
                tris.append((poly[0], poly[k], poly[k + 1]))
        faces = np.array(tris, dtype=np.int64).reshape(-1, 3)
    return TriMesh(verts, faces), props


def _read_ascii_element(el, lines):
    out = {name: [] for name, _ in el["props"]}
    for i in range(el["count"]):
        try:
            line = next(lines)
            while not line.strip():
                line = next(lines)
        except StopIteration:
            raise ParseError(f"truncated {el['name']} data", f"{el['name']} {i}") from None
        tokens = line.split()
        pos = 0
        try:
            for name, typ in el["props"]:
                if isinstance(typ, tuple):
                    n = int(tokens[pos])
                    out[name].append([int(t) for t in tokens[pos + 1:pos + 1 + n]])
                    pos += 1 + n
                else:
                    out[name].append(float(tokens[pos]))
                    pos += 1
        except (IndexError, ValueError) as exc:
            raise ParseError(str(exc), f"{el['name']} {i}") from exc
    return out


def _read_binary_element(el, body, offset, order):
    props = el["props"]
    count = el["count"]
    if not any(isinstance(t, tuple) for _, t in props):
        dtype = np.dtype([(name, order + t) for name, t in props])
        end = offset + dtype.itemsize * count
        if end > len(body):
            raise ParseError(f"truncated {el['name']} data", f"byte {len(body)}")
        arr = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
        return {name: arr[name] for name, _ in props}, end

    out = {name: [] for name, _ in props}
    # fast path for the common all-triangle face list
    if len(props) == 1 and count:
        name, (_, ct, it) = props[0]
        rec = np.dtype([("n", order + ct), ("i", order + it, (3,))])
        if offset + rec.itemsize * count <= len(body):
            arr = np.frombuffer(body, dtype=rec, count=count, offset=offset)
            if np.all(arr["n"] == 3):
                out[name] = arr["i"].astype(np.int64).tolist()
                return out, offset + rec.itemsize * count
    try:
        for _ in range(count):
            for name, typ in props:
                if isinstance(typ, tuple):
                    _, ct, it = typ
                    cdt, idt = np.dtype(order + ct), np.dtype(order + it)
                    n = int(np.frombuffer(body, cdt, 1, offset)[0])
                    offset += cdt.itemsize
                    out[name].append(np.frombuffer(body, idt, n, offset).tolist())
                    offset += idt.itemsize * n
                else:
                    dt = np.dtype(order + typ)
                    out[name].append(np.frombuffer(body, dt, 1, offset)[0])
                    offset += dt.itemsize
    except ValueError as exc:
        raise ParseError(f"truncated {el['name']} data", f"byte {offset}") from exc
    return out, offset


def _save_ply(mesh, path, quality=None, binary=True):
    n, f = mesh.n_vertices, mesh.n_faces
    header = ["ply", "format " + ("binary_little_endian" if binary else "ascii") + " 1.0",
              f"element vertex {n}",
              "property double x", "property double y", "property double z"]
    if quality is not None:
        quality = np.asarray(quality, dtype=float).reshape(-1)
        if len(quality) != n:
            raise ValueError("quality length must match vertex count")
        header.append("property double quality")
    header += [f"element face {f}", "property list uchar int vertex_indices", "end_header"]
    head = ("\n".join(header) + "\n").encode("ascii")

    if binary:
        fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
        if quality is not None:
            fields.append(("quality", "<f8"))
        vrec = np.zeros(n, dtype=fields)
        vrec["x"], vrec["y"], vrec["z"] = mesh.vertices.T
        if quality is not None:
            vrec["quality"] = quality
        frec = np.zeros(f, dtype=[("n", "u1"), ("i", "<i4", (3,))])
        frec["n"] = 3
        frec["i"] = mesh.faces
        with open(path, "wb") as fh:
            fh.write(head)
            fh.write(vrec.tobytes())
            fh.write(frec.tobytes())
    else:
        with open(path, "wb") as fh:
            fh.write(head)
            lines = []
            for i, (x, y, z) in enumerate(mesh.vertices):
                row = f"{_num(x)} {_num(y)} {_num(z)}"
                if quality is not None:
                    row += f" {_num(quality[i])}"
                lines.append(row)
            lines += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
            fh.write(("\n".join(lines) + "\n").encode("ascii"))


# -- STL ---------------------------------------------------------------------

def _load_stl(path) -> TriMesh:
    with open(path, "rb") as fh:
        raw = fh.read()
    corners = None
    if len(raw) >= 84:
        (count,) = struct.unpack_from("<I", raw, 80)
        if 84 + 50 * count == len(raw):
            rec = np.dtype([("n", "<f4", (3,)), ("v", "<f4", (3, 3)), ("attr", "<u2")])
            arr = np.frombuffer(raw, dtype=rec, count=count, offset=84)
            corners = arr["v"].astype(np.float64).reshape(-1, 3)
    if corners is None:
        corners = _parse_ascii_stl(raw)
    # exact-coordinate dedup, keeping first-occurrence order
    uniq, first, inverse = np.unique(corners, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    verts = uniq[order]
    faces = rank[inverse.reshape(-1)].reshape(-1, 3)
    return TriMesh(verts, faces)


def _parse_ascii_stl(raw):
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as exc:
        raise ParseError("not a valid binary or ASCII STL", f"byte {exc.start}") from exc
    if not text.lstrip().startswith("solid"):
        raise ParseError("ASCII STL must start with 'solid'", "line 1")
    corners = []
    for lineno, line in enumerate(text.splitlines(), 1):
        tokens = line.split()
        if tokens and tokens[0] == "vertex":
            try:
                corners.append([float(t) for t in tokens[1:4]])
            except ValueError as exc:
                raise ParseError(str(exc), f"line {lineno}") from exc
    if len(corners) % 3:
        raise ParseError("facet with a vertex count other than 3", "end of file")
    return np.array(corners, dtype=float).reshape(-1, 3)


def write_stl(mesh: TriMesh, path, binary=True):
    """Write an STL file (used mainly to produce test fixtures)."""
    tri = mesh.triangles()
    normals = mesh.face_normals()
    if binary:
        rec = np.zeros(len(tri), dtype=[("n", "<f4", (3,)), ("v", "<f4", (3, 3)), ("attr", "<u2")])
        rec["n"] = normals
        rec["v"] = tri
        with open(path, "wb") as fh:
            fh.write(b"\0" * 80)
            fh.write(struct.pack("<I", len(tri)))
            fh.write(rec.tobytes())
    else:
        with open(path, "w") as fh:
            fh.write("solid mesh\n")
            for n, t in zip(normals, tri):
                fh.write(f"facet normal {_num(n[0])} {_num(n[1])} {_num(n[2])}\n outer loop\n")
                for p in t:
                    fh.write(f"  vertex {_num(p[0])} {_num(p[1])} {_num(p[2])}\n")
                fh.write(" endloop\nendfacet\n")
            fh.write("endsolid mesh\n")
