"""File formats: PLY point clouds and meshes, OBJ, PFM radiance maps, PNG.

Positions and normals are stored as float64 so that save -> load is
bit-exact; colors quantize to uint8 (the one lossy channel). All writers go
through ``atomic_write`` so a crash never leaves a truncated file behind.
"""

from __future__ import annotations

import os
import struct
import tempfile
from typing import Optional, Union

import numpy as np
from PIL import Image

from .pointcloud import PointCloud, PointCloudError


class FormatError(ValueError):
    pass


def atomic_write(path: Union[str, os.PathLike], data: bytes) -> None:
    """Write bytes to path via a same-directory temp file and rename."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def color_to_u8(colors: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(colors, float) * 255.0), 0, 255).astype(np.uint8)


def color_from_u8(u8: np.ndarray) -> np.ndarray:
    return np.asarray(u8, np.float64) / 255.0


# --- PLY -------------------------------------------------------------------

_PLY_DTYPES = {
    "char": "i1", "uchar": "u1", "short": "i2", "ushort": "u2",
    "int": "i4", "uint": "u4", "float": "f4", "double": "f8",
    "int8": "i1", "uint8": "u1", "int16": "i2", "uint16": "u2",
    "int32": "i4", "uint32": "u4", "float32": "f4", "float64": "f8",
}


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def encode_ply(pc: PointCloud, binary: bool = False) -> bytes:
    """Point-cloud PLY bytes (ASCII or binary little-endian)."""
    has_n = pc.normals is not None
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header.append(f"element vertex {pc.n}")
    header += [f"property double {c}" for c in "xyz"]
    if has_n:
        header += [f"property double n{c}" for c in "xyz"]
    header += [f"property uchar {c}" for c in ("red", "green", "blue")]
    header.append("end_header")
    u8 = color_to_u8(pc.colors)
    if binary:
        fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
        if has_n:
            fields += [("nx", "<f8"), ("ny", "<f8"), ("nz", "<f8")]
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        rec = np.zeros(pc.n, dtype=fields)
        rec["x"], rec["y"], rec["z"] = pc.points.T
        if has_n:
            rec["nx"], rec["ny"], rec["nz"] = pc.normals.T
        rec["red"], rec["green"], rec["blue"] = u8.T
        body = rec.tobytes()
    else:
        lines = []
        for i in range(pc.n):
            parts = [_fmt(v) for v in pc.points[i]]
            if has_n:
                parts += [_fmt(v) for v in pc.normals[i]]
            parts += [str(int(v)) for v in u8[i]]
            lines.append(" ".join(parts))
        body = ("\n".join(lines) + ("\n" if lines else "")).encode("ascii")
    return ("\n".join(header) + "\n").encode("ascii") + body


def save_ply(path, pc: PointCloud, binary: bool = False) -> None:
    """Write a point cloud as PLY (ASCII or binary little-endian)."""
    atomic_write(path, encode_ply(pc, binary=binary))


def _parse_ply_header(blob: bytes):
    end = blob.find(b"end_header")
    if end < 0:
        raise FormatError(f"missing end_header in first {len(blob)} bytes")
    nl = blob.find(b"\n", end)
    header = blob[:nl].decode("ascii", "replace").replace("\r", "").split("\n")
    body = blob[nl + 1:]
    if header[0].strip() != "ply":
        raise FormatError("not a PLY file")
    fmt = None
    elements = []  # (name, count, [(prop_name, dtype) | ("list", count_dt, item_dt, name)])
    for line in header[1:]:
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise FormatError("property before element")
            if tok[1] == "list":
                elements[-1][2].append(("list", _PLY_DTYPES[tok[2]], _PLY_DTYPES[tok[3]], tok[4]))
            else:
                elements[-1][2].append((tok[2], tok[1]))
        elif tok[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"unsupported PLY format {fmt!r}")
    return fmt, elements, body


def _read_ply_elements(fmt, elements, body):
    """Parse element data into {element: {prop: array}} plus face lists."""
    out = {}
    if fmt == "ascii":
        text = body.decode("ascii", "replace").split()
        pos = 0
        for name, count, props in elements:
            cols = {p[-1] if p[0] == "list" else p[0]: [] for p in props}
            lists = {}
            try:
                for _ in range(count):
                    for p in props:
                        if p[0] == "list":
                            ln = int(text[pos]); pos += 1
                            vals = [float(text[pos + j]) for j in range(ln)]
                            pos += ln
                            lists.setdefault(p[3], []).append(vals)
                        else:
                            cols[p[0]].append(float(text[pos])); pos += 1
            except (ValueError, IndexError) as err:
                raise FormatError(
                    f"malformed ASCII body near token {pos}"
                    f" (element {name!r}): {err}") from err
            parsed = {k: np.array(v, float) for k, v in cols.items()}
            parsed.update(lists)
            out[name] = parsed
    else:
        off = 0
        for name, count, props in elements:
            has_list = any(p[0] == "list" for p in props)
            if not has_list:
                dt = np.dtype([(p[0], "<" + _PLY_DTYPES[p[1]]) for p in props])
                if len(body) - off < dt.itemsize * count:
                    raise FormatError(
                        f"binary body truncated at byte offset {off}"
                        f" (element {name!r} needs {dt.itemsize * count} bytes)")
                rec = np.frombuffer(body, dtype=dt, count=count, offset=off)
                off += dt.itemsize * count
                out[name] = {p[0]: rec[p[0]].astype(np.float64) for p in props}
            else:
                lists = {}
                for _ in range(count):
                    for p in props:
                        if p[0] == "list":
                            cdt = np.dtype("<" + p[1])
                            ln = int(np.frombuffer(body, cdt, 1, off)[0]); off += cdt.itemsize
                            idt = np.dtype("<" + p[2])
                            vals = np.frombuffer(body, idt, ln, off).astype(np.float64)
                            off += idt.itemsize * ln
                            lists.setdefault(p[3], []).append(list(vals))
                        else:
                            idt = np.dtype("<" + _PLY_DTYPES[p[1]])
                            off += idt.itemsize  # scalar among lists: skipped
                out[name] = lists
    return out


def decode_ply(blob: bytes) -> PointCloud:
    """Parse point-cloud PLY bytes (positions, optional normals, uchar colors)."""
    fmt, elements, body = _parse_ply_header(blob)
    data = _read_ply_elements(fmt, elements, body)
    if "vertex" not in data:
        raise FormatError("PLY has no vertex element")
    v = data["vertex"]
    for c in "xyz":
        if c not in v:
            raise FormatError(f"vertex element missing {c}")
    pts = np.stack([v["x"], v["y"], v["z"]], axis=1)
    if all(f"n{c}" in v for c in "xyz"):
        normals = np.stack([v["nx"], v["ny"], v["nz"]], axis=1)
    else:
        normals = None
    if all(c in v for c in ("red", "green", "blue")):
        cols = color_from_u8(np.stack([v["red"], v["green"], v["blue"]], axis=1))
    else:
        cols = np.full_like(pts, 0.5)
    try:
        return PointCloud(points=pts, colors=cols, normals=normals)
    except PointCloudError:
        # tolerate slightly denormalized inputs from other tools
        if normals is not None:
            lens = np.linalg.norm(normals, axis=1, keepdims=True)
            normals = normals / np.maximum(lens, 1e-12)
        return PointCloud(points=pts, colors=np.clip(cols, 0, 1), normals=normals)


def load_ply(path) -> PointCloud:
    """Read a point-cloud PLY file."""
    with open(path, "rb") as f:
        return decode_ply(f.read())


def save_mesh_ply(path, vertices: np.ndarray, faces: np.ndarray,
                  colors: Optional[np.ndarray] = None, binary: bool = False) -> None:
    """Write a triangle mesh as PLY, vertices double + int face lists."""
    vertices = np.asarray(vertices, np.float64).reshape(-1, 3)
    faces = np.asarray(faces, np.int64).reshape(-1, 3)
    if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
        raise FormatError("face index out of range")
    has_c = colors is not None
    header = ["ply"]
    header.append("format binary_little_endian 1.0" if binary else "format ascii 1.0")
    header.append(f"element vertex {len(vertices)}")
    header += [f"property double {c}" for c in "xyz"]
    if has_c:
        header += [f"property uchar {c}" for c in ("red", "green", "blue")]
    header.append(f"element face {len(faces)}")
    header.append("property list uchar int vertex_indices")
    header.append("end_header")
    u8 = color_to_u8(colors) if has_c else None
    if binary:
        parts = []
        fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
        if has_c:
            fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        rec = np.zeros(len(vertices), dtype=fields)
        rec["x"], rec["y"], rec["z"] = vertices.T
        if has_c:
            rec["red"], rec["green"], rec["blue"] = u8.T
        parts.append(rec.tobytes())
        frec = np.zeros(len(faces), dtype=[("n", "u1"), ("i", "<i4"), ("j", "<i4"), ("k", "<i4")])
        frec["n"] = 3
        frec["i"], frec["j"], frec["k"] = faces.T
        parts.append(frec.tobytes())
        body = b"".join(parts)
    else:
        lines = []
        for i in range(len(vertices)):
            parts = [_fmt(v) for v in vertices[i]]
            if has_c:
                parts += [str(int(v)) for v in u8[i]]
            lines.append(" ".join(parts))
        for f in faces:
            lines.append("3 %d %d %d" % (f[0], f[1], f[2]))
        body = ("\n".join(lines) + ("\n" if lines else "")).encode("ascii")
    atomic_write(path, ("\n".join(header) + "\n").encode("ascii") + body)


def load_mesh_ply(path):
    """Read a triangle mesh PLY; returns (vertices, faces, colors-or-None)."""
    with open(path, "rb") as f:
        blob = f.read()
    fmt, elements, body = _parse_ply_header(blob)
    data = _read_ply_elements(fmt, elements, body)
    if "vertex" not in data:
        raise FormatError("PLY has no vertex element")
    v = data["vertex"]
    verts = np.stack([v["x"], v["y"], v["z"]], axis=1)
    colors = None
    if all(c in v for c in ("red", "green", "blue")):
        colors = color_from_u8(np.stack([v["red"], v["green"], v["blue"]], axis=1))
    faces = np.zeros((0, 3), np.int64)
    if "face" in data:
        fl = data["face"].get("vertex_indices") or data["face"].get("vertex_index") or []
        tris = []
        for poly in fl:
            poly = [int(i) for i in poly]
            for j in range(1, len(poly) - 1):  # fan-triangulate
                tris.append((poly[0], poly[j], poly[j + 1]))
        if tris:
            faces = np.array(tris, np.int64)
    return verts, faces, colors


# --- OBJ -------------------------------------------------------------------


def encode_obj(vertices: np.ndarray, faces: np.ndarray,
               colors: Optional[np.ndarray] = None) -> bytes:
    """OBJ bytes; vertex colors ride on the v line as three extra floats."""
    vertices = np.asarray(vertices, np.float64).reshape(-1, 3)
    faces = np.asarray(faces, np.int64).reshape(-1, 3)
    lines = []
    for i, p in enumerate(vertices):
        if colors is not None:
            c = colors[i]
            lines.append("v %s %s %s %s %s %s" % tuple(_fmt(x) for x in (*p, *c)))
        else:
            lines.append("v %s %s %s" % tuple(_fmt(x) for x in p))
    for f in faces:
        lines.append("f %d %d %d" % (f[0] + 1, f[1] + 1, f[2] + 1))
    return ("\n".join(lines) + "\n").encode("ascii")


def save_obj(path, vertices: np.ndarray, faces: np.ndarray,
             colors: Optional[np.ndarray] = None) -> None:
    """Write OBJ; vertex colors ride on the v line as three extra floats."""
    atomic_write(path, encode_obj(vertices, faces, colors))


def load_obj(path):
    """Read OBJ triangles; returns (vertices, faces, colors-or-None)."""
    verts, cols, faces = [], [], []
    with open(path, "r", encoding="ascii", errors="replace") as f:
        for line in f:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "v":
                vals = [float(x) for x in tok[1:]]
                verts.append(vals[:3])
                if len(vals) >= 6:
                    cols.append(vals[3:6])
            elif tok[0] == "f":
                ids = [int(t.split("/")[0]) - 1 for t in tok[1:]]
                for j in range(1, len(ids) - 1):
                    faces.append((ids[0], ids[j], ids[j + 1]))
    v = np.array(verts, np.float64).reshape(-1, 3)
    c = np.array(cols, np.float64).reshape(-1, 3) if len(cols) == len(verts) and cols else None
    return v, np.array(faces, np.int64).reshape(-1, 3), c


# --- images ----------------------------------------------------------------


def save_pfm(path, image: np.ndarray) -> None:
    """Write a (H, W, 3) float32 radiance map, little-endian, top row first in memory."""
    img = np.asarray(image, np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError("PFM writer expects (H, W, 3)")
    h, w = img.shape[:2]
    # PFM stores rows bottom-to-top
    body = np.flipud(img).astype("<f4").tobytes()
    atomic_write(path, f"PF\n{w} {h}\n-1.0\n".encode("ascii") + body)


def load_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    parts = blob.split(b"\n", 3)
    if len(parts) < 4 or parts[0].strip() not in (b"PF", b"Pf"):
        raise FormatError("not a PFM file")
    w, h = (int(x) for x in parts[1].split())
    scale = float(parts[2])
    dt = "<f4" if scale < 0 else ">f4"
    ch = 3 if parts[0].strip() == b"PF" else 1
    data = np.frombuffer(parts[3], dtype=dt, count=w * h * ch)
    img = data.reshape(h, w, ch).astype(np.float32)
    return np.flipud(img).copy()


def save_png(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) image; floats are treated as linear [0, 1] and quantized."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = color_to_u8(img)
    buf = Image.fromarray(img, mode="RGB")
    import io
    bio = io.BytesIO()
    buf.save(bio, format="PNG")
    atomic_write(path, bio.getvalue())


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def encode_png(image: np.ndarray) -> bytes:
    """PNG bytes for an (H, W, 3) image without touching disk."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = color_to_u8(img)
    import io
    bio = io.BytesIO()
    Image.fromarray(img, mode="RGB").save(bio, format="PNG")
    return bio.getvalue()
