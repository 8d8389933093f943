"""Colored point clouds and PLY / PCD file I/O.

PLY grammar accepted by :func:`read_cloud`::

    ply
    format (ascii|binary_little_endian|binary_big_endian) 1.0
    (comment ... | obj_info ...)*
    element vertex N
    property <scalar-type> x|y|z           (any numeric type)
    property <integer-type> red|green|blue (optional, 0-255)
    property <scalar-type> <other>         (ignored)
    [further elements, ignored once the vertex block has been read]
    end_header

List properties inside ``vertex`` are rejected.  Written files always use
``float x y z`` + ``uchar red green blue``.

PCD (v0.7, read-only): ``FIELDS`` must include ``x y z``; an ``rgb`` or
``rgba`` field (packed 0x00RRGGBB, stored as float ``F`` or ``U``) supplies
color.  ``DATA ascii`` and ``DATA binary`` are supported; points with
non-finite coordinates (organized-cloud padding) are dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from pickpoint.errors import ParseError, UnsupportedProperty

log = logging.getLogger(__name__)

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


@dataclass(frozen=True, eq=False)
class ColoredPointCloud:
    """Ordered XYZ (meters, float64) + RGB (uint8) points with an optional frame tag."""

    xyz: np.ndarray
    rgb: np.ndarray
    frame_label: Optional[str] = None

    def __post_init__(self):
        xyz = np.array(self.xyz, dtype=np.float64).reshape(-1, 3)
        rgb_in = np.asarray(self.rgb)
        if rgb_in.size == 0:
            rgb_in = rgb_in.reshape(0, 3)
        if rgb_in.dtype != np.uint8:
            if rgb_in.size and (rgb_in.min() < 0 or rgb_in.max() > 255):
                raise ValueError("color channels must lie in [0, 255]")
        rgb = np.array(rgb_in, dtype=np.uint8).reshape(-1, 3)
        if len(xyz) != len(rgb):
            raise ValueError(f"{len(xyz)} positions but {len(rgb)} colors")
        if not np.all(np.isfinite(xyz)):
            raise ValueError("point coordinates must be finite")
        xyz.setflags(write=False)
        rgb.setflags(write=False)
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "rgb", rgb)

    def __len__(self):
        return len(self.xyz)

    @classmethod
    def empty(cls, frame_label=None) -> ColoredPointCloud:
        return cls(np.zeros((0, 3)), np.zeros((0, 3), np.uint8), frame_label)

    def with_positions(self, xyz) -> ColoredPointCloud:
        return ColoredPointCloud(xyz, self.rgb, self.frame_label)

    def relabel(self, frame_label) -> ColoredPointCloud:
        return ColoredPointCloud(self.xyz, self.rgb, frame_label)

    def select(self, mask_or_index) -> ColoredPointCloud:
        return ColoredPointCloud(self.xyz[mask_or_index], self.rgb[mask_or_index], self.frame_label)

    def same_points(self, other: ColoredPointCloud) -> bool:
        return np.array_equal(self.xyz, other.xyz) and np.array_equal(self.rgb, other.rgb)

    def __repr__(self):
        return f"ColoredPointCloud(n={len(self)}, frame={self.frame_label!r})"


def concat(clouds: Sequence[ColoredPointCloud], frame_label=None) -> ColoredPointCloud:
    """Stack clouds block-wise, preserving input order."""
    if not clouds:
        return ColoredPointCloud.empty(frame_label)
    if frame_label is None:
        labels = {c.frame_label for c in clouds}
        frame_label = labels.pop() if len(labels) == 1 else None
    xyz = np.concatenate([c.xyz for c in clouds])
    rgb = np.concatenate([c.rgb for c in clouds])
    return ColoredPointCloud(xyz, rgb, frame_label)


def float32_roundtrip(cloud: ColoredPointCloud) -> ColoredPointCloud:
    """The cloud as it reads back from a PLY file (positions stored as float32)."""
    return cloud.with_positions(cloud.xyz.astype(np.float32).astype(np.float64))


# --- writing ------------------------------------------------------------------

def write_cloud(cloud: ColoredPointCloud, path, format: str = "ply_binary") -> None:
    """Write ``cloud`` as PLY; ``format`` is ``ply_ascii`` or ``ply_binary`` (little endian)."""
    fmt = {"ply_ascii": "ascii", "ply_binary": "binary_little_endian",
           "ply_binary_le": "binary_little_endian"}.get(format)
    if fmt is None:
        raise ValueError(f"unknown output format {format!r}")
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        + (f"comment frame {cloud.frame_label}\n" if cloud.frame_label else "")
        + f"element vertex {len(cloud)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    xyz32 = cloud.xyz.astype(np.float32)
    try:
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            if fmt == "ascii":
                lines = [
                    "%.9g %.9g %.9g %d %d %d\n" % (x, y, z, r, g, b)
                    for (x, y, z), (r, g, b) in zip(xyz32.tolist(), cloud.rgb.tolist())
                ]
                fh.write("".join(lines).encode("ascii"))
            else:
                rec = np.empty(len(cloud), dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                                                   ("r", "u1"), ("g", "u1"), ("b", "u1")])
                rec["x"], rec["y"], rec["z"] = xyz32[:, 0], xyz32[:, 1], xyz32[:, 2]
                rec["r"], rec["g"], rec["b"] = cloud.rgb[:, 0], cloud.rgb[:, 1], cloud.rgb[:, 2]
                fh.write(rec.tobytes())
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc


# --- reading ------------------------------------------------------------------

def read_cloud(path, format: Optional[str] = None) -> ColoredPointCloud:
    """Read a PLY or PCD file; ``format`` defaults to the file extension."""
    fmt = (format or Path(path).suffix.lstrip(".")).lower()
    data = Path(path).read_bytes()
    if fmt == "ply":
        return _read_ply(data)
    if fmt == "pcd":
        return _read_pcd(data)
    raise ValueError(f"unknown cloud format {fmt!r}")


def _header_lines(data: bytes, terminator) -> tuple[list[str], int]:
    lines = []
    pos = 0
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise ParseError(f"parse error at line {len(lines) + 1}: header not terminated")
        line = data[pos:nl].decode("ascii", errors="replace").strip()
        lines.append(line)
        pos = nl + 1
        if terminator(line):
            return lines, pos


def _read_ply(data: bytes) -> ColoredPointCloud:
    lines, body_start = _header_lines(data, lambda ln: ln == "end_header")
    if lines[0] != "ply":
        raise ParseError("parse error at line 1: missing 'ply' magic")
    if lines[-1] != "end_header":
        raise ParseError(f"parse error at line {len(lines)}: expected end_header")
    encoding = None
    elements: list[dict] = []
    for lineno, line in enumerate(lines[1:-1], start=2):
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) != 3 or tok[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise ParseError(f"parse error at line {lineno}: bad format line")
            encoding = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise ParseError(f"parse error at line {lineno}: bad element line")
            elements.append({"name": tok[1], "count": int(tok[2]), "props": [], "has_list": False})
        elif tok[0] == "property":
            if not elements:
                raise ParseError(f"parse error at line {lineno}: property before element")
            if len(tok) >= 2 and tok[1] == "list":
                if len(tok) != 5:
                    raise ParseError(f"parse error at line {lineno}: bad list property")
                if elements[-1]["name"] == "vertex":
                    raise UnsupportedProperty(f"unsupported property: list '{tok[4]}' in vertex")
                elements[-1]["has_list"] = True
                elements[-1]["props"].append((tok[4], None))
                continue
            if len(tok) != 3:
                raise ParseError(f"parse error at line {lineno}: bad property line")
            if tok[1] not in _PLY_TYPES:
                raise UnsupportedProperty(f"unsupported property type '{tok[1]}' at line {lineno}")
            elements[-1]["props"].append((tok[2], _PLY_TYPES[tok[1]]))
        else:
            raise ParseError(f"parse error at line {lineno}: unexpected keyword '{tok[0]}'")
    if encoding is None:
        raise ParseError("parse error at line 2: missing format line")
    names = [e["name"] for e in elements]
    if "vertex" not in names:
        raise ParseError(f"parse error at line {len(lines)}: no vertex element")
    vi = names.index("vertex")
    vertex = elements[vi]
    prop_names = [p for p, _ in vertex["props"]]
    for axis in "xyz":
        if axis not in prop_names:
            raise ParseError(f"parse error at line {len(lines)}: vertex lacks property '{axis}'")

    if encoding == "ascii":
        text = data[body_start:].decode("ascii", errors="replace").splitlines()
        skip = 0
        for e in elements[:vi]:
            skip += e["count"]
        rows = text[skip: skip + vertex["count"]]
        if len(rows) < vertex["count"]:
            raise ParseError(f"parse error at line {len(lines) + skip + len(rows) + 1}: truncated vertex data")
        try:
            table = np.array([r.split() for r in rows], dtype=np.float64).reshape(len(rows), -1) if rows \
                else np.zeros((0, len(prop_names)))
        except ValueError as exc:
            raise ParseError(f"parse error at line {len(lines) + skip + 1}: {exc}") from exc
        if table.shape[1] != len(prop_names):
            raise ParseError(f"parse error at line {len(lines) + skip + 1}: expected {len(prop_names)} values")
        # values take the declared type, e.g. "float" text parses to float32 like binary data
        cols = {n: table[:, i].astype(t) if t is not None else table[:, i]
                for i, (n, t) in enumerate(vertex["props"])}
    else:
        endian = "<" if encoding == "binary_little_endian" else ">"
        offset = body_start
        for e in elements[:vi]:
            if e["has_list"]:
                raise UnsupportedProperty(f"unsupported property: list element '{e['name']}' before vertex")
            dt = np.dtype([(n, endian + t) for n, t in e["props"]])
            offset += dt.itemsize * e["count"]
        dt = np.dtype([(n, endian + t) for n, t in vertex["props"]])
        need = dt.itemsize * vertex["count"]
        if len(data) - offset < need:
            raise ParseError(f"parse error at line {len(lines)}: binary vertex block truncated")
        rec = np.frombuffer(data, dtype=dt, count=vertex["count"], offset=offset)
        cols = {n: rec[n] for n in prop_names}

    xyz = np.stack([np.asarray(cols[a], dtype=np.float64) for a in "xyz"], axis=1)
    color_names = ("red", "green", "blue")
    if all(c in cols for c in color_names):
        types = dict(vertex["props"])
        if any(types[c] is not None and types[c].startswith("f") for c in color_names):
            raise UnsupportedProperty("unsupported property: floating-point color channels")
        rgb = np.stack([np.asarray(cols[c]) for c in color_names], axis=1)
        if rgb.size and (rgb.min() < 0 or rgb.max() > 255):
            raise ParseError("parse error: color channel outside [0, 255]")
    else:
        if len(xyz):
            log.warning("PLY has no red/green/blue properties; defaulting colors to white")
        rgb = np.full((len(xyz), 3), 255)
    return ColoredPointCloud(xyz, rgb.astype(np.uint8), _comment_frame(lines))


def _comment_frame(lines) -> Optional[str]:
    for ln in lines:
        if ln.startswith("comment frame "):
            return ln[len("comment frame "):].strip() or None
    return None


_PCD_TYPES = {("F", 4): "f4", ("F", 8): "f8", ("U", 1): "u1", ("U", 2): "u2", ("U", 4): "u4",
              ("I", 1): "i1", ("I", 2): "i2", ("I", 4): "i4", ("U", 8): "u8", ("I", 8): "i8"}


def _read_pcd(data: bytes) -> ColoredPointCloud:
    lines, body_start = _header_lines(data, lambda ln: ln.startswith("DATA"))
    header: dict[str, list[str]] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        header[tok[0].upper()] = tok[1:]
        header.setdefault("_lineno_" + tok[0].upper(), [str(lineno)])
    for key in ("FIELDS", "SIZE", "TYPE", "POINTS", "DATA"):
        if key not in header:
            raise ParseError(f"parse error at line {len(lines)}: missing {key}")
    fields = header["FIELDS"]
    n_fields = len(fields)
    counts = [int(c) for c in header.get("COUNT", ["1"] * n_fields)]
    sizes, types = header["SIZE"], header["TYPE"]
    if not (len(sizes) == len(types) == len(counts) == n_fields):
        ln = header["_lineno_SIZE"][0]
        raise ParseError(f"parse error at line {ln}: FIELDS/SIZE/TYPE/COUNT length mismatch")
    try:
        n_points = int(header["POINTS"][0])
    except (ValueError, IndexError):
        raise ParseError(f"parse error at line {header['_lineno_POINTS'][0]}: bad POINTS") from None
    for axis in "xyz":
        if axis not in fields:
            raise ParseError(f"parse error at line {header['_lineno_FIELDS'][0]}: missing field '{axis}'")
    dtype_fields = []
    for name, size, typ, cnt in zip(fields, sizes, types, counts):
        key = (typ.upper(), int(size))
        if key not in _PCD_TYPES:
            raise UnsupportedProperty(f"unsupported property type {typ}{size} for field '{name}'")
        base = "<" + _PCD_TYPES[key]
        dtype_fields.append((name, base) if cnt == 1 else (name, base, (cnt,)))
    dt = np.dtype(dtype_fields)
    mode = header["DATA"][0].lower()
    if mode == "ascii":
        rows = data[body_start:].decode("ascii", errors="replace").split("\n")
        rows = [r for r in rows if r.strip()][:n_points]
        if len(rows) < n_points:
            raise ParseError(f"parse error at line {len(lines) + len(rows) + 1}: truncated point data")
        rec = np.zeros(n_points, dtype=dt)
        for i, row in enumerate(rows):
            vals = row.split()
            if len(vals) != sum(counts):
                raise ParseError(f"parse error at line {len(lines) + i + 1}: expected {sum(counts)} values")
            j = 0
            for name, cnt, typ in zip(fields, counts, types):
                chunk = vals[j:j + cnt]
                j += cnt
                if name in ("rgb", "rgba") and typ.upper() == "F":
                    # ascii packed color may be written as float text or as the integer bit pattern
                    v = float(chunk[0])
                    if v.is_integer() and abs(v) >= 2 ** 24:
                        rec[name][i] = np.array([int(v)], dtype=np.uint32).view(np.float32)[0]
                    else:
                        rec[name][i] = np.float32(v)
                else:
                    rec[name][i] = chunk[0] if cnt == 1 else chunk
    elif mode == "binary":
        need = dt.itemsize * n_points
        if len(data) - body_start < need:
            raise ParseError(f"parse error at line {len(lines)}: binary point block truncated")
        rec = np.frombuffer(data, dtype=dt, count=n_points, offset=body_start)
    else:
        raise UnsupportedProperty(f"unsupported property: DATA {mode}")

    xyz = np.stack([rec[a].astype(np.float64) for a in "xyz"], axis=1)
    color_field = "rgb" if "rgb" in fields else ("rgba" if "rgba" in fields else None)
    if color_field is not None:
        packed = np.ascontiguousarray(rec[color_field])
        bits = packed.view(np.uint32) if packed.dtype.itemsize == 4 else packed.astype(np.uint32)
        rgb = np.stack([(bits >> 16) & 0xFF, (bits >> 8) & 0xFF, bits & 0xFF], axis=1).astype(np.uint8)
    else:
        if len(xyz):
            log.warning("PCD has no rgb field; defaulting colors to white")
        rgb = np.full((len(xyz), 3), 255, dtype=np.uint8)
    finite = np.all(np.isfinite(xyz), axis=1)
    if not finite.all():
        log.warning("dropping %d points with non-finite coordinates", int((~finite).sum()))
    return ColoredPointCloud(xyz[finite], rgb[finite])
