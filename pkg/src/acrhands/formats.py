"""On-disk formats: the ACRT tensor file, OBJ meshes, P5 PGM heatmaps, trace CSV and JSON.

Every writer goes through ``atomic_write`` so a reader never sees a partial file.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import FormatError

TENSOR_MAGIC = b"ACRT"
TENSOR_VERSION = 1
_HEADER = struct.Struct("<4sHH")


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to a temp file beside ``path`` and rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


# ---------------------------------------------------------------- tensor file

def encode_tensor(array) -> bytes:
    arr = np.asarray(array)
    if arr.ndim > 0xFFFF or any(d > 0xFFFFFFFF for d in arr.shape):
        raise FormatError(f"shape {arr.shape} does not fit the tensor header")
    header = _HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_tensor(data: bytes) -> np.ndarray:
    """Parse an ACRT blob into a float32 array; any inconsistency raises FormatError."""
    if len(data) < _HEADER.size:
        raise FormatError("tensor file is shorter than its header")
    magic, version, ndim = _HEADER.unpack_from(data)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported tensor version {version}")
    offset = _HEADER.size + 4 * ndim
    if len(data) < offset:
        raise FormatError("tensor header truncated")
    dims = struct.unpack_from(f"<{ndim}I", data, _HEADER.size)
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    if len(data) - offset != 4 * count:
        raise FormatError(f"payload holds {len(data) - offset} bytes, expected {4 * count} for dims {dims}")
    return np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(dims).astype(np.float32)


def write_tensor(path, array) -> None:
    atomic_write(path, encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


# ---------------------------------------------------------------- OBJ

def encode_obj(vertices, faces) -> bytes:
    buf = io.StringIO()
    for x, y, z in np.asarray(vertices, dtype=np.float32):
        buf.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
    for a, b, c in np.asarray(faces, dtype=np.int64) + 1:
        buf.write(f"f {a} {b} {c}\n")
    return buf.getvalue().encode("ascii")


def decode_obj(text: str):
    """Vertices (float32) and 0-based triangle faces; only "v" and "f" lines are read."""
    verts, faces = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
        except ValueError:
            raise FormatError(f"line {lineno}: cannot parse {line!r}") from None
    return np.array(verts, dtype=np.float32).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def write_obj(path, vertices, faces) -> None:
    atomic_write(path, encode_obj(vertices, faces))


def read_obj(path):
    return decode_obj(Path(path).read_text())


# ---------------------------------------------------------------- PGM

def quantize(image) -> np.ndarray:
    """[0, 1] floats to 0-255 bytes, clipped and rounded to nearest."""
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255).astype(np.uint8)


def encode_pgm(image) -> bytes:
    q = quantize(image)
    if q.ndim != 2:
        raise FormatError(f"PGM needs a 2D image, got shape {q.shape}")
    h, w = q.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + q.tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise FormatError(f"not a binary PGM (magic {fields[0]!r})")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}")
    pixels = data[pos + 1:]
    if len(pixels) != w * h:
        raise FormatError(f"PGM payload holds {len(pixels)} bytes, expected {w * h}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w).copy()


def write_pgm(path, image) -> None:
    atomic_write(path, encode_pgm(image))


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


# ---------------------------------------------------------------- CSV and JSON

def encode_trace_csv(trace: Sequence[Mapping], columns: Iterable[str]) -> bytes:
    columns = list(columns)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in trace:
        writer.writerow([row["iteration"]] + [repr(float(row[c])) for c in columns[1:]])
    return buf.getvalue().encode("ascii")


def write_trace_csv(path, trace: Sequence[Mapping], terms: Iterable[str]) -> None:
    atomic_write(path, encode_trace_csv(trace, ["iteration", "total", *terms]))


def read_trace_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "iteration" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def write_json(path, doc) -> None:
    atomic_write(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
