"""Binary matrix files, CSV exports and atomic file writes.

Matrix files start with a 32-byte little-endian header

    magic "SGPM" | version u16 | scalar kind u8 | 9 reserved bytes | rows u64 | cols u64

followed by the row-major payload, so they can be memory-mapped directly.
"""
from __future__ import annotations

import csv
import io as _io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"SGPM"
VERSION = 1
HEADER = struct.Struct("<4sHB9xQQ")
KINDS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
KIND_OF = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
assert HEADER.size == 32


def _atomic_replace(path: Path, write) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            write(fh)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes) -> None:
    _atomic_replace(Path(path), lambda fh: fh.write(data))


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_matrix(path, a, dtype="f8") -> None:
    a = np.asarray(a)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError("only 2D matrices can be stored")
    dt = np.dtype(dtype).newbyteorder("<")
    header = HEADER.pack(MAGIC, VERSION, KIND_OF[dt], a.shape[0], a.shape[1])

    def write(fh):
        fh.write(header)
        rows_per_block = max(1, (64 << 20) // max(1, a.shape[1] * dt.itemsize))
        for lo in range(0, a.shape[0], rows_per_block):
            fh.write(np.ascontiguousarray(a[lo:lo + rows_per_block], dtype=dt).tobytes())

    _atomic_replace(Path(path), write)


def read_header(path) -> tuple[np.dtype, int, int]:
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
    if len(raw) != HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, kind, rows, cols = HEADER.unpack(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a matrix file (magic {magic!r})")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if kind not in KINDS:
        raise ValueError(f"{path}: unknown scalar kind {kind}")
    return KINDS[kind], rows, cols


def read_matrix(path, mmap: bool = False) -> np.ndarray:
    dt, rows, cols = read_header(path)
    expected = HEADER.size + rows * cols * dt.itemsize
    size = os.path.getsize(path)
    if size != expected:
        raise ValueError(f"{path}: payload size {size} does not match header ({expected})")
    if mmap:
        return np.memmap(path, dtype=dt, mode="r", offset=HEADER.size, shape=(rows, cols))
    with open(path, "rb") as fh:
        fh.seek(HEADER.size)
        return np.frombuffer(fh.read(), dtype=dt).reshape(rows, cols).astype(np.float64)


def fmt(x) -> str:
    """Round-trip representation of a float (17 significant digits)."""
    return format(float(x), ".17g")


def write_csv(path, header, rows) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    atomic_write_text(path, buf.getvalue())


def write_field_csv(path, values) -> None:
    """Flat-index/value CSV for a grid field."""
    write_csv(path, ["index", "value"], ((i, float(v)) for i, v in enumerate(np.ravel(values))))


def write_grid_csv(path, field2d) -> None:
    """2D field as a CSV table, one grid row per line."""
    field2d = np.atleast_2d(field2d)
    text = "\n".join(",".join(fmt(v) for v in row) for row in field2d) + "\n"
    atomic_write_text(path, text)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
