"""Stdlib-only writer for the DEBC embedding file format.

Layout: magic "DEBC" (4 bytes), version u32 LE = 1, count u64 LE, dim u32 LE,
then count*dim IEEE-754 float32 LE values, row-major. A sidecar text file
with the same basename and a .txt suffix carries the index-aligned sentences.
"""

from __future__ import annotations

import math
import struct
from array import array
from pathlib import Path

MAGIC = b"DEBC"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQI")


class ExportError(Exception):
    pass


class DebcWriter:
    """Streams embedding rows to disk in input order."""

    def __init__(self, path, dim: int):
        if dim < 1:
            raise ExportError(f"dimension must be >= 1, got {dim}")
        self.path = Path(path)
        self.dim = dim
        self.count = 0
        self._fh = open(self.path, "wb")
        self._fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, 0, dim))

    def write_row(self, values) -> None:
        values = [float(v) for v in values]
        if len(values) != self.dim:
            raise ExportError(
                f"row {self.count} has {len(values)} values, expected {self.dim}")
        if not all(math.isfinite(v) for v in values):
            raise ExportError(f"row {self.count} contains non-finite values")
        if all(v == 0.0 for v in values):
            raise ExportError(f"row {self.count} is a zero vector")
        row = array("f", values)
        if struct.pack("<f", 1.5) != struct.pack("=f", 1.5):  # big-endian host
            row.byteswap()
        self._fh.write(row.tobytes())
        self.count += 1

    def close(self) -> None:
        # back-patch the row count now that it is known
        self._fh.seek(0)
        self._fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, self.count, self.dim))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self._fh.close()
            self.path.unlink(missing_ok=True)
        return False


def sidecar_path(embedding_path) -> Path:
    return Path(embedding_path).with_suffix(".txt")


def write_sidecar(embedding_path, lines) -> None:
    sidecar_path(embedding_path).write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8")
