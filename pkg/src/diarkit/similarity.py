"""Similarity matrices and the DKSM container."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError


@dataclass
class SimilarityMatrix:
    values: np.ndarray
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n = self.values.shape[0]
        if self.values.ndim != 2 or self.values.shape != (n, n):
            raise ValidationError(f"similarity matrix must be square, got {self.values.shape}")
        if not self.ids:
            self.ids = [str(i) for i in range(n)]
        if len(self.ids) != n:
            raise ValidationError("id count does not match matrix size")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("similarity matrix has non-finite entries")

    def __len__(self):
        return self.values.shape[0]


# DKSM: magic | u32 n | f32 payload (n*n, row-major) | id table (u32 len + utf-8 per id)


def write_similarity(path, sim: SimilarityMatrix) -> None:
    n = len(sim)
    parts = [b"DKSM", struct.pack("<I", n), np.ascontiguousarray(sim.values, dtype="<f4").tobytes()]
    for u in sim.ids:
        b = u.encode()
        parts.append(struct.pack("<I", len(b)) + b)
    Path(path).write_bytes(b"".join(parts))


def read_similarity(path) -> SimilarityMatrix:
    data = Path(path).read_bytes()
    if data[:4] != b"DKSM" or len(data) < 8:
        raise FormatError(f"{path}: not a DKSM similarity matrix")
    (n,) = struct.unpack_from("<I", data, 4)
    pos = 8 + 4 * n * n
    if len(data) < pos:
        raise FormatError(f"{path}: truncated payload")
    values = np.frombuffer(data, dtype="<f4", count=n * n, offset=8).reshape(n, n).astype(np.float64)
    ids = []
    try:
        for _ in range(n):
            (k,) = struct.unpack_from("<I", data, pos)
            ids.append(data[pos + 4 : pos + 4 + k].decode())
            pos += 4 + k
    except struct.error:
        raise FormatError(f"{path}: truncated id table") from None
    if pos != len(data):
        raise FormatError(f"{path}: trailing bytes")
    return SimilarityMatrix(values, ids)
