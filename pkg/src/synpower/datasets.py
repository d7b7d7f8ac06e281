"""F32D binary matrices and their JSON tag sidecars.

Layout (all little-endian)::

    offset  size        field
    0       4           magic b"F32D"
    4       4 (u32)     format version (1)
    8       4 (u32)     rank r
    12      4*r (u32)   dims, outermost first
    12+4r   4*prod      float32 payload, row-major

The sidecar lives next to the data file as ``<stem>.tags.json``::

    {"format": "F32D-tags", "version": 1,
     "vocabulary": ["visual", "auditory"],
     "rows": [["visual"], ["visual", "auditory"], []]}
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .sampling import TaggedDataset

MAGIC = b"F32D"
VERSION = 1


class DatasetFormatError(ValueError):
    pass


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".tags.json")


def encode_f32d(array) -> bytes:
    a = np.ascontiguousarray(array, dtype="<f4")
    header = MAGIC + struct.pack("<II", VERSION, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return header + a.tobytes()


def decode_f32d(data: bytes) -> np.ndarray:
    if len(data) < 12 or data[:4] != MAGIC:
        raise DatasetFormatError("not an F32D file (bad magic)")
    version, rank = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise DatasetFormatError(f"unsupported F32D version {version}; supported: {VERSION}")
    if rank > 8 or len(data) < 12 + 4 * rank:
        raise DatasetFormatError("truncated or implausible F32D header")
    dims = struct.unpack_from(f"<{rank}I", data, 12)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    start = 12 + 4 * rank
    if len(data) != start + 4 * count:
        raise DatasetFormatError(f"F32D payload is {len(data) - start} bytes, expected {4 * count}")
    return np.frombuffer(data, dtype="<f4", count=count, offset=start).reshape(dims).astype(np.float32)


def write_f32d(path, array, tags: Optional[Sequence[Sequence[str]]] = None,
               vocabulary: Optional[Sequence[str]] = None) -> None:
    Path(path).write_bytes(encode_f32d(array))
    if tags is not None:
        if vocabulary is None:
            vocabulary = sorted(set().union(*map(set, tags))) if tags else []
        doc = {"format": "F32D-tags", "version": 1, "vocabulary": list(vocabulary),
               "rows": [sorted(t) for t in tags]}
        sidecar_path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def read_f32d(path) -> np.ndarray:
    return decode_f32d(Path(path).read_bytes())


def read_tagged(path) -> TaggedDataset:
    """Load an F32D matrix plus its tag sidecar as a :class:`TaggedDataset`."""
    rows = read_f32d(path)
    if rows.ndim != 2:
        raise DatasetFormatError(f"tagged datasets must be rank 2, got rank {rows.ndim}")
    side = sidecar_path(path)
    try:
        doc = json.loads(side.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetFormatError(f"missing tag sidecar {side}") from None
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"malformed tag sidecar {side}: {exc}") from exc
    if doc.get("format") != "F32D-tags" or "rows" not in doc or "vocabulary" not in doc:
        raise DatasetFormatError(f"{side} is not an F32D tag sidecar")
    if len(doc["rows"]) != len(rows):
        raise DatasetFormatError(f"sidecar lists {len(doc['rows'])} rows, data has {len(rows)}")
    return TaggedDataset(rows.astype(np.float64), tuple(frozenset(t) for t in doc["rows"]),
                         tuple(doc["vocabulary"]))
