"""Single-file NIfTI-1 reading, intensity normalization, flattening, tag
sidecars and slice rendering."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)

HEADER_SIZE = 348
MAGIC_SINGLE = b"n+1\x00"

# datatype code -> numpy kind
DATATYPES = {2: "u1", 4: "i2", 16: "f4"}


class NiftiError(ValueError):
    """Base class for NIfTI parse failures."""


class NiftiMagicError(NiftiError):
    pass


class NiftiHeaderSizeError(NiftiError):
    pass


class NiftiDatatypeError(NiftiError):
    pass


class NiftiTruncatedError(NiftiError):
    pass


class NiftiDimensionError(NiftiError):
    pass


class NiftiOffsetError(NiftiError):
    pass


@dataclass(frozen=True)
class NiftiHeader:
    sizeof_hdr: int
    datatype: int
    bitpix: int
    dims: Tuple[int, ...]
    scl_slope: float
    scl_inter: float
    vox_offset: int
    magic: bytes
    endian: str


@dataclass(frozen=True, eq=False)
class Volume:
    dims: Tuple[int, int, int]
    voxels: np.ndarray  # flat float32, x fastest
    affine: np.ndarray
    nonfinite_replaced: int = 0

    @property
    def array(self) -> np.ndarray:
        """(nx, ny, nz) view with voxels[x + nx*(y + ny*z)] at [x, y, z]."""
        return self.voxels.reshape(self.dims, order="F")

    @classmethod
    def from_array(cls, arr, affine=None) -> "Volume":
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"expected a 3-D array, got shape {arr.shape}")
        return cls(tuple(arr.shape), arr.ravel(order="F").copy(),
                   np.eye(4) if affine is None else np.asarray(affine, dtype=np.float64))


def parse_header(data: bytes) -> NiftiHeader:
    if len(data) < HEADER_SIZE:
        raise NiftiTruncatedError(f"header needs {HEADER_SIZE} bytes, file has {len(data)}")
    for endian in "<>":
        if struct.unpack_from(endian + "i", data, 0)[0] == HEADER_SIZE:
            break
    else:
        raise NiftiHeaderSizeError(f"sizeof_hdr is not {HEADER_SIZE} in either byte order")
    magic = bytes(data[344:348])
    if magic != MAGIC_SINGLE:
        raise NiftiMagicError(f"magic {magic!r} is not single-file NIfTI-1 {MAGIC_SINGLE!r}")
    dim = struct.unpack_from(endian + "8h", data, 40)
    datatype, bitpix = struct.unpack_from(endian + "hh", data, 70)
    vox_offset, slope, inter = struct.unpack_from(endian + "fff", data, 108)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise NiftiDimensionError(f"dim[0]={ndim} is not a valid dimension count")
    if ndim > 4 or (ndim == 4 and dim[4] != 1):
        raise NiftiDimensionError(f"only 3-D volumes (optionally with a singleton 4th axis) are supported; "
                                  f"dims {dim[1:ndim + 1]}")
    dims = tuple(dim[1:ndim + 1])[:3]
    dims = dims + (1,) * (3 - len(dims))
    if min(dims) < 1:
        raise NiftiDimensionError(f"non-positive dimension in {dims}")
    if datatype not in DATATYPES:
        raise NiftiDatatypeError(f"unsupported datatype code {datatype}; supported: {sorted(DATATYPES)}")
    if not np.isfinite(vox_offset) or vox_offset < HEADER_SIZE or vox_offset != int(vox_offset):
        raise NiftiOffsetError(f"vox_offset {vox_offset} must be an integer >= {HEADER_SIZE}")
    return NiftiHeader(HEADER_SIZE, datatype, bitpix, dims, float(slope), float(inter),
                       int(vox_offset), magic, endian)


def _affine(data: bytes, endian: str) -> np.ndarray:
    sform_code = struct.unpack_from(endian + "h", data, 254)[0]
    aff = np.eye(4)
    if sform_code > 0:
        rows = struct.unpack_from(endian + "12f", data, 280)
        aff[:3] = np.array(rows, dtype=np.float64).reshape(3, 4)
    return aff


def read_nifti(data: bytes) -> Volume:
    """Decode a single-file NIfTI-1 image into a :class:`Volume`."""
    data = bytes(data)
    hdr = parse_header(data)
    kind = DATATYPES[hdr.datatype]
    count = hdr.dims[0] * hdr.dims[1] * hdr.dims[2]
    itemsize = np.dtype(kind).itemsize
    end = hdr.vox_offset + count * itemsize
    if len(data) < end:
        raise NiftiTruncatedError(f"payload needs {count * itemsize} bytes at offset {hdr.vox_offset}, "
                                  f"file has {max(0, len(data) - hdr.vox_offset)}")
    # overflow to inf or NaN is caught by the finiteness pass below
    with np.errstate(invalid="ignore", over="ignore"):
        raw = np.frombuffer(data, dtype=np.dtype(kind).newbyteorder(hdr.endian), count=count,
                            offset=hdr.vox_offset).astype(np.float64)
        if hdr.scl_slope != 0 and np.isfinite(hdr.scl_slope) and np.isfinite(hdr.scl_inter):
            raw = raw * hdr.scl_slope + hdr.scl_inter
        vox = raw.astype(np.float32)
    bad = ~np.isfinite(vox)
    n_bad = int(bad.sum())
    if n_bad:
        vox[bad] = 0.0
    return Volume(hdr.dims, vox, _affine(data, hdr.endian), n_bad)


def load_nifti(path) -> Volume:
    return read_nifti(Path(path).read_bytes())


def normalize(volume: Volume) -> Volume:
    """Min-max rescale to [0, 1]; a constant volume maps to zeros."""
    v = volume.voxels.astype(np.float64)
    lo, hi = (v.min(), v.max()) if v.size else (0.0, 0.0)
    out = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)
    return replace(volume, voxels=out.astype(np.float32))


@dataclass(frozen=True, eq=False)
class FlatVolumes:
    rows: np.ndarray
    dims: Optional[Tuple[int, int, int]]
    empty: bool


def flatten(volumes: Sequence[Volume]) -> FlatVolumes:
    """One row per volume, voxels in x-fastest order."""
    if not volumes:
        return FlatVolumes(np.zeros((0, 0), dtype=np.float32), None, True)
    dims = volumes[0].dims
    for i, vol in enumerate(volumes):
        if vol.dims != dims:
            raise ValueError(f"volume {i} has dims {vol.dims}, expected {dims}")
    return FlatVolumes(np.vstack([v.voxels for v in volumes]), dims, False)


def unflatten(row, dims) -> Volume:
    row = np.asarray(row, dtype=np.float32)
    if row.size != dims[0] * dims[1] * dims[2]:
        raise ValueError(f"row of {row.size} values cannot fill dims {dims}")
    return Volume(tuple(dims), row.copy(), np.eye(4))


# ---------------------------------------------------------------- tags

@dataclass(frozen=True)
class TagTable:
    files: Tuple[str, ...]
    tags: Tuple[frozenset, ...]
    vocabulary: Tuple[str, ...]

    def counts(self) -> Dict[str, int]:
        return {t: sum(t in s for s in self.tags) for t in self.vocabulary}


def load_tags(text: str, expected_files: Optional[Sequence[str]] = None) -> TagTable:
    """Parse a volume tag sidecar.

    Grammar (JSON)::

        {"vocabulary": ["visual", ...],
         "volumes": [{"file": "a.nii", "tags": ["visual"]}, ...]}
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"tag sidecar is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("volumes"), list):
        raise ValueError("tag sidecar needs a 'volumes' list")
    vocab = list(doc.get("vocabulary", []))
    files, tags, seen = [], [], set()
    for entry in doc["volumes"]:
        name = entry["file"]
        if name in seen:
            raise ValueError(f"volume {name!r} is listed more than once")
        seen.add(name)
        ts = frozenset(entry.get("tags", []))
        for t in sorted(ts - set(vocab)):
            log.warning("tag %r of %s is not in the vocabulary; adding it", t, name)
            vocab.append(t)
        files.append(name)
        tags.append(ts)
    if expected_files is not None:
        missing = sorted(set(expected_files) - seen)
        extra = sorted(seen - set(expected_files))
        if missing:
            raise ValueError(f"tag sidecar has no entry for {missing}")
        if extra:
            raise ValueError(f"tag sidecar lists unknown volumes {extra}")
    return TagTable(tuple(files), tuple(tags), tuple(vocab))


# ---------------------------------------------------------------- rendering

def slice_bytes(volume: Volume, axis: int, index: int) -> Tuple[int, int, bytes]:
    """8-bit pixels of one slice, mapped with the volume's global min/max.

    Returns (width, height, bytes); rows run along the second remaining axis.
    A constant volume renders as mid gray (128).
    """
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2, got {axis}")
    if not 0 <= index < volume.dims[axis]:
        raise IndexError(f"slice {index} outside 0..{volume.dims[axis] - 1} on axis {axis}")
    arr = volume.array.astype(np.float64)
    lo, hi = arr.min(), arr.max()
    plane = np.take(arr, index, axis=axis)  # (width, height)
    if hi == lo:
        pix = np.full(plane.shape, 128, dtype=np.uint8)
    else:
        pix = np.floor((plane - lo) / (hi - lo) * 255.0 + 0.5).astype(np.uint8)
    width, height = plane.shape
    return width, height, pix.T.tobytes()


def render_slices(volume: Volume, axis: int, indices: Sequence[int], path) -> List[Path]:
    """Write binary PGM images ``<path>_<axis>_<index>.pgm``; returns their paths."""
    base = Path(path)
    out = []
    for i in indices:
        w, h, pix = slice_bytes(volume, axis, i)
        p = base.with_name(f"{base.name}_{axis}_{i}.pgm")
        p.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pix)
        out.append(p)
    return out
