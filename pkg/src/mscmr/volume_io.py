"""Volumetric grids and their on-disk formats.

Two storage formats are supported:

* NIfTI-1 single-file images (``.nii`` / ``.nii.gz``, magic ``n+1\\0``).
  Only the shape (``dim``), voxel size (``pixdim[1..3]``), data type and the
  ``scl_slope``/``scl_inter`` pair are interpreted.  **Orientation fields
  (qform/sform, quaternions, srow) are ignored on read and zeroed on write**;
  the pipeline works purely in voxel index space plus per-axis spacing.
* A raw + JSON sidecar pair used by the tests: ``<name>.raw`` holds the
  little-endian payload, ``<name>.json`` holds
  ``{"dims": [nx, ny, nz], "spacing": [sx, sy, sz], "dtype": "...",
  "class_count": C}`` (``class_count`` only for labels) or
  ``"channels": C`` for probability stacks.

Voxel arrays are indexed ``[x, y, z]`` (and ``[x, y, z, c]`` for
probabilities).  The linear order on disk is x fastest, then y, then z, then
channel, i.e. Fortran order of these arrays.
"""
from __future__ import annotations

import gzip
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "GridError",
    "VolumeFormatError",
    "GridMeta",
    "VoxelGrid3D",
    "LabelGrid3D",
    "ProbGrid4D",
    "LabelRemap",
    "read_volume",
    "write_volume",
    "read_sidecar",
    "write_sidecar",
    "read_probability_stack",
    "assemble_probability_stack",
    "write_probability",
    "load",
    "save",
    "encode_for_path",
    "atomic_write_bytes",
]

DEFAULT_CLASS_COUNT = 4
CLASS_NAMES = ("background", "RV", "LV", "LVM")

# NIfTI-1 datatype code -> (numpy dtype name, bitpix)
NIFTI_DTYPES: dict[int, tuple[str, int]] = {
    2: ("uint8", 8),
    4: ("int16", 16),
    512: ("uint16", 16),
    16: ("float32", 32),
}
_CODE_BY_NAME = {name: code for code, (name, _) in NIFTI_DTYPES.items()}

HEADER_SIZE = 348
VOX_OFFSET = 352
_MAGIC = b"n+1\x00"
PROB_SUM_TOL = 1e-3
PROB_NEG_TOL = 1e-6


class GridError(ValueError):
    """A grid violates its invariants, or two grids do not match."""


class VolumeFormatError(ValueError):
    """Bytes could not be decoded as a supported volume."""


@dataclass(frozen=True)
class GridMeta:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    value_scaling: tuple[float, float] = (1.0, 0.0)
    # on-disk datatype the grid was decoded from, reused on write
    dtype: str | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise GridError(f"dims must be three positive integers, got {self.dims}")
        if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
            raise GridError(f"spacing must be three positive finite reals, got {self.spacing}")
        slope, inter = (float(v) for v in self.value_scaling)
        if not (np.isfinite(slope) and np.isfinite(inter)):
            raise GridError("value scaling must be finite")
        if self.dtype is not None and self.dtype not in _CODE_BY_NAME:
            raise GridError(f"unsupported dtype {self.dtype!r}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "value_scaling", (slope, inter))

    @property
    def slice_shape(self) -> tuple[int, int]:
        return self.dims[0], self.dims[1]

    def with_dims(self, dims, spacing=None) -> "GridMeta":
        """New grid geometry; decoded-file scaling and dtype are not carried over."""
        return GridMeta(dims, self.spacing if spacing is None else spacing)

    def same_grid(self, other: "GridMeta") -> bool:
        return self.dims == other.dims and self.spacing == other.spacing

    def describe_mismatch(self, other: "GridMeta") -> str:
        """Axis-by-axis difference of dims and spacing, for error messages."""
        lines = []
        for axis, name in enumerate("xyz"):
            a, b = self.dims[axis], other.dims[axis]
            if a != b:
                lines.append(f"axis {name}: dims {a} != {b}")
            sa, sb = self.spacing[axis], other.spacing[axis]
            if sa != sb:
                lines.append(f"axis {name}: spacing {sa!r} != {sb!r}")
        return "; ".join(lines) or "grids match"

    def to_json(self) -> dict:
        return {"dims": list(self.dims), "spacing": list(self.spacing)}


@dataclass(frozen=True)
class VoxelGrid3D:
    """Scalar intensity volume; ``voxels`` is float64 with shape ``meta.dims``."""

    meta: GridMeta
    voxels: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.voxels)
        if v.shape != self.meta.dims:
            raise GridError(f"voxel array shape {v.shape} != dims {self.meta.dims}")
        v = v.astype(np.float64, copy=False)
        if not np.all(np.isfinite(v)):
            raise GridError("intensity grid contains NaN or Inf")
        object.__setattr__(self, "voxels", v)

    @classmethod
    def from_array(cls, voxels, spacing=(1.0, 1.0, 1.0)) -> "VoxelGrid3D":
        voxels = np.asarray(voxels, dtype=np.float64)
        return cls(GridMeta(voxels.shape, spacing), voxels)


@dataclass(frozen=True)
class LabelGrid3D:
    """Per-voxel class IDs in ``0..class_count-1`` (0 is background)."""

    meta: GridMeta
    voxels: np.ndarray
    class_count: int = DEFAULT_CLASS_COUNT

    def __post_init__(self):
        v = np.asarray(self.voxels)
        if v.shape != self.meta.dims:
            raise GridError(f"label array shape {v.shape} != dims {self.meta.dims}")
        if self.class_count < 1:
            raise GridError("class_count must be >= 1")
        if v.dtype.kind not in "iub":
            if not np.all(np.isfinite(v)) or np.any(v != np.round(v)):
                raise GridError("label grid contains non-integral values")
        v = v.astype(np.int32, copy=False)
        if v.size and (v.min() < 0 or v.max() >= self.class_count):
            raise GridError(f"label IDs must lie in 0..{self.class_count - 1}")
        object.__setattr__(self, "voxels", v)

    @classmethod
    def from_array(cls, voxels, spacing=(1.0, 1.0, 1.0),
                   class_count=DEFAULT_CLASS_COUNT) -> "LabelGrid3D":
        voxels = np.asarray(voxels)
        return cls(GridMeta(voxels.shape, spacing), voxels, class_count)

    def replace(self, voxels) -> "LabelGrid3D":
        return LabelGrid3D(self.meta, voxels, self.class_count)


@dataclass(frozen=True)
class ProbGrid4D:
    """Per-voxel probability simplex; ``voxels`` has shape ``dims + (C,)``."""

    meta: GridMeta
    voxels: np.ndarray
    check_simplex: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.voxels, dtype=np.float64)
        if v.ndim != 4 or v.shape[:3] != self.meta.dims:
            raise GridError(f"probability array shape {v.shape} does not match dims {self.meta.dims}")
        if v.shape[3] < 2:
            raise GridError("probability stacks need at least two classes")
        if self.check_simplex:
            if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
                raise GridError("probabilities must lie in [0, 1]")
            if np.max(np.abs(v.sum(axis=3) - 1.0)) > 1e-5:
                raise GridError("per-voxel probabilities must sum to 1 within 1e-5")
        object.__setattr__(self, "voxels", v)

    @property
    def class_count(self) -> int:
        return self.voxels.shape[3]

    @classmethod
    def from_array(cls, voxels, spacing=(1.0, 1.0, 1.0)) -> "ProbGrid4D":
        voxels = np.asarray(voxels, dtype=np.float64)
        return cls(GridMeta(voxels.shape[:3], spacing), voxels)

    @classmethod
    def one_hot(cls, labels: LabelGrid3D) -> "ProbGrid4D":
        eye = np.eye(labels.class_count, dtype=np.float64)
        return cls(labels.meta, eye[labels.voxels])


class LabelRemap:
    """Bijective map from on-disk label codes to class IDs.

    The default is the identity on ``0..C-1``.  Dataset-specific tables (for
    example the MS-CMR convention ``{0: 0, 600: 1, 500: 2, 200: 3}``) are
    configuration, loaded from JSON by the CLI.
    """

    def __init__(self, table: Mapping[int, int] | None = None,
                 class_count: int = DEFAULT_CLASS_COUNT):
        if table is None:
            table = {c: c for c in range(class_count)}
        table = {int(k): int(v) for k, v in table.items()}
        ids = list(table.values())
        if len(set(ids)) != len(ids):
            raise GridError("label remap must be a bijection (duplicate class IDs)")
        if any(i < 0 or i >= class_count for i in ids):
            raise GridError(f"remap targets must lie in 0..{class_count - 1}")
        self.table = dict(sorted(table.items()))
        self.class_count = class_count
        self.inverse = {v: k for k, v in self.table.items()}

    @classmethod
    def identity(cls, class_count: int = DEFAULT_CLASS_COUNT) -> "LabelRemap":
        return cls(None, class_count)

    def is_identity(self) -> bool:
        return all(k == v for k, v in self.table.items())

    def encode(self, codes: np.ndarray) -> np.ndarray:
        """On-disk codes -> class IDs; unknown codes raise."""
        uniq, inv = np.unique(codes, return_inverse=True)
        missing = [int(u) for u in uniq if int(u) not in self.table]
        if missing:
            raise VolumeFormatError(f"label codes {missing} are not in the remap table")
        lut = np.array([self.table[int(u)] for u in uniq], dtype=np.int32)
        return lut[inv].reshape(codes.shape)

    def decode(self, ids: np.ndarray) -> np.ndarray:
        """Class IDs -> on-disk codes."""
        uniq, inv = np.unique(ids, return_inverse=True)
        missing = [int(u) for u in uniq if int(u) not in self.inverse]
        if missing:
            raise GridError(f"class IDs {missing} have no code in the remap table")
        lut = np.array([self.inverse[int(u)] for u in uniq], dtype=np.int64)
        return lut[inv].reshape(ids.shape)

    def to_json(self) -> dict:
        return {str(k): v for k, v in self.table.items()}


# --------------------------------------------------------------------------
# NIfTI-1 header
# --------------------------------------------------------------------------

def _pack_header(dims: Sequence[int], spacing: Sequence[float], dtype: str,
                 slope: float, inter: float) -> bytes:
    code = _CODE_BY_NAME[dtype]
    bitpix = NIFTI_DTYPES[code][1]
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    dim = [len(dims)] + list(dims) + [1] * (7 - len(dims))
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<hh", hdr, 70, code, bitpix)
    pixdim = [1.0] + list(spacing) + [1.0] * (7 - len(spacing))
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<fff", hdr, 108, float(VOX_OFFSET), slope, inter)
    hdr[123] = 2  # xyzt_units: mm
    hdr[148:148 + 5] = b"mscmr"
    hdr[344:348] = _MAGIC
    return bytes(hdr) + b"\x00\x00\x00\x00"


@dataclass
class _Header:
    dims: tuple[int, ...]
    spacing: tuple[float, ...]
    dtype: np.dtype
    slope: float
    inter: float
    offset: int


def _parse_header(data: bytes) -> _Header:
    if len(data) < HEADER_SIZE:
        raise VolumeFormatError("truncated NIfTI header")
    for endian in "<>":
        if struct.unpack_from(endian + "i", data, 0)[0] == HEADER_SIZE:
            break
    else:
        raise VolumeFormatError("not a NIfTI-1 header (sizeof_hdr != 348)")
    magic = data[344:348]
    if magic != _MAGIC:
        raise VolumeFormatError(f"bad NIfTI magic {magic!r}; only single-file n+1 images are supported")
    dim = struct.unpack_from(endian + "8h", data, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise VolumeFormatError(f"invalid dim[0] = {ndim}")
    dims = tuple(int(d) for d in dim[1:1 + ndim])
    if any(d < 1 for d in dims):
        raise VolumeFormatError(f"nonpositive dimension in {dims}")
    code, _bitpix = struct.unpack_from(endian + "hh", data, 70)
    if code not in NIFTI_DTYPES:
        raise VolumeFormatError(f"unsupported NIfTI datatype code {code}")
    pixdim = struct.unpack_from(endian + "8f", data, 76)
    vox_offset, slope, inter = struct.unpack_from(endian + "fff", data, 108)
    offset = int(vox_offset)
    if offset < HEADER_SIZE:
        raise VolumeFormatError(f"invalid vox_offset {vox_offset}")
    dtype = np.dtype(NIFTI_DTYPES[code][0]).newbyteorder(endian)
    spacing = tuple(abs(float(p)) for p in pixdim[1:1 + min(ndim, 3)])
    return _Header(dims, spacing, dtype, float(slope), float(inter), offset)


def _payload(data: bytes, hdr: _Header) -> np.ndarray:
    count = int(np.prod(hdr.dims))
    nbytes = count * hdr.dtype.itemsize
    if len(data) < hdr.offset + nbytes:
        raise VolumeFormatError(
            f"truncated payload: need {nbytes} bytes after offset {hdr.offset}, "
            f"have {max(len(data) - hdr.offset, 0)}")
    raw = np.frombuffer(data, dtype=hdr.dtype, count=count, offset=hdr.offset)
    if raw.dtype.kind == "f" and not np.all(np.isfinite(raw)):
        raise VolumeFormatError("payload contains NaN or Inf")
    return raw.reshape(hdr.dims, order="F")


def _maybe_gunzip(data: bytes) -> bytes:
    if data[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(data)
        except (OSError, EOFError) as exc:
            raise VolumeFormatError(f"corrupt gzip stream: {exc}") from exc
    return data


def _scale(raw: np.ndarray, slope: float, inter: float) -> np.ndarray:
    values = raw.astype(np.float64)
    if slope != 0.0 and (slope, inter) != (1.0, 0.0):
        values = values * slope + inter
    if not np.all(np.isfinite(values)):
        raise VolumeFormatError("scaled values are not finite")
    return values


def _decode(raw: np.ndarray, spacing, dtype_name: str, slope: float, inter: float,
            kind: str, remap: LabelRemap | None, class_count: int):
    scaling = (slope, inter) if slope != 0.0 else (1.0, 0.0)
    meta = GridMeta(raw.shape[:3], spacing, scaling, dtype_name)
    values = _scale(raw, slope, inter)
    if kind == "intensity":
        return VoxelGrid3D(meta, values)
    if kind != "label":
        raise ValueError(f"kind must be 'intensity' or 'label', got {kind!r}")
    if np.any(values != np.round(values)):
        raise VolumeFormatError("label volume contains non-integral values")
    remap = remap or LabelRemap.identity(class_count)
    ids = remap.encode(values.astype(np.int64))
    return LabelGrid3D(meta, ids, remap.class_count)


def read_volume(data: bytes, kind: str = "intensity", *, remap: LabelRemap | None = None,
                class_count: int = DEFAULT_CLASS_COUNT):
    """Decode a 3D NIfTI-1 image (optionally gzip-compressed).

    ``kind="label"`` requires integral values and maps on-disk codes through
    `remap` (identity on ``0..class_count-1`` by default).
    """
    data = _maybe_gunzip(bytes(data))
    hdr = _parse_header(data)
    if len(hdr.dims) != 3:
        raise VolumeFormatError(f"expected a 3D volume (dim[0] = 3), got dim[0] = {len(hdr.dims)}")
    raw = _payload(data, hdr)
    return _decode(raw, hdr.spacing, hdr.dtype.name, hdr.slope, hdr.inter,
                   kind, remap, class_count)


def _encode_payload(grid, dtype: str | None, remap: LabelRemap | None):
    """Return (raw array, dtype name, slope, inter) for a 3D grid."""
    if isinstance(grid, ProbGrid4D):
        raise GridError(f"{grid.class_count}-channel probability data passed to a 3D writer; "
                        "use write_probability")
    if isinstance(grid, LabelGrid3D):
        codes = grid.voxels.astype(np.int64)
        if remap is not None and not remap.is_identity():
            codes = remap.decode(grid.voxels)
        auto = "uint8" if codes.size == 0 or codes.max() <= 255 else "uint16"
        if dtype is None:
            dtype = grid.meta.dtype
            # a remembered dtype only holds if the (remapped) codes still fit it
            if dtype in ("uint8", "int16", "uint16"):
                info = np.iinfo(dtype)
                if codes.size and (codes.min() < info.min or codes.max() > info.max):
                    dtype = auto
        if dtype is None or dtype == "float32":
            dtype = auto
        info = np.iinfo(dtype) if np.dtype(dtype).kind in "iu" else None
        if info is not None and codes.size and (codes.min() < info.min or codes.max() > info.max):
            raise GridError(f"label codes do not fit in {dtype}")
        return codes.astype(dtype), dtype, 1.0, 0.0
    if isinstance(grid, VoxelGrid3D):
        dtype = dtype or grid.meta.dtype or "float32"
        slope, inter = grid.meta.value_scaling
        values = grid.voxels
        if (slope, inter) != (1.0, 0.0):
            values = (values - inter) / slope
        if np.dtype(dtype).kind in "iu":
            raw = np.rint(values)
            info = np.iinfo(dtype)
            if raw.size and (raw.min() < info.min or raw.max() > info.max):
                raise GridError(f"intensities do not fit in {dtype} under scaling {(slope, inter)}")
            raw = raw.astype(dtype)
        else:
            raw = values.astype(dtype)
        return raw, dtype, slope, inter
    raise TypeError(f"cannot write object of type {type(grid).__name__}")


def write_volume(grid, format: str = "nifti", *, dtype: str | None = None,
                 remap: LabelRemap | None = None) -> bytes:
    """Encode a 3D grid as NIfTI-1 bytes (``format`` is ``nifti`` or ``nifti-gz``).

    Intensities default to float32 (or the dtype they were read from),
    labels to uint8 / uint16.  Use `write_sidecar` for the raw+JSON format.
    """
    raw, dtype, slope, inter = _encode_payload(grid, dtype, remap)
    out = _pack_header(grid.meta.dims, grid.meta.spacing, dtype, slope, inter)
    out += np.ascontiguousarray(raw.astype(np.dtype(dtype).newbyteorder("<")).ravel(order="F")).tobytes()
    if format == "nifti-gz":
        return gzip.compress(out, mtime=0)
    if format != "nifti":
        raise ValueError(f"unknown format {format!r}")
    return out


def write_probability(prob: ProbGrid4D, compress: bool = False) -> bytes:
    """Encode a probability stack as a 4D float32 NIfTI (dim[4] = C)."""
    dims = prob.meta.dims + (prob.class_count,)
    out = _pack_header(dims, prob.meta.spacing, "float32", 1.0, 0.0)
    out += prob.voxels.astype("<f4").ravel(order="F").tobytes()
    return gzip.compress(out, mtime=0) if compress else out


# --------------------------------------------------------------------------
# raw + JSON sidecar
# --------------------------------------------------------------------------

def write_sidecar(grid, *, dtype: str | None = None,
                  remap: LabelRemap | None = None) -> tuple[bytes, dict]:
    if isinstance(grid, ProbGrid4D):
        raw = grid.voxels.astype("<f4")
        header = {**grid.meta.to_json(), "dtype": "float32", "channels": grid.class_count}
        return raw.ravel(order="F").tobytes(), header
    raw, dtype, slope, inter = _encode_payload(grid, dtype, remap)
    header = {**grid.meta.to_json(), "dtype": dtype}
    if (slope, inter) != (1.0, 0.0):
        header["scaling"] = [slope, inter]
    if isinstance(grid, LabelGrid3D):
        header["class_count"] = grid.class_count
    payload = raw.astype(np.dtype(dtype).newbyteorder("<")).ravel(order="F").tobytes()
    return payload, header


def read_sidecar(raw: bytes, header: Mapping | str | bytes, kind: str | None = None, *,
                 remap: LabelRemap | None = None):
    """Decode a raw payload described by its JSON sidecar.

    `kind` defaults to ``label`` when the sidecar carries ``class_count``,
    ``probability`` when it carries ``channels``, else ``intensity``.
    """
    if isinstance(header, (str, bytes)):
        header = json.loads(header)
    try:
        dims = tuple(int(d) for d in header["dims"])
        spacing = tuple(float(s) for s in header["spacing"])
        dtype_name = str(header["dtype"])
    except (KeyError, TypeError, ValueError) as exc:
        raise VolumeFormatError(f"malformed sidecar header: {exc}") from exc
    if len(dims) != 3:
        raise VolumeFormatError("sidecar dims must have three entries")
    if dtype_name not in _CODE_BY_NAME:
        raise VolumeFormatError(f"unsupported sidecar dtype {dtype_name!r}")
    channels = header.get("channels")
    if kind is None:
        kind = "probability" if channels else "label" if "class_count" in header else "intensity"
    shape = dims + ((int(channels),) if kind == "probability" else ())
    dtype = np.dtype(dtype_name).newbyteorder("<")
    count = int(np.prod(shape))
    if len(raw) < count * dtype.itemsize:
        raise VolumeFormatError(f"truncated payload: need {count * dtype.itemsize} bytes, have {len(raw)}")
    arr = np.frombuffer(raw, dtype=dtype, count=count)
    if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
        raise VolumeFormatError("payload contains NaN or Inf")
    arr = arr.reshape(shape, order="F")
    if kind == "probability":
        return _normalize_stack(arr.astype(np.float64), GridMeta(dims, spacing))
    slope, inter = header.get("scaling", (1.0, 0.0))
    class_count = int(header.get("class_count", remap.class_count if remap else DEFAULT_CLASS_COUNT))
    return _decode(arr, spacing, dtype.name, float(slope), float(inter), kind, remap, class_count)


# --------------------------------------------------------------------------
# probability stacks
# --------------------------------------------------------------------------

def _normalize_stack(stack: np.ndarray, meta: GridMeta) -> ProbGrid4D:
    if stack.shape[3] < 2:
        raise GridError("probability stacks need C >= 2 classes")
    if not np.all(np.isfinite(stack)):
        raise GridError("probability stack contains NaN or Inf")
    if stack.min() < -PROB_NEG_TOL:
        raise GridError(f"negative probability {stack.min()!r} below -{PROB_NEG_TOL}")
    stack = np.clip(stack, 0.0, None)
    sums = stack.sum(axis=3, keepdims=True)
    worst = float(np.max(np.abs(sums - 1.0)))
    if worst > PROB_SUM_TOL:
        raise GridError(f"per-voxel probability sums deviate from 1 by {worst:.3g} (> {PROB_SUM_TOL})")
    meta = GridMeta(meta.dims, meta.spacing)
    return ProbGrid4D(meta, stack / sums)


def assemble_probability_stack(channels: Sequence[VoxelGrid3D]) -> ProbGrid4D:
    """Stack C per-class intensity grids into a renormalized ProbGrid4D."""
    if len(channels) < 2:
        raise GridError("need at least two class volumes")
    first = channels[0].meta
    for k, ch in enumerate(channels[1:], start=1):
        if not first.same_grid(ch.meta):
            raise GridError(f"class volume {k} does not match volume 0: {first.describe_mismatch(ch.meta)}")
    stack = np.stack([ch.voxels for ch in channels], axis=3)
    return _normalize_stack(stack, first)


def read_probability_stack(data: bytes | Sequence[bytes]) -> ProbGrid4D:
    """Read one 4D NIfTI (dim[4] = C) or a sequence of C 3D NIfTI class maps."""
    if isinstance(data, (bytes, bytearray, memoryview)):
        data = _maybe_gunzip(bytes(data))
        hdr = _parse_header(data)
        if len(hdr.dims) != 4:
            raise VolumeFormatError(f"expected a 4D probability volume, got dim[0] = {len(hdr.dims)}")
        raw = _payload(data, hdr)
        stack = _scale(raw, hdr.slope, hdr.inter)
        return _normalize_stack(stack, GridMeta(hdr.dims[:3], hdr.spacing))
    return assemble_probability_stack([read_volume(d, "intensity") for d in data])


# --------------------------------------------------------------------------
# paths
# --------------------------------------------------------------------------

def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    """Write via a temp file in the target directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _is_sidecar(path: Path) -> bool:
    return path.suffix in (".json", ".raw")


def load(path: str | os.PathLike, kind: str = "intensity", *,
         remap: LabelRemap | None = None, class_count: int = DEFAULT_CLASS_COUNT):
    """Load a volume from ``.nii``, ``.nii.gz`` or a ``.json``/``.raw`` sidecar pair.

    ``kind`` is ``intensity``, ``label`` or ``probability``.
    """
    path = Path(path)
    if _is_sidecar(path):
        header = json.loads(path.with_suffix(".json").read_text())
        raw = path.with_suffix(".raw").read_bytes()
        return read_sidecar(raw, header, kind, remap=remap)
    data = path.read_bytes()
    if kind == "probability":
        return read_probability_stack(data)
    return read_volume(data, kind, remap=remap, class_count=class_count)


def encode_for_path(grid, path: str | os.PathLike, *,
                    remap: LabelRemap | None = None) -> list[tuple[Path, bytes]]:
    """The file(s) `save` would write, as ``(path, bytes)`` pairs."""
    path = Path(path)
    if _is_sidecar(path):
        raw, header = write_sidecar(grid, remap=remap)
        return [(path.with_suffix(".raw"), raw),
                (path.with_suffix(".json"), (json.dumps(header, indent=2) + "\n").encode())]
    compress = path.name.endswith(".gz")
    if isinstance(grid, ProbGrid4D):
        return [(path, write_probability(grid, compress=compress))]
    return [(path, write_volume(grid, "nifti-gz" if compress else "nifti", remap=remap))]


def save(grid, path: str | os.PathLike, *, remap: LabelRemap | None = None) -> None:
    """Atomically write `grid`; the format follows the file extension."""
    for target, payload in encode_for_path(grid, path, remap=remap):
        atomic_write_bytes(target, payload)
