"""Resampling, in-plane resize, center crop and the exact inverse.

Coordinates are voxel-center aligned: output index ``i`` of an axis resized
from ``n_in`` to ``n_out`` samples the source at
``(i + 0.5) * n_in / n_out - 0.5``, clamped to ``[0, n_in - 1]``.  Linear
interpolation is separable (bilinear in-plane, trilinear in 3D); nearest
rounds half-way positions down.  Labels are only ever resampled nearest.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .volume_io import GridError, GridMeta, LabelGrid3D, ProbGrid4D, VoxelGrid3D

__all__ = [
    "CropRecord",
    "resample_volume",
    "resize_slices",
    "center_crop",
    "preprocess_volume",
    "reconstruct_inverse",
    "reconstruct_probabilities",
    "nearest_indices",
]

RESIZE_DIMS = (256, 256)
CROP_DIMS = (144, 144)


@dataclass(frozen=True)
class CropRecord:
    """Everything needed to map a cropped prediction back to the source grid."""

    pre_crop_dims: tuple[int, int]
    offsets: tuple[int, int]
    crop_dims: tuple[int, int]
    original_inplane_dims: tuple[int, int]
    original_spacing: tuple[float, float, float]
    interp_used: str

    def __post_init__(self):
        for name in ("pre_crop_dims", "offsets", "crop_dims", "original_inplane_dims"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        object.__setattr__(self, "original_spacing", tuple(float(v) for v in self.original_spacing))
        for axis in range(2):
            expected = (self.pre_crop_dims[axis] - self.crop_dims[axis]) // 2
            if self.offsets[axis] != expected or expected < 0:
                raise GridError(f"crop offsets {self.offsets} inconsistent with "
                                f"{self.pre_crop_dims} -> {self.crop_dims}")
        if self.interp_used not in ("linear", "nearest"):
            raise GridError(f"unknown interpolation {self.interp_used!r}")

    def to_json(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, data: dict) -> "CropRecord":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__})


def nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    """Source index for each output index, exact integer round-half-down."""
    i = np.arange(n_out, dtype=np.int64)
    # ceil(((2i+1)·n_in − 2·n_out) / (2·n_out))
    num = (2 * i + 1) * n_in - 2 * n_out
    idx = -((-num) // (2 * n_out))
    return np.clip(idx, 0, n_in - 1)


def _linear_axis(arr: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    n_in = arr.shape[axis]
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = pos - i0
    shape = [1] * arr.ndim
    shape[axis] = n_out
    a = np.take(arr, i0, axis=axis)
    b = np.take(arr, i1, axis=axis)
    return a + t.reshape(shape) * (b - a)


def _resample_array(arr: np.ndarray, target: tuple[int, ...], interp: str) -> np.ndarray:
    out = arr
    for axis, n_out in enumerate(target):
        n_in = out.shape[axis]
        if n_in == n_out:
            continue
        if interp == "nearest":
            out = np.take(out, nearest_indices(n_in, n_out), axis=axis)
        else:
            out = _linear_axis(out, axis, n_out)
    if interp == "linear" and out is not arr and arr.size:
        # rounding in a + t·(b − a) must not leave the convex hull
        out = np.clip(out, arr.min(), arr.max())
    return out


def _scaled_spacing(meta: GridMeta, target) -> tuple[float, float, float]:
    return tuple(s * n_in / n_out if n_in != n_out else s
                 for s, n_in, n_out in zip(meta.spacing, meta.dims, target))


def resample_volume(grid, target_dims, interp: str = "linear"):
    """Resample a grid to `target_dims`, rescaling spacing by old/new per axis.

    Works for intensity, label (nearest only) and probability grids; the
    latter are renormalized after linear interpolation.
    """
    target = tuple(int(d) for d in target_dims)
    if len(target) != 3 or any(d < 1 for d in target):
        raise GridError(f"target dims must be three positive integers, got {target_dims}")
    if interp not in ("linear", "nearest"):
        raise ValueError(f"interp must be 'linear' or 'nearest', got {interp!r}")
    if isinstance(grid, LabelGrid3D) and interp != "nearest":
        raise GridError("label grids can only be resampled with nearest-neighbor interpolation")
    if target == grid.meta.dims:
        return grid
    meta = grid.meta.with_dims(target, _scaled_spacing(grid.meta, target))
    if isinstance(grid, LabelGrid3D):
        return LabelGrid3D(meta, _resample_array(grid.voxels, target, "nearest"), grid.class_count)
    if isinstance(grid, ProbGrid4D):
        out = _resample_array(grid.voxels, target, interp)
        return ProbGrid4D(meta, out / out.sum(axis=3, keepdims=True))
    return VoxelGrid3D(meta, _resample_array(grid.voxels, target, interp))


def _default_interp(grid) -> str:
    return "nearest" if isinstance(grid, LabelGrid3D) else "linear"


def resize_slices(grid, inplane=RESIZE_DIMS, interp: str | None = None):
    """Resize every z-slice to `inplane`; nz is unchanged."""
    nx, ny = (int(d) for d in inplane)
    return resample_volume(grid, (nx, ny, grid.meta.dims[2]), interp or _default_interp(grid))


def center_crop(grid, crop=CROP_DIMS, *, original: GridMeta | None = None,
                interp: str | None = None):
    """Keep the centered ``crop`` window of every slice.

    Returns ``(cropped_grid, CropRecord)``.  `original` is the geometry to
    restore on reconstruction (defaults to `grid`'s own).
    """
    cx, cy = (int(c) for c in crop)
    nx, ny, nz = grid.meta.dims
    if cx > nx or cy > ny:
        raise GridError(f"crop {cx}x{cy} is larger than the {nx}x{ny} slices")
    ox, oy = (nx - cx) // 2, (ny - cy) // 2
    original = original or grid.meta
    record = CropRecord(
        pre_crop_dims=(nx, ny),
        offsets=(ox, oy),
        crop_dims=(cx, cy),
        original_inplane_dims=original.slice_shape,
        original_spacing=original.spacing,
        interp_used=interp or _default_interp(grid),
    )
    window = grid.voxels[ox:ox + cx, oy:oy + cy].copy()
    meta = grid.meta.with_dims((cx, cy, nz))
    if isinstance(grid, LabelGrid3D):
        return LabelGrid3D(meta, window, grid.class_count), record
    if isinstance(grid, ProbGrid4D):
        return ProbGrid4D(meta, window), record
    return VoxelGrid3D(meta, window), record


def preprocess_volume(grid, resize=RESIZE_DIMS, crop=CROP_DIMS):
    """Resize slices then center-crop; the record points back at `grid`."""
    interp = _default_interp(grid)
    resized = resize_slices(grid, resize, interp)
    return center_crop(resized, crop, original=grid.meta, interp=interp)


def _check_record(grid, record: CropRecord) -> None:
    if grid.meta.slice_shape != record.crop_dims:
        raise GridError(f"grid in-plane dims {grid.meta.slice_shape} do not match "
                        f"the crop record's {record.crop_dims}")


def _pad_back(arr: np.ndarray, record: CropRecord, fill) -> np.ndarray:
    nx, ny = record.pre_crop_dims
    ox, oy = record.offsets
    cx, cy = record.crop_dims
    out = np.empty((nx, ny) + arr.shape[2:], dtype=arr.dtype)
    out[...] = fill
    out[ox:ox + cx, oy:oy + cy] = arr
    return out


def _restored_meta(record: CropRecord, nz: int) -> GridMeta:
    return GridMeta(record.original_inplane_dims + (nz,), record.original_spacing)


def reconstruct_inverse(labels: LabelGrid3D, record: CropRecord) -> LabelGrid3D:
    """Pad a cropped label grid with background and resample to the original slices."""
    _check_record(labels, record)
    nz = labels.meta.dims[2]
    padded = _pad_back(labels.voxels, record, 0)
    target = record.original_inplane_dims + (nz,)
    out = _resample_array(padded, target, "nearest")
    return LabelGrid3D(_restored_meta(record, nz), out, labels.class_count)


def reconstruct_probabilities(prob: ProbGrid4D, record: CropRecord) -> ProbGrid4D:
    """Probability counterpart of `reconstruct_inverse`: one-hot background
    padding, per-channel linear resampling, renormalization."""
    _check_record(prob, record)
    nz = prob.meta.dims[2]
    fill = np.zeros(prob.class_count)
    fill[0] = 1.0
    padded = _pad_back(prob.voxels, record, fill)
    out = _resample_array(padded, record.original_inplane_dims + (nz,), "linear")
    return ProbGrid4D(_restored_meta(record, nz), out / out.sum(axis=3, keepdims=True))
