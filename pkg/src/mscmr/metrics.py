"""Dice, Jaccard, average symmetric surface distance and Hausdorff distance.

Evaluated per foreground class (RV, LV, LVM) and averaged over the three
classes without weighting.  "Surface distance" is the average symmetric
surface distance (ASSD); the Hausdorff distance is the full (100th
percentile) one.  Surfaces are the foreground voxels having a background or
out-of-volume 6-neighbour, placed at ``index * spacing`` mm.

Degenerate cases never raise: both masks empty gives Dice = Jaccard = 1,
exactly one empty gives 0, and the distances of any class with an empty
mask are undefined (``None``) and left out of the means.
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .edt import squared_edt
from .volume_io import CLASS_NAMES, GridError, LabelGrid3D

__all__ = [
    "FOREGROUND",
    "SURFACE_AGGREGATES",
    "ClassMetrics",
    "MetricsReport",
    "overlap_counts",
    "dice",
    "jaccard",
    "extract_surface",
    "surface_mask",
    "directed_distances",
    "hausdorff",
    "assd",
    "evaluate",
    "reports_to_csv",
    "CSV_COLUMNS",
]

FOREGROUND = (1, 2, 3)
METRIC_NAMES = ("dice", "jaccard", "assd_mm", "hd_mm")
SURFACE_AGGREGATES = ("mean", "median", "p95")
REPORT_NOTE = ("surface distance = average symmetric surface distance (ASSD) over 6-neighbour "
               "boundary voxels; Hausdorff = maximum (100th percentile) symmetric distance")


def _check_pair(pred: LabelGrid3D, gt: LabelGrid3D) -> None:
    if not pred.meta.same_grid(gt.meta):
        raise GridError("prediction and ground truth grids differ: " + pred.meta.describe_mismatch(gt.meta))


def overlap_counts(pred: LabelGrid3D, gt: LabelGrid3D, c: int) -> tuple[int, int, int]:
    """(|pred == c|, |gt == c|, |both|) as exact integers."""
    _check_pair(pred, gt)
    a = pred.voxels == c
    b = gt.voxels == c
    return int(a.sum()), int(b.sum()), int(np.logical_and(a, b).sum())


def dice(counts) -> float:
    a, b, inter = counts
    if a + b == 0:
        return 1.0
    return 2.0 * inter / (a + b)


def jaccard(counts) -> float:
    a, b, inter = counts
    union = a + b - inter
    if union == 0:
        return 1.0
    return inter / union


def surface_mask(mask) -> np.ndarray:
    """Foreground voxels with at least one background or outside 6-neighbour."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = mask.copy()
    for axis in range(mask.ndim):
        for shift in (-1, 1):
            interior &= np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
    return mask & ~interior


def extract_surface(mask, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Boundary voxel centres in mm, shape (n, 3), in x-fastest raster order."""
    surf = surface_mask(mask)
    idx = np.argwhere(surf.transpose(2, 1, 0))[:, ::-1]
    return idx * np.asarray(spacing, dtype=np.float64)


def directed_distances(from_surface: np.ndarray, to_surface: np.ndarray,
                       spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Distance (mm) from each voxel of `from_surface` to the nearest voxel of
    `to_surface`, via an exact EDT of `to_surface`.

    The EDT is evaluated on the bounding box of both surfaces; distances only
    involve `to_surface` voxels, all of which lie inside it, so this is exact.
    """
    both = from_surface | to_surface
    nz = np.nonzero(both)
    lo = [int(ix.min()) for ix in nz]
    hi = [int(ix.max()) + 1 for ix in nz]
    box = tuple(slice(l, h) for l, h in zip(lo, hi))
    d2 = squared_edt(to_surface[box], spacing)
    return np.sqrt(d2[from_surface[box]])


def _surfaces(pred_mask, gt_mask):
    return surface_mask(pred_mask), surface_mask(gt_mask)


def hausdorff(pred_mask, gt_mask, spacing=(1.0, 1.0, 1.0)) -> float | None:
    """Symmetric Hausdorff distance between the mask surfaces (mm); None if either is empty."""
    sa, sb = _surfaces(pred_mask, gt_mask)
    if not sa.any() or not sb.any():
        return None
    return float(max(directed_distances(sa, sb, spacing).max(),
                     directed_distances(sb, sa, spacing).max()))


def _aggregate(d: np.ndarray, how: str) -> float:
    if how == "mean":
        return float(d.sum() / d.size)
    if how == "median":
        return float(np.median(d))
    if how == "p95":
        return float(np.percentile(d, 95))
    raise ValueError(f"surface aggregate must be one of {SURFACE_AGGREGATES}, got {how!r}")


def assd(pred_mask, gt_mask, spacing=(1.0, 1.0, 1.0), aggregate: str = "mean") -> float | None:
    """Average symmetric surface distance (mm); None if either surface is empty.

    ``aggregate`` swaps the mean over the pooled directed distances for
    their median or 95th percentile.
    """
    sa, sb = _surfaces(pred_mask, gt_mask)
    if not sa.any() or not sb.any():
        return None
    d = np.concatenate([directed_distances(sa, sb, spacing), directed_distances(sb, sa, spacing)])
    return _aggregate(d, aggregate)


def _distances(pred_mask, gt_mask, spacing, aggregate):
    sa, sb = _surfaces(pred_mask, gt_mask)
    if not sa.any() or not sb.any():
        return None, None
    dab = directed_distances(sa, sb, spacing)
    dba = directed_distances(sb, sa, spacing)
    hd = float(max(dab.max(), dba.max()))
    return _aggregate(np.concatenate([dab, dba]), aggregate), hd


@dataclass
class ClassMetrics:
    dice: float
    jaccard: float
    assd_mm: float | None
    hd_mm: float | None
    pred_empty: bool
    gt_empty: bool
    counts: tuple[int, int, int]

    def to_json(self) -> dict:
        return {
            "dice": self.dice,
            "jaccard": self.jaccard,
            "assd_mm": self.assd_mm,
            "hd_mm": self.hd_mm,
            "pred_empty": self.pred_empty,
            "gt_empty": self.gt_empty,
            "counts": {"pred": self.counts[0], "gt": self.counts[1], "intersection": self.counts[2]},
        }


@dataclass
class MetricsReport:
    per_class: dict[str, ClassMetrics]
    mean: dict[str, float | None]
    warnings: list[str] = field(default_factory=list)
    surface_aggregate: str = "mean"
    name: str = ""

    def to_json(self) -> dict:
        return {
            "volume": self.name,
            "note": REPORT_NOTE,
            "surface_aggregate": self.surface_aggregate,
            "per_class": {k: v.to_json() for k, v in self.per_class.items()},
            "mean": dict(self.mean),
            "warnings": list(self.warnings),
        }


def _class_metrics(pred, gt, c, aggregate) -> ClassMetrics:
    counts = overlap_counts(pred, gt, c)
    a = pred.voxels == c
    b = gt.voxels == c
    dist, hd = _distances(a, b, pred.meta.spacing, aggregate)
    return ClassMetrics(dice(counts), jaccard(counts), dist, hd,
                        counts[0] == 0, counts[1] == 0, counts)


def evaluate(pred: LabelGrid3D, gt: LabelGrid3D, *, classes=FOREGROUND,
             class_names=CLASS_NAMES, surface_aggregate: str = "mean",
             workers: int = 1, name: str = "") -> MetricsReport:
    """All four metrics for each foreground class plus their unweighted means."""
    _check_pair(pred, gt)
    if surface_aggregate not in SURFACE_AGGREGATES:
        raise ValueError(f"surface aggregate must be one of {SURFACE_AGGREGATES}")

    def one(c):
        return _class_metrics(pred, gt, c, surface_aggregate)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, classes))
    else:
        results = [one(c) for c in classes]
    per_class = {class_names[c]: m for c, m in zip(classes, results)}
    warnings = []
    mean = {}
    for metric in METRIC_NAMES:
        values = [getattr(m, metric) for m in per_class.values()]
        defined = [v for v in values if v is not None]
        undefined = [k for k, m in per_class.items() if getattr(m, metric) is None]
        if undefined:
            warnings.append(f"{metric} undefined for {', '.join(undefined)} (empty mask); "
                            "excluded from the mean")
        mean[metric] = sum(defined) / len(defined) if defined else None
    for k, m in per_class.items():
        if m.pred_empty or m.gt_empty:
            which = "both" if m.pred_empty and m.gt_empty else "prediction" if m.pred_empty else "ground truth"
            warnings.append(f"{k}: {which} mask empty")
    return MetricsReport(per_class, mean, warnings, surface_aggregate, name)


def csv_columns(class_names=("RV", "LV", "LVM")) -> list[str]:
    cols = ["volume"]
    for k in list(class_names) + ["mean"]:
        cols.extend(f"{k}_{m}" for m in METRIC_NAMES)
    return cols


CSV_COLUMNS = csv_columns()


def _cell(v) -> str:
    return "" if v is None else repr(float(v))


def reports_to_csv(reports) -> str:
    """One row per volume; undefined values are empty cells.  LF line endings."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    names = list(reports[0].per_class) if reports else ["RV", "LV", "LVM"]
    writer.writerow(csv_columns(names))
    for rep in reports:
        row = [rep.name]
        for k in names:
            m = rep.per_class[k]
            row.extend(_cell(getattr(m, metric)) for metric in METRIC_NAMES)
        row.extend(_cell(rep.mean[metric]) for metric in METRIC_NAMES)
        writer.writerow(row)
    return buf.getvalue()


def reports_to_json(reports, config: dict | None = None) -> str:
    doc = {"config": config or {}, "volumes": [r.to_json() for r in reports]}
    return json.dumps(doc, indent=2) + "\n"
