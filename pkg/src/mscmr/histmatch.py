"""Per-slice histogram matching used to synthesize fake LGE from b-SSFP.

Each b-SSFP slice is matched to the histogram of the LGE slice at the same
z-index (LGE must already be resampled onto the b-SSFP grid).  The label
volume is passed through untouched: matching is a monotone intensity map and
does not move any pixel.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .volume_io import GridError, LabelGrid3D, VoxelGrid3D

__all__ = [
    "Histogram",
    "CdfMapping",
    "compute_histogram",
    "build_mapping",
    "apply_mapping",
    "match_slice",
    "make_fake_lge",
]

DEFAULT_BINS = 256


@dataclass(frozen=True)
class Histogram:
    counts: np.ndarray
    lo: float
    hi: float
    # set when the slice was constant and the range had to be widened
    degenerate: bool = False

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size < 2:
            raise ValueError("a histogram needs at least two bins")
        if not self.hi > self.lo:
            raise ValueError(f"histogram range must satisfy hi > lo, got [{self.lo}, {self.hi}]")
        if counts.min() < 0 or counts.sum() == 0:
            raise ValueError("histogram counts must be nonnegative with a positive total")
        object.__setattr__(self, "counts", counts)

    @property
    def bin_count(self) -> int:
        return self.counts.size

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.bin_count

    @property
    def centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.bin_count) + 0.5) * self.width

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.counts)

    @property
    def cdf(self) -> np.ndarray:
        return self.cumulative / self.total

    def bin_index(self, values) -> np.ndarray:
        """Bin of each value; values outside [lo, hi] are clamped to the end bins."""
        v = np.clip(np.asarray(values, dtype=np.float64), self.lo, self.hi)
        idx = np.floor((v - self.lo) / (self.hi - self.lo) * self.bin_count).astype(np.int64)
        return np.minimum(idx, self.bin_count - 1)

    def median_bin(self) -> int:
        cum = self.cumulative
        return int(np.searchsorted(2 * cum, self.total, side="left"))


@dataclass(frozen=True)
class CdfMapping:
    """Target intensity for every source bin."""

    lut: np.ndarray

    def to_json(self) -> dict:
        return {"lut": [float(v) for v in self.lut]}


def compute_histogram(slice_, bins: int = DEFAULT_BINS, range=None) -> Histogram:
    """Bin a slice into `bins` equal-width bins over `range` (default: its min/max).

    A constant slice with no explicit range gets the unit range centred on
    its value and is flagged ``degenerate``.
    """
    values = np.asarray(slice_, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot build a histogram of an empty slice")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    degenerate = False
    if range is None:
        lo, hi = float(values.min()), float(values.max())
        if lo == hi:
            lo, hi, degenerate = lo - 0.5, hi + 0.5, True
    else:
        lo, hi = (float(r) for r in range)
    probe = Histogram(np.ones(bins, dtype=np.int64), lo, hi)
    counts = np.bincount(probe.bin_index(values), minlength=bins)
    return Histogram(counts, lo, hi, degenerate)


def build_mapping(source: Histogram, target: Histogram) -> CdfMapping:
    """Map source bin s to the centre of the first target bin t whose CDF
    reaches CDF_source(s).

    CDFs are compared as exact integer cross-products, so ties resolve
    identically on every platform.  A degenerate (constant) source maps to
    the target's median bin.
    """
    if source.degenerate:
        return CdfMapping(np.full(source.bin_count, target.centers[target.median_bin()]))
    cum_s = source.cumulative
    cum_t = target.cumulative
    # CDF_t(t) >= CDF_s(s)  <=>  cum_t[t]·N_s >= cum_s[s]·N_t
    t = np.searchsorted(cum_t * source.total, cum_s * target.total, side="left")
    t = np.minimum(t, target.bin_count - 1)
    return CdfMapping(target.centers[t])


def apply_mapping(slice_, source_hist: Histogram, mapping: CdfMapping) -> np.ndarray:
    slice_ = np.asarray(slice_, dtype=np.float64)
    return mapping.lut[source_hist.bin_index(slice_)]


def match_slice(source, target, bins: int = DEFAULT_BINS):
    """Match one 2D source slice to a target slice; returns (matched, mapping)."""
    hs = compute_histogram(source, bins)
    ht = compute_histogram(target, bins)
    mapping = build_mapping(hs, ht)
    return apply_mapping(source, hs, mapping), mapping


def make_fake_lge(bssfp: VoxelGrid3D, bssfp_labels: LabelGrid3D, lge: VoxelGrid3D,
                  bins: int = DEFAULT_BINS, *, workers: int = 1,
                  mappings: list | None = None):
    """Give every b-SSFP slice the intensity distribution of its LGE slice.

    `lge` must already share the b-SSFP grid dims.  Returns the fake LGE
    volume and `bssfp_labels` itself.  If `mappings` is a list, the per-slice
    CdfMapping objects are appended to it in z order.
    """
    if bssfp.meta.dims != lge.meta.dims:
        raise GridError("LGE must be resampled onto the b-SSFP grid first: "
                        + bssfp.meta.describe_mismatch(lge.meta))
    if bssfp_labels.meta.dims != bssfp.meta.dims:
        raise GridError("b-SSFP labels do not match the b-SSFP volume: "
                        + bssfp.meta.describe_mismatch(bssfp_labels.meta))
    nz = bssfp.meta.dims[2]

    def one(k):
        return match_slice(bssfp.voxels[:, :, k], lge.voxels[:, :, k], bins)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(nz)))
    else:
        results = [one(k) for k in range(nz)]
    out = np.stack([r[0] for r in results], axis=2)
    if mappings is not None:
        mappings.extend(r[1] for r in results)
    return VoxelGrid3D(bssfp.meta.with_dims(bssfp.meta.dims), out), bssfp_labels
