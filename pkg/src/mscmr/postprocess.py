"""Ensemble fusion, argmax labelling and largest-component cleanup."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .volume_io import GridError, LabelGrid3D, ProbGrid4D

__all__ = [
    "ComponentSet",
    "ensemble_mean",
    "ensemble_vote",
    "argmax_labels",
    "neighbor_offsets",
    "connected_components",
    "largest_component_per_class",
    "component_stats",
]


def _check_members(predictions: Sequence[ProbGrid4D]) -> None:
    if not predictions:
        raise GridError("ensemble needs at least one prediction")
    ref = predictions[0]
    for k, p in enumerate(predictions[1:], start=1):
        if p.voxels.shape != ref.voxels.shape or not ref.meta.same_grid(p.meta):
            raise GridError(f"ensemble member {k} has shape {p.voxels.shape}, expected {ref.voxels.shape}")


def ensemble_mean(predictions: Sequence[ProbGrid4D]) -> ProbGrid4D:
    """Per-voxel, per-channel arithmetic mean of the member probabilities."""
    _check_members(predictions)
    total = np.zeros_like(predictions[0].voxels)
    for p in predictions:  # fixed member order keeps the sum reproducible
        total += p.voxels
    return ProbGrid4D(predictions[0].meta, total / len(predictions))


def ensemble_vote(predictions: Sequence[ProbGrid4D]) -> ProbGrid4D:
    """Majority vote over member argmaxes, returned as per-class vote fractions.

    Feeding the result to `argmax_labels` picks the most-voted class, ties
    going to the lowest class index.
    """
    _check_members(predictions)
    c = predictions[0].class_count
    votes = np.zeros(predictions[0].voxels.shape, dtype=np.int64)
    eye = np.eye(c, dtype=np.int64)
    for p in predictions:
        votes += eye[np.argmax(p.voxels, axis=3)]
    return ProbGrid4D(predictions[0].meta, votes / len(predictions))


def argmax_labels(prob: ProbGrid4D) -> LabelGrid3D:
    """Most probable class per voxel; ``np.argmax`` already breaks ties low."""
    return LabelGrid3D(prob.meta, np.argmax(prob.voxels, axis=3), prob.class_count)


def neighbor_offsets(connectivity: int, per_slice: bool = False) -> np.ndarray:
    """Offsets (dx, dy, dz) that precede a voxel in x-fastest raster order.

    ``connectivity`` is 6 (faces) or 26 (faces, edges, corners).  With
    ``per_slice`` only in-plane neighbours are used (4- or 8-connectivity).
    """
    if connectivity not in (6, 26):
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    offs = []
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if (dz, dy, dx) >= (0, 0, 0):
                    continue  # keep strictly earlier neighbours only
                if per_slice and dz != 0:
                    continue
                if connectivity == 6 and abs(dx) + abs(dy) + abs(dz) != 1:
                    continue
                offs.append((dx, dy, dz))
    return np.array(offs, dtype=np.int64).reshape(-1, 3)


@numba.njit(cache=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:  # path compression
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@numba.njit(cache=True)
def _union_find_label(mask, offsets):
    nx, ny, nz = mask.shape
    n = nx * ny * nz
    parent = np.arange(n)
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if not mask[x, y, z]:
                    continue
                i = x + nx * (y + ny * z)
                for k in range(offsets.shape[0]):
                    xx = x + offsets[k, 0]
                    yy = y + offsets[k, 1]
                    zz = z + offsets[k, 2]
                    if xx < 0 or yy < 0 or zz < 0 or xx >= nx or yy >= ny or zz >= nz:
                        continue
                    if not mask[xx, yy, zz]:
                        continue
                    a = _find(parent, i)
                    b = _find(parent, xx + nx * (yy + ny * zz))
                    if a != b:
                        # the smaller index becomes root, so a root is its
                        # component's first voxel in raster order
                        if a < b:
                            parent[b] = a
                        else:
                            parent[a] = b
    roots = np.full(n, -1, dtype=np.int64)
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if mask[x, y, z]:
                    i = x + nx * (y + ny * z)
                    roots[i] = _find(parent, i)
    return roots


@dataclass(frozen=True)
class ComponentSet:
    """Components of one binary mask.

    ``labels`` holds 1..K (0 = not in the mask), numbered by size descending,
    then by first voxel in x-fastest raster order.
    """

    labels: np.ndarray
    sizes: np.ndarray
    connectivity: int
    per_slice: bool = False

    def __len__(self):
        return int(self.sizes.size)

    def voxels(self, k: int) -> np.ndarray:
        """Raster (x-fastest) linear indices of component ``k`` (1-based)."""
        return np.flatnonzero(self.labels.ravel(order="F") == k)


def connected_components(mask, connectivity: int = 26, per_slice: bool = False) -> ComponentSet:
    """Label the connected components of a binary 3D mask with union-find."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3:
        raise ValueError("mask must be 3D")
    roots = _union_find_label(mask, neighbor_offsets(connectivity, per_slice))
    fg = roots >= 0
    root_ids, first_seen, counts = np.unique(roots[fg], return_index=True, return_counts=True)
    labels_flat = np.zeros(roots.size, dtype=np.int32)
    if root_ids.size:
        # roots are each component's smallest raster index
        order = np.lexsort((root_ids, -counts))
        rank = np.empty(root_ids.size, dtype=np.int32)
        rank[order] = np.arange(1, root_ids.size + 1, dtype=np.int32)
        labels_flat[fg] = rank[np.searchsorted(root_ids, roots[fg])]
        sizes = counts[order]
    else:
        sizes = np.zeros(0, dtype=np.int64)
    labels = labels_flat.reshape(mask.shape, order="F")
    return ComponentSet(labels, sizes.astype(np.int64), connectivity, per_slice)


def largest_component_per_class(labels: LabelGrid3D, connectivity: int = 26,
                                per_slice: bool = False) -> LabelGrid3D:
    """Keep only the largest component of every foreground class.

    Everything else in that class becomes background; size ties keep the
    component that comes first in raster order.
    """
    out = labels.voxels.copy()
    for c in range(1, labels.class_count):
        mask = labels.voxels == c
        if not mask.any():
            continue
        comps = connected_components(mask, connectivity, per_slice)
        out[mask & (comps.labels != 1)] = 0
    return labels.replace(out)


def component_stats(labels: LabelGrid3D, connectivity: int = 26,
                    per_slice: bool = False) -> dict:
    """Component sizes per foreground class, largest first."""
    stats = {}
    for c in range(1, labels.class_count):
        comps = connected_components(labels.voxels == c, connectivity, per_slice)
        stats[str(c)] = [int(s) for s in comps.sizes]
    return stats
