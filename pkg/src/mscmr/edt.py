"""Exact Euclidean distance transform with anisotropic spacing.

Separable lower-envelope-of-parabolas algorithm (Felzenszwalb & Huttenlocher):
one exact 1D squared-distance pass per axis.  Results are exact up to
floating-point rounding of the squared sums.
"""
from __future__ import annotations

import numba
import numpy as np

__all__ = ["squared_edt", "edt"]


@numba.njit(cache=True)
def _envelope_pass(f, spacing):
    """In-place 1D squared-distance transform of every row of ``f``.

    ``f[r, q]`` is the cost at sample ``q`` (``inf`` = no feature); sample
    positions are ``q * spacing``.
    """
    rows, n = f.shape
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    out = np.empty(n, dtype=np.float64)
    for r in range(rows):
        k = -1
        for q in range(n):
            fq = f[r, q]
            if fq == np.inf:
                continue
            xq = q * spacing
            if k < 0:
                k = 0
                v[0] = q
                z[0] = -np.inf
                z[1] = np.inf
                continue
            while True:
                p = v[k]
                xp = p * spacing
                s = ((fq + xq * xq) - (f[r, p] + xp * xp)) / (2.0 * (xq - xp))
                if s <= z[k]:
                    k -= 1
                    if k < 0:
                        break
                else:
                    break
            k += 1
            v[k] = q
            z[k] = s if k > 0 else -np.inf
            z[k + 1] = np.inf
        if k < 0:
            continue  # no feature on this row: stays inf
        j = 0
        for q in range(n):
            xq = q * spacing
            while z[j + 1] < xq:
                j += 1
            p = v[j]
            d = xq - p * spacing
            out[q] = d * d + f[r, p]
        for q in range(n):
            f[r, q] = out[q]


def squared_edt(features: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Squared distance (mm²) from every voxel to the nearest ``True`` voxel.

    Voxel centres sit at ``index * spacing``.  With no feature voxel
    everything is ``inf``.
    """
    features = np.asarray(features, dtype=bool)
    f = np.where(features, 0.0, np.inf)
    for axis in range(f.ndim):
        moved = np.moveaxis(f, axis, -1)
        rows = np.ascontiguousarray(moved).reshape(-1, moved.shape[-1])
        _envelope_pass(rows, float(spacing[axis]))
        f = np.moveaxis(rows.reshape(moved.shape), -1, axis)
    return np.ascontiguousarray(f)


def edt(features: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    return np.sqrt(squared_edt(features, spacing))
