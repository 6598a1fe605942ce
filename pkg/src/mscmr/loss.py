"""Class-frequency weighted cross-entropy and its analytic gradient.

    wCE = -sum_c w_c * sum_i g_ci * log p_ci,     w_c = |{i : g_i = c}| / N

``g_ci`` is the indicator that voxel ``i`` has ground-truth class ``c``.  The
weights are plain frequency ratios over the whole labelled set, exactly as
the loss is usually written for this framework; ``inverse_class_weights``
gives the more common 1/frequency variant.  The default ``sum`` reduction
has no 1/N factor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .volume_io import GridError, LabelGrid3D, ProbGrid4D

__all__ = [
    "EPS",
    "ClassWeights",
    "class_weights",
    "inverse_class_weights",
    "weighted_cross_entropy",
    "weighted_ce_gradient",
    "finite_difference_gradient",
    "relative_error",
    "random_instance",
    "GradcheckResult",
    "gradcheck",
]

EPS = 1e-12


@dataclass(frozen=True)
class ClassWeights:
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 1 or w.size < 1 or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("class weights must be a nonempty vector of nonnegative reals")
        object.__setattr__(self, "w", w)

    def __len__(self):
        return self.w.size

    def scaled(self, k: float) -> "ClassWeights":
        return ClassWeights(self.w * k)


def _as_label_arrays(labels) -> tuple[list[np.ndarray], int]:
    if isinstance(labels, LabelGrid3D):
        labels = [labels]
    arrays, class_count = [], None
    for lab in labels:
        if isinstance(lab, LabelGrid3D):
            class_count = max(class_count or 0, lab.class_count)
            arrays.append(lab.voxels)
        else:
            arrays.append(np.asarray(lab))
    return arrays, class_count


def _class_counts(labels, class_count) -> np.ndarray:
    arrays, grid_c = _as_label_arrays(labels)
    c = class_count or grid_c
    if c is None:
        raise ValueError("class_count is required for bare label arrays")
    counts = np.zeros(c, dtype=np.int64)
    for arr in arrays:
        counts += np.bincount(arr.ravel(), minlength=c)[:c]
    if counts.sum() == 0:
        raise ValueError("class weights need at least one labelled voxel")
    return counts


def class_weights(labels: LabelGrid3D | Iterable[LabelGrid3D],
                  class_count: int | None = None) -> ClassWeights:
    """Fraction of voxels of each class over the whole labelled set."""
    counts = _class_counts(labels, class_count)
    return ClassWeights(counts / counts.sum())


def inverse_class_weights(labels, class_count: int | None = None) -> ClassWeights:
    """1/frequency weights normalised to sum to 1; absent classes get 0.

    Not the frequency form used by default; offered for comparison.
    """
    counts = _class_counts(labels, class_count)
    inv = np.zeros(counts.size)
    present = counts > 0
    inv[present] = counts.sum() / counts[present]
    return ClassWeights(inv / inv.sum())


def _unpack(prob, labels, weights):
    p = prob.voxels if isinstance(prob, ProbGrid4D) else np.asarray(prob, dtype=np.float64)
    g = labels.voxels if isinstance(labels, LabelGrid3D) else np.asarray(labels)
    w = weights.w if isinstance(weights, ClassWeights) else np.asarray(weights, dtype=np.float64)
    if p.shape[:-1] != g.shape:
        raise GridError(f"probability shape {p.shape} does not match label shape {g.shape}")
    if w.size != p.shape[-1]:
        raise GridError(f"weight vector has {w.size} entries for {p.shape[-1]} classes")
    if g.size and (g.min() < 0 or g.max() >= p.shape[-1]):
        raise GridError("label IDs exceed the probability channel count")
    return p, g.astype(np.int64), w


def _reduction_scale(reduction: str, n: int) -> float:
    if reduction == "sum":
        return 1.0
    if reduction == "mean":
        return 1.0 / n
    raise ValueError(f"reduction must be 'sum' or 'mean', got {reduction!r}")


def weighted_cross_entropy(prob, labels, weights, reduction: str = "sum") -> float:
    """Weighted cross-entropy of a probability grid against labels.

    Probabilities are clamped to ``[EPS, 1]`` before the log.  Terms are
    accumulated with `math.fsum`, so the value does not depend on voxel order.
    """
    p, g, w = _unpack(prob, labels, weights)
    scale = _reduction_scale(reduction, g.size)
    p_true = np.take_along_axis(p, g[..., None], axis=-1)[..., 0]
    terms = w[g] * np.log(np.clip(p_true, EPS, 1.0))
    return -math.fsum(terms.ravel()) * scale


def weighted_ce_gradient(prob, labels, weights, reduction: str = "sum") -> np.ndarray:
    """d wCE / d p: ``-w_c / p_ci`` on each voxel's true channel, 0 elsewhere."""
    p, g, w = _unpack(prob, labels, weights)
    scale = _reduction_scale(reduction, g.size)
    grad = np.zeros_like(p)
    p_true = np.take_along_axis(p, g[..., None], axis=-1)[..., 0]
    # the clamp is flat below EPS
    d = np.where(p_true >= EPS, -w[g] / np.maximum(p_true, EPS), 0.0) * scale
    np.put_along_axis(grad, g[..., None], d[..., None], axis=-1)
    return grad


def finite_difference_gradient(prob, labels, weights, reduction: str = "sum",
                               h: float = 1e-4) -> np.ndarray:
    """Central differences of `weighted_cross_entropy`, one component at a time."""
    p, g, w = _unpack(prob, labels, weights)
    p = p.copy()
    grad = np.zeros_like(p)
    flat_p, flat_g = p.reshape(-1), grad.reshape(-1)
    for k in range(flat_p.size):
        orig = flat_p[k]
        flat_p[k] = orig + h
        up = weighted_cross_entropy(p, g, w, reduction)
        flat_p[k] = orig - h
        down = weighted_cross_entropy(p, g, w, reduction)
        flat_p[k] = orig
        flat_g[k] = (up - down) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


@dataclass
class GradcheckResult:
    cases: int
    max_rel_err: float
    tolerance: float
    zero_weight_ok: bool

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance and self.zero_weight_ok


def random_instance(rng: np.random.Generator, class_count: int = 4, max_side: int = 4,
                    p_range=(0.05, 0.95)):
    """Random (prob, labels) pair with probabilities in `p_range`.

    Probabilities are treated as free variables (not renormalized), matching
    how the gradient is taken componentwise.
    """
    shape = tuple(int(s) for s in rng.integers(1, max_side + 1, size=3))
    labels = rng.integers(0, class_count, size=shape)
    prob = rng.uniform(*p_range, size=shape + (class_count,))
    return prob, labels


def gradcheck(seed: int = 0, cases: int = 100, class_count: int = 4, h: float = 1e-4,
              tolerance: float = 1e-5, reduction: str = "sum", corrupt: bool = False) -> GradcheckResult:
    """Compare the analytic gradient with central differences on random cases.

    ``corrupt=True`` perturbs the analytic gradient, as a negative control.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        prob, labels = random_instance(rng, class_count)
        weights = class_weights([labels], class_count)
        analytic = weighted_ce_gradient(prob, labels, weights, reduction)
        if corrupt:
            analytic = analytic * (1.0 + 1e-3) + 1e-3
        numeric = finite_difference_gradient(prob, labels, weights, reduction, h)
        worst = max(worst, float(relative_error(analytic, numeric).max()))
    # classes with zero weight must contribute no gradient at all
    prob, labels = random_instance(rng, class_count)
    zero = np.zeros(class_count)
    zero_ok = bool(np.all(weighted_ce_gradient(prob, labels, zero, reduction) == 0.0))
    return GradcheckResult(cases, worst, tolerance, zero_ok)
