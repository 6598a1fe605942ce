"""Seeded synthetic short-axis phantoms standing in for real CMR volumes.

The anatomy is defined in millimetres over a shared field of view, so the
b-SSFP-like and LGE-like renderings can have different grid sizes yet line
up after resampling one onto the other.  Per slice the LV cavity is a disk,
the myocardium a ring around it and the RV a disk beside it with the LV and
ring carved out.  Radii taper towards the apex.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .metrics import surface_mask
from .volume_io import GridMeta, LabelGrid3D, ProbGrid4D, VoxelGrid3D

__all__ = ["PhantomSpec", "Phantom", "render_labels", "make_phantom", "synthetic_predictions"]

RV, LV, LVM = 1, 2, 3


@dataclass(frozen=True)
class PhantomSpec:
    fov_mm: tuple[float, float, float] = (240.0, 240.0, 100.0)
    bssfp_dims: tuple[int, int, int] = (96, 96, 10)
    lge_dims: tuple[int, int, int] = (160, 160, 14)
    lv_offset_mm: tuple[float, float] = (12.0, 0.0)
    lv_radius_mm: float = 22.0
    myo_thickness_mm: float = 9.0
    rv_offset_mm: tuple[float, float] = (-30.0, 0.0)
    rv_radius_mm: float = 28.0
    heart_z_range: tuple[float, float] = (0.1, 0.9)
    apex_taper: float = 0.35
    # intensity per class: background, RV, LV, LVM
    bssfp_intensity: tuple[float, float, float, float] = (120.0, 230.0, 250.0, 80.0)
    lge_intensity: tuple[float, float, float, float] = (20.0, 110.0, 70.0, 35.0)
    # bright infarct sector in the LGE myocardium, in degrees; None for no scar
    lge_scar_deg: tuple[float, float] | None = (20.0, 80.0)
    lge_scar_intensity: float = 240.0
    bssfp_noise: float = 25.0
    lge_noise: float = 8.0
    # linear multiplicative bias field along x, peak-to-peak fraction
    bias_field: float = 0.2
    # background tissue gradient along y, peak-to-peak intensity
    bssfp_background_ramp: float = 230.0
    lge_background_ramp: float = 0.0

    def __post_init__(self):
        for name in ("fov_mm", "bssfp_dims", "lge_dims", "lv_offset_mm", "rv_offset_mm",
                     "heart_z_range", "bssfp_intensity", "lge_intensity"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.lge_scar_deg is not None:
            object.__setattr__(self, "lge_scar_deg", tuple(self.lge_scar_deg))
        if any(d < 1 for d in self.bssfp_dims + self.lge_dims):
            raise ValueError("phantom dims must be positive")
        if min(self.lv_radius_mm, self.myo_thickness_mm, self.rv_radius_mm) <= 0:
            raise ValueError("phantom radii must be positive")
        half_x, half_y = self.fov_mm[0] / 2, self.fov_mm[1] / 2
        outer = self.lv_radius_mm + self.myo_thickness_mm
        for (ox, oy), r, what in ((self.lv_offset_mm, outer, "LV + myocardium"),
                                  (self.rv_offset_mm, self.rv_radius_mm, "RV")):
            if abs(ox) + r >= half_x or abs(oy) + r >= half_y:
                raise ValueError(f"{what} radius {r} mm at offset ({ox}, {oy}) exceeds the "
                                 f"{self.fov_mm[0]}x{self.fov_mm[1]} mm field of view")
        z0, z1 = self.heart_z_range
        if not 0.0 <= z0 < z1 <= 1.0:
            raise ValueError("heart_z_range must satisfy 0 <= start < end <= 1")

    @classmethod
    def from_json(cls, data: dict) -> "PhantomSpec":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown phantom spec fields: {sorted(unknown)}")
        return cls(**known)

    def to_json(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def spacing(self, dims) -> tuple[float, float, float]:
        return tuple(f / n for f, n in zip(self.fov_mm, dims))


@dataclass
class Phantom:
    bssfp: VoxelGrid3D
    bssfp_labels: LabelGrid3D
    lge: VoxelGrid3D
    lge_labels: LabelGrid3D
    spec: PhantomSpec = field(default_factory=PhantomSpec)


def _coords(spec: PhantomSpec, dims):
    sp = spec.spacing(dims)
    axes = [(np.arange(n) + 0.5) * s for n, s in zip(dims, sp)]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    return x - spec.fov_mm[0] / 2, y - spec.fov_mm[1] / 2, z / spec.fov_mm[2]


def render_labels(spec: PhantomSpec, dims, class_count: int = 4) -> LabelGrid3D:
    x, y, zf = _coords(spec, dims)
    z0, z1 = spec.heart_z_range
    inside = (zf >= z0) & (zf <= z1)
    depth = np.clip((zf - z0) / (z1 - z0), 0.0, 1.0)
    shrink = 1.0 - spec.apex_taper * depth
    r_lv = spec.lv_radius_mm * shrink
    r_out = r_lv + spec.myo_thickness_mm * shrink
    r_rv = spec.rv_radius_mm * shrink
    d_lv = np.hypot(x - spec.lv_offset_mm[0], y - spec.lv_offset_mm[1])
    d_rv = np.hypot(x - spec.rv_offset_mm[0], y - spec.rv_offset_mm[1])
    labels = np.zeros(dims, dtype=np.int32)
    labels[inside & (d_rv < r_rv)] = RV
    labels[inside & (d_lv < r_out)] = LVM
    labels[inside & (d_lv < r_lv)] = LV
    return LabelGrid3D(GridMeta(dims, spec.spacing(dims)), labels, class_count)


def _render_intensity(spec, labels: LabelGrid3D, table, noise, rng, ramp_pp=0.0, scar=None):
    lut = np.asarray(table, dtype=np.float64)
    img = lut[labels.voxels]
    if ramp_pp:
        ny = labels.meta.dims[1]
        ramp = ramp_pp * ((np.arange(ny) + 0.5) / ny - 0.5)
        img = img + np.where(labels.voxels == 0, ramp[None, :, None], 0.0)
    if scar is not None:
        x, y, _ = _coords(spec, labels.meta.dims)
        angle = np.degrees(np.arctan2(y - spec.lv_offset_mm[1], x - spec.lv_offset_mm[0])) % 360.0
        lo, hi = scar
        img[(labels.voxels == LVM) & (angle >= lo) & (angle <= hi)] = spec.lge_scar_intensity
    nx = labels.meta.dims[0]
    ramp = 1.0 + spec.bias_field * ((np.arange(nx) + 0.5) / nx - 0.5)
    img = img * ramp[:, None, None]
    if noise > 0:
        img = img + rng.normal(0.0, noise, size=img.shape)
    # magnitude images: negative excursions fold back instead of piling up at 0
    return VoxelGrid3D(labels.meta, np.abs(img))


def make_phantom(spec: PhantomSpec | None = None, seed: int = 0) -> Phantom:
    """Render a b-SSFP-like / LGE-like pair with labels; bitwise deterministic in `seed`."""
    spec = spec or PhantomSpec()
    rng = np.random.default_rng(seed)
    bl = render_labels(spec, spec.bssfp_dims)
    ll = render_labels(spec, spec.lge_dims)
    bssfp = _render_intensity(spec, bl, spec.bssfp_intensity, spec.bssfp_noise, rng,
                              spec.bssfp_background_ramp)
    lge = _render_intensity(spec, ll, spec.lge_intensity, spec.lge_noise, rng,
                            spec.lge_background_ramp, spec.lge_scar_deg)
    return Phantom(bssfp, bl, lge, ll, spec)


def synthetic_predictions(labels: LabelGrid3D, members: int = 5, noise: float = 0.0,
                          speckles: int = 0, speckle_size: int = 2, flip_fraction: float = 0.0,
                          seed: int = 0):
    """Stand-in model outputs: one-hot truth plus uniform noise, renormalized.

    Noise below 1 never changes a member's argmax.  Each member independently
    turns a `flip_fraction` of the class-boundary voxels into background.  `speckles` spurious
    2-voxel islands per foreground class are planted in the grid corner
    farthest from the label mass, identically in every member so the
    ensemble keeps them.  Returns the member list and the speckle voxel
    coordinates.
    """
    rng = np.random.default_rng(seed)
    base = ProbGrid4D.one_hot(labels).voxels
    dims = labels.meta.dims
    spots = []
    if speckles:
        fg = np.argwhere(labels.voxels > 0)
        centre = fg.mean(axis=0) if fg.size else np.zeros(3)
        corner = np.array([0 if centre[a] > dims[a] / 2 else dims[a] - 1 for a in range(3)])
        step = np.where(corner == 0, 1, -1)
        k = 0
        for c in range(1, labels.class_count):
            for _ in range(speckles):
                # islands spaced 3 voxels apart along x in the far corner row
                start = corner + step * np.array([3 * k, 0, 0])
                for j in range(speckle_size):
                    spots.append((tuple(int(v) for v in start + step * np.array([0, j, 0])), c))
                k += 1
        for (x, y, z), c in spots:
            if labels.voxels[x, y, z] != 0:
                raise ValueError("speckle would overwrite foreground; grid too small")
            base[x, y, z] = 0.0
            base[x, y, z, c] = 1.0
    boundary = np.zeros(dims, dtype=bool)
    if flip_fraction > 0:
        for c in range(1, labels.class_count):
            boundary |= surface_mask(labels.voxels == c)
    out = []
    for _ in range(members):
        p = base.copy()
        if flip_fraction > 0:
            flip = boundary & (rng.random(dims) < flip_fraction)
            p[flip] = 0.0
            p[flip, 0] = 1.0
        if noise > 0:
            p = p + rng.uniform(0.0, noise, size=base.shape)
        out.append(ProbGrid4D(labels.meta, p / p.sum(axis=3, keepdims=True)))
    return out, spots
