"""Pipeline configuration (JSON, every field optional)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .volume_io import LabelRemap

__all__ = ["PipelineConfig", "load_config"]

ENSEMBLE_MODES = ("mean", "vote")
WEIGHT_MODES = ("eq1", "inverse")
REDUCTIONS = ("sum", "mean")
SURFACE_AGGREGATES = ("mean", "median", "p95")


@dataclass(frozen=True)
class PipelineConfig:
    class_count: int = 4
    # on-disk label code -> class ID; None means identity
    label_remap: dict[int, int] | None = None
    resize: tuple[int, int] = (256, 256)
    crop: tuple[int, int] = (144, 144)
    bins: int = 256
    connectivity: int = 26
    per_slice_components: bool = False
    ensemble: str = "mean"
    weight_mode: str = "eq1"
    reduction: str = "sum"
    surface_aggregate: str = "mean"
    workers: int = 1
    phantom: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "resize", tuple(int(v) for v in self.resize))
        object.__setattr__(self, "crop", tuple(int(v) for v in self.crop))
        if self.label_remap is not None:
            object.__setattr__(self, "label_remap",
                               {int(k): int(v) for k, v in self.label_remap.items()})
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if len(self.resize) != 2 or len(self.crop) != 2 or min(self.resize + self.crop) < 1:
            raise ValueError("resize and crop must be two positive integers each")
        if any(c > r for c, r in zip(self.crop, self.resize)):
            raise ValueError(f"crop {self.crop} exceeds resize {self.resize}")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")
        if self.connectivity not in (6, 26):
            raise ValueError("connectivity must be 6 or 26")
        for name, allowed in (("ensemble", ENSEMBLE_MODES), ("weight_mode", WEIGHT_MODES),
                              ("reduction", REDUCTIONS), ("surface_aggregate", SURFACE_AGGREGATES)):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        self.remap()  # bijectivity check

    def remap(self) -> LabelRemap:
        return LabelRemap(self.label_remap, self.class_count)

    def with_overrides(self, **kw) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def to_json(self) -> dict:
        out = asdict(self)
        out["resize"] = list(self.resize)
        out["crop"] = list(self.crop)
        if self.label_remap is not None:
            out["label_remap"] = {str(k): v for k, v in self.label_remap.items()}
        return out


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    data = json.loads(Path(path).read_text())
    unknown = set(data) - set(PipelineConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    return PipelineConfig(**data)
