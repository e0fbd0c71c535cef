"""Pipeline configuration: one YAML file, explicit values only (no environment overrides)."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import yaml


@dataclass(frozen=True)
class CurationConfig:
    lidar_window: int = 3  # frames, odd
    voxel_resolution: float = 0.1  # m, applied to the filtered MVS cloud
    hpr_gamma: float = 2.0  # HPR radius = 10**gamma * max distance
    lidar_priority_radius: int = 2  # px, Chebyshev
    box_margin: float = 0.1  # m, dynamic-box inflation
    lidar_height: float = 1.84  # m above ego origin; MVS points below are dropped
    sky_depth: float = 100.0  # m
    median_size: int = 3  # px, default backend filter on mvs/none pixels

    def __post_init__(self):
        if self.lidar_window < 1 or self.lidar_window % 2 == 0:
            raise ValueError(f"lidar_window must be a positive odd integer, got {self.lidar_window}")
        if not self.voxel_resolution > 0:
            raise ValueError("voxel_resolution must be > 0")
        if self.lidar_priority_radius < 0:
            raise ValueError("lidar_priority_radius must be >= 0")
        if self.box_margin < 0:
            raise ValueError("box_margin must be >= 0")
        if self.median_size < 1 or self.median_size % 2 == 0:
            raise ValueError("median_size must be a positive odd integer")


@dataclass(frozen=True)
class NVSConfig:
    offsets: tuple = (-2, 2)  # frames
    augmentation_offsets: tuple = (-4, 4)  # frames
    tau_range: tuple = (-3.0, 3.0)  # m, lateral
    tau_mode: str = "per_frame"  # or "per_trajectory"

    def __post_init__(self):
        object.__setattr__(self, "offsets", tuple(int(n) for n in self.offsets))
        object.__setattr__(self, "augmentation_offsets", tuple(int(n) for n in self.augmentation_offsets))
        lo, hi = (float(x) for x in self.tau_range)
        if not (lo <= hi) or lo != lo or hi != hi or abs(lo) == float("inf") or abs(hi) == float("inf"):
            raise ValueError(f"tau_range must be finite with min <= max, got {self.tau_range}")
        object.__setattr__(self, "tau_range", (lo, hi))
        if self.tau_mode not in ("per_frame", "per_trajectory"):
            raise ValueError(f"tau_mode must be per_frame or per_trajectory, got {self.tau_mode!r}")


@dataclass(frozen=True)
class EvalConfig:
    shifts: tuple = (-1.0, 1.0, -2.0, 2.0, -4.0, 4.0)  # m, lateral viewpoint offsets
    range: tuple = (0.1, 100.0)  # m, gt in (min, max]
    average: str = "pooled"  # or "frame"

    def __post_init__(self):
        object.__setattr__(self, "shifts", tuple(float(s) for s in self.shifts))
        lo, hi = (float(x) for x in self.range)
        if not 0 <= lo < hi:
            raise ValueError(f"eval range must satisfy 0 <= min < max, got {self.range}")
        object.__setattr__(self, "range", (lo, hi))
        if self.average not in ("pooled", "frame"):
            raise ValueError(f"average must be pooled or frame, got {self.average!r}")


@dataclass(frozen=True)
class PipelineConfig:
    depth_range: tuple = (0.1, 100.0)  # m, valid depth interval, inclusive
    seed: int = 0
    curation: CurationConfig = field(default_factory=CurationConfig)
    nvs: NVSConfig = field(default_factory=NVSConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        lo, hi = (float(x) for x in self.depth_range)
        if not 0 < lo < hi:
            raise ValueError(f"depth_range must satisfy 0 < min < max, got {self.depth_range}")
        object.__setattr__(self, "depth_range", (lo, hi))
        object.__setattr__(self, "seed", int(self.seed))

    def to_dict(self):
        def plain(x):
            if isinstance(x, dict):
                return {k: plain(v) for k, v in x.items()}
            if isinstance(x, (tuple, list)):
                return [plain(v) for v in x]
            return x

        return plain(asdict(self))

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        sub = {"curation": CurationConfig, "nvs": NVSConfig, "eval": EvalConfig}
        kw = {}
        for k, v in d.items():
            if k in sub:
                sk = {f.name for f in fields(sub[k])}
                bad = set(v or {}) - sk
                if bad:
                    raise ValueError(f"unknown keys in '{k}': {sorted(bad)}")
                kw[k] = sub[k](**(v or {}))
            else:
                kw[k] = v
        return cls(**kw)

    def replace(self, **changes):
        d = self.to_dict()
        for key, value in changes.items():
            section, _, name = key.rpartition(".")
            (d[section] if section else d)[name] = value
        return PipelineConfig.from_dict(d)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


_TEMPLATE = """\
# metricdepth pipeline configuration. Lengths in meters, image distances in pixels.
depth_range: [{depth_range[0]!r}, {depth_range[1]!r}]  # m, inclusive valid-depth interval
seed: {seed}  # root of all randomness

curation:
  lidar_window: {c.lidar_window}  # frames aggregated around the target frame (odd)
  voxel_resolution: {c.voxel_resolution!r}  # m, voxel size for the filtered MVS cloud
  hpr_gamma: {c.hpr_gamma!r}  # hidden-point-removal radius exponent
  lidar_priority_radius: {c.lidar_priority_radius}  # px, MVS kept only farther than this from LiDAR pixels
  box_margin: {c.box_margin!r}  # m, inflation of dynamic-object boxes
  lidar_height: {c.lidar_height!r}  # m, MVS points below this ego-frame height are dropped
  sky_depth: {c.sky_depth!r}  # m, depth written into sky pixels
  median_size: {c.median_size}  # px, default backend median window

nvs:
  offsets: {offsets}  # frames, condition offsets n
  augmentation_offsets: {aug}  # frames, augmentation offsets
  tau_range: [{n.tau_range[0]!r}, {n.tau_range[1]!r}]  # m, lateral shift range
  tau_mode: {n.tau_mode}  # per_frame | per_trajectory

eval:
  shifts: {shifts}  # m, lateral evaluation offsets
  range: [{e.range[0]!r}, {e.range[1]!r}]  # m, gt evaluated in (min, max]
  average: {e.average}  # pooled | frame
"""


def dumps(cfg):
    return _TEMPLATE.format(
        depth_range=cfg.depth_range,
        seed=cfg.seed,
        c=cfg.curation,
        n=cfg.nvs,
        e=cfg.eval,
        offsets="[" + ", ".join(str(x) for x in cfg.nvs.offsets) + "]",
        aug="[" + ", ".join(str(x) for x in cfg.nvs.augmentation_offsets) + "]",
        shifts="[" + ", ".join(repr(x) for x in cfg.eval.shifts) + "]",
    )


def loads(text):
    return PipelineConfig.from_dict(yaml.safe_load(text))


def load(path):
    with open(path) as f:
        return loads(f.read())
