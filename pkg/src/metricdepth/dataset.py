"""Frame bundles: the inputs of curation and the dense RGB-D sequences it produces.

On-disk layout (everything optional is marked)::

    rig.json                      cameras: intrinsics + camera-to-ego extrinsic
    script.json                   per frame: ego (ego->world), camera poses (camera->world), boxes (world)
    scene.json                    analytic scene, synthetic fixtures only (optional)
    frames/{t:04d}/lidar.ply      LiDAR sweep in the frame-t ego frame
    frames/{t:04d}/mvs.ply        MVS points in the world frame (optional)
    frames/{t:04d}/{cam}/rgb.png
    frames/{t:04d}/{cam}/sky.png      sky mask (optional)
    frames/{t:04d}/{cam}/exclude.png  dynamic-object mask (optional)
    frames/{t:04d}/{cam}/depth.pfm    dense depth (dense sequences only)
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .geometry import Camera
from .pointcloud import Source
from .render import DEFAULT_RANGE


def frame_dir(root, t):
    return Path(root) / "frames" / f"{t:04d}"


class Bundle:
    """Common accessors; subclasses provide ``rig``, ``script``, ``scene`` and the raw data."""

    @property
    def n_frames(self):
        return len(self.script)

    @property
    def camera_names(self):
        return self.rig.names

    def intrinsics(self, name):
        return self.rig[name].intrinsics

    def camera(self, t, name):
        """Camera ``name`` at frame ``t`` with its camera-to-world pose."""
        return Camera(name, self.intrinsics(name), self.script[t].cameras[name])

    def cameras(self, t):
        return [self.camera(t, n) for n in self.camera_names]


@dataclass
class MemoryBundle(Bundle):
    rig: object
    script: object
    lidar_clouds: list
    mvs_clouds: list | None = None
    rgbs: dict | None = None
    skies: dict | None = None
    excludes: dict | None = None
    depths: dict | None = None
    scene: object = None

    def lidar(self, t):
        return self.lidar_clouds[t]

    def mvs(self, t):
        if not self.mvs_clouds:
            return None
        return self.mvs_clouds[t]

    def rgb(self, t, name):
        return self.rgbs[(t, name)]

    def sky(self, t, name):
        return None if self.skies is None else self.skies.get((t, name))

    def exclude(self, t, name):
        return None if self.excludes is None else self.excludes.get((t, name))

    def depth(self, t, name):
        return self.depths[(t, name)]


class DiskBundle(Bundle):
    def __init__(self, root, depth_range=DEFAULT_RANGE):
        self.root = Path(root)
        self.rig = io.read_rig(self.root / "rig.json")
        self.script = io.read_script(self.root / "script.json")
        self.depth_range = depth_range
        scene_path = self.root / "scene.json"
        self.scene = None
        if scene_path.exists():
            from .synth import SynthScene

            self.scene = SynthScene.from_dict(io.read_json(scene_path))

    def _cam(self, t, name):
        return frame_dir(self.root, t) / name

    def lidar(self, t):
        return io.read_ply(frame_dir(self.root, t) / "lidar.ply", Source.LIDAR)

    def mvs(self, t):
        p = frame_dir(self.root, t) / "mvs.ply"
        return io.read_ply(p, Source.MVS) if p.exists() else None

    def rgb(self, t, name):
        return io.read_rgb(self._cam(t, name) / "rgb.png")

    def sky(self, t, name):
        p = self._cam(t, name) / "sky.png"
        return io.read_mask(p) if p.exists() else None

    def exclude(self, t, name):
        p = self._cam(t, name) / "exclude.png"
        return io.read_mask(p) if p.exists() else None

    def depth(self, t, name):
        return io.read_depth(self._cam(t, name) / "depth.pfm", self.depth_range)

    def input_files(self):
        """Every file under the bundle root, sorted (for manifests)."""
        return sorted(p for p in self.root.rglob("*") if p.is_file() and not p.name.startswith("."))


def write_bundle(root, bundle):
    """Write a MemoryBundle in the on-disk layout."""
    root = Path(root)
    io.write_rig(root / "rig.json", bundle.rig)
    io.write_script(root / "script.json", bundle.script)
    if bundle.scene is not None:
        io.write_json(root / "scene.json", bundle.scene.to_dict())
    for t in range(bundle.n_frames):
        fd = frame_dir(root, t)
        if bundle.lidar_clouds:
            io.write_ply(fd / "lidar.ply", bundle.lidar(t))
        m = bundle.mvs(t)
        if m is not None:
            io.write_ply(fd / "mvs.ply", m)
        for name in bundle.camera_names:
            cd = fd / name
            if bundle.rgbs is not None:
                io.write_rgb(cd / "rgb.png", bundle.rgb(t, name))
            s = bundle.sky(t, name)
            if s is not None:
                io.write_mask(cd / "sky.png", s)
            e = bundle.exclude(t, name)
            if e is not None:
                io.write_mask(cd / "exclude.png", e)
            if bundle.depths is not None and (t, name) in bundle.depths:
                io.write_depth(cd / "depth.pfm", bundle.depths[(t, name)])


def load_dense_frames(bundle, t):
    """Per-camera dense views ``(Camera, rgb, DepthFrame)`` at frame ``t``."""
    return [(bundle.camera(t, n), bundle.rgb(t, n), bundle.depth(t, n)) for n in bundle.camera_names]


def empty_mask(k):
    return np.zeros(k.shape, dtype=bool)
