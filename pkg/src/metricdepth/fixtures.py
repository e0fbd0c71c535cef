"""Synthetic driving sequences built on the analytic scene oracle.

The "street" preset is a closed corridor: a checkered road, two rows of
building blocks, end walls, a pillar and a sphere. The ego drives along world
+x at constant speed. Sensor data is derived from exact ray casts:

- LiDAR: spinning scans of the static scene from 1.84 m, plus "ghost" returns
  on moving vehicles that are not part of the rendered scene (they must be
  removed by their boxes).
- MVS: surface samples of the whole scene, plus floating points in the sky and
  inside the vehicles (removed by the sky / exclusion masks) and ground samples
  (removed by the height filter).
- RGB, sky masks and dense z-depth per camera from the ray caster.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import MemoryBundle
from .geometry import Camera, CameraRig, Intrinsics, Pose, camera_extrinsic, compose
from .pointcloud import BBox3D, FrameScript, PointCloud, SceneScript, Source
from .synth import Box, Checker, Plane, Sphere, SynthScene, lidar_scan, render_view, sample_cloud

LIDAR_HEIGHT = 1.84
BASE_INTRINSICS = Intrinsics(560.0, 560.0, 399.5, 211.5, 800, 424)

# name, yaw (deg, ego frame, +left), mount position in the ego frame
SURROUND = (
    ("CAM_FRONT", 0.0, (1.7, 0.0, 1.6)),
    ("CAM_FRONT_LEFT", 55.0, (1.5, 0.5, 1.6)),
    ("CAM_FRONT_RIGHT", -55.0, (1.5, -0.5, 1.6)),
    ("CAM_BACK_LEFT", 110.0, (0.0, 0.6, 1.6)),
    ("CAM_BACK_RIGHT", -110.0, (0.0, -0.6, 1.6)),
    ("CAM_BACK", 180.0, (-1.0, 0.0, 1.6)),
)


@dataclass(frozen=True)
class StreetSpec:
    n_frames: int = 17
    cameras: tuple = tuple(s[0] for s in SURROUND)
    scale: float = 1.0  # raster scale relative to 424x800
    speed: float = 1.0  # m per frame along world +x
    lidar_beams: int = 32
    lidar_azimuths: int = 1024
    mvs_density: float = 1.0  # samples per m^2
    ghosts_per_car: int = 200
    seed: int = 0


SMALL = StreetSpec(n_frames=5, cameras=("CAM_FRONT", "CAM_BACK"), scale=0.2, lidar_beams=16, lidar_azimuths=512, mvs_density=0.5)
PRESETS = {"street": StreetSpec(), "street-small": SMALL}


def street_scene():
    road = Checker(1.0, (110, 110, 110), (70, 70, 70))
    facade_l = Checker(1.0, (190, 150, 120), (150, 110, 90))
    facade_r = Checker(1.0, (120, 150, 190), (90, 110, 150))
    wall = Checker(2.0, (170, 170, 140), (130, 130, 100))
    prims = [
        Plane((10.0, 0.0, 0.0), (0.0, 0.0, 1.0), road, (80.0, 14.0)),
        Box((-70.0, 8.0, 0.0), (-5.0, 14.0, 12.0), facade_l),
        Box((-3.0, 8.0, 0.0), (40.0, 14.0, 15.0), facade_l),
        Box((42.0, 8.0, 0.0), (90.0, 14.0, 10.0), facade_l),
        Box((-70.0, -14.0, 0.0), (20.0, -8.0, 14.0), facade_r),
        Box((23.0, -14.0, 0.0), (90.0, -8.0, 11.0), facade_r),
        Box((-71.0, -14.0, 0.0), (-70.0, 14.0, 16.0), wall),
        Box((90.0, -14.0, 0.0), (91.0, 14.0, 16.0), wall),
        Box((12.0, 5.0, 0.0), (13.0, 6.0, 6.0), Checker(0.5, (200, 60, 60), (150, 40, 40))),
        Sphere((24.0, -5.5, 2.0), 1.5, Checker(0.5, (60, 170, 60), (40, 120, 40))),
    ]
    return SynthScene(tuple(prims))


def street_rig(spec):
    k = BASE_INTRINSICS if spec.scale == 1.0 else BASE_INTRINSICS.scaled(spec.scale)
    mounts = {name: (yaw, pos) for name, yaw, pos in SURROUND}
    cams = []
    for name in spec.cameras:
        yaw, pos = mounts[name]
        cams.append(Camera(name, k, camera_extrinsic(np.deg2rad(yaw), pos)))
    return CameraRig(tuple(cams))


def ego_pose(spec, t):
    return Pose.from_translation((spec.speed * t, 0.0, 0.0))


def car_boxes(spec, t):
    """Moving vehicles (world frame) at frame ``t``; not part of the rendered scene."""
    oncoming = BBox3D.from_center_size_yaw((30.0 - 6.0 * t, -3.5, 0.8), (4.5, 1.9, 1.6), np.pi, class_id=1)
    ahead = BBox3D.from_center_size_yaw((9.0 + 1.5 * t, 3.5, 0.8), (4.5, 1.9, 1.6), 0.0, class_id=1)
    return (oncoming, ahead)


def _box_surface(box, rng, n):
    """Uniform-ish samples on the faces of an oriented box."""
    e = box.edges
    u = rng.uniform(size=(n, 3))
    face = rng.integers(0, 6, n)
    axis, side = face // 2, (face % 2).astype(np.float64)
    u[np.arange(n), axis] = side
    return box.corners[0] + u @ e


def _box_volume(box, rng, n):
    return box.corners[0] + rng.uniform(0.1, 0.9, size=(n, 3)) @ box.edges


def _exclude_mask(boxes, cam, k):
    if not boxes:
        return np.zeros(k.shape, dtype=bool)
    lo_hi = []
    for b in boxes:
        c = b.corners
        lo_hi.append(Box(c.min(axis=0), c.max(axis=0)))
    view = render_view(SynthScene(tuple(lo_hi)), cam, k)
    return ~view.sky


def street_bundle(spec=StreetSpec(), with_depth=True, scene=None):
    """Build a :class:`MemoryBundle` for the street preset (optionally another scene on the same drive)."""
    scene = street_scene() if scene is None else scene
    rig = street_rig(spec)
    elevations = np.linspace(-30.0, 10.0, spec.lidar_beams)
    sensor = Pose.from_translation((0.0, 0.0, LIDAR_HEIGHT))
    frames, lidar, mvs = [], [], []
    rgbs, skies, excludes, depths = {}, {}, {}, {}
    for t in range(spec.n_frames):
        rng = np.random.default_rng([spec.seed, 7, t])
        ego = ego_pose(spec, t)
        boxes = car_boxes(spec, t)
        cams = {c.name: compose(ego, c.pose) for c in rig}
        frames.append(FrameScript(t, ego, cams, boxes))

        scan = lidar_scan(scene, compose(ego, sensor), elevations, spec.lidar_azimuths)
        pts = [scan.positions + sensor.translation]
        for b in boxes:
            pts.append(ego.apply_inverse(_box_surface(b, rng, spec.ghosts_per_car)))
        lidar.append(PointCloud(np.concatenate(pts), None, source=Source.LIDAR))

        surf = sample_cloud(scene, spec.mvs_density, seed=[spec.seed, 11, t], source=Source.MVS)
        n_sky = 300
        sky_pts = np.column_stack(
            [rng.uniform(-60.0, 80.0, n_sky), rng.uniform(-5.0, 5.0, n_sky), rng.uniform(30.0, 60.0, n_sky)]
        )
        car_pts = np.concatenate([_box_volume(b, rng, 100) for b in boxes])
        noise = np.concatenate([sky_pts, car_pts])
        noise_col = np.full((len(noise), 3), 255, np.uint8)
        mvs.append(PointCloud.concat([surf, PointCloud(noise, noise_col, source=Source.MVS)]))

        for c in rig:
            pose = cams[c.name]
            view = render_view(scene, pose, c.intrinsics)
            rgbs[(t, c.name)] = view.rgb
            skies[(t, c.name)] = view.sky
            excludes[(t, c.name)] = _exclude_mask(boxes, pose, c.intrinsics)
            if with_depth:
                depths[(t, c.name)] = view.depth
    return MemoryBundle(
        rig, SceneScript(tuple(frames)), lidar, mvs, rgbs, skies, excludes, depths if with_depth else None, scene
    )
