"""Condition frames for novel views, lateral trajectory perturbation and the
forward-backward (cycle-consistency) round trip with a pluggable view densifier.

A "surround frame" is a list of dense views ``(Camera, rgb, DepthFrame)`` for
one time step, cameras carrying camera-to-world poses.
"""
from __future__ import annotations

import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .curation import Agreement, nearest_fill_index
from .errors import BackendFailure, OffsetOutOfRange
from .geometry import CONVENTION, Camera
from .pointcloud import PointCloud, voxel_downsample
from .render import DEFAULT_RANGE, ConditionFrame, DepthFrame, depth_to_cloud, splat

STREAM_TAU = 1


def rng_stream(seed, *keys):
    """Independent generator for (seed, keys...): results never depend on call order."""
    return np.random.default_rng([int(seed), *[int(k) for k in keys]])


@dataclass(frozen=True)
class Trajectory:
    """Ego poses (ego-to-world) in frame order. The lateral axis is ego +y."""

    poses: tuple

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    def lateral_axes(self):
        return np.stack([p.rotation[:, 1] for p in self.poses]) if self.poses else np.empty((0, 3))

    def to_dict(self):
        return io.trajectory_to_dict(self.poses)

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(io.trajectory_from_dict(d)))


def lateral_shift(pose, tau, lateral_axis):
    """Translate ``pose`` by ``tau`` along a world-frame unit axis; rotation untouched."""
    if tau == 0:
        return pose
    return type(pose)(pose.rotation, pose.translation + tau * np.asarray(lateral_axis, dtype=np.float64))


def sample_taus(n, seed, tau_range=(-3.0, 3.0), mode="per_frame"):
    lo, hi = float(tau_range[0]), float(tau_range[1])
    if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
        raise ValueError(f"tau_range must be finite with min <= max, got {tau_range}")
    if mode == "per_frame":
        return np.array([rng_stream(seed, STREAM_TAU, i).uniform(lo, hi) for i in range(n)])
    if mode == "per_trajectory":
        return np.full(n, rng_stream(seed, STREAM_TAU).uniform(lo, hi))
    raise ValueError(f"mode must be per_frame or per_trajectory, got {mode!r}")


def perturb_trajectory(traj, seed, tau_range=(-3.0, 3.0), mode="per_frame"):
    """Shift every pose laterally by a uniform random tau; returns ``(novel, taus)``."""
    taus = sample_taus(len(traj), seed, tau_range, mode)
    poses = [lateral_shift(p, float(t), p.rotation[:, 1]) for p, t in zip(traj.poses, taus)]
    return Trajectory(tuple(poses)), taus


# -- conditions -------------------------------------------------------------------


def surround_cloud(views, voxel=None):
    """Back-project every camera of one time step into a single world-frame cloud (camera order)."""
    clouds = [depth_to_cloud(rgb, depth, cam.pose, cam.intrinsics) for cam, rgb, depth in views]
    cloud = PointCloud.concat(clouds)
    if voxel:
        cloud = voxel_downsample(cloud, voxel)
    return cloud


def _target(target, k=None):
    if isinstance(target, Camera):
        return target.pose, target.intrinsics
    if k is None:
        raise ValueError("a bare Pose target needs intrinsics")
    return target, k


def condition_at_view(views, target, k=None, range=DEFAULT_RANGE, voxel=None, cloud=None):
    """Splat the surround cloud of ``views`` into an arbitrary target camera."""
    pose, k = _target(target, k)
    if cloud is None:
        cloud = surround_cloud(views, voxel)
    return splat(cloud, pose, k, range)


def condition_at_offset(frames, t, n, range=DEFAULT_RANGE, voxel=None, cameras=None):
    """Conditions for frame ``t + n`` built from the surround cloud of frame ``t``.

    ``frames[t]`` is the surround frame at time t. Returns ``{camera name:
    ConditionFrame}`` for the cameras of frame ``t + n`` (or just ``cameras``).
    """
    if not (0 <= t < len(frames)) or not (0 <= t + n < len(frames)):
        raise OffsetOutOfRange(f"frame {t} with offset {n:+d} outside [0, {len(frames)})")
    cloud = surround_cloud(frames[t], voxel)
    out = {}
    for cam, _, _ in frames[t + n]:
        if cameras is not None and cam.name not in cameras:
            continue
        out[cam.name] = splat(cloud, cam.pose, cam.intrinsics, range)
    return out


# -- view densifiers --------------------------------------------------------------


class NearestFillDensifier:
    """Default stand-in: nearest-valid-pixel fill of depth and color."""

    agreement = Agreement()

    def __call__(self, cond):
        idx = nearest_fill_index(cond.valid)
        depth = cond.depth.depth.ravel()[idx].reshape(cond.shape)
        rgb = cond.rgb.reshape(-1, 3)[idx].reshape(cond.shape + (3,))
        return rgb, DepthFrame(depth, range=cond.depth.range)


class HolePreservingDensifier:
    """Returns the condition unchanged (fills nothing); for testing round-trip masks."""

    agreement = Agreement()

    def __call__(self, cond):
        return cond.rgb, cond.depth


class OracleViewDensifier:
    """Analytic ray cast of a synthetic scene at the condition's view.

    Sky pixels get ``sky_depth`` (the same convention as curated depth);
    hits outside the depth range take the nearest in-range value, so the
    output is valid everywhere. Colors are the ray-cast colors. The contract
    tolerance is relative because a splatted condition point sits up to half
    a pixel away from the pixel center that the ray cast samples.
    """

    def __init__(self, scene, agreement=None, sky_depth=100.0):
        self.scene = scene
        self.sky_depth = float(sky_depth)
        self.agreement = agreement or Agreement(atol=0.05, rtol=0.05, min_fraction=0.9)

    def __call__(self, cond):
        from .synth import render_view

        view = render_view(self.scene, cond.pose, cond.intrinsics, cond.depth.range)
        depth = np.where(view.sky, np.float32(self.sky_depth), view.depth.depth)
        d = DepthFrame(depth, range=cond.depth.range)
        if not d.valid.all():
            if not d.valid.any():
                raise ValueError("oracle view has no in-range depth")
            idx = nearest_fill_index(d.valid)
            d = DepthFrame(d.depth.ravel()[idx].reshape(d.shape), range=d.range)
        return view.rgb, d


class ExternalViewDensifier:
    """Child-process densifier; placeholders ``{cond_rgb} {cond_depth} {cond_mask}
    {camera} {out_rgb} {out_depth} {dir}`` are replaced by temp-dir paths."""

    def __init__(self, command, agreement=None, timeout=None):
        self.command = command
        self.agreement = agreement or Agreement()
        self.timeout = timeout

    def __call__(self, cond):
        with tempfile.TemporaryDirectory(prefix="mdview-") as tmp:
            tmp = Path(tmp)
            paths = {
                "cond_rgb": tmp / "cond_rgb.png",
                "cond_depth": tmp / "cond_depth.pfm",
                "cond_mask": tmp / "cond_mask.png",
                "camera": tmp / "camera.json",
                "out_rgb": tmp / "out_rgb.png",
                "out_depth": tmp / "out_depth.pfm",
                "dir": tmp,
            }
            io.write_rgb(paths["cond_rgb"], cond.rgb)
            io.write_depth(paths["cond_depth"], cond.depth)
            io.write_mask(paths["cond_mask"], cond.valid)
            io.write_json(
                paths["camera"],
                {"convention": CONVENTION, "pose": cond.pose.matrix.tolist(), "intrinsics": cond.intrinsics.to_dict()},
            )
            argv = [tok.format(**{k: str(v) for k, v in paths.items()}) for tok in shlex.split(self.command)]
            res = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
            if res.returncode != 0:
                raise BackendFailure(f"view densifier exited with status {res.returncode}: {res.stderr.strip()[-500:]}")
            for key in ("out_rgb", "out_depth"):
                if not paths[key].exists():
                    raise BackendFailure(f"view densifier did not write {paths[key].name}")
            rgb = io.read_rgb(paths["out_rgb"])
            depth = io.read_pfm(paths["out_depth"])
        return rgb, DepthFrame(depth, range=cond.depth.range)


def run_view_densifier(densifier, cond):
    rgb, depth = densifier(cond)
    if depth.shape != cond.shape or rgb.shape != cond.shape + (3,):
        raise ValueError(f"densifier output shape {depth.shape} does not match condition {cond.shape}")
    agreement = getattr(densifier, "agreement", Agreement())
    agreement.check(depth.depth, cond.depth.depth, cond.valid, "view densifier")
    return rgb, depth


# -- cycle consistency ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SCCResult:
    """One self-supervised training pair plus everything that produced it."""

    condition: ConditionFrame  # round-trip condition at the original view
    target_rgb: np.ndarray  # original dense view
    target_depth: DepthFrame
    novel_condition: ConditionFrame
    novel_rgb: np.ndarray
    novel_depth: DepthFrame
    residuals: dict = field(default_factory=dict)


def cycle_residuals(cond, rgb, depth):
    """Masked RGB mean-abs-error (0..1 scale) and depth median-abs-error (m).

    Computed only where both the round-trip condition and the original are valid.
    """
    m = cond.valid & depth.valid
    n = int(m.sum())
    if n == 0:
        return {"n_pixels": 0, "rgb_mae": float("nan"), "depth_medae": float("nan")}
    drgb = np.abs(cond.rgb[m].astype(np.float64) - np.asarray(rgb)[m].astype(np.float64)) / 255.0
    dd = np.abs(cond.depth.depth[m].astype(np.float64) - depth.depth[m].astype(np.float64))
    return {"n_pixels": n, "rgb_mae": float(drgb.mean()), "depth_medae": float(np.median(dd))}


def scc_roundtrip(views, camera, novel, densifier=None, range=DEFAULT_RANGE, cloud=None):
    """Forward to a novel view, densify, reproject back, pair with the original.

    ``camera`` names (or indexes) the view in ``views`` whose pose is V_t;
    ``novel`` is the camera-to-world pose of the shifted viewpoint.
    """
    densifier = densifier or NearestFillDensifier()
    if isinstance(camera, str):
        match = [v for v in views if v[0].name == camera]
        if not match:
            raise KeyError(camera)
        cam, rgb, depth = match[0]
    else:
        cam, rgb, depth = views[camera]
    k = cam.intrinsics
    fwd = condition_at_view(views, novel, k, range, cloud=cloud)
    novel_rgb, novel_depth = run_view_densifier(densifier, fwd)
    back_cloud = depth_to_cloud(novel_rgb, novel_depth, novel, k)
    back = splat(back_cloud, cam.pose, k, range)
    return SCCResult(back, np.asarray(rgb), depth, fwd, novel_rgb, novel_depth, cycle_residuals(back, rgb, depth))


def write_training_pair(root, frame, camera, result, meta):
    """``{root}/{frame:04d}/{camera}/`` with condition, target and meta.json."""
    d = Path(root) / f"{frame:04d}" / camera
    io.write_rgb(d / "cond_rgb.png", result.condition.rgb)
    io.write_depth(d / "cond_depth.pfm", result.condition.depth)
    io.write_mask(d / "cond_mask.png", result.condition.valid)
    io.write_rgb(d / "target_rgb.png", result.target_rgb)
    io.write_depth(d / "target_depth.pfm", result.target_depth)
    io.write_json(d / "meta.json", meta)
    return d
