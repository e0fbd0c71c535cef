"""Pseudo-ground-truth metric depth curation.

Per frame and camera: aggregate LiDAR over a short window (dynamic objects
removed with their boxes), filter the MVS cloud (height, 2-D exclusion masks,
voxel grid), merge, remove hidden points, fuse into a LiDAR-first depth
prompt, fill it by nearest-neighbour interpolation, hand it to a completion
backend and finally write sky depth.
"""
from __future__ import annotations

import enum
import logging
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import io, kernels
from .config import PipelineConfig
from .errors import BackendFailure, DensifierContractViolation, EmptyPrompt, SizeMismatch, StageError
from .geometry import inverse, project_points
from .pointcloud import (
    PointCloud,
    Source,
    aggregate_frames,
    filter_above_height,
    remove_dynamic,
    transform,
    voxel_downsample,
    window_indices,
)
from .render import DEFAULT_RANGE, DepthFrame, in_range, splat, visible_in_view

log = logging.getLogger(__name__)


class PromptSource(enum.IntEnum):
    NONE = 0
    LIDAR = 1
    MVS = 2


@dataclass(frozen=True, eq=False)
class DepthPrompt:
    """Sparse fused depth for one camera plus a per-pixel source tag.

    ``initial`` is the nearest-neighbour fill of ``depth`` once the densify
    stage has run; ``pose``/``intrinsics`` identify the camera.
    """

    depth: DepthFrame
    source: np.ndarray
    pose: object = None
    intrinsics: object = None
    initial: DepthFrame | None = None

    def __post_init__(self):
        src = np.asarray(self.source, dtype=np.uint8)
        if src.shape != self.depth.shape:
            raise SizeMismatch(f"source tags {src.shape} vs depth {self.depth.shape}")
        if not np.array_equal(src != PromptSource.NONE, self.depth.valid):
            raise ValueError("prompt source tag must be NONE exactly on invalid pixels")
        src = src.copy()
        src.flags.writeable = False
        object.__setattr__(self, "source", src)

    def with_initial(self, initial):
        return DepthPrompt(self.depth, self.source, self.pose, self.intrinsics, initial)


@dataclass(frozen=True)
class Agreement:
    """How closely a backend's output must match its input at trusted pixels.

    ``scope="lidar"`` checks LiDAR-tagged pixels only, ``"prompt"`` every
    valid prompt pixel. A pixel agrees when ``|out - ref| <= atol + rtol*ref``;
    at least ``min_fraction`` of checked pixels must agree.
    """

    atol: float = 0.0
    rtol: float = 0.0
    min_fraction: float = 1.0
    scope: str = "prompt"

    def fraction(self, out, ref, mask):
        n = int(mask.sum())
        if n == 0:
            return 1.0
        o = out[mask].astype(np.float64)
        r = ref[mask].astype(np.float64)
        ok = np.abs(o - r) <= self.atol + self.rtol * r
        return float(ok.mean())

    def check(self, out, ref, mask, what="densifier"):
        frac = self.fraction(out, ref, mask)
        if frac < self.min_fraction:
            raise DensifierContractViolation(
                f"{what} output agrees with its input on {frac:.4f} of checked pixels; "
                f"contract needs {self.min_fraction} within atol={self.atol}, rtol={self.rtol}"
            )
        return frac


def fuse_depth(lidar_cloud, mvs_cloud, cam, k, lidar_priority_radius=2, range=DEFAULT_RANGE):
    """LiDAR-first depth prompt.

    LiDAR is splatted first; an MVS pixel is kept only if its Chebyshev
    distance to every LiDAR-valid pixel exceeds ``lidar_priority_radius``.
    """
    lid = splat(lidar_cloud, cam, k, range)
    mvs = splat(mvs_cloud, cam, k, range)
    r = int(lidar_priority_radius)
    near_lidar = ndimage.maximum_filter(lid.valid, size=2 * r + 1, mode="constant", cval=False)
    use_mvs = mvs.valid & ~near_lidar
    depth = np.where(lid.valid, lid.depth.depth, np.where(use_mvs, mvs.depth.depth, 0.0))
    src = np.full(k.shape, PromptSource.NONE, dtype=np.uint8)
    src[use_mvs] = PromptSource.MVS
    src[lid.valid] = PromptSource.LIDAR
    frame = DepthFrame(depth, lid.valid | use_mvs, range)
    return DepthPrompt(frame, src, cam, k)


def nearest_fill_index(valid):
    """Flat index of the nearest valid pixel for every pixel (ties: smaller row, then column)."""
    if not np.any(valid):
        raise EmptyPrompt("prompt has no valid pixel")
    return kernels.nearest_valid(valid)


def densify_nn(prompt):
    """Give every invalid pixel the depth of its nearest valid pixel (Euclidean, pixel units)."""
    frame = prompt.depth if isinstance(prompt, DepthPrompt) else prompt
    idx = nearest_fill_index(frame.valid)
    dense = frame.depth.ravel()[idx].reshape(frame.shape)
    return DepthFrame(dense, range=frame.range)


def apply_sky(depth, sky_mask, sky_depth=100.0):
    """Write ``sky_depth`` into masked pixels and mark them valid."""
    sky_mask = np.asarray(sky_mask, dtype=bool)
    if sky_mask.shape != depth.shape:
        raise SizeMismatch(f"sky mask {sky_mask.shape} vs depth {depth.shape}")
    if not sky_mask.any():
        return depth
    d = np.where(sky_mask, np.float32(sky_depth), depth.depth)
    return DepthFrame(d, depth.valid | sky_mask, depth.range)


# -- completion backends ----------------------------------------------------------


class NearestMedianBackend:
    """Default completion: the nearest-neighbour prompt, median-filtered off LiDAR pixels."""

    def __init__(self, size=3):
        self.size = size
        self.agreement = Agreement(scope="lidar")

    def __call__(self, rgb, prompt):
        initial = prompt.initial if prompt.initial is not None else densify_nn(prompt)
        med = ndimage.median_filter(initial.depth, size=self.size, mode="nearest")
        keep = prompt.source == PromptSource.LIDAR
        return DepthFrame(np.where(keep, initial.depth, med), range=initial.range)


class OracleBackend:
    """Completion by analytic ray casting of a synthetic scene (test oracle).

    Sky and out-of-range pixels take the nearest in-range depth so the output
    is valid everywhere; the sky stage overrides sky pixels afterwards. The
    contract is checked on LiDAR pixels with a relative tolerance: a splatted
    point sits up to half a pixel from the pixel center, so on slanted or
    distant surfaces its depth differs from the center ray's by a few percent.
    """

    def __init__(self, scene, agreement=None):
        self.scene = scene
        self.agreement = agreement or Agreement(atol=0.05, rtol=0.05, min_fraction=0.98, scope="lidar")

    def __call__(self, rgb, prompt):
        from .synth import render_view

        view = render_view(self.scene, prompt.pose, prompt.intrinsics, prompt.depth.range, colors=False)
        d = view.depth
        if d.valid.all():
            return d
        if not d.valid.any():
            return DepthFrame(np.full(d.shape, d.range[1], np.float32), range=d.range)
        return densify_nn(d)


class ExternalBackend:
    """Runs a completion program in a child process.

    The command is a template; these placeholders are substituted with paths
    in a fresh temp directory: ``{rgb}`` (PNG), ``{prompt}`` (PFM, sparse),
    ``{source}`` (8-bit PNG tags: 0 none, 1 lidar, 2 mvs), ``{initial}`` (PFM,
    nearest-neighbour fill), ``{camera}`` (JSON), ``{out}`` (PFM to write),
    ``{dir}``. A nonzero exit status is a backend failure.
    """

    def __init__(self, command, agreement=None, timeout=None):
        self.command = command
        self.agreement = agreement or Agreement(atol=0.0, min_fraction=1.0, scope="lidar")
        self.timeout = timeout

    def __call__(self, rgb, prompt):
        initial = prompt.initial if prompt.initial is not None else densify_nn(prompt)
        with tempfile.TemporaryDirectory(prefix="mdbackend-") as tmp:
            tmp = Path(tmp)
            paths = {
                "rgb": tmp / "rgb.png",
                "prompt": tmp / "prompt.pfm",
                "source": tmp / "source.png",
                "initial": tmp / "initial.pfm",
                "camera": tmp / "camera.json",
                "out": tmp / "out.pfm",
                "dir": tmp,
            }
            io.write_rgb(paths["rgb"], rgb)
            io.write_depth(paths["prompt"], prompt.depth)
            io.write_labels(paths["source"], prompt.source)
            io.write_depth(paths["initial"], initial)
            cam = {}
            if prompt.pose is not None:
                cam["pose"] = prompt.pose.matrix.tolist()
                cam["convention"] = "camera_to_world"
            if prompt.intrinsics is not None:
                cam["intrinsics"] = prompt.intrinsics.to_dict()
            io.write_json(paths["camera"], cam)
            argv = [tok.format(**{k: str(v) for k, v in paths.items()}) for tok in shlex.split(self.command)]
            res = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
            if res.returncode != 0:
                raise BackendFailure(f"backend exited with status {res.returncode}: {res.stderr.strip()[-500:]}")
            if not paths["out"].exists():
                raise BackendFailure(f"backend did not write {paths['out'].name}")
            out = io.read_pfm(paths["out"])
        if out.shape != prompt.depth.shape:
            raise SizeMismatch(f"backend output {out.shape} vs prompt {prompt.depth.shape}")
        return DepthFrame(out, range=prompt.depth.range)


def run_backend(backend, rgb, prompt):
    """Invoke a backend and enforce its declared contract."""
    out = backend(rgb, prompt)
    if not out.valid.all():
        raise DensifierContractViolation(f"backend output invalid on {int((~out.valid).sum())} pixels")
    agreement = getattr(backend, "agreement", Agreement())
    mask = prompt.source == PromptSource.LIDAR if agreement.scope == "lidar" else prompt.depth.valid
    agreement.check(out.depth, prompt.depth.depth, mask, "completion backend")
    return out


# -- the pipeline -------------------------------------------------------------------


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, ev, tb):
        if ev is not None and not isinstance(ev, StageError) and isinstance(ev, Exception):
            raise StageError(self.name, ev) from ev
        return False


def stage(name):
    return _Stage(name)


def lidar_world(bundle, t, cfg):
    """Dynamic-free LiDAR aggregated over the window around ``t``, in world coordinates."""
    c = cfg.curation
    egos = [f.ego for f in bundle.script.frames]
    with stage("aggregate_frames"):
        idx = window_indices(bundle.n_frames, t, c.lidar_window)
    clouds = [PointCloud.empty(with_colors=False, source=Source.LIDAR)] * bundle.n_frames
    for s in idx:
        with stage("remove_dynamic"):
            cloud = bundle.lidar(s)
            to_ego = inverse(egos[s])
            boxes = [b.transformed(to_ego) for b in bundle.script[s].boxes]
            clouds[s] = remove_dynamic(cloud, boxes, c.box_margin)
    with stage("aggregate_frames"):
        agg = aggregate_frames(clouds, egos, t, c.lidar_window)
        return transform(agg, egos[t])


def mvs_filtered(bundle, t, cfg):
    """MVS cloud of frame ``t`` with ground noise, masked regions and redundancy removed."""
    c = cfg.curation
    cloud = bundle.mvs(t)
    if cloud is None or len(cloud) == 0:
        return PointCloud.empty(source=Source.MVS)
    ego = bundle.script[t].ego
    with stage("filter_above_height"):
        local = filter_above_height(transform(cloud, inverse(ego)), c.lidar_height)
        cloud = transform(local, ego)
    with stage("semantic_filter"):
        drop = np.zeros(len(cloud), dtype=bool)
        for cam in bundle.cameras(t):
            masks = [m for m in (bundle.sky(t, cam.name), bundle.exclude(t, cam.name)) if m is not None]
            if not masks:
                continue
            excl = np.logical_or.reduce(masks)
            drop |= landing_on(cloud, cam.pose, cam.intrinsics, excl, cfg.depth_range)
        cloud = cloud.select(~drop)
    with stage("voxel_downsample"):
        return voxel_downsample(cloud, c.voxel_resolution)


def landing_on(cloud, cam, k, mask, range=DEFAULT_RANGE):
    """Points that project (in range, inside the raster) onto a set pixel of ``mask``."""
    if len(cloud) == 0:
        return np.zeros(0, dtype=bool)
    pc = cam.apply_inverse(cloud.positions)
    u, v, z = project_points(pc, k)
    ok = in_range(z.astype(np.float32), range)
    fu, fv = u + 0.5, v + 0.5
    ok &= (fu >= 0) & (fu < k.width) & (fv >= 0) & (fv < k.height)
    out = np.zeros(len(cloud), dtype=bool)
    sel = np.flatnonzero(ok)
    out[sel] = mask[np.floor(fv[sel]).astype(np.int64), np.floor(fu[sel]).astype(np.int64)]
    return out


@dataclass(frozen=True)
class CuratedView:
    depth: DepthFrame
    prompt: DepthPrompt


def curate_camera(merged, cam, rgb, sky, cfg, backend):
    c = cfg.curation
    k = cam.intrinsics
    with stage("hidden_point_removal"):
        vis = visible_in_view(merged, cam.pose, k, cfg.depth_range, c.hpr_gamma)
        visible = merged.select(vis)
    with stage("fuse_depth"):
        lid = visible.select(visible.source == Source.LIDAR)
        mvs = visible.select(visible.source == Source.MVS)
        prompt = fuse_depth(lid, mvs, cam.pose, k, c.lidar_priority_radius, cfg.depth_range)
    with stage("densify_nn"):
        prompt = prompt.with_initial(densify_nn(prompt))
    with stage("backend"):
        dense = run_backend(backend, rgb, prompt)
    with stage("apply_sky"):
        if sky is not None:
            dense = apply_sky(dense, sky, c.sky_depth)
    return CuratedView(dense, prompt)


def curate_frame(bundle, t, cfg=None, backend=None):
    """Dense pseudo-GT depth for every camera of frame ``t``: ``{camera name: CuratedView}``."""
    cfg = cfg or PipelineConfig()
    backend = backend or NearestMedianBackend(cfg.curation.median_size)
    lid = lidar_world(bundle, t, cfg)
    mvs = mvs_filtered(bundle, t, cfg)
    with stage("merge"):
        merged = PointCloud.concat([lid, mvs])
    log.debug("frame %d: %d lidar + %d mvs points", t, len(lid), len(mvs))
    out = {}
    for cam in bundle.cameras(t):
        with stage("load_images"):
            rgb = bundle.rgb(t, cam.name)
            sky = bundle.sky(t, cam.name)
        out[cam.name] = curate_camera(merged, cam, rgb, sky, cfg, backend)
    return out


def curate(bundle, cfg=None, backend=None, frames=None):
    """Run :func:`curate_frame` over ``frames`` (default: all); ``{(t, name): DepthFrame}``."""
    frames = range(bundle.n_frames) if frames is None else frames
    result = {}
    for t in frames:
        for name, view in curate_frame(bundle, t, cfg, backend).items():
            result[(t, name)] = view.depth
    return result
