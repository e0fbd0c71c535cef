"""Point splatting into camera rasters and hidden-point removal."""
from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import kernels
from .errors import DegenerateCloud, PointAtViewpoint, SizeMismatch
from .geometry import project_points, unproject
from .pointcloud import PointCloud, Source

DEFAULT_RANGE = (0.1, 100.0)
TIE_EPS = 1e-9


def in_range(depth32, rng):
    """Range test on stored (float32) depth values, inclusive at both ends."""
    d = np.asarray(depth32, dtype=np.float32).astype(np.float64)
    return (d >= rng[0]) & (d <= rng[1])


def _check_range(rng):
    lo, hi = float(rng[0]), float(rng[1])
    if not (0 < lo < hi and np.isfinite(hi)):
        raise ValueError(f"depth range must satisfy 0 < d_min < d_max, got {rng}")
    return lo, hi


class DepthFrame:
    """Metric z-depth raster (float32, meters) with its validity mask.

    A pixel is valid exactly when its stored depth lies in ``range``; invalid
    pixels hold 0. ``valid`` may further restrict the in-range set.
    """

    __slots__ = ("depth", "valid", "range")

    def __init__(self, depth, valid=None, range=DEFAULT_RANGE):
        rng = _check_range(range)
        d = np.array(depth, dtype=np.float32, copy=True)
        if d.ndim != 2:
            raise ValueError(f"depth raster must be 2-D, got shape {d.shape}")
        v = in_range(d, rng)
        if valid is not None:
            valid = np.asarray(valid, dtype=bool)
            if valid.shape != d.shape:
                raise SizeMismatch(f"mask {valid.shape} vs depth {d.shape}")
            v &= valid
        d[~v] = 0.0
        d.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "valid", v)
        object.__setattr__(self, "range", rng)

    def __setattr__(self, name, value):
        raise AttributeError("DepthFrame is immutable")

    def __repr__(self):
        return f"DepthFrame(shape={self.shape}, valid={int(self.valid.sum())}, range={self.range})"

    @property
    def shape(self):
        return self.depth.shape

    def __reduce__(self):
        return (DepthFrame, (self.depth, self.valid, self.range))

    @classmethod
    def invalid(cls, shape, range=DEFAULT_RANGE):
        return cls(np.zeros(shape, np.float32), range=range)

    def equals(self, other):
        return (
            self.shape == other.shape
            and self.depth.tobytes() == other.depth.tobytes()
            and self.range == other.range
        )


class ConditionFrame:
    """Sparse RGB + depth + valid mask for one target view.

    ``index`` holds, per pixel, the index of the cloud point that won the
    z-buffer (-1 where nothing landed). ``pose``/``intrinsics`` describe the
    view the frame was rendered for.
    """

    __slots__ = ("rgb", "depth", "index", "pose", "intrinsics")

    def __init__(self, rgb, depth, index=None, pose=None, intrinsics=None):
        rgb = np.array(rgb, dtype=np.uint8, copy=True)
        if rgb.shape != depth.shape + (3,):
            raise SizeMismatch(f"rgb {rgb.shape} vs depth {depth.shape}")
        rgb[~depth.valid] = 0
        rgb.flags.writeable = False
        if index is None:
            index = np.where(depth.valid, 0, -1)
        index = np.array(index, dtype=np.int64, copy=True)
        index[~depth.valid] = -1
        index.flags.writeable = False
        object.__setattr__(self, "rgb", rgb)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "pose", pose)
        object.__setattr__(self, "intrinsics", intrinsics)

    def __setattr__(self, name, value):
        raise AttributeError("ConditionFrame is immutable")

    def __reduce__(self):
        return (ConditionFrame, (self.rgb, self.depth, self.index, self.pose, self.intrinsics))

    @property
    def valid(self):
        return self.depth.valid

    @property
    def shape(self):
        return self.depth.shape


def splat(cloud, cam, k, range=DEFAULT_RANGE, tie_eps=TIE_EPS):
    """Render a world-frame cloud into camera ``cam`` with 1-pixel z-buffered splats.

    A point lands on pixel ``(floor(u + 0.5), floor(v + 0.5))`` when its
    camera-frame z (as stored float32) is inside ``range`` and the pixel is in
    the raster. The smallest z wins; points within ``tie_eps`` of the minimum
    tie and the lowest input index among them wins.
    """
    rng = _check_range(range)
    h, w = k.height, k.width
    if len(cloud) == 0:
        return ConditionFrame(np.zeros((h, w, 3), np.uint8), DepthFrame.invalid((h, w), rng), None, cam, k)
    pc = cam.apply_inverse(cloud.positions)
    u, v, z = project_points(pc, k)
    z32 = z.astype(np.float32)
    ok = in_range(z32, rng)
    fu = u + 0.5
    fv = v + 0.5
    ok &= (fu >= 0) & (fu < w) & (fv >= 0) & (fv < h)
    sel = np.flatnonzero(ok)
    px = np.floor(fu[sel]).astype(np.int64)
    py = np.floor(fv[sel]).astype(np.int64)
    winner = kernels.zbuffer(py * w + px, z[sel], h * w, tie_eps)
    hit = winner >= 0
    index = np.full(h * w, -1, dtype=np.int64)
    index[hit] = sel[winner[hit]]
    depth = np.zeros(h * w, dtype=np.float32)
    depth[hit] = z32[index[hit]]
    rgb = np.zeros((h * w, 3), dtype=np.uint8)
    if cloud.colors is not None:
        rgb[hit] = cloud.colors[index[hit]]
    valid = hit.reshape(h, w)
    frame = DepthFrame(depth.reshape(h, w), valid, rng)
    return ConditionFrame(rgb.reshape(h, w, 3), frame, index.reshape(h, w), cam, k)


def depth_to_cloud(rgb, depth, cam, k, source=Source.RENDERED):
    """One world-frame point per valid pixel (row-major order), colored by ``rgb``."""
    if depth.shape != k.shape:
        raise SizeMismatch(f"depth {depth.shape} vs intrinsics {k.shape}")
    if rgb is None:
        rgb = np.zeros(depth.shape + (3,), np.uint8)
    rgb = np.asarray(rgb)
    if rgb.shape != depth.shape + (3,):
        raise SizeMismatch(f"rgb {rgb.shape} vs depth {depth.shape}")
    vy, vx = np.nonzero(depth.valid)
    if vy.size == 0:
        return PointCloud.empty(source=source)
    d = depth.depth[vy, vx].astype(np.float64)
    pc = unproject(vx.astype(np.float64), vy.astype(np.float64), d, k)
    return PointCloud(cam.apply(pc), rgb[vy, vx], source=source)


def spherical_flip(points, radius):
    norms = np.linalg.norm(points, axis=1)
    return points + 2.0 * (radius - norms)[:, None] * points / norms[:, None]


def hidden_point_removal(points, viewpoint, gamma=2.0):
    """Indices (ascending) of points visible from ``viewpoint``.

    Points are spherically flipped about the viewpoint with radius
    ``10**gamma * max |p - viewpoint|``; a point is visible when its flipped
    image is a vertex of the convex hull of the flipped set plus the viewpoint.
    """
    if isinstance(points, PointCloud):
        points = points.positions
    p = np.asarray(points, dtype=np.float64) - np.asarray(viewpoint, dtype=np.float64)
    n = p.shape[0]
    if n == 0:
        raise DegenerateCloud("empty cloud")
    norms = np.linalg.norm(p, axis=1)
    if np.any(norms <= 1e-12):
        raise PointAtViewpoint(f"{int((norms <= 1e-12).sum())} point(s) coincide with the viewpoint")
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    radius = 10.0**gamma * norms.max()
    flipped = spherical_flip(p, radius)
    pts = np.vstack([flipped, np.zeros((1, 3))])
    sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    if sv[2] <= 1e-12 * sv[0]:
        raise DegenerateCloud("points and viewpoint are collinear or coplanar; hull undefined")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateCloud(f"convex hull failed: {exc}") from exc
    vis = hull.vertices[hull.vertices < n]
    return np.sort(vis).astype(np.int64)


def frustum_indices(cloud, cam, k, range=DEFAULT_RANGE):
    """Indices of points that would land inside the raster at an in-range depth."""
    rng = _check_range(range)
    if len(cloud) == 0:
        return np.empty(0, np.int64)
    pc = cam.apply_inverse(cloud.positions)
    u, v, z = project_points(pc, k)
    ok = in_range(z.astype(np.float32), rng)
    ok &= (u + 0.5 >= 0) & (u + 0.5 < k.width) & (v + 0.5 >= 0) & (v + 0.5 < k.height)
    return np.flatnonzero(ok)


def visible_in_view(cloud, cam, k, range=DEFAULT_RANGE, gamma=2.0):
    """Frustum-cull for one camera, then hidden-point removal from its center.

    Returns ascending indices into ``cloud``. Culling first keeps the hull
    small; points outside the frustum can never reach this raster anyway.
    """
    idx = frustum_indices(cloud, cam, k, range)
    if idx.size <= 1:
        return idx
    try:
        vis = hidden_point_removal(cloud.positions[idx], cam.center, gamma)
    except DegenerateCloud:
        if idx.size < 4:
            return idx
        raise
    return idx[vis]
