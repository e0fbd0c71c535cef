"""Analytic test scenes: planes, spheres and axis-aligned boxes with procedural color.

``raycast_depth`` returns camera z-depth (not ray length) so its output
round-trips through :func:`metricdepth.geometry.unproject` exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import pixel_grid
from .pointcloud import PointCloud, Source
from .render import DEFAULT_RANGE, DepthFrame

SKY_COLOR = (135, 206, 235)


@dataclass(frozen=True)
class Constant:
    color: tuple = (128, 128, 128)

    def __call__(self, a, b):
        return np.broadcast_to(np.asarray(self.color, np.uint8), (np.shape(a)[0], 3)).copy()

    def to_dict(self):
        return {"type": "constant", "color": list(self.color)}


@dataclass(frozen=True)
class Checker:
    """Two-color checkerboard on a primitive's 2-D surface coordinates."""

    period: float = 1.0
    color_a: tuple = (200, 200, 200)
    color_b: tuple = (60, 60, 60)

    def __call__(self, a, b):
        parity = (np.floor(a / self.period) + np.floor(b / self.period)).astype(np.int64) % 2
        out = np.empty((np.shape(a)[0], 3), np.uint8)
        out[parity == 0] = self.color_a
        out[parity == 1] = self.color_b
        return out

    def to_dict(self):
        return {"type": "checker", "period": self.period, "a": list(self.color_a), "b": list(self.color_b)}


def color_from_dict(d):
    if d is None:
        return Constant()
    if d["type"] == "constant":
        return Constant(tuple(d["color"]))
    if d["type"] == "checker":
        return Checker(d.get("period", 1.0), tuple(d["a"]), tuple(d["b"]))
    raise ValueError(f"unknown color type {d['type']!r}")


def _vec(x):
    a = np.asarray(x, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"primitive parameters must be finite, got {x}")
    return a


@dataclass(frozen=True, eq=False)
class Plane:
    """Plane through ``point`` with ``normal``; a finite rectangle when ``extent`` = (half_a, half_b)."""

    point: np.ndarray
    normal: np.ndarray
    color: object = field(default_factory=Constant)
    extent: tuple | None = None

    def __post_init__(self):
        n = _vec(self.normal)
        nn = np.linalg.norm(n)
        if nn == 0:
            raise ValueError("plane normal must be nonzero")
        object.__setattr__(self, "point", _vec(self.point))
        object.__setattr__(self, "normal", n / nn)

    @property
    def axes(self):
        n = self.normal
        helper = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        t1 = np.cross(helper, n)
        t1 /= np.linalg.norm(t1)
        return t1, np.cross(n, t1)

    def local(self, x):
        t1, t2 = self.axes
        r = x - self.point
        return r @ t1, r @ t2

    def intersect(self, o, d):
        n = self.normal
        denom = d[:, 0] * n[0] + d[:, 1] * n[1] + d[:, 2] * n[2]
        num = (self.point - o) @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        t = np.where((denom != 0) & (t > 0), t, np.inf)
        if self.extent is not None:
            hit = np.isfinite(t)
            x = o + t[hit, None] * d[hit]
            a, b = self.local(x)
            inside = (np.abs(a) <= self.extent[0]) & (np.abs(b) <= self.extent[1])
            tt = t[hit]
            tt[~inside] = np.inf
            t[hit] = tt
        return t

    def texcoords(self, x):
        return self.local(x)

    def area(self):
        if self.extent is None:
            raise ValueError("cannot sample an unbounded plane; give it an extent")
        return 4.0 * self.extent[0] * self.extent[1]

    def sample(self, rng, n):
        t1, t2 = self.axes
        a = rng.uniform(-self.extent[0], self.extent[0], n)
        b = rng.uniform(-self.extent[1], self.extent[1], n)
        return self.point + a[:, None] * t1 + b[:, None] * t2

    def to_dict(self):
        d = {"type": "plane", "point": self.point.tolist(), "normal": self.normal.tolist(), "color": self.color.to_dict()}
        if self.extent is not None:
            d["extent"] = list(self.extent)
        return d


@dataclass(frozen=True, eq=False)
class Sphere:
    center: np.ndarray
    radius: float
    color: object = field(default_factory=Constant)

    def __post_init__(self):
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"sphere radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "radius", float(self.radius))

    def intersect(self, o, d):
        oc = self.center - o
        a = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
        bq = d[:, 0] * oc[0] + d[:, 1] * oc[1] + d[:, 2] * oc[2]
        c = oc @ oc - self.radius * self.radius
        disc = bq * bq - a * c
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t1 = (bq - sq) / a
        t2 = (bq + sq) / a
        t = np.where(t1 > 0, t1, np.where(t2 > 0, t2, np.inf))
        return np.where(ok, t, np.inf)

    def texcoords(self, x):
        r = x - self.center
        lon = np.arctan2(r[:, 1], r[:, 0])
        lat = np.arcsin(np.clip(r[:, 2] / self.radius, -1, 1))
        return lon * self.radius, lat * self.radius

    def area(self):
        return 4.0 * np.pi * self.radius**2

    def sample(self, rng, n):
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return self.center + self.radius * v

    def to_dict(self):
        return {"type": "sphere", "center": self.center.tolist(), "radius": self.radius, "color": self.color.to_dict()}


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray
    color: object = field(default_factory=Constant)

    def __post_init__(self):
        lo, hi = _vec(self.lo), _vec(self.hi)
        if not np.all(lo < hi):
            raise ValueError(f"box min must be < max componentwise, got {lo} / {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def intersect(self, o, d):
        tnear = np.full(d.shape[0], -np.inf)
        tfar = np.full(d.shape[0], np.inf)
        miss = np.zeros(d.shape[0], dtype=bool)
        for i in range(3):
            di = d[:, i]
            par = di == 0
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (self.lo[i] - o[i]) / di
                t2 = (self.hi[i] - o[i]) / di
            tmin = np.where(par, -np.inf, np.minimum(t1, t2))
            tmax = np.where(par, np.inf, np.maximum(t1, t2))
            if not (self.lo[i] <= o[i] <= self.hi[i]):
                miss |= par
            tnear = np.maximum(tnear, tmin)
            tfar = np.minimum(tfar, tmax)
        hit = ~miss & (tnear <= tfar) & (tfar > 0)
        t = np.where(tnear > 0, tnear, tfar)
        return np.where(hit, t, np.inf)

    def texcoords(self, x):
        # the coordinate pinned to a face is the one closest to lo/hi; use the other two
        dist = np.minimum(np.abs(x - self.lo), np.abs(x - self.hi))
        face = np.argmin(dist, axis=1)
        a = np.where(face == 0, x[:, 1], x[:, 0])
        b = np.where(face == 2, x[:, 1], x[:, 2])
        return a, b

    def area(self):
        e = self.hi - self.lo
        return 2.0 * (e[0] * e[1] + e[1] * e[2] + e[0] * e[2])

    def sample(self, rng, n):
        e = self.hi - self.lo
        areas = np.array([e[1] * e[2], e[1] * e[2], e[0] * e[2], e[0] * e[2], e[0] * e[1], e[0] * e[1]])
        face = rng.choice(6, size=n, p=areas / areas.sum())
        x = self.lo + rng.uniform(size=(n, 3)) * e
        axis = face // 2
        side = np.where(face % 2 == 0, self.lo[axis], self.hi[axis])
        x[np.arange(n), axis] = side
        return x

    def to_dict(self):
        return {"type": "box", "min": self.lo.tolist(), "max": self.hi.tolist(), "color": self.color.to_dict()}


def primitive_from_dict(d):
    color = color_from_dict(d.get("color"))
    kind = d["type"]
    if kind == "plane":
        ext = d.get("extent")
        return Plane(d["point"], d["normal"], color, None if ext is None else tuple(ext))
    if kind == "sphere":
        return Sphere(d["center"], d["radius"], color)
    if kind == "box":
        return Box(d["min"], d["max"], color)
    raise ValueError(f"unknown primitive type {kind!r}")


@dataclass(frozen=True)
class SynthScene:
    primitives: tuple
    sky_color: tuple = SKY_COLOR

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))

    def to_dict(self):
        return {"primitives": [p.to_dict() for p in self.primitives], "sky_color": list(self.sky_color)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(primitive_from_dict(p) for p in d["primitives"]), tuple(d.get("sky_color", SKY_COLOR)))


def raycast(scene, origin, dirs):
    """Nearest positive hit per ray.

    Returns ``(t, prim)`` where ``t`` is the ray parameter along the given
    (unnormalised) direction, ``inf`` on a miss, and ``prim`` is the index of
    the hit primitive (-1 on a miss; ties go to the earlier primitive).
    """
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    best = np.full(d.shape[0], np.inf)
    prim = np.full(d.shape[0], -1, dtype=np.int64)
    for i, p in enumerate(scene.primitives):
        t = p.intersect(o, d)
        closer = t < best
        best = np.where(closer, t, best)
        prim[closer] = i
    return best, prim


def shade(scene, points, prim):
    rgb = np.empty((points.shape[0], 3), np.uint8)
    rgb[:] = scene.sky_color
    for i, p in enumerate(scene.primitives):
        m = prim == i
        if m.any():
            a, b = p.texcoords(points[m])
            rgb[m] = p.color(a, b)
    return rgb


def camera_rays(cam, k):
    """World-space ray directions with unit camera-z component, (H*W, 3), row-major."""
    u, v = pixel_grid(k)
    dx = ((u - k.cx) / k.fx).ravel()
    dy = ((v - k.cy) / k.fy).ravel()
    r = cam.rotation
    # explicit sums (no BLAS) so results are reproducible element by element
    return np.stack(
        [r[0, 0] * dx + r[0, 1] * dy + r[0, 2], r[1, 0] * dx + r[1, 1] * dy + r[1, 2], r[2, 0] * dx + r[2, 1] * dy + r[2, 2]],
        axis=1,
    )


@dataclass(frozen=True)
class SynthView:
    rgb: np.ndarray
    depth: DepthFrame
    sky: np.ndarray
    primitive: np.ndarray


def render_view(scene, cam, k, range=DEFAULT_RANGE, colors=True):
    """Ray-cast every pixel center; returns rgb, z-depth frame, sky mask and primitive ids.

    With ``colors=False`` the rgb raster is left as zeros (depth-only callers).
    """
    d = camera_rays(cam, k)
    t, prim = raycast(scene, cam.translation, d)
    hit = np.isfinite(t)
    if colors:
        pts = np.zeros_like(d)
        pts[hit] = cam.translation + t[hit, None] * d[hit]
        rgb = shade(scene, pts, prim).reshape(k.height, k.width, 3)
    else:
        rgb = np.zeros((k.height, k.width, 3), np.uint8)
    depth = np.where(hit, t, 0.0).reshape(k.shape)
    return SynthView(rgb, DepthFrame(depth, hit.reshape(k.shape), range), ~hit.reshape(k.shape), prim.reshape(k.shape))


def raycast_depth(scene, cam, k, range=DEFAULT_RANGE):
    """(rgb raster, DepthFrame) seen by camera ``cam``; sky pixels are invalid."""
    view = render_view(scene, cam, k, range)
    return view.rgb, view.depth


def sample_cloud(scene, density, seed=0, source=Source.RENDERED):
    """Uniform surface samples, ``round(density * area)`` per primitive, colored."""
    if not density >= 0:
        raise ValueError(f"density must be >= 0, got {density}")
    rng = np.random.default_rng(seed)
    pos, col = [], []
    for p in scene.primitives:
        n = int(round(density * p.area()))
        if n == 0:
            continue
        x = p.sample(rng, n)
        a, b = p.texcoords(x)
        pos.append(x)
        col.append(p.color(a, b))
    if not pos:
        return PointCloud.empty(source=source)
    return PointCloud(np.concatenate(pos), np.concatenate(col), source=source)


def lidar_scan(scene, pose, elevations_deg, n_azimuth, max_range=100.0):
    """Spinning-LiDAR returns in the sensor's own frame (x forward, y left, z up)."""
    el = np.deg2rad(np.asarray(elevations_deg, dtype=np.float64))
    az = np.arange(n_azimuth) * (2 * np.pi / n_azimuth)
    ee, aa = np.meshgrid(el, az, indexing="ij")
    local = np.stack([np.cos(ee) * np.cos(aa), np.cos(ee) * np.sin(aa), np.sin(ee)], axis=-1).reshape(-1, 3)
    dirs = local @ pose.rotation.T
    t, prim = raycast(scene, pose.translation, dirs)
    keep = np.isfinite(t) & (t <= max_range)
    pts_local = local[keep] * t[keep, None]
    return PointCloud(pts_local, None, source=Source.LIDAR)
