"""Point clouds, 3D boxes, per-frame scene scripts and the curation-side cloud ops."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DegenerateBox, EmptyWindow, FilterOnWrongSource, NonPositiveResolution
from .geometry import CONVENTION, Pose, RelativeTransform, check_convention, compose, inverse


class Source(enum.IntEnum):
    LIDAR = 0
    MVS = 1
    RENDERED = 2


def _ro(a):
    a.flags.writeable = False
    return a


class PointCloud:
    """Colored, labeled, source-tagged points. Immutable.

    ``colors`` (N, 3) uint8 and ``labels`` (N,) int32 are optional;
    ``source`` is always present as an (N,) uint8 array of :class:`Source`.
    """

    __slots__ = ("positions", "colors", "labels", "source")

    def __init__(self, positions, colors=None, labels=None, source=Source.RENDERED):
        pos = np.array(positions, dtype=np.float64, copy=True).reshape(-1, 3)
        if not np.all(np.isfinite(pos)):
            raise ValueError("point positions must be finite")
        n = pos.shape[0]
        if colors is not None:
            colors = np.array(colors, dtype=np.uint8, copy=True).reshape(-1, 3)
            if colors.shape[0] != n:
                raise ValueError(f"colors has {colors.shape[0]} rows, positions has {n}")
            colors = _ro(colors)
        if labels is not None:
            labels = np.array(labels, dtype=np.int32, copy=True).reshape(-1)
            if labels.shape[0] != n:
                raise ValueError(f"labels has {labels.shape[0]} rows, positions has {n}")
            labels = _ro(labels)
        src = np.asarray(source)
        if src.ndim == 0:
            src = np.full(n, int(src), dtype=np.uint8)
        else:
            src = np.array(src, dtype=np.uint8, copy=True).reshape(-1)
            if src.shape[0] != n:
                raise ValueError(f"source has {src.shape[0]} rows, positions has {n}")
        if n and src.max() > max(Source):
            raise ValueError(f"unknown source tag {int(src.max())}")
        object.__setattr__(self, "positions", _ro(pos))
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "source", _ro(src))

    def __setattr__(self, name, value):
        raise AttributeError("PointCloud is immutable")

    def __len__(self):
        return self.positions.shape[0]

    def __reduce__(self):
        return (PointCloud, (self.positions, self.colors, self.labels, self.source))

    def __repr__(self):
        return f"PointCloud(n={len(self)}, colors={self.colors is not None}, labels={self.labels is not None})"

    @classmethod
    def empty(cls, with_colors=True, source=Source.RENDERED):
        return cls(np.empty((0, 3)), np.empty((0, 3), np.uint8) if with_colors else None, source=source)

    def colors_or_zeros(self):
        if self.colors is None:
            return np.zeros((len(self), 3), dtype=np.uint8)
        return self.colors

    def select(self, idx):
        """Subset by integer indices or boolean mask (order follows ``idx``)."""
        idx = np.asarray(idx)
        return PointCloud(
            self.positions[idx],
            None if self.colors is None else self.colors[idx],
            None if self.labels is None else self.labels[idx],
            self.source[idx],
        )

    def with_positions(self, positions):
        return PointCloud(positions, self.colors, self.labels, self.source)

    def equals(self, other):
        """Bitwise equality of all arrays."""

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and a.tobytes() == b.tobytes()

        return (
            same(self.positions, other.positions)
            and same(self.colors, other.colors)
            and same(self.labels, other.labels)
            and same(self.source, other.source)
        )

    @staticmethod
    def concat(clouds):
        """Concatenate in order. Colors/labels are kept only if every input has them."""
        clouds = list(clouds)
        if not clouds:
            return PointCloud.empty()
        pos = np.concatenate([c.positions for c in clouds])
        colors = (
            np.concatenate([c.colors for c in clouds]) if all(c.colors is not None for c in clouds) else None
        )
        labels = (
            np.concatenate([c.labels for c in clouds]) if all(c.labels is not None for c in clouds) else None
        )
        src = np.concatenate([c.source for c in clouds])
        return PointCloud(pos, colors, labels, src)


# Corner ``i`` of a box is origin + bit0(i)*e0 + bit1(i)*e1 + bit2(i)*e2.
_AXIS_BITS = (1, 2, 4)


@dataclass(frozen=True, eq=False)
class BBox3D:
    corners: np.ndarray
    class_id: int = 0

    def __post_init__(self):
        c = np.array(self.corners, dtype=np.float64, copy=True)
        if c.shape != (8, 3):
            raise ValueError(f"box corners must be 8x3, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("box corners must be finite")
        for bit in _AXIS_BITS:
            lo = [i for i in range(8) if not i & bit]
            edges = c[[i | bit for i in lo]] - c[lo]
            if np.abs(edges - edges[0]).max() > 1e-6:
                raise ValueError("box corners do not form a parallelepiped (corner order is bit-coded)")
        object.__setattr__(self, "corners", _ro(c))
        object.__setattr__(self, "class_id", int(self.class_id))

    @classmethod
    def from_center_size_yaw(cls, center, size, yaw=0.0, class_id=0):
        """Upright box; ``size`` = (length along heading, width, height)."""
        center = np.asarray(center, dtype=np.float64)
        l, w, h = size
        cy, sy = np.cos(yaw), np.sin(yaw)
        axes = np.array([[cy * l, sy * l, 0.0], [-sy * w, cy * w, 0.0], [0.0, 0.0, h]])
        bits = np.array([[(i >> a) & 1 for a in range(3)] for i in range(8)], dtype=np.float64)
        corners = center - axes.sum(axis=0) / 2 + bits @ axes
        return cls(corners, class_id)

    @property
    def edges(self):
        return np.stack([self.corners[b] - self.corners[0] for b in _AXIS_BITS])

    @property
    def center(self):
        return self.corners.mean(axis=0)

    def slabs(self):
        """Unit face normals (3, 3) and half-thicknesses (3,) of the three slab pairs."""
        e = self.edges
        lengths = np.linalg.norm(e, axis=1)
        if np.any(lengths < 1e-6):
            raise DegenerateBox(f"box edge length {lengths.min():.3g} m below 1e-6 m")
        normals = np.empty((3, 3))
        half = np.empty(3)
        for a in range(3):
            n = np.cross(e[(a + 1) % 3], e[(a + 2) % 3])
            nn = np.linalg.norm(n)
            if nn < 1e-12:
                raise DegenerateBox("box edges are coplanar")
            n /= nn
            normals[a] = n
            half[a] = abs(e[a] @ n) / 2
        return normals, half

    def transformed(self, xf):
        return BBox3D(xf.apply(self.corners), self.class_id)

    def to_dict(self):
        return {"class_id": self.class_id, "corners": self.corners.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["corners"], d.get("class_id", 0))


def transform(cloud, xf):
    """Apply a rigid transform to positions; attributes are carried through."""
    if np.array_equal(xf.rotation, np.eye(3)) and not np.any(xf.translation):
        return cloud
    return cloud.with_positions(xf.apply(cloud.positions))


def inside_boxes(positions, boxes, margin=0.1):
    """Boolean mask of points inside any box inflated by ``margin`` (boundary counts as inside)."""
    positions = np.asarray(positions, dtype=np.float64)
    inside = np.zeros(positions.shape[0], dtype=bool)
    for box in boxes:
        normals, half = box.slabs()
        local = (positions - box.center) @ normals.T
        inside |= np.all(np.abs(local) <= half + margin, axis=1)
    return inside


def remove_dynamic(cloud, boxes, margin=0.1):
    """Drop points inside any (inflated) box; returns the surviving points in input order."""
    boxes = list(boxes)
    if not boxes or len(cloud) == 0:
        for b in boxes:
            b.slabs()
        return cloud
    return cloud.select(~inside_boxes(cloud.positions, boxes, margin))


def filter_above_height(cloud, z_min):
    """Keep points with z >= z_min. MVS clouds only, expressed in the ego frame."""
    if np.any(cloud.source == Source.LIDAR):
        raise FilterOnWrongSource("height filtering applies to MVS clouds, got lidar points")
    return cloud.select(cloud.positions[:, 2] >= z_min)


def voxel_downsample(cloud, resolution):
    """One point per occupied voxel of the origin-anchored grid.

    Output positions are voxel centroids; colors, labels and source tags come
    from the member point nearest the centroid (ties: lowest input index).
    Output order is ascending (ix, iy, iz).
    """
    if not resolution > 0:
        raise NonPositiveResolution(f"voxel resolution must be > 0, got {resolution}")
    if len(cloud) == 0:
        return cloud
    coords = np.floor(cloud.positions / resolution).astype(np.int64)
    _, cent, rep = kernels.voxel_reduce(coords, cloud.positions)
    return PointCloud(
        cent,
        None if cloud.colors is None else cloud.colors[rep],
        None if cloud.labels is None else cloud.labels[rep],
        cloud.source[rep],
    )


def window_indices(n_frames, center, window):
    if window < 1 or n_frames < 1:
        raise EmptyWindow(f"window={window}, frames={n_frames}")
    if window % 2 == 0:
        raise ValueError(f"window must be odd, got {window}")
    if not 0 <= center < n_frames:
        raise IndexError(f"center frame {center} out of range [0, {n_frames})")
    half = (window - 1) // 2
    return list(range(max(0, center - half), min(n_frames, center + half + 1)))


def aggregate_frames(clouds, egos, center, window=3):
    """Bring the clouds of a window of frames into the center frame and concatenate.

    ``egos[t]`` maps frame-t coordinates into a common frame (frame 0 of the
    sequence). The window is truncated at sequence ends, never wrapped.
    """
    clouds = list(clouds)
    if len(egos) != len(clouds):
        raise ValueError(f"{len(clouds)} clouds but {len(egos)} ego transforms")
    idx = window_indices(len(clouds), center, window)
    to_center = inverse(egos[center])
    out = []
    for t in idx:
        # the center frame is already in place; skip the inexact e^-1 e round trip
        out.append(clouds[t] if t == center else transform(clouds[t], compose(to_center, egos[t])))
    return PointCloud.concat(out)


@dataclass(frozen=True, eq=False)
class FrameScript:
    """Control signals for one frame.

    ``ego`` maps this frame's ego coordinates into frame-0 coordinates (the
    world frame); ``cameras`` maps camera name to camera-to-world pose;
    ``boxes`` are in the world frame; ``map`` is an optional (h, w, s) binary
    raster of road-region classes.
    """

    index: int
    ego: Pose
    cameras: dict
    boxes: tuple = ()
    map: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if self.map is not None:
            m = np.asarray(self.map)
            if m.ndim != 3:
                raise ValueError(f"map raster must be (h, w, s), got shape {m.shape}")
            if not np.all((m == 0) | (m == 1)):
                raise ValueError("map raster layers must be binary")
            object.__setattr__(self, "map", _ro(m.astype(np.uint8)))


@dataclass(frozen=True)
class SceneScript:
    frames: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        for i, f in enumerate(self.frames):
            if f.index != i:
                raise ValueError(f"frame indices must be contiguous from 0; position {i} has index {f.index}")

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    @property
    def egos(self):
        return [f.ego for f in self.frames]

    def to_dict(self, map_paths=None):
        """JSON-ready dict; ``map_paths[t]`` names the sidecar file holding frame t's map."""
        frames = []
        for f in self.frames:
            d = {
                "index": f.index,
                "ego": f.ego.matrix.tolist(),
                "cameras": {k: v.matrix.tolist() for k, v in f.cameras.items()},
                "boxes": [b.to_dict() for b in f.boxes],
            }
            if map_paths is not None and map_paths.get(f.index) is not None:
                d["map"] = map_paths[f.index]
            frames.append(d)
        return {"convention": CONVENTION, "frames": frames}

    @classmethod
    def from_dict(cls, d, load_map=None):
        check_convention(d)
        frames = []
        for fd in d["frames"]:
            m = None
            if fd.get("map") is not None and load_map is not None:
                m = load_map(fd["map"])
            frames.append(
                FrameScript(
                    fd["index"],
                    Pose.from_matrix(fd["ego"]),
                    {k: Pose.from_matrix(v) for k, v in fd["cameras"].items()},
                    tuple(BBox3D.from_dict(b) for b in fd.get("boxes", [])),
                    m,
                )
            )
        return cls(tuple(frames))


def ego_transform(pose):
    """View a pose as a :class:`RelativeTransform` (same matrix)."""
    return RelativeTransform(pose.rotation, pose.translation)
