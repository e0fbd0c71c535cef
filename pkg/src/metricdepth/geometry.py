"""Pinhole cameras and rigid-body pose algebra.

Conventions used everywhere in the package:

* poses are camera-to-world (a pose maps camera coordinates into world
  coordinates);
* right-handed frames, camera looks down +z, image u points right and v down;
* pixel centers sit at integer coordinates, so pixel ``(i, j)`` covers
  ``[i - 0.5, i + 0.5) x [j - 0.5, j + 0.5)``;
* depth is camera-frame z, never Euclidean ray length.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveDepth

CONVENTION = "camera_to_world"

_ORTHO_TOL = 1e-9


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside raster {self.width}x{self.height}"
            )
        object.__setattr__(self, "fx", float(self.fx))
        object.__setattr__(self, "fy", float(self.fy))
        object.__setattr__(self, "cx", float(self.cx))
        object.__setattr__(self, "cy", float(self.cy))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, factor):
        """Intrinsics for a raster resized by ``factor`` (pixel centers stay on integers)."""
        w = int(round(self.width * factor))
        h = int(round(self.height * factor))
        return Intrinsics(
            self.fx * factor,
            self.fy * factor,
            (self.cx + 0.5) * factor - 0.5,
            (self.cy + 0.5) * factor - 0.5,
            w,
            h,
        )

    def to_dict(self):
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"])


def _check_rotation(r):
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("rotation has non-finite entries")
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err > _ORTHO_TOL:
        raise ValueError(f"rotation not orthonormal (max |R^T R - I| = {err:.3e})")
    det = np.linalg.det(r)
    if abs(det - 1.0) > _ORTHO_TOL:
        raise ValueError(f"rotation determinant {det} != +1")


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid camera-to-world transform ``x_world = rotation @ x_cam + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(3)
        _check_rotation(r)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation has non-finite entries")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected 4x4 matrix, got {m.shape}")
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("bottom row of a rigid transform must be (0, 0, 0, 1)")
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_translation(cls, t):
        return cls(np.eye(3), t)

    @property
    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def center(self):
        return self.translation

    def apply(self, points):
        """Map (N, 3) points from camera frame to world frame."""
        return _apply(self.rotation, self.translation, points)

    def apply_inverse(self, points):
        """Map (N, 3) world points into this camera's frame."""
        points = np.asarray(points, dtype=np.float64)
        return (points - self.translation) @ self.rotation

    def inverse(self):
        return inverse(self)

    def __matmul__(self, other):
        return compose(self, other)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def allclose(self, other, atol=1e-12):
        return np.allclose(self.rotation, other.rotation, rtol=0, atol=atol) and np.allclose(
            self.translation, other.translation, rtol=0, atol=atol
        )


class RelativeTransform(Pose):
    """Rigid map between two frames; same algebra as :class:`Pose`, different meaning.

    ``relative(src, dst).apply(p)`` takes a point expressed in ``src``'s
    camera frame to the same physical point in ``dst``'s camera frame.
    """


def _apply(r, t, points):
    points = np.asarray(points, dtype=np.float64)
    return points @ r.T + t


def compose(a, b):
    """``a ∘ b``: apply ``b`` first, then ``a``. Result keeps the type of ``a``."""
    cls = type(a)
    return cls(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(a):
    rt = a.rotation.T
    return type(a)(rt, -(rt @ a.translation))


def relative(src, dst):
    """Transform taking src-camera coordinates into dst-camera coordinates."""
    m = compose(inverse(dst), src)
    return RelativeTransform(m.rotation, m.translation)


def project(point_cam, k):
    """Strict pinhole projection; raises if any point has z <= 0.

    Accepts a single 3-vector or an (N, 3) array and returns ``(u, v, depth)``.
    """
    p = np.asarray(point_cam, dtype=np.float64)
    z = p[..., 2]
    if np.any(~(z > 0)):
        raise NonPositiveDepth("point at or behind the camera plane (z <= 0)")
    u, v, d = project_points(p, k)
    if p.ndim == 1:
        return float(u), float(v), float(d)
    return u, v, d


def project_points(points_cam, k):
    """Vectorised projection without the z check; callers mask z themselves."""
    p = np.asarray(points_cam, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * x / z + k.cx
        v = k.fy * y / z + k.cy
    return u, v, z


def unproject(u, v, depth, k):
    """Back-project pixel coordinates with z-depth into camera-frame points."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(~(d > 0)):
        raise NonPositiveDepth("depth must be positive")
    x = (u - k.cx) * d / k.fx
    y = (v - k.cy) * d / k.fy
    out = np.stack(np.broadcast_arrays(x, y, d), axis=-1)
    return out


def pixel_grid(k):
    """Integer pixel-center coordinates ``(u, v)`` as two (H, W) float arrays."""
    v, u = np.mgrid[0 : k.height, 0 : k.width]
    return u.astype(np.float64), v.astype(np.float64)


def rotation_from_euler(roll, pitch, yaw):
    """Z-Y-X (yaw, pitch, roll) rotation, angles in radians."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return rz @ ry @ rx


# Camera axes expressed in an ego frame with x forward, y left, z up.
# Camera x (image right) = -ego y, camera y (image down) = -ego z, camera z = ego x.
EGO_FROM_CAMERA_AXES = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


def camera_extrinsic(yaw, position=(0.0, 0.0, 0.0), pitch=0.0):
    """Camera-to-ego pose for a camera mounted at ``position`` looking along ego heading ``yaw``."""
    r = rotation_from_euler(0.0, pitch, yaw) @ EGO_FROM_CAMERA_AXES
    return Pose(r, position)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_pose(rng, scale=10.0):
    return Pose(random_rotation(rng), rng.uniform(-scale, scale, size=3))


@dataclass(frozen=True)
class Camera:
    """A named camera: intrinsics plus pose (camera-to-ego in a rig, camera-to-world in a frame)."""

    name: str
    intrinsics: Intrinsics
    pose: Pose


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        names = [c.name for c in self.cameras]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate camera names in rig: {names}")

    def __iter__(self):
        return iter(self.cameras)

    def __len__(self):
        return len(self.cameras)

    def __getitem__(self, key):
        if isinstance(key, str):
            for c in self.cameras:
                if c.name == key:
                    return c
            raise KeyError(key)
        return self.cameras[key]

    @property
    def names(self):
        return [c.name for c in self.cameras]

    def to_dict(self):
        return {
            "convention": CONVENTION,
            "cameras": [
                {"name": c.name, "intrinsics": c.intrinsics.to_dict(), "pose": c.pose.matrix.tolist()}
                for c in self.cameras
            ],
        }

    @classmethod
    def from_dict(cls, d):
        check_convention(d)
        return cls(
            tuple(
                Camera(c["name"], Intrinsics.from_dict(c["intrinsics"]), Pose.from_matrix(c["pose"]))
                for c in d["cameras"]
            )
        )


def check_convention(d):
    conv = d.get("convention")
    if conv != CONVENTION:
        raise ValueError(f"unsupported pose convention {conv!r}; expected {CONVENTION!r}")
