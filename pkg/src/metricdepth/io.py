"""Interchange formats: PFM depth, PNG rasters, binary PLY clouds, JSON documents.

All writers go through a temp file and ``os.replace`` so readers never see a
partial file.
"""
from __future__ import annotations

import contextlib
import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import CONVENTION, CameraRig, Pose, check_convention
from .pointcloud import PointCloud, SceneScript, Source
from .render import DEFAULT_RANGE, DepthFrame


@contextlib.contextmanager
def atomic_path(path):
    """Yield a temp path next to ``path``; it is renamed onto ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_bytes(path, data):
    with atomic_path(path) as tmp:
        tmp.write_bytes(data)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- JSON ---------------------------------------------------------------------


def dumps_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    write_bytes(path, dumps_json(obj).encode())


def read_json(path):
    with open(path) as f:
        return json.load(f)


# -- PFM ----------------------------------------------------------------------


def encode_pfm(raster):
    """Single-channel little-endian PFM (rows stored bottom-to-top, as the format requires)."""
    a = np.asarray(raster, dtype="<f4")
    if a.ndim != 2:
        raise ValueError(f"PFM writer takes a 2-D raster, got {a.shape}")
    h, w = a.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    return header + np.ascontiguousarray(a[::-1]).tobytes()


def decode_pfm(data):
    parts = data.split(b"\n", 3)
    if len(parts) < 4:
        raise ValueError("truncated PFM header")
    magic, dims, scale, body = parts
    magic = magic.strip()
    if magic not in (b"Pf", b"PF"):
        raise ValueError(f"not a PFM file (magic {magic!r})")
    channels = 1 if magic == b"Pf" else 3
    w, h = (int(x) for x in dims.split())
    scale = float(scale)
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * channels
    a = np.frombuffer(body, dtype=dtype, count=n)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return a.reshape(shape)[::-1].astype(np.float32)


def write_pfm(path, raster):
    write_bytes(path, encode_pfm(raster))


def read_pfm(path):
    return decode_pfm(Path(path).read_bytes())


def write_depth(path, frame):
    """Depth frame as PFM; 0 marks invalid pixels."""
    write_pfm(path, frame.depth)


def read_depth(path, range=DEFAULT_RANGE):
    return DepthFrame(read_pfm(path), range=range)


# -- PNG ----------------------------------------------------------------------


def _write_image(path, img):
    with atomic_path(path) as tmp:
        img.save(tmp, format="PNG")


def write_rgb(path, rgb):
    _write_image(path, Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8)))


def read_rgb(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_mask(path, mask):
    _write_image(path, Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)))


def read_mask(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def write_labels(path, labels):
    """8-bit label raster (e.g. per-pixel source tags); values written verbatim."""
    a = np.asarray(labels)
    if a.size and (a.min() < 0 or a.max() > 255):
        raise ValueError("label values must fit in uint8")
    _write_image(path, Image.fromarray(a.astype(np.uint8)))


def read_labels(path):
    with Image.open(path) as im:
        return np.asarray(im).astype(np.uint8).copy()


def write_depth_png_mm(path, frame):
    """16-bit millimeter PNG for viewing; values above 65.535 m saturate. Lossy, export only."""
    mm = np.clip(np.round(frame.depth.astype(np.float64) * 1000.0), 0, 65535).astype(np.uint16)
    _write_image(path, Image.fromarray(mm))


def read_depth_png_mm(path):
    with Image.open(path) as im:
        return np.asarray(im).astype(np.float64) / 1000.0


# -- PLY ----------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}  # fmt: skip


def encode_ply(cloud):
    n = len(cloud)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")]
    if cloud.labels is not None:
        if n and (cloud.labels.min() < 0 or cloud.labels.max() > 255):
            raise ValueError("PLY label property is uint8; labels must be in [0, 255]")
        fields.append(("label", "u1"))
    fields.append(("source", "u1"))
    arr = np.empty(n, dtype=fields)
    for i, ax in enumerate("xyz"):
        arr[ax] = cloud.positions[:, i]
    col = cloud.colors_or_zeros()
    arr["red"], arr["green"], arr["blue"] = col[:, 0], col[:, 1], col[:, 2]
    if cloud.labels is not None:
        arr["label"] = cloud.labels
    arr["source"] = cloud.source
    names = {"<f4": "float", "u1": "uchar"}
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property {names[t]} {name}" for name, t in fields]
    header.append("end_header")
    return ("\n".join(header) + "\n").encode("ascii") + arr.tobytes()


def decode_ply(data, default_source=Source.RENDERED):
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise ValueError("not a PLY file")
    lines = data[:end].decode("ascii").splitlines()
    body = data[end + len("end_header\n") :]
    if "format binary_little_endian 1.0" not in lines:
        raise ValueError("only binary_little_endian PLY is supported")
    n = None
    fields = []
    in_vertex = False
    for ln in lines:
        tok = ln.split()
        if not tok:
            continue
        if tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise ValueError("list properties on vertices are not supported")
            fields.append((tok[2], _PLY_TYPES[tok[1]]))
    if n is None:
        raise ValueError("PLY has no vertex element")
    arr = np.frombuffer(body, dtype=fields, count=n)
    names = arr.dtype.names
    pos = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([arr["red"], arr["green"], arr["blue"]], axis=1).astype(np.uint8)
    labels = arr["label"].astype(np.int32) if "label" in names else None
    source = arr["source"].astype(np.uint8) if "source" in names else default_source
    return PointCloud(pos, colors, labels, source)


def write_ply(path, cloud):
    write_bytes(path, encode_ply(cloud))


def read_ply(path, default_source=Source.RENDERED):
    return decode_ply(Path(path).read_bytes(), default_source)


# -- structured JSON documents --------------------------------------------------


def write_rig(path, rig):
    write_json(path, rig.to_dict())


def read_rig(path):
    return CameraRig.from_dict(read_json(path))


def write_script(path, script):
    """SceneScript JSON; map rasters go to ``maps/{t:04d}.npy`` beside the JSON."""
    path = Path(path)
    map_paths = {}
    for f in script.frames:
        if f.map is not None:
            rel = f"maps/{f.index:04d}.npy"
            with atomic_path(path.parent / rel) as tmp:
                with open(tmp, "wb") as fh:
                    np.save(fh, f.map)
            map_paths[f.index] = rel
    write_json(path, script.to_dict(map_paths))


def read_script(path):
    path = Path(path)
    return SceneScript.from_dict(read_json(path), load_map=lambda rel: np.load(path.parent / rel))


def trajectory_to_dict(poses):
    return {"convention": CONVENTION, "poses": [p.matrix.tolist() for p in poses]}


def trajectory_from_dict(d):
    check_convention(d)
    return [Pose.from_matrix(m) for m in d["poses"]]
