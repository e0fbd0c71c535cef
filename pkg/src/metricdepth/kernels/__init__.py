"""Hot inner loops, with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly, unless the environment
variable ``METRICDEPTH_DISABLE_NUMBA`` is set to a non-empty value other than
``0``. Both paths produce bit-identical results, so the choice only affects
speed. ``use_backend`` switches at runtime (tests and benchmarks use it).
"""
import logging
import os

import numpy as np

from . import _numpy

log = logging.getLogger(__name__)

try:
    from . import _numba
except ImportError as exc:  # pragma: no cover - depends on the environment
    _numba = None
    log.debug("numba unavailable (%s); using numpy kernels", exc)

_ENV_FLAG = "METRICDEPTH_DISABLE_NUMBA"


def _env_disabled():
    v = os.environ.get(_ENV_FLAG, "")
    return v not in ("", "0")


BACKENDS = {"numpy": _numpy}
if _numba is not None:
    BACKENDS["numba"] = _numba

_active = "numba" if (_numba is not None and not _env_disabled()) else "numpy"


def backend():
    return _active


def use_backend(name):
    """Select the kernel backend; returns the previous one."""
    global _active
    if name not in BACKENDS:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}; have {sorted(BACKENDS)}")
    prev, _active = _active, name
    return prev


def zbuffer(pix, z, n_pixels, tie_eps=1e-9):
    pix = np.ascontiguousarray(pix, dtype=np.int64)
    z = np.ascontiguousarray(z, dtype=np.float64)
    return BACKENDS[_active].zbuffer(pix, z, int(n_pixels), float(tie_eps))


def voxel_reduce(coords, pos):
    coords = np.ascontiguousarray(coords, dtype=np.int64)
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    return BACKENDS[_active].voxel_reduce(coords, pos)


def nearest_valid(valid):
    valid = np.ascontiguousarray(valid, dtype=bool)
    if not valid.any():
        raise ValueError("nearest_valid needs at least one valid pixel")
    return BACKENDS[_active].nearest_valid(valid)
