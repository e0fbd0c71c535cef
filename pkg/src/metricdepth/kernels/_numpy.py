"""Pure-numpy kernel implementations.

Every function here must return results bit-identical to its counterpart in
``_numba``; the test-suite checks both against each other and against
brute-force oracles.
"""
import numpy as np
from scipy import ndimage


def zbuffer(pix, z, n_pixels, tie_eps):
    """Per-pixel winner index: nearest z, ties (z - zmin < tie_eps) to the lowest index."""
    winner = np.full(n_pixels, -1, dtype=np.int64)
    if pix.size == 0:
        return winner
    zmin = np.full(n_pixels, np.inf)
    np.minimum.at(zmin, pix, z)
    cand = np.flatnonzero(z - zmin[pix] < tie_eps)
    # stable sort, so the first occurrence is the lowest candidate index
    upix, first = np.unique(pix[cand], return_index=True)
    winner[upix] = cand[first]
    return winner


def voxel_reduce(coords, pos):
    """Group points by integer voxel coordinate.

    Returns (voxel coords sorted lexicographically, centroids, representative
    point index per voxel). The representative is the point nearest to the
    centroid, ties to the lowest input index.
    """
    n = coords.shape[0]
    if n == 0:
        return (np.empty((0, 3), np.int64), np.empty((0, 3)), np.empty(0, np.int64))
    uniq, inv = np.unique(coords, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    g = uniq.shape[0]
    sums = np.zeros((g, 3))
    np.add.at(sums, inv, pos)
    counts = np.bincount(inv, minlength=g).astype(np.float64)
    cent = sums / counts[:, None]
    diff = pos - cent[inv]
    d2 = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
    idx = np.arange(n)
    order = np.lexsort((idx, d2, inv))
    starts = np.searchsorted(inv[order], np.arange(g), side="left")
    rep = order[starts]
    return uniq, cent, rep


def lattice_offsets(max_d2):
    """Integer offsets (dy, dx) grouped by dy^2 + dx^2, each group in (dy, dx) order."""
    r = int(np.floor(np.sqrt(max_d2))) + 1
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    dy = dy.ravel()
    dx = dx.ravel()
    n = dy * dy + dx * dx
    keep = n <= max_d2
    dy, dx, n = dy[keep], dx[keep], n[keep]
    order = np.argsort(n, kind="stable")
    dy, dx, n = dy[order], dx[order], n[order]
    start = np.searchsorted(n, np.arange(max_d2 + 2), side="left")
    return start, dy.astype(np.int64), dx.astype(np.int64)


def nearest_valid(valid):
    """For every pixel, the flat index of the nearest valid pixel.

    Euclidean pixel distance; ties go to the smaller row, then smaller column.
    """
    h, w = valid.shape
    _, (iy, ix) = ndimage.distance_transform_edt(~valid, return_indices=True)
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = (iy - yy) ** 2 + (ix - xx) ** 2
    out = (iy * w + ix).astype(np.int64)
    flat_valid = valid.ravel()
    amb = np.flatnonzero(d2.ravel() > 0)
    if amb.size == 0:
        return out.ravel()
    out = out.ravel()
    d2f = d2.ravel()[amb]
    py = amb // w
    px = amb % w
    start, ody, odx = lattice_offsets(int(d2f.max()))
    # flatten every pixel's candidate offsets, kept in (dy, dx) order
    cnt = start[d2f + 1] - start[d2f]
    owner = np.repeat(np.arange(amb.size), cnt)
    within = np.arange(owner.size) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    k = start[d2f][owner] + within
    ry = py[owner] + ody[k]
    rx = px[owner] + odx[k]
    ok = (ry >= 0) & (ry < h) & (rx >= 0) & (rx < w)
    flat = np.where(ok, ry * w + rx, 0)
    ok &= flat_valid[flat]
    hit = np.flatnonzero(ok)
    owners, first = np.unique(owner[hit], return_index=True)
    out[amb[owners]] = flat[hit[first]]
    return out
