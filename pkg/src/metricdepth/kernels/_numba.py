"""numba kernels; same contracts as ``_numpy``."""
import numpy as np
from numba import njit


@njit(cache=True)
def zbuffer(pix, z, n_pixels, tie_eps):
    zmin = np.full(n_pixels, np.inf)
    for i in range(pix.shape[0]):
        p = pix[i]
        if z[i] < zmin[p]:
            zmin[p] = z[i]
    winner = np.full(n_pixels, -1, dtype=np.int64)
    for i in range(pix.shape[0]):
        p = pix[i]
        if winner[p] < 0 and z[i] - zmin[p] < tie_eps:
            winner[p] = i
    return winner


@njit(cache=True)
def _voxel_reduce_sorted(key, pos):
    n = key.shape[0]
    order = np.argsort(key, kind="mergesort")
    # count groups
    g = 0
    for j in range(n):
        if j == 0 or key[order[j]] != key[order[j - 1]]:
            g += 1
    cent = np.zeros((g, 3))
    rep = np.empty(g, dtype=np.int64)
    first = np.empty(g, dtype=np.int64)
    gi = -1
    j = 0
    while j < n:
        gi += 1
        k = j
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        while k < n and key[order[k]] == key[order[j]]:
            i = order[k]
            s0 += pos[i, 0]
            s1 += pos[i, 1]
            s2 += pos[i, 2]
            k += 1
        c = float(k - j)
        cent[gi, 0] = s0 / c
        cent[gi, 1] = s1 / c
        cent[gi, 2] = s2 / c
        best = -1
        bestd = np.inf
        for m in range(j, k):
            i = order[m]
            d0 = pos[i, 0] - cent[gi, 0]
            d1 = pos[i, 1] - cent[gi, 1]
            d2 = pos[i, 2] - cent[gi, 2]
            d = d0 * d0 + d1 * d1 + d2 * d2
            # members are visited in ascending input index, so strict < keeps the lowest
            if d < bestd:
                bestd = d
                best = i
        rep[gi] = best
        first[gi] = order[j]
        j = k
    return first, cent, rep


def voxel_reduce(coords, pos):
    n = coords.shape[0]
    if n == 0:
        return (np.empty((0, 3), np.int64), np.empty((0, 3)), np.empty(0, np.int64))
    lo = coords.min(axis=0)
    span = coords.max(axis=0) - lo + 1
    if float(span[0]) * float(span[1]) * float(span[2]) >= 2.0**62:
        from . import _numpy

        return _numpy.voxel_reduce(coords, pos)
    c = coords - lo
    key = (c[:, 0] * span[1] + c[:, 1]) * span[2] + c[:, 2]
    first, cent, rep = _voxel_reduce_sorted(np.ascontiguousarray(key), np.ascontiguousarray(pos))
    return coords[first], cent, rep


@njit(cache=True)
def _edt_sq(valid):
    """Exact squared Euclidean distance to the nearest True pixel (separable, integer)."""
    h, w = valid.shape
    inf = np.int64(1) << 40
    g = np.empty((h, w), dtype=np.int64)
    for x in range(w):
        last = -1
        for y in range(h):
            if valid[y, x]:
                last = y
            g[y, x] = y - last if last >= 0 else inf
        last = -1
        for y in range(h - 1, -1, -1):
            if valid[y, x]:
                last = y
            if last >= 0 and last - y < g[y, x]:
                g[y, x] = last - y
    d2 = np.empty((h, w), dtype=np.int64)
    v = np.empty(w, dtype=np.int64)
    zb = np.empty(w + 1)
    for y in range(h):
        k = -1
        for q in range(w):
            gq = g[y, q]
            if gq >= inf:
                continue
            fq = q * q + gq * gq
            s = -np.inf
            while k >= 0:
                p = v[k]
                gp = g[y, p]
                s = ((fq) - (p * p + gp * gp)) / (2.0 * (q - p))
                if s <= zb[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            zb[k] = s if k > 0 else -np.inf
            zb[k + 1] = np.inf
        if k < 0:
            for x in range(w):
                d2[y, x] = inf
            continue
        k2 = 0
        for x in range(w):
            while zb[k2 + 1] < x:
                k2 += 1
            p = v[k2]
            gp = g[y, p]
            d2[y, x] = (x - p) * (x - p) + gp * gp
    return d2


@njit(cache=True)
def _lattice_offsets(max_d2):
    r = int(np.sqrt(max_d2)) + 1
    counts = np.zeros(max_d2 + 2, dtype=np.int64)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            n = dy * dy + dx * dx
            if n <= max_d2:
                counts[n + 1] += 1
    start = np.cumsum(counts)
    total = start[-1]
    ody = np.empty(total, dtype=np.int64)
    odx = np.empty(total, dtype=np.int64)
    fill = start.copy()
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            n = dy * dy + dx * dx
            if n <= max_d2:
                ody[fill[n]] = dy
                odx[fill[n]] = dx
                fill[n] += 1
    return start, ody, odx


@njit(cache=True)
def _nearest_valid(valid):
    h, w = valid.shape
    d2 = _edt_sq(valid)
    out = np.empty(h * w, dtype=np.int64)
    maxd = 0
    for y in range(h):
        for x in range(w):
            if d2[y, x] > maxd:
                maxd = d2[y, x]
    start, ody, odx = _lattice_offsets(maxd)
    for y in range(h):
        for x in range(w):
            n = d2[y, x]
            if n == 0:
                out[y * w + x] = y * w + x
                continue
            best = -1
            for k in range(start[n], start[n + 1]):
                ry = y + ody[k]
                rx = x + odx[k]
                if ry >= 0 and ry < h and rx >= 0 and rx < w and valid[ry, rx]:
                    best = ry * w + rx
                    break
            out[y * w + x] = best
    return out


def nearest_valid(valid):
    return _nearest_valid(np.ascontiguousarray(valid, dtype=np.bool_))
