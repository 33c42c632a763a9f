"""Hot numeric kernels, each in a numba and a vectorized numpy flavour.

The public names at the bottom dispatch on :mod:`dropsample._backend` at
call time.  Both flavours perform the same arithmetic; results agree to
rounding (the Fenwick search agrees bit for bit).
"""
import math

import numpy as np

from . import _backend
from ._backend import njit

#: spacing of the sample points laid along a segment when splatting, in pixels
SPLAT_STEP = 0.25

#: flat layout of signature levels 1..3 for planar paths: 2 + 4 + 8 entries
SIG_DIM = 14


# --------------------------------------------------------------------------
# bilinear splatting of points and segments


@njit
def _splat_points_nb(img, xs, ys, mass):
    h, w = img.shape
    for i in range(xs.shape[0]):
        px = xs[i]
        py = ys[i]
        x0 = int(math.floor(px))
        y0 = int(math.floor(py))
        fx = px - x0
        fy = py - y0
        m = mass[i]
        for dy in range(2):
            yy = y0 + dy
            if yy < 0 or yy >= h:
                continue
            wy = fy if dy else 1.0 - fy
            for dx in range(2):
                xx = x0 + dx
                if xx < 0 or xx >= w:
                    continue
                wx = fx if dx else 1.0 - fx
                wgt = m * wx * wy
                if wgt != 0.0:
                    img[yy, xx] += wgt


def _splat_points_np(img, xs, ys, mass):
    h, w = img.shape
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    flat = img.reshape(-1)
    for dy in (0, 1):
        wy = fy if dy else 1.0 - fy
        yy = y0 + dy
        for dx in (0, 1):
            wx = fx if dx else 1.0 - fx
            xx = x0 + dx
            wgt = mass * wx * wy
            ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w) & (wgt != 0.0)
            flat += np.bincount(yy[ok] * w + xx[ok], weights=wgt[ok], minlength=h * w)


@njit
def _segment_samples_nb(segs, weight, step):
    n_seg = segs.shape[0]
    counts = np.zeros(n_seg, dtype=np.int64)
    total = 0
    for s in range(n_seg):
        dx = segs[s, 2] - segs[s, 0]
        dy = segs[s, 3] - segs[s, 1]
        length = math.sqrt(dx * dx + dy * dy)
        if length > 0.0:
            n = int(math.ceil(length / step))
            if n < 1:
                n = 1
            counts[s] = n
            total += n
    xs = np.empty(total)
    ys = np.empty(total)
    mass = np.empty(total)
    k = 0
    for s in range(n_seg):
        n = counts[s]
        if n == 0:
            continue
        dx = segs[s, 2] - segs[s, 0]
        dy = segs[s, 3] - segs[s, 1]
        per = weight[s] * math.sqrt(dx * dx + dy * dy) / n
        for j in range(n):
            t = (j + 0.5) / n
            xs[k] = segs[s, 0] + dx * t
            ys[k] = segs[s, 1] + dy * t
            mass[k] = per
            k += 1
    return xs, ys, mass


def _segment_samples_np(segs, weight, step):
    d = segs[:, 2:] - segs[:, :2]
    length = np.hypot(d[:, 0], d[:, 1])
    keep = length > 0.0
    segs, d, length, weight = segs[keep], d[keep], length[keep], weight[keep]
    n = np.maximum(1, np.ceil(length / step).astype(np.int64))
    owner = np.repeat(np.arange(len(n)), n)
    first = np.cumsum(n) - n
    j = np.arange(owner.size) - first[owner]
    t = (j + 0.5) / n[owner]
    xs = segs[owner, 0] + d[owner, 0] * t
    ys = segs[owner, 1] + d[owner, 1] * t
    mass = (weight * length / n)[owner]
    return xs, ys, mass


@njit
def _splat_segments_nb(img, segs, weight, step):
    xs, ys, mass = _segment_samples_nb(segs, weight, step)
    _splat_points_nb(img, xs, ys, mass)


def _splat_segments_np(img, segs, weight, step):
    xs, ys, mass = _segment_samples_np(segs, weight, step)
    _splat_points_np(img, xs, ys, mass)


# --------------------------------------------------------------------------
# truncated signatures (levels 1..3) over sliding point windows


@njit
def _window_signatures_nb(pts, window):
    n_pts = pts.shape[0]
    out = np.zeros((n_pts, SIG_DIM))
    a1 = np.zeros(2)
    a2 = np.zeros(4)
    a3 = np.zeros(8)
    for i in range(n_pts):
        lo, hi = _window_bounds(i, n_pts, window)
        a1[:] = 0.0
        a2[:] = 0.0
        a3[:] = 0.0
        for s in range(lo, hi):
            dx = pts[s + 1, 0] - pts[s, 0]
            dy = pts[s + 1, 1] - pts[s, 1]
            d = (dx, dy)
            # level 3 first: it reads the old levels 1 and 2
            for p in range(2):
                for q in range(2):
                    for r in range(2):
                        a3[p * 4 + q * 2 + r] += (
                            a2[p * 2 + q] * d[r]
                            + a1[p] * d[q] * d[r] / 2.0
                            + d[p] * d[q] * d[r] / 6.0
                        )
            for p in range(2):
                for q in range(2):
                    a2[p * 2 + q] += a1[p] * d[q] + d[p] * d[q] / 2.0
            a1[0] += dx
            a1[1] += dy
        out[i, 0:2] = a1
        out[i, 2:6] = a2
        out[i, 6:14] = a3
    return out


@njit
def _window_bounds(i, n_pts, window):
    lo = i - (window - 1) // 2
    hi = lo + window - 1
    if lo < 0:
        lo = 0
        hi = window - 1
    if hi > n_pts - 1:
        hi = n_pts - 1
        lo = max(0, n_pts - window)
    return lo, hi


def _window_signatures_np(pts, window):
    n_pts = pts.shape[0]
    i = np.arange(n_pts)
    lo = i - (window - 1) // 2
    hi = lo + window - 1
    under = lo < 0
    lo[under] = 0
    hi[under] = window - 1
    over = hi > n_pts - 1
    hi[over] = n_pts - 1
    lo[over] = max(0, n_pts - window)
    a1 = np.zeros((n_pts, 2))
    a2 = np.zeros((n_pts, 2, 2))
    a3 = np.zeros((n_pts, 2, 2, 2))
    seg = np.diff(pts, axis=0) if n_pts > 1 else np.zeros((0, 2))
    for step in range(window - 1):
        s = lo + step
        active = s < hi
        if not active.any():
            break
        d = np.zeros((n_pts, 2))
        d[active] = seg[s[active]]
        dd = d[:, :, None] * d[:, None, :]
        a3 += (
            a2[:, :, :, None] * d[:, None, None, :]
            + a1[:, :, None, None] * dd[:, None, :, :] / 2.0
            + dd[:, :, :, None] * d[:, None, None, :] / 6.0
        )
        a2 += a1[:, :, None] * d[:, None, :] + dd / 2.0
        a1 += d
    return np.concatenate(
        [a1, a2.reshape(n_pts, 4), a3.reshape(n_pts, 8)], axis=1
    )


# --------------------------------------------------------------------------
# Fenwick (binary indexed) tree over nonnegative weights, 1-based storage


@njit
def _fenwick_build_nb(values):
    m = values.shape[0]
    csum = np.zeros(m + 1)
    acc = 0.0
    for i in range(m):
        acc += values[i]
        csum[i + 1] = acc
    tree = np.zeros(m + 1)
    for i in range(1, m + 1):
        tree[i] = csum[i] - csum[i - (i & -i)]
    return tree


def _fenwick_build_np(values):
    m = values.shape[0]
    csum = np.concatenate([[0.0], np.cumsum(values)])
    i = np.arange(1, m + 1)
    tree = np.zeros(m + 1)
    # node i covers (i - lowbit(i), i]
    tree[1:] = csum[i] - csum[i - (i & -i)]
    return tree


@njit
def _fenwick_add_nb(tree, index, delta):
    m = tree.shape[0] - 1
    for k in range(index.shape[0]):
        j = index[k] + 1
        while j <= m:
            tree[j] += delta[k]
            j += j & -j


def _fenwick_add_np(tree, index, delta):
    m = tree.shape[0] - 1
    j = np.asarray(index, dtype=np.int64) + 1
    delta = np.asarray(delta, dtype=np.float64)
    order = np.arange(j.size)
    nodes, deltas, keys = [], [], []
    while j.size:
        nodes.append(j)
        deltas.append(delta)
        keys.append(order)
        j = j + (j & -j)
        keep = j <= m
        j, delta, order = j[keep], delta[keep], order[keep]
    if not nodes:
        return
    # apply in update order so each node sums its deltas like the scalar loop
    perm = np.argsort(np.concatenate(keys), kind="stable")
    np.add.at(tree, np.concatenate(nodes)[perm], np.concatenate(deltas)[perm])


@njit
def _fenwick_prefix_nb(tree, n):
    s = 0.0
    j = n
    while j > 0:
        s += tree[j]
        j -= j & -j
    return s


@njit
def _fenwick_find_nb(tree, targets):
    m = tree.shape[0] - 1
    top = 1
    while top * 2 <= m:
        top *= 2
    out = np.empty(targets.shape[0], dtype=np.int64)
    for k in range(targets.shape[0]):
        pos = 0
        rem = targets[k]
        step = top
        while step > 0:
            nxt = pos + step
            if nxt <= m and tree[nxt] <= rem:
                pos = nxt
                rem -= tree[nxt]
            step >>= 1
        out[k] = pos if pos < m else m - 1
    return out


def _fenwick_find_np(tree, targets):
    m = tree.shape[0] - 1
    top = 1
    while top * 2 <= m:
        top *= 2
    pos = np.zeros(targets.shape[0], dtype=np.int64)
    rem = np.array(targets, dtype=np.float64)
    step = top
    while step > 0:
        nxt = pos + step
        ok = nxt <= m
        val = tree[np.minimum(nxt, m)]
        take = ok & (val <= rem)
        pos[take] = nxt[take]
        rem[take] -= val[take]
        step >>= 1
    return np.minimum(pos, m - 1)


def _fenwick_prefix_np(tree, n):
    s = 0.0
    j = int(n)
    while j > 0:
        s += tree[j]
        j -= j & -j
    return s


# --------------------------------------------------------------------------
# dispatch


def splat_points(img, xs, ys, mass):
    """Add ``mass`` at subpixel positions with bilinear weights, in place."""
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    mass = np.ascontiguousarray(np.broadcast_to(mass, xs.shape), dtype=np.float64)
    if _backend.use_numba():
        _splat_points_nb(img, xs, ys, mass)
    else:
        _splat_points_np(img, xs, ys, mass)


def splat_segments(img, segs, weight=None, step=SPLAT_STEP):
    """Draw anti-aliased segments ``(x0, y0, x1, y1)`` into ``img`` in place.

    Each segment deposits ``weight * length`` of mass, spread over evenly
    spaced sample points with bilinear weights.  Zero-length segments
    deposit nothing.
    """
    segs = np.ascontiguousarray(segs, dtype=np.float64).reshape(-1, 4)
    if weight is None:
        weight = np.ones(segs.shape[0])
    weight = np.ascontiguousarray(np.broadcast_to(weight, segs.shape[:1]), dtype=np.float64)
    if segs.shape[0] == 0:
        return
    if _backend.use_numba():
        _splat_segments_nb(img, segs, weight, float(step))
    else:
        _splat_segments_np(img, segs, weight, float(step))


def window_signatures(pts, window):
    """Level 1..3 signature of the ``window``-point neighbourhood of each point.

    Returns an ``(n, 14)`` array laid out as ``[x, y, xx, xy, yx, yy, xxx,
    xxy, ..., yyy]``.  Windows are centred on the point and shifted inward
    at the stroke ends; strokes shorter than the window use all points.
    """
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    if _backend.use_numba():
        return _window_signatures_nb(pts, int(window))
    return _window_signatures_np(pts, int(window))


def fenwick_build(values):
    values = np.ascontiguousarray(values, dtype=np.float64)
    if _backend.use_numba():
        return _fenwick_build_nb(values)
    return _fenwick_build_np(values)


def fenwick_add(tree, index, delta):
    index = np.ascontiguousarray(index, dtype=np.int64)
    delta = np.ascontiguousarray(delta, dtype=np.float64)
    if _backend.use_numba():
        _fenwick_add_nb(tree, index, delta)
    else:
        _fenwick_add_np(tree, index, delta)


def fenwick_prefix(tree, n):
    if _backend.use_numba():
        return _fenwick_prefix_nb(tree, int(n))
    return _fenwick_prefix_np(tree, n)


def fenwick_find(tree, targets):
    """Smallest 0-based index whose inclusive prefix sum exceeds each target."""
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    if _backend.use_numba():
        return _fenwick_find_nb(tree, targets)
    return _fenwick_find_np(tree, targets)
