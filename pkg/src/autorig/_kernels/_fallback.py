"""Pure-Python/numpy implementations of the hot kernels.

Every routine here mirrors ``_ckernels.pyx`` operation for operation, so the
two backends return bit-identical arrays. Keep the arithmetic order in sync
when editing either side.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

# 26-neighbourhood in a fixed order shared with the compiled kernel.
OFFSETS = [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
]


def voxel_dijkstra(passable, source, source_dist, h):
    """Single-source shortest paths over passable cells, 26-connected.

    Edge lengths are ``h``, ``h*sqrt(2)`` or ``h*sqrt(3)``. Returns a flat
    float64 array with ``inf`` for unreachable or blocked cells.
    """
    passable = np.ascontiguousarray(passable, dtype=np.uint8)
    nx, ny, nz = passable.shape
    n = nx * ny * nz
    occ = passable.ravel().tolist()
    dist = [math.inf] * n
    done = bytearray(n)
    costs = (0.0, h * 1.0, h * math.sqrt(2.0), h * math.sqrt(3.0))
    nbrs = [
        (dx * ny * nz + dy * nz + dz, dx, dy, dz, costs[abs(dx) + abs(dy) + abs(dz)])
        for dx, dy, dz in OFFSETS
    ]
    if not occ[source]:
        return np.full(n, np.inf)
    dist[source] = source_dist
    heap = [(source_dist, source)]
    pop, push = heapq.heappop, heapq.heappush
    while heap:
        d, u = pop(heap)
        if done[u]:
            continue
        done[u] = 1
        ux, rem = divmod(u, ny * nz)
        uy, uz = divmod(rem, nz)
        for off, dx, dy, dz, w in nbrs:
            vx, vy, vz = ux + dx, uy + dy, uz + dz
            if vx < 0 or vy < 0 or vz < 0 or vx >= nx or vy >= ny or vz >= nz:
                continue
            v = u + off
            if not occ[v] or done[v]:
                continue
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                push(heap, (nd, v))
    return np.asarray(dist, dtype=np.float64)


def segments_visible(passable, starts, ends, h, origin, step):
    """True where every sample along a segment falls in a passable cell."""
    passable = np.ascontiguousarray(passable, dtype=np.uint8)
    starts = np.ascontiguousarray(starts, dtype=np.float64)
    ends = np.ascontiguousarray(ends, dtype=np.float64)
    res = np.array(passable.shape, dtype=np.int64)
    m = len(starts)
    out = np.ones(m, dtype=bool)
    d = ends - starts
    length = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2])
    ns = np.ceil(length / step).astype(np.int64) + 1
    ns = np.maximum(ns, 2)
    chunk = 2048
    for lo in range(0, m, chunk):
        hi = min(m, lo + chunk)
        kmax = int(ns[lo:hi].max())
        k = np.arange(kmax, dtype=np.float64)[None, :]
        denom = (ns[lo:hi] - 1).astype(np.float64)[:, None]
        t = k / denom
        valid = k < ns[lo:hi, None]
        t = np.where(valid, t, 0.0)
        ok = np.ones((hi - lo, kmax), dtype=bool)
        idx = []
        for a in range(3):
            p = starts[lo:hi, a, None] + d[lo:hi, a, None] * t
            c = np.floor((p - origin) / h).astype(np.int64)
            idx.append(np.clip(c, 0, res[a] - 1))
        ok = passable[idx[0], idx[1], idx[2]].astype(bool) | ~valid
        out[lo:hi] = ok.all(axis=1)
    return out


def _cross(a, b):
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def triangle_axes(t0, t1, t2):
    """The 13 separating-axis candidates for a triangle/box pair."""
    e = [
        (t1[0] - t0[0], t1[1] - t0[1], t1[2] - t0[2]),
        (t2[0] - t1[0], t2[1] - t1[1], t2[2] - t1[2]),
        (t0[0] - t2[0], t0[1] - t2[1], t0[2] - t2[2]),
    ]
    units = [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)]
    axes = list(units)
    for u in units:
        for edge in e:
            axes.append(_cross(u, edge))
    axes.append(_cross(e[0], e[1]))
    return axes


def triangle_voxelize(tris, res, origin, h, half):
    """Mark every cell whose (slightly enlarged) box overlaps a triangle."""
    tris = np.ascontiguousarray(tris, dtype=np.float64)
    grid = np.zeros((res, res, res), dtype=np.uint8)
    for tri in tris:
        t0, t1, t2 = (tuple(float(c) for c in tri[i]) for i in range(3))
        lo = [max(0, int(math.floor((min(t0[a], t1[a], t2[a]) - origin) / h)) - 1) for a in range(3)]
        hi = [min(res - 1, int(math.floor((max(t0[a], t1[a], t2[a]) - origin) / h)) + 1) for a in range(3)]
        if any(lo[a] > hi[a] for a in range(3)):
            continue
        ix, iy, iz = np.meshgrid(
            np.arange(lo[0], hi[0] + 1),
            np.arange(lo[1], hi[1] + 1),
            np.arange(lo[2], hi[2] + 1),
            indexing="ij",
        )
        cx = origin + (ix + 0.5) * h
        cy = origin + (iy + 0.5) * h
        cz = origin + (iz + 0.5) * h
        v = [
            (t[0] - cx, t[1] - cy, t[2] - cz)
            for t in (t0, t1, t2)
        ]
        hit = np.ones(ix.shape, dtype=bool)
        for ax in triangle_axes(t0, t1, t2):
            r = half * (abs(ax[0]) + abs(ax[1]) + abs(ax[2]))
            p = [vk[0] * ax[0] + vk[1] * ax[1] + vk[2] * ax[2] for vk in v]
            pmax = np.maximum(np.maximum(p[0], p[1]), p[2])
            pmin = np.minimum(np.minimum(p[0], p[1]), p[2])
            hit &= ~((pmax < -r) | (pmin > r))
        grid[ix[hit], iy[hit], iz[hit]] = 1
    return grid


def farthest_point_sample(points, k, start):
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = len(points)
    out = np.empty(k, dtype=np.int64)
    best = np.full(n, np.inf)
    cur = start
    for i in range(k):
        out[i] = cur
        dx = points[:, 0] - points[cur, 0]
        dy = points[:, 1] - points[cur, 1]
        dz = points[:, 2] - points[cur, 2]
        d = dx * dx + dy * dy + dz * dz
        best = np.minimum(best, d)
        cur = int(np.argmax(best))
    return out
