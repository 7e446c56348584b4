# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Semantics and arithmetic order match ``_fallback.py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, ceil, fabs, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline bint _less(double da, Py_ssize_t ia, double db, Py_ssize_t ib) nogil:
    return da < db or (da == db and ia < ib)


cdef void _sift_up(Py_ssize_t* heap, Py_ssize_t* pos, double* key, Py_ssize_t i) noexcept nogil:
    cdef Py_ssize_t item = heap[i], parent
    while i > 0:
        parent = (i - 1) >> 1
        if _less(key[item], item, key[heap[parent]], heap[parent]):
            heap[i] = heap[parent]
            pos[heap[i]] = i
            i = parent
        else:
            break
    heap[i] = item
    pos[item] = i


cdef void _sift_down(Py_ssize_t* heap, Py_ssize_t* pos, double* key, Py_ssize_t size, Py_ssize_t i) noexcept nogil:
    cdef Py_ssize_t item = heap[i], child
    while True:
        child = 2 * i + 1
        if child >= size:
            break
        if child + 1 < size and _less(key[heap[child + 1]], heap[child + 1], key[heap[child]], heap[child]):
            child += 1
        if _less(key[heap[child]], heap[child], key[item], item):
            heap[i] = heap[child]
            pos[heap[i]] = i
            i = child
        else:
            break
    heap[i] = item
    pos[item] = i


def voxel_dijkstra(passable, Py_ssize_t source, double source_dist, double h):
    cdef const unsigned char[:, :, ::1] occ = np.ascontiguousarray(passable, dtype=np.uint8)
    cdef Py_ssize_t nx = occ.shape[0], ny = occ.shape[1], nz = occ.shape[2]
    cdef Py_ssize_t n = nx * ny * nz
    out = np.full(n, np.inf, dtype=np.float64)
    cdef double[::1] dist = out
    cdef const unsigned char* flat = &occ[0, 0, 0]
    if not flat[source]:
        return out
    cdef double costs[4]
    costs[0] = 0.0
    costs[1] = h * 1.0
    costs[2] = h * sqrt(2.0)
    costs[3] = h * sqrt(3.0)
    cdef int offx[26]
    cdef int offy[26]
    cdef int offz[26]
    cdef double w[26]
    cdef int k = 0, dx, dy, dz
    for dx in range(-1, 2):
        for dy in range(-1, 2):
            for dz in range(-1, 2):
                if dx == 0 and dy == 0 and dz == 0:
                    continue
                offx[k] = dx
                offy[k] = dy
                offz[k] = dz
                w[k] = costs[abs(dx) + abs(dy) + abs(dz)]
                k += 1
    cdef Py_ssize_t* heap = <Py_ssize_t*> malloc(n * sizeof(Py_ssize_t))
    cdef Py_ssize_t* pos = <Py_ssize_t*> malloc(n * sizeof(Py_ssize_t))
    cdef unsigned char* state = <unsigned char*> malloc(n)  # 0 new, 1 queued, 2 done
    if heap == NULL or pos == NULL or state == NULL:
        free(heap); free(pos); free(state)
        raise MemoryError()
    cdef Py_ssize_t size = 0, u, v, ux, uy, uz, vx, vy, vz, rem
    cdef double d, nd
    try:
        with nogil:
            for u in range(n):
                state[u] = 0
            dist[source] = source_dist
            heap[0] = source
            pos[source] = 0
            state[source] = 1
            size = 1
            while size > 0:
                u = heap[0]
                d = dist[u]
                size -= 1
                if size > 0:
                    heap[0] = heap[size]
                    pos[heap[0]] = 0
                    _sift_down(heap, pos, &dist[0], size, 0)
                state[u] = 2
                ux = u // (ny * nz)
                rem = u - ux * ny * nz
                uy = rem // nz
                uz = rem - uy * nz
                for k in range(26):
                    vx = ux + offx[k]
                    vy = uy + offy[k]
                    vz = uz + offz[k]
                    if vx < 0 or vy < 0 or vz < 0 or vx >= nx or vy >= ny or vz >= nz:
                        continue
                    v = (vx * ny + vy) * nz + vz
                    if not flat[v] or state[v] == 2:
                        continue
                    nd = d + w[k]
                    if nd < dist[v]:
                        dist[v] = nd
                        if state[v] == 0:
                            state[v] = 1
                            heap[size] = v
                            pos[v] = size
                            size += 1
                            _sift_up(heap, pos, &dist[0], size - 1)
                        else:
                            _sift_up(heap, pos, &dist[0], pos[v])
    finally:
        free(heap)
        free(pos)
        free(state)
    return out


def segments_visible(passable, starts, ends, double h, double origin, double step):
    cdef const unsigned char[:, :, ::1] occ = np.ascontiguousarray(passable, dtype=np.uint8)
    cdef const double[:, ::1] s = np.ascontiguousarray(starts, dtype=np.float64)
    cdef const double[:, ::1] e = np.ascontiguousarray(ends, dtype=np.float64)
    cdef Py_ssize_t m = s.shape[0], i, kk, ns
    cdef Py_ssize_t res[3]
    res[0] = occ.shape[0]
    res[1] = occ.shape[1]
    res[2] = occ.shape[2]
    out = np.ones(m, dtype=bool)
    cdef cnp.npy_bool[::1] vis = out
    cdef double dxyz[3]
    cdef double length, t, p
    cdef Py_ssize_t c[3]
    cdef int a
    with nogil:
        for i in range(m):
            for a in range(3):
                dxyz[a] = e[i, a] - s[i, a]
            length = sqrt(dxyz[0] * dxyz[0] + dxyz[1] * dxyz[1] + dxyz[2] * dxyz[2])
            ns = <Py_ssize_t> ceil(length / step) + 1
            if ns < 2:
                ns = 2
            for kk in range(ns):
                t = (<double> kk) / (<double> (ns - 1))
                for a in range(3):
                    p = s[i, a] + dxyz[a] * t
                    c[a] = <Py_ssize_t> floor((p - origin) / h)
                    if c[a] < 0:
                        c[a] = 0
                    elif c[a] > res[a] - 1:
                        c[a] = res[a] - 1
                if not occ[c[0], c[1], c[2]]:
                    vis[i] = 0
                    break
    return out


cdef inline void _cross(double* a, double* b, double* out) noexcept nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


def triangle_voxelize(tris, int res, double origin, double h, double half):
    cdef const double[:, :, ::1] T = np.ascontiguousarray(tris, dtype=np.float64)
    grid = np.zeros((res, res, res), dtype=np.uint8)
    cdef unsigned char[:, :, ::1] g = grid
    cdef Py_ssize_t f, nf = T.shape[0]
    cdef double axes[13][3]
    cdef double edges[3][3]
    cdef double units[3][3]
    cdef double v[3][3]
    cdef double p[3]
    cdef double cc[3]
    cdef double r, pmax, pmin, mn, mx
    cdef int lo[3]
    cdef int hi[3]
    cdef int a, b, q, ix, iy, iz, j
    cdef bint hit, skip
    for a in range(3):
        for b in range(3):
            units[a][b] = 1.0 if a == b else 0.0
    with nogil:
        for f in range(nf):
            skip = False
            for a in range(3):
                mn = T[f, 0, a]
                mx = T[f, 0, a]
                for q in range(1, 3):
                    if T[f, q, a] < mn:
                        mn = T[f, q, a]
                    if T[f, q, a] > mx:
                        mx = T[f, q, a]
                lo[a] = <int> floor((mn - origin) / h) - 1
                hi[a] = <int> floor((mx - origin) / h) + 1
                if lo[a] < 0:
                    lo[a] = 0
                if hi[a] > res - 1:
                    hi[a] = res - 1
                if lo[a] > hi[a]:
                    skip = True
            if skip:
                continue
            for a in range(3):
                edges[0][a] = T[f, 1, a] - T[f, 0, a]
                edges[1][a] = T[f, 2, a] - T[f, 1, a]
                edges[2][a] = T[f, 0, a] - T[f, 2, a]
            for a in range(3):
                for b in range(3):
                    axes[a][b] = units[a][b]
            j = 3
            for a in range(3):
                for b in range(3):
                    _cross(units[a], edges[b], axes[j])
                    j += 1
            _cross(edges[0], edges[1], axes[12])
            for ix in range(lo[0], hi[0] + 1):
                cc[0] = origin + (ix + 0.5) * h
                for iy in range(lo[1], hi[1] + 1):
                    cc[1] = origin + (iy + 0.5) * h
                    for iz in range(lo[2], hi[2] + 1):
                        cc[2] = origin + (iz + 0.5) * h
                        for q in range(3):
                            for a in range(3):
                                v[q][a] = T[f, q, a] - cc[a]
                        hit = True
                        for j in range(13):
                            r = half * (fabs(axes[j][0]) + fabs(axes[j][1]) + fabs(axes[j][2]))
                            for q in range(3):
                                p[q] = v[q][0] * axes[j][0] + v[q][1] * axes[j][1] + v[q][2] * axes[j][2]
                            pmax = p[0] if p[0] > p[1] else p[1]
                            pmax = pmax if pmax > p[2] else p[2]
                            pmin = p[0] if p[0] < p[1] else p[1]
                            pmin = pmin if pmin < p[2] else p[2]
                            if pmax < -r or pmin > r:
                                hit = False
                                break
                        if hit:
                            g[ix, iy, iz] = 1
    return grid


def farthest_point_sample(points, Py_ssize_t k, Py_ssize_t start):
    cdef const double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t n = P.shape[0], i, j, cur = start, arg
    out = np.empty(k, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    best_arr = np.full(n, np.inf, dtype=np.float64)
    cdef double[::1] best = best_arr
    cdef double dx, dy, dz, d, bmax
    with nogil:
        for i in range(k):
            o[i] = cur
            bmax = -1.0
            arg = 0
            for j in range(n):
                dx = P[j, 0] - P[cur, 0]
                dy = P[j, 1] - P[cur, 1]
                dz = P[j, 2] - P[cur, 2]
                d = dx * dx + dy * dy + dz * dz
                if d < best[j]:
                    best[j] = d
                if best[j] > bmax:
                    bmax = best[j]
                    arg = j
            cur = arg
    return out
