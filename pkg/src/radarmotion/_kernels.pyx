# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled point-cloud kernels: farthest point sampling, k-nearest neighbours
and point-to-segment distances.

Semantics are identical to the numpy versions in ``radarmotion.kernels``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def fps(double[:, ::1] points, Py_ssize_t k):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t i, s, best, last
    cdef double d, dx, dy, dz, best_d
    out = np.empty(k, dtype=np.int64)
    cdef cnp.int64_t[::1] sel = out
    mind_arr = np.full(n, INFINITY, dtype=np.float64)
    cdef double[::1] mind = mind_arr

    # selected points carry -1 so duplicates of them are never re-picked
    sel[0] = 0
    mind[0] = -1.0
    last = 0
    for s in range(1, k):
        best = 0
        best_d = -1.0
        for i in range(n):
            dx = points[i, 0] - points[last, 0]
            dy = points[i, 1] - points[last, 1]
            dz = points[i, 2] - points[last, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < mind[i]:
                mind[i] = d
            if mind[i] > best_d:
                best_d = mind[i]
                best = i
        sel[s] = best
        mind[best] = -1.0
        last = best
    return out


def knn(double[:, ::1] points, double[:, ::1] queries, Py_ssize_t k):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t m = queries.shape[0]
    cdef Py_ssize_t q, i, j, pos, kk
    cdef double d, dx, dy, dz
    kk = k if k < n else n
    out = np.empty((m, k), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] idx = out
    dist_arr = np.empty(kk, dtype=np.float64)
    cdef double[::1] best = dist_arr
    ids_arr = np.empty(kk, dtype=np.int64)
    cdef cnp.int64_t[::1] ids = ids_arr

    for q in range(m):
        for j in range(kk):
            best[j] = INFINITY
            ids[j] = -1
        for i in range(n):
            dx = points[i, 0] - queries[q, 0]
            dy = points[i, 1] - queries[q, 1]
            dz = points[i, 2] - queries[q, 2]
            d = dx * dx + dy * dy + dz * dz
            if d >= best[kk - 1]:
                continue
            # insertion keeps equal distances in index order
            pos = kk - 1
            while pos > 0 and best[pos - 1] > d:
                best[pos] = best[pos - 1]
                ids[pos] = ids[pos - 1]
                pos -= 1
            best[pos] = d
            ids[pos] = i
        for j in range(kk):
            idx[q, j] = ids[j]
        for j in range(kk, k):
            idx[q, j] = ids[0]
    return out


def segment_distance(double[:, ::1] points, double[:, ::1] seg_a, double[:, ::1] seg_b):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t m = seg_a.shape[0]
    cdef Py_ssize_t i, s
    cdef double abx, aby, abz, apx, apy, apz, denom, t, cx, cy, cz, d, best
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] res = out
    for i in range(n):
        best = INFINITY
        for s in range(m):
            abx = seg_b[s, 0] - seg_a[s, 0]
            aby = seg_b[s, 1] - seg_a[s, 1]
            abz = seg_b[s, 2] - seg_a[s, 2]
            apx = points[i, 0] - seg_a[s, 0]
            apy = points[i, 1] - seg_a[s, 1]
            apz = points[i, 2] - seg_a[s, 2]
            denom = abx * abx + aby * aby + abz * abz
            t = 0.0
            if denom > 0.0:
                t = (apx * abx + apy * aby + apz * abz) / denom
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
            cx = apx - t * abx
            cy = apy - t * aby
            cz = apz - t * abz
            d = cx * cx + cy * cy + cz * cz
            if d < best:
                best = d
        res[i] = sqrt(best)
    return out
