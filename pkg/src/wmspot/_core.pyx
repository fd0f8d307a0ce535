# cython: language_level=3
"""Compiled hot kernels. Semantics are defined by ``_fallback.py``."""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, log, pow, sqrt
from libc.stdint cimport uint64_t
from libc.stdlib cimport free, malloc

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t* state) nogil:
    state[0] = state[0] + GOLDEN
    return (<double>(_mix64(state[0]) >> 11) + 0.5) * INV_2_53


cdef inline double _normal(uint64_t* state) nogil:
    cdef double u1 = _uniform(state)
    cdef double u2 = _uniform(state)
    return sqrt(-2.0 * log(u1)) * cos(TWO_PI * u2)


cdef double _gamma(uint64_t* state, double shape) nogil:
    cdef double g, u, d, c, x, v, x2
    if shape < 1.0:
        g = _gamma(state, shape + 1.0)
        u = _uniform(state)
        return g * pow(u, 1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / sqrt(9.0 * d)
    while True:
        x = _normal(state)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = _uniform(state)
        x2 = x * x
        if u < 1.0 - 0.0331 * (x2 * x2):
            return d * v
        if log(u) < 0.5 * x2 + d * (1.0 - v + log(v)):
            return d * v


def mix64(z):
    return _mix64(<uint64_t>z)


def beta_fill(state, double a, double b, Py_ssize_t n):
    cdef uint64_t st = <uint64_t>state
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] view = out
    cdef Py_ssize_t i
    cdef double x, y, s
    with nogil:
        for i in range(n):
            while True:
                x = _gamma(&st, a)
                y = _gamma(&st, b)
                s = x + y
                if s > 0.0:
                    view[i] = x / s
                    break
    return out, int(st)


cdef double _signed_area(double* xs, double* ys, int n) nogil:
    cdef double s = 0.0
    cdef int i, j
    for i in range(n):
        j = i + 1 if i + 1 < n else 0
        s += xs[i] * ys[j] - xs[j] * ys[i]
    return 0.5 * s


cdef double _clip_area(double[:, ::1] p, double[:, ::1] q) nogil:
    cdef int n = <int>p.shape[0]
    cdef int m = <int>q.shape[0]
    cdef int cap = n + m + 4
    cdef double* xs = <double*>malloc(cap * sizeof(double))
    cdef double* ys = <double*>malloc(cap * sizeof(double))
    cdef double* nxs = <double*>malloc(cap * sizeof(double))
    cdef double* nys = <double*>malloc(cap * sizeof(double))
    cdef double* tmp
    cdef int i, j, k, nk, cnt
    cdef double ax, ay, bx, by, ex, ey, px, py, qx, qy, sp, sq, t, area
    for i in range(n):
        xs[i] = p[i, 0]
        ys[i] = p[i, 1]
    for k in range(m):
        if n == 0:
            break
        ax = q[k, 0]
        ay = q[k, 1]
        nk = k + 1 if k + 1 < m else 0
        bx = q[nk, 0]
        by = q[nk, 1]
        ex = bx - ax
        ey = by - ay
        cnt = 0
        for i in range(n):
            j = i + 1 if i + 1 < n else 0
            px = xs[i]
            py = ys[i]
            qx = xs[j]
            qy = ys[j]
            sp = ex * (py - ay) - ey * (px - ax)
            sq = ex * (qy - ay) - ey * (qx - ax)
            if sp >= 0.0:
                nxs[cnt] = px
                nys[cnt] = py
                cnt += 1
                if sq < 0.0:
                    t = sp / (sp - sq)
                    nxs[cnt] = px + t * (qx - px)
                    nys[cnt] = py + t * (qy - py)
                    cnt += 1
            elif sq >= 0.0:
                t = sp / (sp - sq)
                nxs[cnt] = px + t * (qx - px)
                nys[cnt] = py + t * (qy - py)
                cnt += 1
        tmp = xs
        xs = nxs
        nxs = tmp
        tmp = ys
        ys = nys
        nys = tmp
        n = cnt
    if n < 3:
        area = 0.0
    else:
        area = _signed_area(xs, ys, n)
    free(xs)
    free(ys)
    free(nxs)
    free(nys)
    return area if area > 0.0 else 0.0


def clip_area(p, q):
    cdef double[:, ::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef double[:, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    return _clip_area(pv, qv)


def iou_matrix(pa, pb):
    cdef double[:, :, ::1] av = np.ascontiguousarray(pa, dtype=np.float64)
    cdef double[:, :, ::1] bv = np.ascontiguousarray(pb, dtype=np.float64)
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double[::1] areas_a = np.empty(n, dtype=np.float64)
    cdef double[::1] areas_b = np.empty(m, dtype=np.float64)
    cdef double[:, ::1] lo_a = np.ascontiguousarray(np.min(pa, axis=1), dtype=np.float64) if n else np.empty((0, 2))
    cdef double[:, ::1] hi_a = np.ascontiguousarray(np.max(pa, axis=1), dtype=np.float64) if n else np.empty((0, 2))
    cdef double[:, ::1] lo_b = np.ascontiguousarray(np.min(pb, axis=1), dtype=np.float64) if m else np.empty((0, 2))
    cdef double[:, ::1] hi_b = np.ascontiguousarray(np.max(pb, axis=1), dtype=np.float64) if m else np.empty((0, 2))
    cdef double xs[4]
    cdef double ys[4]
    cdef Py_ssize_t i, j
    cdef int k
    cdef double area, inter, union
    with nogil:
        for i in range(n):
            for k in range(4):
                xs[k] = av[i, k, 0]
                ys[k] = av[i, k, 1]
            area = _signed_area(xs, ys, 4)
            areas_a[i] = area if area > 0.0 else 0.0
        for j in range(m):
            for k in range(4):
                xs[k] = bv[j, k, 0]
                ys[k] = bv[j, k, 1]
            area = _signed_area(xs, ys, 4)
            areas_b[j] = area if area > 0.0 else 0.0
        for i in range(n):
            for j in range(m):
                if (lo_a[i, 0] >= hi_b[j, 0] or lo_b[j, 0] >= hi_a[i, 0]
                        or lo_a[i, 1] >= hi_b[j, 1] or lo_b[j, 1] >= hi_a[i, 1]):
                    continue
                inter = _clip_area(av[i], bv[j])
                union = areas_a[i] + areas_b[j] - inter
                if union > 0.0 and inter > 0.0:
                    ov[i, j] = inter / union
    return out


def edit_counts(str pred, str truth):
    cdef Py_ssize_t n = len(pred), m = len(truth)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] dist_arr = np.empty((n + 1, m + 1), dtype=np.int64)
    cdef long long[:, ::1] dist = dist_arr
    cdef Py_ssize_t i, j
    cdef long long best, cost
    cdef long long subs = 0, dels = 0, ins = 0
    cdef Py_UCS4 pc
    for i in range(n + 1):
        dist[i, 0] = i
    for j in range(m + 1):
        dist[0, j] = j
    for i in range(1, n + 1):
        pc = pred[i - 1]
        for j in range(1, m + 1):
            cost = 0 if pc == truth[j - 1] else 1
            best = dist[i - 1, j - 1] + cost
            if dist[i, j - 1] + 1 < best:
                best = dist[i, j - 1] + 1
            if dist[i - 1, j] + 1 < best:
                best = dist[i - 1, j] + 1
            dist[i, j] = best
    i = n
    j = m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = 0 if pred[i - 1] == truth[j - 1] else 1
            if dist[i, j] == dist[i - 1, j - 1] + cost:
                subs += cost
                i -= 1
                j -= 1
                continue
        if j > 0 and dist[i, j] == dist[i, j - 1] + 1:
            dels += 1
            j -= 1
        else:
            ins += 1
            i -= 1
    return int(subs), int(dels), int(ins)
