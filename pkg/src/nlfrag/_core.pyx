# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: pair-rate products, gain accumulation, power-law tables.

Mirrors ``_fallback`` function by function. Accumulation is partitioned into
fixed pair chunks; each chunk is summed with Neumaier compensation into its
own partial row and the partials are merged in chunk order, so results do not
depend on the number of OpenMP threads.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport pow, fabs, fmin
from libc.stdlib cimport malloc, calloc, free

cnp.import_array()


def pair_rates(const double[::1] g, const int[::1] pi, const int[::1] pj,
               const double[::1] coef, double[::1] out):
    cdef Py_ssize_t p, n = pi.shape[0]
    with nogil:
        for p in range(n):
            out[p] = coef[p] * g[pi[p]] * g[pj[p]]


cdef inline void _neumaier(double* s, double* c, double v) noexcept nogil:
    cdef double t = s[0] + v
    if fabs(s[0]) >= fabs(v):
        c[0] += (s[0] - t) + v
    else:
        c[0] += (v - t) + s[0]
    s[0] = t


cdef void _chunk(const double* r, const long long* offsets, const double* data,
                 long long p0, long long p1, double* s, double* c) noexcept nogil:
    cdef long long p, k, start, length
    cdef double rp
    for p in range(p0, p1):
        rp = r[p]
        if rp == 0.0:
            continue
        start = offsets[p]
        length = offsets[p + 1] - start
        for k in range(length):
            _neumaier(&s[k], &c[k], rp * data[start + k])


def accumulate_gain(const double[::1] r, const long long[::1] offsets, const double[::1] data,
                    const long long[::1] chunks, int ncell, int threads=1):
    """Return ``sum_p r[p] * row_p`` with rows stored contiguously from pivot 0."""
    cdef Py_ssize_t nchunks = chunks.shape[0] - 1
    cdef Py_ssize_t ch, k
    cdef cnp.ndarray[double, ndim=2] ps = np.zeros((max(nchunks, 1), ncell))
    cdef cnp.ndarray[double, ndim=2] pc = np.zeros((max(nchunks, 1), ncell))
    cdef double[:, ::1] psv = ps
    cdef double[:, ::1] pcv = pc
    cdef double s, c
    out = np.zeros(ncell)
    cdef double[::1] outv = out
    if threads < 1:
        threads = 1
    if nchunks > 0:
        for ch in prange(nchunks, nogil=True, schedule="static", num_threads=threads):
            _chunk(&r[0], &offsets[0], &data[0], chunks[ch], chunks[ch + 1], &psv[ch, 0], &pcv[ch, 0])
    with nogil:
        for k in range(ncell):
            s = 0.0
            c = 0.0
            for ch in range(nchunks):
                _neumaier(&s, &c, psv[ch, k])
                c += pcv[ch, k]
            outv[k] = s + c
    return out


cdef double _split_power_cloud(const double* edges, const double* piv, int K, double nu,
                               double s, double* w, int* top_out) noexcept nogil:
    """Two-point split of a power cloud on (0, s); returns the mass offset."""
    cdef double e1 = nu + 1.0, e2 = nu + 2.0, gam = e2 / e1
    cdef double a, b, nq, mq, zbar, gap, up, offset = 0.0
    cdef int q, k, last = 0
    # last cell intersecting (0, s): largest q with edges[q] < s
    while last + 1 < K and edges[last + 1] < s:
        last += 1
    for q in range(last + 1):
        a = fmin(edges[q], s) / s
        b = fmin(fmin(edges[q + 1], s), s) / s
        nq = gam * (pow(b, e1) - pow(a, e1))
        mq = s * (pow(b, e2) - pow(a, e2))
        if nq <= 0.0:
            continue
        zbar = mq / nq
        if q == 0:
            k = 0
            if zbar < piv[0]:
                w[0] += nq
                offset += nq * piv[0] - mq
                continue
        else:
            k = q if zbar >= piv[q] else q - 1
        if k + 1 >= K:
            w[K - 1] += nq
            offset += nq * piv[K - 1] - mq
            continue
        gap = piv[k + 1] - piv[k]
        up = (mq - piv[k] * nq) / gap
        if up < 0.0:
            up = 0.0
        elif up > nq:
            up = nq
        w[k] += nq - up
        w[k + 1] += up
    top_out[0] = last + 1 if last + 1 < K - 1 else K - 1
    return offset


cdef double _correct_mass(const double* piv, double* w, int top, double excess) noexcept nogil:
    cdef int q
    cdef double gap, avail, d, need
    if excess > 0.0:
        q = top - 1
        while q >= 0:
            gap = piv[q + 1] - piv[q]
            avail = w[q + 1]
            if avail > 0.0:
                d = excess / gap
                if d <= avail:
                    w[q + 1] -= d
                    w[q] += d
                    return 0.0
                w[q + 1] = 0.0
                w[q] += avail
                excess -= avail * gap
            q -= 1
    elif excess < 0.0:
        need = -excess
        q = top - 1
        while q >= 0:
            gap = piv[q + 1] - piv[q]
            avail = w[q]
            if avail > 0.0:
                d = need / gap
                if d <= avail:
                    w[q] -= d
                    w[q + 1] += d
                    return 0.0
                w[q] = 0.0
                w[q + 1] += avail
                need -= avail * gap
            q -= 1
        excess = -need
    return excess


cdef double _allocate_power_cloud(const double* edges, const double* piv, int K, double nu,
                                  double s, double* w, double* local) noexcept nogil:
    """Add the allocation of a power cloud to ``w``; return the relative number defect."""
    cdef int k, top
    cdef double offset, excess, rest, before, after, mass
    for k in range(K):
        local[k] = 0.0
    offset = _split_power_cloud(edges, piv, K, nu, s, local, &top)
    while top > 0 and local[top] == 0.0:
        top -= 1
    excess = 0.0
    for k in range(top + 1):
        excess += piv[k] * local[k]
    excess -= s
    if offset == 0.0 and fabs(excess) <= 1e-15 * s:
        excess = 0.0
    cdef double defect = 0.0
    if excess != 0.0:
        rest = _correct_mass(piv, local, top, excess)
        if fabs(rest) > 1e-13 * s:
            before = 0.0
            mass = 0.0
            for k in range(K):
                before += local[k]
                mass += piv[k] * local[k]
            after = 0.0
            for k in range(K):
                local[k] *= s / mass
                after += local[k]
            defect = fabs(before - after) / before
    for k in range(K):
        w[k] += local[k]
    return defect


def allocate_power_cloud(const double[::1] edges, const double[::1] pivots, double nu, double s):
    """Allocation vector of a single power cloud on ``(0, s)``; returns ``(w, defect)``."""
    cdef int K = pivots.shape[0]
    w = np.zeros(K)
    local = np.zeros(K)
    cdef double[::1] wv = w
    cdef double[::1] lv = local
    cdef double d = _allocate_power_cloud(&edges[0], &pivots[0], K, nu, s, &wv[0], &lv[0])
    return w, d


def build_power_rows(const double[::1] edges, const double[::1] pivots, double nu, int mode,
                     const int[::1] pi, const int[::1] pj, const long long[::1] offsets,
                     double[::1] data):
    """Fill table rows for power clouds.

    ``mode`` 0: one cloud on ``(0, x_i + x_j)``; mode 1: one cloud per collider.
    Returns the largest relative number defect over all pairs.
    """
    cdef int K = pivots.shape[0]
    cdef Py_ssize_t npairs = pi.shape[0]
    cdef Py_ssize_t p
    cdef long long start, length, k
    defects = np.zeros(max(npairs, 1))
    cdef double[::1] dv = defects
    cdef double* w
    cdef double* local
    cdef double d
    with nogil:
        w = <double*> calloc(K, sizeof(double))
        local = <double*> calloc(K, sizeof(double))
        for p in range(npairs):
            for k in range(K):
                w[k] = 0.0
            if mode == 0:
                d = _allocate_power_cloud(&edges[0], &pivots[0], K, nu,
                                          pivots[pi[p]] + pivots[pj[p]], w, local)
            else:
                d = _allocate_power_cloud(&edges[0], &pivots[0], K, nu, pivots[pi[p]], w, local)
                d = d + _allocate_power_cloud(&edges[0], &pivots[0], K, nu, pivots[pj[p]], w, local)
            dv[p] = d
            start = offsets[p]
            length = offsets[p + 1] - start
            for k in range(length):
                data[start + k] = w[k]
        free(w)
        free(local)
    return float(defects.max()) if npairs else 0.0
