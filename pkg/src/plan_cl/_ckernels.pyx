# cython: language_level=3
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, copysign
from libc.stdlib cimport qsort, malloc, free

cnp.import_array()

cdef enum:
    P_INF = 0


cdef int _cmp_desc(const void* a, const void* b) noexcept nogil:
    cdef double x = (<double*>a)[0]
    cdef double y = (<double*>b)[0]
    if x < y:
        return 1
    if x > y:
        return -1
    return 0


def gram_schmidt_rows(m, double tol):
    src = np.ascontiguousarray(m, dtype=np.float64)
    cdef Py_ssize_t rows = src.shape[0], cols = src.shape[1]
    q_arr = np.zeros((rows, cols), dtype=np.float64)
    cdef double[:, ::1] q = q_arr
    cdef const double[:, ::1] s = src
    cdef double* v = <double*>malloc(cols * sizeof(double))
    cdef Py_ssize_t i, j, c
    cdef int rep
    cdef double dot, scale, nrm
    cdef int bad = -1
    try:
        for i in range(rows):
            scale = 0.0
            for c in range(cols):
                v[c] = s[i, c]
                scale += v[c] * v[c]
            scale = sqrt(scale)
            for rep in range(2):
                for j in range(i):
                    dot = 0.0
                    for c in range(cols):
                        dot += q[j, c] * v[c]
                    for c in range(cols):
                        v[c] -= dot * q[j, c]
            nrm = 0.0
            for c in range(cols):
                nrm += v[c] * v[c]
            nrm = sqrt(nrm)
            if scale == 0.0 or nrm <= tol * scale:
                bad = i
                break
            for c in range(cols):
                q[i, c] = v[c] / nrm
    finally:
        free(v)
    return q_arr, bad


def jacobi_svd(a, double tol, int max_sweeps):
    # column-major copies so column pairs are contiguous
    cdef cnp.ndarray[cnp.float64_t, ndim=2] wt_arr = np.array(np.asarray(a, dtype=np.float64).T, order="C", copy=True)
    cdef Py_ssize_t n = wt_arr.shape[0], m = wt_arr.shape[1]
    vt_arr = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] w = wt_arr
    cdef double[:, ::1] v = vt_arr
    cdef Py_ssize_t i, j, r
    cdef double alpha, beta, gamma, corr, zeta, t, c, s, xi, xj, total = 0.0
    cdef double off = 0.0, negligible
    cdef int sweeps = 0, sw
    for i in range(n):
        for r in range(m):
            total += w[i, r] * w[i, r]
    negligible = (2.220446049250313e-16 * 2.220446049250313e-16) * total + 1e-300
    for sw in range(1, max_sweeps + 1):
        sweeps = sw
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for r in range(m):
                    alpha += w[i, r] * w[i, r]
                    beta += w[j, r] * w[j, r]
                    gamma += w[i, r] * w[j, r]
                if alpha <= negligible or beta <= negligible:
                    continue
                corr = fabs(gamma) / sqrt(alpha * beta)
                if corr > off:
                    off = corr
                if corr <= tol:
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                t = copysign(1.0, zeta) / (fabs(zeta) + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for r in range(m):
                    xi = w[i, r]
                    xj = w[j, r]
                    w[i, r] = c * xi - s * xj
                    w[j, r] = s * xi + c * xj
                for r in range(n):
                    xi = v[i, r]
                    xj = v[j, r]
                    v[i, r] = c * xi - s * xj
                    v[j, r] = s * xi + c * xj
        if off <= tol:
            break
    return np.ascontiguousarray(wt_arr.T), np.ascontiguousarray(vt_arr.T), sweeps, off


cdef void _project(double* x, Py_ssize_t n, double rho, int p, double* buf) noexcept nogil:
    cdef Py_ssize_t i, last
    cdef double nrm = 0.0, css, theta, scale, ax
    if p == 2:
        for i in range(n):
            nrm += x[i] * x[i]
        nrm = sqrt(nrm)
        if nrm > rho:
            scale = rho / nrm
            for i in range(n):
                x[i] *= scale
    elif p == P_INF:
        for i in range(n):
            if x[i] > rho:
                x[i] = rho
            elif x[i] < -rho:
                x[i] = -rho
    else:
        for i in range(n):
            buf[i] = fabs(x[i])
            nrm += buf[i]
        if nrm <= rho:
            return
        qsort(buf, n, sizeof(double), _cmp_desc)
        css = 0.0
        last = 0
        theta = 0.0
        for i in range(n):
            css += buf[i]
            if buf[i] - (css - rho) / (i + 1) > 0:
                last = i
                theta = (css - rho) / (i + 1)
        for i in range(n):
            ax = fabs(x[i]) - theta
            if ax > 0:
                x[i] = copysign(ax, x[i])
            else:
                x[i] = 0.0


def ball_ascent(g, double rho, int p, starts, int iters, double step):
    g_arr = np.ascontiguousarray(g, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=2] st = np.array(starts, dtype=np.float64, order="C")
    cdef const double[::1] gv = g_arr
    cdef double[:, ::1] eps = st
    cdef Py_ssize_t n = g_arr.shape[0], restarts = st.shape[0]
    cdef Py_ssize_t k, it, i
    cdef double gn = 0.0, val, best_val = -1e308
    best_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] best = best_arr
    d_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] d = d_arr
    cdef double* buf = <double*>malloc(max(n, 1) * sizeof(double))
    for i in range(n):
        gn += gv[i] * gv[i]
    gn = sqrt(gn)
    for i in range(n):
        d[i] = gv[i] / gn if gn > 0 else gv[i]
    try:
        for k in range(restarts):
            _project(&eps[k, 0], n, rho, p, buf)
            for it in range(iters + 1):
                if it > 0:
                    for i in range(n):
                        eps[k, i] += step * d[i]
                    _project(&eps[k, 0], n, rho, p, buf)
                val = 0.0
                for i in range(n):
                    val += eps[k, i] * gv[i]
                if val > best_val:
                    best_val = val
                    for i in range(n):
                        best[i] = eps[k, i]
    finally:
        free(buf)
    return best_arr, best_val
