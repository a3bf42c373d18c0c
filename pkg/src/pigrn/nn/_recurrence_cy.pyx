# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GRU sequence recurrence kernels.

Same contract as ``_recurrence_np``; see that module for the gate math and
argument layout. The per-step matrix-vector products go through BLAS dgemv,
everything elementwise is a plain C loop.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemv

cnp.import_array()


cdef inline double _sigmoid(double x) noexcept nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline void _matvec(double* a, int rows, int cols,
                         double* x, double* y, bint transpose) noexcept nogil:
    # a is C-order (rows, cols); computes y = a @ x, or y = a.T @ x when
    # transpose is set. Row-major (rows, cols) is column-major (cols, rows),
    # so the BLAS trans flag is inverted.
    cdef int m = cols
    cdef int n = rows
    cdef int inc = 1
    cdef double one = 1.0
    cdef double zero = 0.0
    cdef char op
    if transpose:
        op = b'N'
    else:
        op = b'T'
    dgemv(&op, &m, &n, &one, a, &m, x, &inc, &zero, y, &inc)


def gru_forward_seq(double[:, ::1] x_proj, double[:, ::1] u_cat, double[::1] h0):
    cdef Py_ssize_t T = x_proj.shape[0]
    cdef Py_ssize_t H = x_proj.shape[1] // 3
    cdef cnp.ndarray[double, ndim=2] h_seq = np.empty((T + 1, H))
    cdef cnp.ndarray[double, ndim=2] z_seq = np.empty((T, H))
    cdef cnp.ndarray[double, ndim=2] r_seq = np.empty((T, H))
    cdef cnp.ndarray[double, ndim=2] hc_seq = np.empty((T, H))
    cdef cnp.ndarray[double, ndim=1] uv = np.empty(2 * H)
    cdef cnp.ndarray[double, ndim=1] rh = np.empty(H)
    cdef cnp.ndarray[double, ndim=1] uc = np.empty(H)

    cdef double[:, ::1] h_v = h_seq
    cdef double[:, ::1] z_v = z_seq
    cdef double[:, ::1] r_v = r_seq
    cdef double[:, ::1] hc_v = hc_seq
    cdef double[::1] uv_v = uv
    cdef double[::1] rh_v = rh
    cdef double[::1] uc_v = uc

    cdef Py_ssize_t t, i
    cdef double z, r, hc, hp

    with nogil:
        for i in range(H):
            h_v[0, i] = h0[i]
        for t in range(T):
            _matvec(&u_cat[0, 0], <int>(2 * H), <int>H, &h_v[t, 0], &uv_v[0], False)
            for i in range(H):
                hp = h_v[t, i]
                r = _sigmoid(x_proj[t, H + i] + uv_v[H + i])
                r_v[t, i] = r
                rh_v[i] = r * hp
            _matvec(&u_cat[2 * H, 0], <int>H, <int>H, &rh_v[0], &uc_v[0], False)
            for i in range(H):
                hp = h_v[t, i]
                z = _sigmoid(x_proj[t, i] + uv_v[i])
                hc = tanh(x_proj[t, 2 * H + i] + uc_v[i])
                z_v[t, i] = z
                hc_v[t, i] = hc
                h_v[t + 1, i] = z * hp + (1.0 - z) * hc
    return h_seq, z_seq, r_seq, hc_seq


def gru_backward_seq(double[:, ::1] u_cat, double[:, ::1] h_seq,
                     double[:, ::1] z_seq, double[:, ::1] r_seq,
                     double[:, ::1] hc_seq, double[:, ::1] dh_out):
    cdef Py_ssize_t T = dh_out.shape[0]
    cdef Py_ssize_t H = dh_out.shape[1]
    cdef cnp.ndarray[double, ndim=2] d_gates = np.empty((T, 3 * H))
    cdef cnp.ndarray[double, ndim=1] dh = np.zeros(H)
    cdef cnp.ndarray[double, ndim=1] d_rh = np.empty(H)
    cdef cnp.ndarray[double, ndim=1] back = np.empty(H)

    cdef double[:, ::1] dg_v = d_gates
    cdef double[::1] dh_v = dh
    cdef double[::1] drh_v = d_rh
    cdef double[::1] back_v = back

    cdef Py_ssize_t t, i
    cdef double z, r, hc, hp, g, d_ac

    with nogil:
        for t in range(T - 1, -1, -1):
            for i in range(H):
                dh_v[i] = dh_v[i] + dh_out[t, i]
            for i in range(H):
                g = dh_v[i]
                z = z_seq[t, i]
                hc = hc_seq[t, i]
                hp = h_seq[t, i]
                d_ac = g * (1.0 - z) * (1.0 - hc * hc)
                dg_v[t, 2 * H + i] = d_ac
                dg_v[t, i] = g * (hp - hc) * z * (1.0 - z)
            _matvec(&u_cat[2 * H, 0], <int>H, <int>H, &dg_v[t, 2 * H], &drh_v[0], True)
            for i in range(H):
                hp = h_seq[t, i]
                r = r_seq[t, i]
                dg_v[t, H + i] = drh_v[i] * hp * r * (1.0 - r)
            _matvec(&u_cat[0, 0], <int>(2 * H), <int>H, &dg_v[t, 0], &back_v[0], True)
            for i in range(H):
                dh_v[i] = dh_v[i] * z_seq[t, i] + back_v[i] + drh_v[i] * r_seq[t, i]
    return d_gates, dh
