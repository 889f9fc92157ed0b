# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Mirrors ``_kernels_py`` operation for operation."""
import numpy as np
cimport cython
from cython cimport floating


def lif_forward(floating[:, ::1] x, double tau, double v_th, double v_reset,
                double a, bint ramp):
    cdef Py_ssize_t T = x.shape[0], M = x.shape[1], t, m
    dtype = np.float32 if floating is float else np.float64
    spikes_arr = np.empty((T, M), dtype=dtype)
    membrane_arr = np.empty((T, M), dtype=dtype)
    surrogate_arr = np.empty((T, M), dtype=dtype)
    h_arr = np.empty(M, dtype=dtype)
    cdef floating[:, ::1] spikes = spikes_arr
    cdef floating[:, ::1] membrane = membrane_arr
    cdef floating[:, ::1] surrogate = surrogate_arr
    cdef floating[::1] h = h_arr
    cdef floating inv_tau = <floating>(1.0 / tau)
    cdef floating keep = (<floating>1.0) - inv_tau
    cdef floating th = <floating>v_th
    cdef floating vr = <floating>v_reset
    cdef floating inv_a = <floating>(1.0 / a)
    cdef floating half_a = (<floating>a) * (<floating>0.5)
    cdef floating half = 0.5
    cdef floating zero = 0.0
    cdef floating one = 1.0
    cdef floating v, d, s, ad

    with nogil:
        for m in range(M):
            h[m] = vr
        for t in range(T):
            for m in range(M):
                v = h[m] * keep + (x[t, m] + vr) * inv_tau
                d = v - th
                if ramp:
                    s = d * inv_a + half
                    if s < zero:
                        s = zero
                    if s > one:
                        s = one
                else:
                    s = one if d >= zero else zero
                ad = -d if d < zero else d
                surrogate[t, m] = inv_a if ad < half_a else zero
                spikes[t, m] = s
                membrane[t, m] = v
                h[m] = vr * s + v * (one - s)
    return spikes_arr, membrane_arr, surrogate_arr


def lif_backward(floating[:, ::1] grad_spikes, floating[:, ::1] spikes,
                 floating[:, ::1] membrane, floating[:, ::1] surrogate,
                 double tau, double v_reset):
    cdef Py_ssize_t T = grad_spikes.shape[0], M = grad_spikes.shape[1], t, m
    dtype = np.float32 if floating is float else np.float64
    grad_x_arr = np.empty((T, M), dtype=dtype)
    gh_arr = np.zeros(M, dtype=dtype)
    cdef floating[:, ::1] grad_x = grad_x_arr
    cdef floating[::1] gh = gh_arr
    cdef floating inv_tau = <floating>(1.0 / tau)
    cdef floating keep = (<floating>1.0) - inv_tau
    cdef floating vr = <floating>v_reset
    cdef floating one = 1.0
    cdef floating gs, gv

    with nogil:
        for t in range(T - 1, -1, -1):
            for m in range(M):
                gs = grad_spikes[t, m] + gh[m] * (vr - membrane[t, m])
                gv = gh[m] * (one - spikes[t, m]) + gs * surrogate[t, m]
                grad_x[t, m] = gv * inv_tau
                gh[m] = gv * keep
    return grad_x_arr


def temporal_shift(floating[:, :, :, ::1] x, Py_ssize_t b1, Py_ssize_t b2,
                   int d0, int d1, int d2):
    cdef Py_ssize_t T = x.shape[0], P = x.shape[1], C = x.shape[2], M = x.shape[3]
    cdef Py_ssize_t t, p, c, m, src
    cdef int d
    dtype = np.float32 if floating is float else np.float64
    z_arr = np.zeros((T, P, C, M), dtype=dtype)
    cdef floating[:, :, :, ::1] z = z_arr

    with nogil:
        for c in range(C):
            if c < b1:
                d = d0
            elif c < b2:
                d = d1
            else:
                d = d2
            for t in range(T):
                src = t + d
                if src < 0 or src >= T:
                    continue
                for p in range(P):
                    for m in range(M):
                        z[t, p, c, m] = x[src, p, c, m]
    return z_arr


def col2im(floating[:, :, :, :, :, ::1] cols, Py_ssize_t out_h, Py_ssize_t out_w,
           Py_ssize_t stride):
    cdef Py_ssize_t B = cols.shape[0], OH = cols.shape[1], OW = cols.shape[2]
    cdef Py_ssize_t C = cols.shape[3], K = cols.shape[4]
    cdef Py_ssize_t b, c, i, j, oh, ow
    dtype = np.float32 if floating is float else np.float64
    img_arr = np.zeros((B, C, out_h, out_w), dtype=dtype)
    cdef floating[:, :, :, ::1] img = img_arr

    with nogil:
        for b in range(B):
            for c in range(C):
                for i in range(K):
                    for j in range(K):
                        for oh in range(OH):
                            for ow in range(OW):
                                img[b, c, i + stride * oh, j + stride * ow] += cols[b, oh, ow, c, i, j]
    return img_arr
