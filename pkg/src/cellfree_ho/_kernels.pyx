# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels; see ``_kernels_py`` for the reference."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, cos, sin, log, log1p, tanh, M_PI

cnp.import_array()

cdef double J0_SPLIT = 12.0


cdef double _j0(double x) nogil:
    cdef double q, term, total, p, qs, mag, nxt, sign, chi
    cdef int k
    x = fabs(x)
    if x < J0_SPLIT:
        q = 0.25 * x * x
        term = 1.0
        total = 1.0
        k = 0
        while True:
            k += 1
            term *= -q / (k * k)
            total += term
            if fabs(term) < 1e-17 and k > 2:
                return total
    p = 0.0
    qs = 0.0
    mag = 1.0
    k = 0
    while True:
        sign = -1.0 if (k // 2) % 2 else 1.0
        if k % 2 == 0:
            p += sign * mag
        else:
            qs -= sign * mag
        k += 1
        nxt = mag * (2 * k - 1) * (2 * k - 1) / (8.0 * k * x)
        if nxt >= mag or nxt < 1e-18:
            break
        mag = nxt
    chi = x - 0.25 * M_PI
    return sqrt(2.0 / (M_PI * x)) * (p * cos(chi) - qs * sin(chi))


def j0(double x):
    return _j0(x)


def j0_array(xs):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat = np.ascontiguousarray(xs, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i
    for i in range(flat.shape[0]):
        out[i] = _j0(flat[i])
    return out.reshape(np.shape(xs))


def topk_mask(x, int k):
    cdef double[::1] v = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = v.shape[0]
    out_arr = np.zeros(n, dtype=np.int8)
    cdef cnp.int8_t[::1] out = out_arr
    cdef Py_ssize_t i, j, best
    cdef double bv
    if k >= n:
        out[:] = 1
        return out_arr
    # k passes of selection: B is small (tens), so this beats a sort
    for j in range(k):
        best = -1
        bv = 0.0
        for i in range(n):
            if out[i]:
                continue
            if best < 0 or v[i] > bv:
                best = i
                bv = v[i]
        out[best] = 1
    return out_arr


def reward_rate(a, beta, psi_s, eta, rho2, int M, double p_d, double sigma2, int tau_c, double log_base):
    cdef double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(beta, dtype=np.float64)
    cdef double[::1] pv = np.ascontiguousarray(psi_s, dtype=np.float64)
    cdef double[::1] ev = np.ascontiguousarray(eta, dtype=np.float64)
    cdef double[::1] rv = np.ascontiguousarray(rho2, dtype=np.float64)
    cdef Py_ssize_t b, n
    cdef double coh = 0.0, xi23 = 0.0, interf = 0.0, denom, total = 0.0, mm = <double>M * M
    for b in range(av.shape[0]):
        coh += av[b] * sqrt(ev[b]) * pv[b]
        xi23 += av[b] * ev[b] * bv[b] * pv[b]
        interf += (1.0 - av[b]) * bv[b]
    denom = mm * xi23 + p_d * interf + sigma2
    coh = mm * coh * coh / denom
    for n in range(rv.shape[0]):
        total += log1p(coh * rv[n])
    return total / (tau_c * log(log_base))


def dense_forward(x, weights, biases, bint out_tanh):
    cdef double[::1] h = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] w
    cdef double[::1] bias
    cdef double[::1] nxt
    cdef Py_ssize_t li, i, j, n_in, n_out, last = len(weights) - 1
    cdef double acc
    for li in range(last + 1):
        w = np.ascontiguousarray(weights[li], dtype=np.float64)
        bias = np.ascontiguousarray(biases[li], dtype=np.float64)
        n_in = w.shape[0]
        n_out = w.shape[1]
        nxt = np.empty(n_out, dtype=np.float64)
        for j in range(n_out):
            nxt[j] = bias[j]
        for i in range(n_in):
            acc = h[i]
            if acc == 0.0:
                continue
            for j in range(n_out):
                nxt[j] += acc * w[i, j]
        if li < last:
            for j in range(n_out):
                if nxt[j] < 0.0:
                    nxt[j] = 0.0
        elif out_tanh:
            for j in range(n_out):
                nxt[j] = tanh(nxt[j])
        h = nxt
    return np.asarray(h)
