# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops; ``leopos._kernels_py`` holds the numpy equivalents."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def gold_bits(long long cinit, Py_ssize_t length, Py_ssize_t nc=1600):
    cdef Py_ssize_t total = length + nc + 31
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] x1 = np.zeros(total, dtype=np.uint8)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] x2 = np.zeros(total, dtype=np.uint8)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] out = np.empty(length, dtype=np.uint8)
    cdef Py_ssize_t n
    x1[0] = 1
    for n in range(31):
        x2[n] = (cinit >> n) & 1
    for n in range(total - 31):
        x1[n + 31] = x1[n + 3] ^ x1[n]
        x2[n + 31] = x2[n + 3] ^ x2[n + 2] ^ x2[n + 1] ^ x2[n]
    for n in range(length):
        out[n] = x1[n + nc] ^ x2[n + nc]
    return out


def sinc_interp(const double complex[:] x, const double[:] pos, const double[:] table,
                Py_ssize_t oversample, Py_ssize_t half_taps):
    """Evaluate ``x`` at fractional indices ``pos`` with a tabulated kernel.

    ``table[j]`` holds the kernel at offset ``j / oversample - half_taps``.
    """
    cdef Py_ssize_t n_out = pos.shape[0]
    cdef Py_ssize_t n_in = x.shape[0]
    cdef Py_ssize_t tlen = table.shape[0]
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] out = np.zeros(n_out, dtype=np.complex128)
    cdef double complex[:] ov = out
    cdef Py_ssize_t m, k, k0, k1, j
    cdef double p, u, fj, w
    cdef double complex acc
    for m in range(n_out):
        p = pos[m]
        k0 = <Py_ssize_t>floor(p) - half_taps + 1
        k1 = k0 + 2 * half_taps
        if k1 <= 0 or k0 >= n_in:
            continue
        if k0 < 0:
            k0 = 0
        if k1 > n_in:
            k1 = n_in
        acc = 0
        for k in range(k0, k1):
            u = (p - k + half_taps) * oversample
            j = <Py_ssize_t>floor(u)
            if j < 0 or j + 1 >= tlen:
                continue
            fj = u - j
            w = table[j] + fj * (table[j + 1] - table[j])
            acc = acc + w * x[k]
        ov[m] = acc
    return out


def mul_fold(const double complex[:] spec, const double complex[:, :] replicas, Py_ssize_t decim):
    """``out[d, m] = sum_q spec[m + q*M] * replicas[d, m + q*M]`` with ``M = L / decim``."""
    cdef Py_ssize_t nd = replicas.shape[0]
    cdef Py_ssize_t L = replicas.shape[1]
    cdef Py_ssize_t M = L // decim
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] out = np.empty((nd, M), dtype=np.complex128)
    cdef double complex[:, :] ov = out
    cdef Py_ssize_t d, m, q, base
    cdef double complex acc
    for d in range(nd):
        for m in range(M):
            acc = 0
            base = m
            for q in range(decim):
                acc = acc + spec[base] * replicas[d, base]
                base = base + M
            ov[d, m] = acc
    return out
