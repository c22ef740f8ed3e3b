# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: batched radix-2 FFT and the diagonal-SSM Vandermonde sums.

Same contract as ``_kernels_py``; see that module for the reference formulation.
Complex products are spelled out on real/imaginary parts so the C compiler does
not route them through the C99 ``__muldc3`` slow path.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, cos, sin, fabs

cnp.import_array()

ANCHOR = 256
cdef Py_ssize_t _ANCHOR = 256
# powers below this are flushed to zero: their contribution is far under double
# precision of any kernel value, and subnormal arithmetic is very slow
cdef double _TINY = 1e-200


def fft_rows(const double complex[:, ::1] x, const double complex[::1] twiddle,
             const cnp.intp_t[::1] rev, bint inverse):
    """Radix-2 DIT FFT of every row of ``x`` (row length must be a power of two)."""
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1]
    out_arr = np.empty((rows, 2 * n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t half_n = n // 2
    tw_arr = np.empty(2 * half_n + 2, dtype=np.float64)
    cdef double[::1] tw = tw_arr
    cdef Py_ssize_t r, i, k, start, half, m, stride, lo, hi
    cdef double sign = -1.0 if inverse else 1.0
    cdef double wr, wi, tr, ti, ar, ai
    cdef double scale = 1.0 / n
    for k in range(half_n):
        tw[2 * k] = twiddle[k].real
        tw[2 * k + 1] = sign * twiddle[k].imag
    with nogil:
        for r in range(rows):
            for i in range(n):
                out[r, 2 * rev[i]] = x[r, i].real
                out[r, 2 * rev[i] + 1] = x[r, i].imag
            m = 2
            while m <= n:
                half = m >> 1
                stride = n // m
                start = 0
                while start < n:
                    for k in range(half):
                        wr = tw[2 * k * stride]
                        wi = tw[2 * k * stride + 1]
                        lo = 2 * (start + k)
                        hi = 2 * (start + k + half)
                        tr = wr * out[r, hi] - wi * out[r, hi + 1]
                        ti = wr * out[r, hi + 1] + wi * out[r, hi]
                        ar = out[r, lo]
                        ai = out[r, lo + 1]
                        out[r, lo] = ar + tr
                        out[r, lo + 1] = ai + ti
                        out[r, hi] = ar - tr
                        out[r, hi + 1] = ai - ti
                    start += m
                m <<= 1
            if inverse:
                for i in range(2 * n):
                    out[r, i] = out[r, i] * scale
    return out_arr.view(np.complex128)


def ssm_kernel(const double complex[:, ::1] z, const double complex[:, ::1] weight,
               Py_ssize_t length):
    """``out[h, j] = Re(sum_n weight[h, n] * exp(j * z[h, n]))``."""
    cdef Py_ssize_t H = z.shape[0], N = z.shape[1]
    out_arr = np.zeros((H, length), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] pr = np.empty(N), pi = np.empty(N)
    cdef double[::1] sr = np.empty(N), si = np.empty(N)
    cdef double[::1] wr = np.empty(N), wi = np.empty(N)
    cdef Py_ssize_t h, n, j
    cdef double acc, mag, a, b
    with nogil:
        for h in range(H):
            for n in range(N):
                mag = exp(z[h, n].real)
                sr[n] = mag * cos(z[h, n].imag)
                si[n] = mag * sin(z[h, n].imag)
                wr[n] = weight[h, n].real
                wi[n] = weight[h, n].imag
            for j in range(length):
                if j == 0:
                    for n in range(N):
                        pr[n] = 1.0
                        pi[n] = 0.0
                elif j % _ANCHOR == 0:
                    for n in range(N):
                        mag = exp(j * z[h, n].real)
                        pr[n] = mag * cos(j * z[h, n].imag)
                        pi[n] = mag * sin(j * z[h, n].imag)
                acc = 0.0
                for n in range(N):
                    a = pr[n]
                    b = pi[n]
                    acc = acc + (wr[n] * a - wi[n] * b)
                    a, b = a * sr[n] - b * si[n], a * si[n] + b * sr[n]
                    if fabs(a) < _TINY and fabs(b) < _TINY:
                        a = 0.0
                        b = 0.0
                    pr[n] = a
                    pi[n] = b
                out[h, j] = acc
    return out_arr


def ssm_kernel_grad(const double complex[:, ::1] z, const double complex[:, ::1] weight,
                    const double[:, ::1] grad):
    """Return ``(grad_z, grad_weight)`` for ``ssm_kernel`` given an upstream ``grad``."""
    cdef Py_ssize_t H = z.shape[0], N = z.shape[1], length = grad.shape[1]
    gz_arr = np.zeros((H, N), dtype=np.complex128)
    gw_arr = np.zeros((H, N), dtype=np.complex128)
    cdef double complex[:, ::1] gz = gz_arr
    cdef double complex[:, ::1] gw = gw_arr
    cdef double[::1] pr = np.empty(N), pi = np.empty(N)
    cdef double[::1] sr = np.empty(N), si = np.empty(N)
    cdef double[::1] s0r = np.empty(N), s0i = np.empty(N)
    cdef double[::1] s1r = np.empty(N), s1i = np.empty(N)
    cdef Py_ssize_t h, n, j
    cdef double g, gj, mag, a, b, wr, wi
    with nogil:
        for h in range(H):
            for n in range(N):
                mag = exp(z[h, n].real)
                sr[n] = mag * cos(z[h, n].imag)
                si[n] = mag * sin(z[h, n].imag)
                s0r[n] = 0.0
                s0i[n] = 0.0
                s1r[n] = 0.0
                s1i[n] = 0.0
            for j in range(length):
                if j == 0:
                    for n in range(N):
                        pr[n] = 1.0
                        pi[n] = 0.0
                elif j % _ANCHOR == 0:
                    for n in range(N):
                        mag = exp(j * z[h, n].real)
                        pr[n] = mag * cos(j * z[h, n].imag)
                        pi[n] = mag * sin(j * z[h, n].imag)
                g = grad[h, j]
                gj = g * j
                for n in range(N):
                    a = pr[n]
                    b = pi[n]
                    # accumulate g * conj(power) and j * g * conj(power)
                    s0r[n] += g * a
                    s0i[n] -= g * b
                    s1r[n] += gj * a
                    s1i[n] -= gj * b
                    a, b = a * sr[n] - b * si[n], a * si[n] + b * sr[n]
                    if fabs(a) < _TINY and fabs(b) < _TINY:
                        a = 0.0
                        b = 0.0
                    pr[n] = a
                    pi[n] = b
            for n in range(N):
                gw[h, n] = s0r[n] + 1j * s0i[n]
                wr = weight[h, n].real
                wi = -weight[h, n].imag
                gz[h, n] = (wr * s1r[n] - wi * s1i[n]) + 1j * (wr * s1i[n] + wi * s1r[n])
    return gz_arr, gw_arr
