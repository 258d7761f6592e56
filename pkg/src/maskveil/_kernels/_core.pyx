# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the pad-search inner loop.

Semantics mirror ``_fallback`` exactly: window statistics are integer sums,
so per-window SSIM values are bit-identical to the NumPy path.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

IMPL = "cython"

cdef double C1 = (0.01 * 255.0) ** 2
cdef double C2 = (0.03 * 255.0) ** 2
cdef double INV255 = 1.0 / 255.0


def ssim_windows(const unsigned char[:, :, ::1] a,
                 const unsigned char[:, :, ::1] b,
                 const long long[:, ::1] coords,
                 int window=8):
    cdef Py_ssize_t n = coords.shape[0]
    cdef Py_ssize_t c = a.shape[2]
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, ch, y, x, y0, x0
    cdef long long sa, sb, saa, sbb, sab
    cdef unsigned char va, vb
    cdef double inv_n = 1.0 / (window * window)
    cdef double mu_a, mu_b, var_a, var_b, cov, num, den
    with nogil:
        for i in range(n):
            y0 = coords[i, 0] * window
            x0 = coords[i, 1] * window
            for ch in range(c):
                sa = 0
                sb = 0
                saa = 0
                sbb = 0
                sab = 0
                for y in range(y0, y0 + window):
                    for x in range(x0, x0 + window):
                        va = a[y, x, ch]
                        vb = b[y, x, ch]
                        sa += va
                        sb += vb
                        saa += <long long>va * va
                        sbb += <long long>vb * vb
                        sab += <long long>va * vb
                mu_a = sa * inv_n
                mu_b = sb * inv_n
                var_a = saa * inv_n - mu_a * mu_a
                var_b = sbb * inv_n - mu_b * mu_b
                cov = sab * inv_n - mu_a * mu_b
                num = (2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2)
                den = (mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2)
                out[i, ch] = num / den
    return out_arr


def xor_regions(img, const long long[:, ::1] origins, int size, payloads):
    out_arr = np.array(img, dtype=np.uint8, copy=True, order="C")
    xor_regions_inplace(out_arr, origins, size, payloads)
    return out_arr


def xor_regions_inplace(unsigned char[:, :, ::1] img,
                        const long long[:, ::1] origins,
                        int size,
                        const unsigned char[:, ::1] payloads):
    cdef Py_ssize_t n = origins.shape[0]
    cdef Py_ssize_t c = img.shape[2]
    cdef Py_ssize_t i, y, x, ch, ox, oy, k
    with nogil:
        for i in range(n):
            ox = origins[i, 0]
            oy = origins[i, 1]
            k = 0
            for y in range(oy, oy + size):
                for x in range(ox, ox + size):
                    for ch in range(c):
                        img[y, x, ch] ^= payloads[i, k]
                        k += 1


def gather_patches(const unsigned char[:, :, ::1] img,
                   const long long[:, ::1] top_lefts,
                   int size):
    cdef Py_ssize_t n = top_lefts.shape[0]
    cdef Py_ssize_t c = img.shape[2]
    out_arr = np.empty(n * size * size * c, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, y, x, ch, tx, ty, k = 0
    with nogil:
        for i in range(n):
            tx = top_lefts[i, 0]
            ty = top_lefts[i, 1]
            for y in range(ty, ty + size):
                for x in range(tx, tx + size):
                    for ch in range(c):
                        out[k] = img[y, x, ch] * INV255
                        k += 1
    return out_arr
