# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled loops for pair assembly and extension-kernel sums."""
import math

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, pow, sqrt
from scipy.special.cython_special cimport hyp2f1

cnp.import_array()


cdef struct Hyp:
    double a, b, c
    double c1, c2      # connection coefficients at z = 1
    int mode           # 0: trivial (b == 0), 1: series + connection, 2: library call


cdef Hyp _make(double n, double s):
    cdef Hyp h
    h.a = -s
    h.b = 0.5 * n - s - 1.0
    h.c = 0.5 * n
    h.c1 = 0.0
    h.c2 = 0.0
    if h.b == 0.0:
        h.mode = 0
    elif abs(2.0 * s - round(2.0 * s)) < 1e-3:
        h.mode = 2  # c - a - b (near) integer: connection formula cancels
    else:
        h.mode = 1
        h.c1 = (math.gamma(h.c) * math.gamma(h.c - h.a - h.b)
                / (math.gamma(h.c - h.a) * math.gamma(h.c - h.b)))
        h.c2 = (math.gamma(h.c) * math.gamma(h.a + h.b - h.c)
                / (math.gamma(h.a) * math.gamma(h.b)))
    return h


cdef inline double _series(double a, double b, double c, double z) noexcept nogil:
    cdef double term = 1.0, total = 1.0
    cdef int k = 0
    while k < 400:
        term *= (a + k) * (b + k) / ((c + k) * (k + 1.0)) * z
        total += term
        k += 1
        if fabs(term) < 1e-17 * fabs(total):
            break
    return total


cdef inline double _hyp(Hyp* h, double z) noexcept nogil:
    """2F1(-s, n/2-s-1; n/2; z) on [0, 1]."""
    cdef double w, e
    if h.mode == 0:
        return 1.0
    if h.mode == 2:
        return hyp2f1(h.a, h.b, h.c, z)
    if z <= 0.5:
        return _series(h.a, h.b, h.c, z)
    w = 1.0 - z
    e = h.c - h.a - h.b
    return (h.c1 * _series(h.a, h.b, 1.0 - e, w)
            + h.c2 * pow(w, e) * _series(h.c - h.a, h.c - h.b, 1.0 + e, w))


def hyp_factor(double[::1] z, double n, double s):
    """Vector evaluation of the specialised 2F1 (for testing)."""
    cdef Hyp h = _make(n, s)
    cdef Py_ssize_t i, m = z.shape[0]
    out = np.empty(m)
    cdef double[::1] o = out
    with nogil:
        for i in range(m):
            o[i] = _hyp(&h, z[i])
    return out


cdef inline double _smooth(Hyp* h, double r, double rho, double n, double s) noexcept nogil:
    cdef double lo = r, hi = rho, t
    if r > rho:
        lo = rho
        hi = r
    t = lo / hi if hi > 0 else 0.0
    return _hyp(h, t * t) * pow(lo, n - 1.0) * pow(1.0 + t, -1.0 - 2.0 * s)


def pair_accumulate(double[::1] r, double[::1] rho, double[::1] w,
                    cnp.int64_t[:, ::1] idx, double[:, ::1] coef,
                    double n, double s, double[:, ::1] out):
    """out[idx_a, idx_b] += w K coef_a coef_b for every point."""
    cdef Py_ssize_t m = r.shape[0], width = idx.shape[1], p, a, b
    cdef double kw, ca
    cdef Hyp h = _make(n, s)
    with nogil:
        for p in range(m):
            kw = w[p] * _smooth(&h, r[p], rho[p], n, s) * pow(fabs(rho[p] - r[p]), -1.0 - 2.0 * s)
            for a in range(width):
                ca = kw * coef[p, a]
                if ca == 0.0:
                    continue
                for b in range(width):
                    out[idx[p, a], idx[p, b]] += ca * coef[p, b]


def pair_weights(double[::1] r, double[::1] rho, double n, double s):
    """g(r, rho) |r - rho|^(-1-2s) at every point."""
    cdef Py_ssize_t m = r.shape[0], p
    out = np.empty(m)
    cdef double[::1] o = out
    cdef Hyp h = _make(n, s)
    with nogil:
        for p in range(m):
            o[p] = _smooth(&h, r[p], rho[p], n, s) * pow(fabs(rho[p] - r[p]), -1.0 - 2.0 * s)
    return out


def poisson_values(double[::1] r, double[::1] rho, double[::1] y, double n, double s,
                   double scale):
    """scale * y^2s * a2^(-(n+2s)/2) (1-t^2)^(-1-2s) F(t^2), cf. kernel.poisson_kernel_radial."""
    cdef Py_ssize_t m = r.shape[0], p
    cdef double A, B, root, a2, t, omt2, dm, dp, yy
    out = np.empty(m)
    cdef double[::1] o = out
    cdef Hyp h = _make(n, s)
    with nogil:
        for p in range(m):
            yy = y[p] * y[p]
            dm = r[p] - rho[p]
            dp = r[p] + rho[p]
            A = yy + r[p] * r[p] + rho[p] * rho[p]
            B = 2.0 * r[p] * rho[p]
            root = sqrt((yy + dm * dm) * (yy + dp * dp))
            a2 = 0.5 * (A + root)
            t = B / (2.0 * a2)
            omt2 = (dm * dm + yy + root) * (2.0 * a2 + B) / (4.0 * a2 * a2)
            o[p] = (scale * pow(y[p], 2.0 * s) * pow(a2, -0.5 * (n + 2.0 * s))
                    * pow(omt2, -1.0 - 2.0 * s)
                    * _hyp(&h, t * t))
    return out
