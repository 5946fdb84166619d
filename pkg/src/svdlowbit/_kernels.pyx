# Compiled kernels. Each function mirrors its numpy twin in _kernels_py.py
# operation for operation; the build disables FMA contraction so both
# backends produce bit-identical floats. Keep the two files in sync.

import numpy as np

from libc.math cimport fabs, ldexp, sqrt


def matmul_f32(const float[:, ::1] a, const float[:, ::1] b):
    """float32 GEMM with 64-bit accumulation in fixed left-to-right order."""
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    out = np.empty((m, n), dtype=np.float32)
    cdef float[:, ::1] o = out
    cdef Py_ssize_t i, j, t
    cdef double acc, prod
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                prod = (<double> a[i, t]) * (<double> b[t, j])
                acc = acc + prod
            o[i, j] = <float> acc
    return out


def jacobi_orthogonalize(double[:, ::1] mat, double[:, ::1] vmat, double tol, int max_sweeps):
    """Cyclic one-sided Jacobi column orthogonalization, in place."""
    cdef Py_ssize_t m = mat.shape[0], n = mat.shape[1]
    cdef Py_ssize_t p, q, i
    cdef int sweep, sweeps = 0
    cdef double alpha, beta, gamma, off, zeta, sign, t, c, s, max_off = 0.0
    cdef double tp, tq
    for sweep in range(max_sweeps):
        max_off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(m):
                    alpha = alpha + mat[i, p] * mat[i, p]
                for i in range(m):
                    beta = beta + mat[i, q] * mat[i, q]
                for i in range(m):
                    gamma = gamma + mat[i, p] * mat[i, q]
                if alpha == 0.0 or beta == 0.0:
                    continue
                off = fabs(gamma) / sqrt(alpha * beta)
                if off > max_off:
                    max_off = off
                if off <= tol:
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                sign = 1.0 if zeta >= 0.0 else -1.0
                t = sign / (fabs(zeta) + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for i in range(m):
                    tp = mat[i, p]
                    tq = mat[i, q]
                    mat[i, p] = c * tp - s * tq
                    mat[i, q] = s * tp + c * tq
                for i in range(n):
                    tp = vmat[i, p]
                    tq = vmat[i, q]
                    vmat[i, p] = c * tp - s * tq
                    vmat[i, q] = s * tp + c * tq
        sweeps = sweep + 1
        if max_off <= tol:
            break
    return sweeps, max_off


def hgq_gemm_core(const signed char[:, ::1] codes_a,
                  const unsigned char[:, ::1] shifts_a,
                  const float[:, ::1] bsf_a,
                  const signed char[:, ::1] codes_w,
                  const unsigned char[:, ::1] shifts_w,
                  const float[:, ::1] bsf_w,
                  int sub, int base, int dmax):
    """Fused two-level group-quantized GEMM (see numpy twin for the contract)."""
    cdef Py_ssize_t m_dim = codes_a.shape[0], k_dim = codes_a.shape[1]
    cdef Py_ssize_t n_dim = codes_w.shape[1]
    cdef Py_ssize_t n_sub = shifts_a.shape[1], n_base = bsf_a.shape[1]
    cdef Py_ssize_t subs_per_base = base // sub
    out = np.empty((m_dim, n_dim), dtype=np.float32)
    cdef float[:, ::1] o = out
    cdef Py_ssize_t i, j, bgi, sgi, t, k0, k1, s_lo, s_hi
    cdef long long acc, part
    cdef int sh
    cdef double total, contrib
    cdef double pow_neg = ldexp(1.0, -dmax)
    for i in range(m_dim):
        for j in range(n_dim):
            total = 0.0
            for bgi in range(n_base):
                acc = 0
                s_lo = bgi * subs_per_base
                s_hi = (bgi + 1) * subs_per_base
                if s_hi > n_sub:
                    s_hi = n_sub
                for sgi in range(s_lo, s_hi):
                    part = 0
                    k0 = sgi * sub
                    k1 = k0 + sub
                    if k1 > k_dim:
                        k1 = k_dim
                    for t in range(k0, k1):
                        part = part + (<long long> codes_a[i, t]) * (<long long> codes_w[t, j])
                    sh = dmax - <int> shifts_a[i, sgi] - <int> shifts_w[sgi, j]
                    acc = acc + (part << sh)
                contrib = (((<double> acc) * (<double> bsf_a[i, bgi])) * (<double> bsf_w[bgi, j])) * pow_neg
                total = total + contrib
            o[i, j] = <float> total
    return out


def mp_gemm_core(const short[:, ::1] a_hi,
                 const signed char[:, ::1] a_lo,
                 const int[::1] row_exp,
                 const signed char[:, ::1] w_hi,
                 const signed char[:, ::1] w_lo,
                 const float[::1] w_scale):
    """Mixed-width integer GEMM with one float scaling per output element."""
    cdef Py_ssize_t m_dim = a_hi.shape[0], ns = a_hi.shape[1]
    cdef Py_ssize_t nl = a_lo.shape[1], n_dim = w_hi.shape[1]
    out = np.empty((m_dim, n_dim), dtype=np.float32)
    cdef float[:, ::1] o = out
    cdef Py_ssize_t i, j, t
    cdef long long acc, ahh, ahl, whh, whl
    cdef int av, wv
    cdef double pow_row
    for i in range(m_dim):
        pow_row = ldexp(1.0, row_exp[i])
        for j in range(n_dim):
            acc = 0
            for t in range(ns):
                av = a_hi[i, t]
                wv = w_hi[t, j]
                ahh = av >> 8
                ahl = av & 0xFF
                whh = wv >> 4
                whl = wv & 0xF
                acc = acc + ((ahh * whh) << 12) + ((ahh * whl) << 8) + ((ahl * whh) << 4) + (ahl * whl)
            for t in range(nl):
                acc = acc + (<long long> a_lo[i, t]) * (<long long> w_lo[t, j])
            o[i, j] = <float> (((<double> acc) * pow_row) * (<double> w_scale[j]))
    return out


def bitslice_exhaustive():
    """Check slice recombination against full-width multiplication for all pairs."""
    cdef long long failures = 0, checked = 0
    cdef long long recombined, full
    cdef long long ahh, ahl, whh, whl
    cdef int a, w
    for a in range(-32768, 32768):
        ahh = a >> 8
        ahl = a & 0xFF
        for w in range(-128, 128):
            whh = w >> 4
            whl = w & 0xF
            recombined = ((ahh * whh) << 12) + ((ahh * whl) << 8) + ((ahl * whh) << 4) + (ahl * whl)
            full = (<long long> a) * (<long long> w)
            if recombined != full:
                failures += 1
            checked += 1
    return checked, failures
