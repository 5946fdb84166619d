"""Numpy fallback kernels.

Every function here has a compiled twin in ``_kernels.pyx`` that performs the
identical sequence of IEEE-754 operations (the extension is built with FMA
contraction disabled), so the two backends return bit-identical results. Keep
the operation order in the two files in sync when editing either.
"""

import math

import numpy as np


def matmul_f32(a, b):
    """float32 GEMM with 64-bit accumulation in fixed left-to-right order.

    Products are rounded to float64 individually, summed sequentially along
    the reduction axis, and the total is rounded to float32 on store.
    """
    m, k = a.shape
    n = b.shape[1]
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    out = np.empty((m, n), dtype=np.float32)
    for i in range(m):
        prods = a64[i, :, None] * b64  # (k, n), each product rounded once
        out[i] = np.add.accumulate(prods, axis=0)[-1].astype(np.float32)
    return out


def jacobi_orthogonalize(mat, vmat, tol, max_sweeps):
    """Cyclic one-sided Jacobi column orthogonalization, in place.

    Rotates column pairs of ``mat`` (m x n, float64) until every pair's
    normalized off-diagonal coupling |col_p . col_q| / (|col_p| |col_q|)
    drops below ``tol`` or ``max_sweeps`` passes complete. ``vmat`` (n x n)
    accumulates the right-hand rotations. Returns (sweeps_run, last_max_off).
    """
    n = mat.shape[1]
    sweeps = 0
    max_off = 0.0
    for _ in range(max_sweeps):
        max_off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                cp = mat[:, p]
                cq = mat[:, q]
                alpha = np.add.accumulate(cp * cp)[-1]
                beta = np.add.accumulate(cq * cq)[-1]
                gamma = np.add.accumulate(cp * cq)[-1]
                if alpha == 0.0 or beta == 0.0:
                    continue
                off = abs(gamma) / math.sqrt(alpha * beta)
                if off > max_off:
                    max_off = off
                if off <= tol:
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                sign = 1.0 if zeta >= 0.0 else -1.0
                t = sign / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                new_p = c * cp - s * cq
                new_q = s * cp + c * cq
                mat[:, p] = new_p
                mat[:, q] = new_q
                vp = vmat[:, p].copy()
                vq = vmat[:, q]
                vmat[:, p] = c * vp - s * vq
                vmat[:, q] = s * vp + c * vq
        sweeps += 1
        if max_off <= tol:
            break
    return sweeps, max_off


def hgq_gemm_core(codes_a, shifts_a, bsf_a, codes_w, shifts_w, bsf_w, sub, base, dmax):
    """Fused two-level group-quantized GEMM.

    codes_a: (M, K) int8, shifts_a: (M, S) uint8, bsf_a: (M, B) float32;
    codes_w: (K, N) int8, shifts_w: (S, N) uint8, bsf_w: (B, N) float32.
    Sub-group dot products run in integers, are left-shifted by
    (dmax - shift_a - shift_w), and accumulate per base group in int64. One
    float accumulation per base-group pair:
    ((acc * bsf_a) * bsf_w) * 2**-dmax, summed over base groups in ascending
    order and rounded to float32 on store.
    """
    m_dim, k_dim = codes_a.shape
    n_dim = codes_w.shape[1]
    n_sub = shifts_a.shape[1]
    n_base = bsf_a.shape[1]
    subs_per_base = base // sub
    a64 = codes_a.astype(np.int64)
    w64 = codes_w.astype(np.int64)
    sa = shifts_a.astype(np.int64)
    sw = shifts_w.astype(np.int64)
    fa = bsf_a.astype(np.float64)
    fw = bsf_w.astype(np.float64)
    pow_neg = math.ldexp(1.0, -dmax)
    out = np.zeros((m_dim, n_dim), dtype=np.float64)
    for bgi in range(n_base):
        acc = np.zeros((m_dim, n_dim), dtype=np.int64)
        for sgi in range(bgi * subs_per_base, min(n_sub, (bgi + 1) * subs_per_base)):
            k0 = sgi * sub
            k1 = min(k_dim, k0 + sub)
            part = a64[:, k0:k1] @ w64[k0:k1, :]
            sh = dmax - sa[:, sgi : sgi + 1] - sw[sgi : sgi + 1, :]
            acc += part << sh
        out += ((acc.astype(np.float64) * fa[:, bgi : bgi + 1]) * fw[bgi : bgi + 1, :]) * pow_neg
    return out.astype(np.float32)


def mp_gemm_core(a_hi, a_lo, row_exp, w_hi, w_lo, w_scale):
    """Mixed-width integer GEMM with one float scaling per output element.

    a_hi: (M, ns) int16 codes against w_hi: (ns, N) int8 codes, multiplied via
    the four MSB/LSB slice products; a_lo: (M, nl) int8 against w_lo: (nl, N)
    4-bit-range codes in single products, left-shifted by 8 on accumulation
    (narrow codes sit on the 2**(exp+8) grid). The int64 total is scaled once:
    ((acc * 2**row_exp) * w_scale), rounded to float32 on store.
    """
    a = a_hi.astype(np.int64)
    w = w_hi.astype(np.int64)
    ahh = a >> 8
    ahl = a & 0xFF
    whh = w >> 4
    whl = w & 0xF
    acc = ((ahh @ whh) << 12) + ((ahh @ whl) << 8) + ((ahl @ whh) << 4) + (ahl @ whl)
    if a_lo.shape[1]:
        acc = acc + ((a_lo.astype(np.int64) @ w_lo.astype(np.int64)) << 8)
    pow_row = np.ldexp(1.0, row_exp.astype(np.int64))[:, None]
    out = (acc.astype(np.float64) * pow_row) * w_scale.astype(np.float64)[None, :]
    return out.astype(np.float32)


def bitslice_exhaustive():
    """Check slice-product recombination against full-width multiplication.

    Runs every (16-bit, 8-bit) signed operand pair: the MSB slices are
    arithmetic shifts (sign preserved), the LSB slices zero-extended, and the
    four partial products recombine by left shifts. Returns
    (pairs_checked, failures).
    """
    a = np.arange(-32768, 32768, dtype=np.int64)
    ahh = a >> 8
    ahl = a & 0xFF
    failures = 0
    for w in range(-128, 128):
        whh = w >> 4
        whl = w & 0xF
        recombined = ((ahh * whh) << 12) + ((ahh * whl) << 8) + ((ahl * whh) << 4) + (ahl * whl)
        failures += int(np.count_nonzero(recombined != a * w))
    return 65536 * 256, failures
