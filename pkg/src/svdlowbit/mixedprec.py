"""Mixed-width integer kernels for the low-rank projection path.

Channels identified as precision-sensitive are moved to the front by a static
permutation and computed wide (INT16 activations x INT8 weights, emulated as
four 8x4 bit slices); the remaining channels run narrow (INT8 x INT4, one
pass). Activations share one power-of-two exponent per row: sensitive codes
use the full 16-bit grid, narrow codes keep the top 8 bits of the same grid
(step 2**(exp+8)), so both lanes cover the whole row range and the narrow
lane's worst-case error is bounded by 2**-6 of the row maximum. Each weight
column shares one scale across both channel classes, so every dot product is
a single-scale integer sum - the narrow partial joins the accumulator with a
left shift of 8 - finished by exactly one float multiply.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import FileFormatError, ParameterError, ShapeError
from .tensor import as_tensor2d, frexp_ceil_log2

INT16_CODE_MAX = 32767
INT8_CODE_MAX = 127
INT4_CODE_MAX = 7

# narrow activation codes keep the top byte of the 16-bit aligned grid
NARROW_LANE_SHIFT = 8

SMP_MAGIC = b"SMP1"


class SliceMode(enum.Enum):
    """Operating mode of the time-multiplexed slice multiplier."""

    HIGH_PRECISION = "high_precision"  # 16x8 via four 8x4 slice products
    LOW_PRECISION = "low_precision"  # 8x4 in a single pass

    @property
    def slice_passes(self) -> int:
        return 4 if self is SliceMode.HIGH_PRECISION else 1


@dataclass(frozen=True)
class MpLayout:
    """Static channel reordering that puts sensitive channels first.

    ``permutation[pos]`` is the original channel index occupying position
    ``pos`` after reordering; the first ``n_sensitive`` positions are the
    sensitive channels in their given order, the rest follow in ascending
    original order.
    """

    sensitive_in: np.ndarray
    permutation: np.ndarray
    d_in: int

    @property
    def n_sensitive(self) -> int:
        return int(self.sensitive_in.shape[0])

    def same_as(self, other: "MpLayout") -> bool:
        return self.d_in == other.d_in and np.array_equal(self.permutation, other.permutation)


def build_mp_layout(sensitive, d_in: int) -> MpLayout:
    """Build the sensitive-first permutation over ``d_in`` channels."""
    if d_in < 1:
        raise ShapeError(f"d_in must be >= 1, got {d_in}")
    idx = np.asarray(list(sensitive), dtype=np.int64)
    if idx.size:
        if idx.min() < 0 or idx.max() >= d_in:
            raise ParameterError(f"sensitive indices out of range [0, {d_in})")
        if np.unique(idx).size != idx.size:
            raise ParameterError("sensitive indices contain duplicates")
    rest = np.setdiff1d(np.arange(d_in, dtype=np.int64), idx)
    return MpLayout(sensitive_in=idx, permutation=np.concatenate([idx, rest]), d_in=d_in)


@dataclass(frozen=True)
class QuantizedLowRank:
    """Offline-quantized weights: wide codes for sensitive input channels.

    Rows are stored already permuted (sensitive first). ``w_scale`` holds one
    float32 scale per output column shared by both channel classes.
    """

    w_hi: np.ndarray  # int8, (n_sensitive, d_out)
    w_lo: np.ndarray  # int8 holding 4-bit codes, (d_in - n_sensitive, d_out)
    w_scale: np.ndarray  # float32, (d_out,)
    layout: MpLayout

    @property
    def d_out(self) -> int:
        return int(self.w_scale.shape[0])


@dataclass(frozen=True)
class AlignedActivations:
    """Online-quantized activations sharing one exponent per row.

    Sensitive codes dequantize as code * 2**shared_exp; narrow codes sit 8
    bits coarser, code * 2**(shared_exp + 8), so both lanes span the full
    row range.
    """

    a_hi: np.ndarray  # int16, (rows, n_sensitive)
    a_lo: np.ndarray  # int8, (rows, d_in - n_sensitive)
    shared_exp: np.ndarray  # int32, (rows,)
    layout: MpLayout

    @property
    def rows(self) -> int:
        return int(self.shared_exp.shape[0])


def quantize_lowrank_weights(w, layout: MpLayout) -> QuantizedLowRank:
    """Quantize ``w`` (d_in x d_out) offline at one shared scale per column.

    scale_j = max(max|w_sensitive,j| / 127, max|w_rest,j| / 7); sensitive rows
    round to 8-bit codes, the rest to 4-bit codes. An all-zero column gets
    scale 0 and zero codes.
    """
    w = as_tensor2d(w, "w")
    if w.shape[0] != layout.d_in:
        raise ShapeError(f"weight has {w.shape[0]} input channels, layout expects {layout.d_in}")
    ns = layout.n_sensitive
    wp = w.astype(np.float64)[layout.permutation, :]
    hi = wp[:ns]
    lo = wp[ns:]
    d_out = w.shape[1]
    m_hi = np.abs(hi).max(axis=0) if ns else np.zeros(d_out)
    m_lo = np.abs(lo).max(axis=0) if lo.shape[0] else np.zeros(d_out)
    scale = np.maximum(m_hi / float(INT8_CODE_MAX), m_lo / float(INT4_CODE_MAX)).astype(np.float32)
    s64 = scale.astype(np.float64)
    safe = np.where(s64 > 0.0, s64, 1.0)
    w_hi = np.clip(np.rint(hi / safe), -INT8_CODE_MAX, INT8_CODE_MAX).astype(np.int8)
    w_lo = np.clip(np.rint(lo / safe), -INT4_CODE_MAX, INT4_CODE_MAX).astype(np.int8)
    return QuantizedLowRank(w_hi=w_hi, w_lo=w_lo, w_scale=scale, layout=layout)


def align_activations(x, layout: MpLayout) -> AlignedActivations:
    """Quantize ``x`` (rows x d_in) online with one shared exponent per row.

    The exponent maps the row maximum near 2**15. Sensitive channels round on
    the 2**exp grid with 16-bit bounds; the rest round on the 2**(exp+8) grid
    with 8-bit bounds, which covers the same range at 256x coarser step. An
    all-zero row gets exponent 0 and zero codes.
    """
    x = as_tensor2d(x, "x")
    if x.shape[1] != layout.d_in:
        raise ShapeError(f"activations have {x.shape[1]} channels, layout expects {layout.d_in}")
    ns = layout.n_sensitive
    xp = x.astype(np.float64)[:, layout.permutation]
    m = np.abs(xp).max(axis=1)
    e = frexp_ceil_log2(m) - 15
    e = np.where(m > 0.0, e, 0).astype(np.int32)
    e64 = e[:, None].astype(np.int64)
    hi_codes = np.rint(np.ldexp(xp[:, :ns], -e64))
    lo_codes = np.rint(np.ldexp(xp[:, ns:], -(e64 + NARROW_LANE_SHIFT)))
    a_hi = np.clip(hi_codes, -INT16_CODE_MAX, INT16_CODE_MAX).astype(np.int16)
    a_lo = np.clip(lo_codes, -INT8_CODE_MAX, INT8_CODE_MAX).astype(np.int8)
    return AlignedActivations(a_hi=a_hi, a_lo=a_lo, shared_exp=e, layout=layout)


def dequantize_lowrank_weights(q: QuantizedLowRank) -> np.ndarray:
    """Reconstruct the float32 weight matrix in original channel order."""
    codes = np.concatenate([q.w_hi.astype(np.float64), q.w_lo.astype(np.float64)], axis=0)
    permuted = codes * q.w_scale.astype(np.float64)[None, :]
    out = np.empty_like(permuted)
    out[q.layout.permutation, :] = permuted
    return out.astype(np.float32)


def dequantize_activations(a: AlignedActivations) -> np.ndarray:
    """Reconstruct float32 activations in original channel order."""
    e64 = a.shared_exp[:, None].astype(np.int64)
    hi = np.ldexp(a.a_hi.astype(np.float64), e64)
    lo = np.ldexp(a.a_lo.astype(np.float64), e64 + NARROW_LANE_SHIFT)
    permuted = np.concatenate([hi, lo], axis=1)
    out = np.empty_like(permuted)
    out[:, a.layout.permutation] = permuted
    return out.astype(np.float32)


def bitslice_mac(a: int, w: int, mode: SliceMode = SliceMode.HIGH_PRECISION) -> int:
    """One multiply on the reconfigurable slice unit.

    High-precision mode splits ``a`` into a sign-extended high byte and a
    zero-extended low byte, ``w`` into a sign-extended high nibble and a
    zero-extended low nibble, and recombines the four partial products by
    left shifts; the result equals full-width a*w exactly. Low-precision mode
    is a single narrow product.
    """
    a = int(a)
    w = int(w)
    if mode is SliceMode.LOW_PRECISION:
        if not (-INT8_CODE_MAX - 1 <= a <= INT8_CODE_MAX and -INT4_CODE_MAX - 1 <= w <= INT4_CODE_MAX):
            raise ParameterError(f"low-precision operands out of range: a={a}, w={w}")
        return a * w
    if mode is not SliceMode.HIGH_PRECISION:
        raise ParameterError(f"unknown slice mode {mode!r}")
    if not (-32768 <= a <= 32767 and -128 <= w <= 127):
        raise ParameterError(f"high-precision operands out of range: a={a}, w={w}")
    a_hi = a >> 8
    a_lo = a & 0xFF
    w_hi = w >> 4
    w_lo = w & 0xF
    return ((a_hi * w_hi) << 12) + ((a_hi * w_lo) << 8) + ((a_lo * w_hi) << 4) + (a_lo * w_lo)


def mp_gemm(acts: AlignedActivations, w: QuantizedLowRank) -> np.ndarray:
    """Mixed-width GEMM: integer accumulation, one float scaling per output.

    Sensitive channels multiply in high-precision slice mode; narrow channels
    multiply in low-precision mode and join the accumulator left-shifted by 8
    (their codes sit on the coarser grid). The int64 total is scaled once by
    2**shared_exp * w_scale. The integer part is exact, so results are
    bit-identical under any execution order.
    """
    if not acts.layout.same_as(w.layout):
        raise ParameterError("activation and weight layouts differ")
    return kernels().mp_gemm_core(
        np.ascontiguousarray(acts.a_hi),
        np.ascontiguousarray(acts.a_lo),
        np.ascontiguousarray(acts.shared_exp),
        np.ascontiguousarray(w.w_hi),
        np.ascontiguousarray(w.w_lo),
        np.ascontiguousarray(w.w_scale),
    )


def lowrank_forward(x, l1q: QuantizedLowRank, l2q: QuantizedLowRank) -> np.ndarray:
    """Two-stage projection: align + mixed GEMM through l1, then through l2."""
    x = as_tensor2d(x, "x")
    if x.shape[1] != l1q.layout.d_in:
        raise ShapeError(f"input has {x.shape[1]} channels, l1 expects {l1q.layout.d_in}")
    if l1q.d_out != l2q.layout.d_in:
        raise ShapeError(f"l1 outputs {l1q.d_out} dims, l2 expects {l2q.layout.d_in}")
    h = mp_gemm(align_activations(x, l1q.layout), l1q)
    return mp_gemm(align_activations(h, l2q.layout), l2q)


# ---------------------------------------------------------------------------
# SMP1 container
# ---------------------------------------------------------------------------
#
# bytes 0-3  magic "SMP1"
# u32 x3     d_in, d_out, n_sensitive
# payload    permutation (d_in x u32), per-column scales (d_out x f32),
#            8-bit codes (n_sensitive * d_out bytes), 4-bit codes packed two
#            per byte (low nibble first); all little-endian


def write_smp(path, q: QuantizedLowRank) -> None:
    """Serialize quantized low-rank weights."""
    from .hgq import _pack_nibbles  # same nibble layout as the HGQ container

    layout = q.layout
    with open(path, "wb") as f:
        f.write(SMP_MAGIC)
        f.write(struct.pack("<III", layout.d_in, q.d_out, layout.n_sensitive))
        f.write(layout.permutation.astype("<u4").tobytes())
        f.write(q.w_scale.astype("<f4").tobytes())
        f.write(q.w_hi.astype(np.int8).tobytes())
        f.write(_pack_nibbles(q.w_lo))


def read_smp(path) -> QuantizedLowRank:
    """Load quantized low-rank weights."""
    from .hgq import _unpack_nibbles

    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:4] != SMP_MAGIC:
        raise FileFormatError(f"{path}: bad magic or truncated header")
    d_in, d_out, ns = struct.unpack_from("<III", blob, 4)
    if ns > d_in:
        raise FileFormatError(f"{path}: n_sensitive {ns} exceeds d_in {d_in}")
    nl = d_in - ns
    offset = 16
    perm_bytes = 4 * d_in
    scale_bytes = 4 * d_out
    hi_bytes = ns * d_out
    lo_bytes = (nl * d_out + 1) // 2
    expected = offset + perm_bytes + scale_bytes + hi_bytes + lo_bytes
    if len(blob) != expected:
        raise FileFormatError(f"{path}: payload is {len(blob)} bytes, expected {expected}")
    perm = np.frombuffer(blob, dtype="<u4", count=d_in, offset=offset).astype(np.int64)
    if np.unique(perm).size != d_in or perm.min() < 0 or perm.max() >= d_in:
        raise FileFormatError(f"{path}: permutation is not a bijection on [0, {d_in})")
    offset += perm_bytes
    scale = np.frombuffer(blob, dtype="<f4", count=d_out, offset=offset).copy()
    offset += scale_bytes
    w_hi = np.frombuffer(blob, dtype=np.int8, count=hi_bytes, offset=offset).reshape(ns, d_out).copy()
    offset += hi_bytes
    w_lo = _unpack_nibbles(blob[offset:], nl * d_out).reshape(nl, d_out)
    layout = MpLayout(sensitive_in=perm[:ns].copy(), permutation=perm, d_in=d_in)
    return QuantizedLowRank(w_hi=w_hi, w_lo=w_lo, w_scale=scale, layout=layout)
