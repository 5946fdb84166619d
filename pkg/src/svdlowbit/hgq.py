"""Hierarchical group quantization of a matrix along its reduction axis.

Codes are symmetric 4-bit integers. Each coarse base group (default 128
elements) carries one binary16 base scaling factor derived from its max-abs;
each fine sub-group (default 32 elements) carries a 2-bit power-of-two
downshift that tightens the effective scale toward the local maximum. The
fused GEMM accumulates sub-group dot products in integers, aligns them with
left shifts, and spends only one floating-point accumulation per base-group
pair - the expensive operation that coarse grouping exists to amortize.

Single-level baselines (one half-precision scale per vector or per fixed-size
group) reuse the same container with all shifts at zero, so the same fused
GEMM and the same counters apply to every scheme.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import FileFormatError, ParameterError, ShapeError
from .tensor import as_tensor2d, half_rtne

GROUP_AXES = ("rows", "cols")
HGQ_MAGIC = b"HGQ1"


@dataclass(frozen=True)
class HgqConfig:
    """Group sizes and bit widths for the two-level quantizer."""

    sub_group: int = 32
    base_group: int = 128
    shift_bits: int = 2
    code_bits: int = 4

    def __post_init__(self):
        if self.sub_group < 1:
            raise ParameterError(f"sub_group must be >= 1, got {self.sub_group}")
        if self.base_group < self.sub_group or self.base_group % self.sub_group:
            raise ParameterError(
                f"base_group {self.base_group} must be a multiple of sub_group {self.sub_group}"
            )
        if self.shift_bits < 1:
            raise ParameterError(f"shift_bits must be >= 1, got {self.shift_bits}")
        if not 2 <= self.code_bits <= 8:
            raise ParameterError(f"code_bits must be in [2, 8], got {self.code_bits}")

    @property
    def max_shift(self) -> int:
        return (1 << self.shift_bits) - 1

    @property
    def code_max(self) -> int:
        # symmetric range: the most negative code is excluded
        return (1 << (self.code_bits - 1)) - 1

    @property
    def max_total_shift(self) -> int:
        # largest combined activation+weight downshift the GEMM must realign
        return 2 * self.max_shift


@dataclass(frozen=True)
class HgqTensor:
    """Quantized matrix: codes in the original orientation plus group metadata.

    ``axis`` names the grouping (reduction) axis. For axis='cols' the groups
    run along each row and shifts/bsf have shapes (rows, S) / (rows, B); for
    axis='rows' they run down each column with shapes (S, cols) / (B, cols).
    """

    codes: np.ndarray  # int8
    shifts: np.ndarray  # uint8, one per sub-group
    bsf: np.ndarray  # float16, one per base group
    axis: str
    config: HgqConfig

    @property
    def shape(self) -> tuple[int, int]:
        return self.codes.shape


@dataclass(frozen=True)
class HgqGemmStats:
    """Event tallies for one fused GEMM call (mergeable by addition)."""

    int_accumulations: int
    shift_alignments: int
    fp_accumulations: int
    int_mac_count: int

    def __add__(self, other: "HgqGemmStats") -> "HgqGemmStats":
        return HgqGemmStats(
            self.int_accumulations + other.int_accumulations,
            self.shift_alignments + other.shift_alignments,
            self.fp_accumulations + other.fp_accumulations,
            self.int_mac_count + other.int_mac_count,
        )


def _group_quantize(view: np.ndarray, sub: int, base: int, max_shift: int, code_max: int):
    """Quantize along the last axis of ``view`` (rows x K, float32).

    Returns (codes int8 (rows, K), shifts uint8 (rows, S), bsf float16
    (rows, B)). K may leave a ragged trailing sub/base group; ragged tails are
    handled by zero padding, which cannot change any group maximum.
    """
    rows, k_len = view.shape
    n_sub = -(-k_len // sub)
    subs_per_base = base // sub
    pad = n_sub * sub - k_len
    v64 = view.astype(np.float64)
    if pad:
        v64 = np.pad(v64, ((0, 0), (0, pad)))

    sub_abs = np.abs(v64).reshape(rows, n_sub, sub)
    m_sub = sub_abs.max(axis=2)  # (rows, S)
    base_starts = np.arange(0, n_sub, subs_per_base)
    m_base = np.maximum.reduceat(m_sub, base_starts, axis=1)  # (rows, B)

    bsf = half_rtne(m_base / float(code_max))
    bsf64 = bsf.astype(np.float64)

    sub_to_base = np.arange(n_sub) // subs_per_base
    mb_sub = m_base[:, sub_to_base]  # base max seen by each sub-group

    # shift d = clamp(floor(log2(m_base / m_sub)), 0, max_shift), exactly:
    # count how many doublings of m_sub still fit under m_base. Power-of-two
    # scaling of a float is exact, so the comparisons carry no rounding.
    shifts = np.zeros((rows, n_sub), dtype=np.int64)
    positive = m_sub > 0.0
    for d in range(1, max_shift + 1):
        shifts += (positive & ((m_sub * float(2**d)) <= mb_sub)).astype(np.int64)

    scale = np.ldexp(bsf64[:, sub_to_base], -shifts)  # (rows, S), exact downshift
    per_elem = np.repeat(scale, sub, axis=1)
    safe = np.where(per_elem > 0.0, per_elem, 1.0)
    codes = np.rint(v64 / safe)
    codes = np.clip(codes, -code_max, code_max).astype(np.int8)
    if pad:
        codes = codes[:, :k_len]
    return codes, shifts.astype(np.uint8), bsf


def hgq_quantize(x, cfg: HgqConfig = HgqConfig(), axis: str = "cols") -> HgqTensor:
    """Two-level quantization of ``x`` along the grouping axis.

    The grouping-axis length must be a multiple of the sub-group size; a
    trailing partial base group is fine and simply acts as a smaller base
    group with its own scale.
    """
    x = as_tensor2d(x, "x")
    if axis not in GROUP_AXES:
        raise ParameterError(f"axis must be one of {GROUP_AXES}, got {axis!r}")
    view = x if axis == "cols" else np.ascontiguousarray(x.T)
    k_len = view.shape[1]
    if k_len % cfg.sub_group:
        raise ShapeError(
            f"grouping axis length {k_len} is not a multiple of sub_group {cfg.sub_group}"
        )
    codes, shifts, bsf = _group_quantize(view, cfg.sub_group, cfg.base_group, cfg.max_shift, cfg.code_max)
    if axis == "rows":
        codes = np.ascontiguousarray(codes.T)
        shifts = np.ascontiguousarray(shifts.T)
        bsf = np.ascontiguousarray(bsf.T)
    return HgqTensor(codes=codes, shifts=shifts, bsf=bsf, axis=axis, config=cfg)


def baseline_quantize(x, mode: str, axis: str = "cols", group: int | None = None,
                      shift_bits: int = 2, code_bits: int = 4) -> HgqTensor:
    """Single-level quantization: one binary16 scale per group, shifts all zero.

    ``mode='per_tensor'`` uses one group spanning the whole grouping axis (one
    scale per vector); ``mode='per_group'`` uses ``group``-element runs, with a
    ragged trailing group treated as a smaller group. The result is an
    :class:`HgqTensor` whose sub and base group sizes coincide, so it feeds the
    same fused GEMM as the hierarchical scheme.
    """
    x = as_tensor2d(x, "x")
    if axis not in GROUP_AXES:
        raise ParameterError(f"axis must be one of {GROUP_AXES}, got {axis!r}")
    view = x if axis == "cols" else np.ascontiguousarray(x.T)
    k_len = view.shape[1]
    if mode == "per_tensor":
        g = k_len
    elif mode == "per_group":
        if group is None or group < 1:
            raise ParameterError("per_group mode requires a positive group size")
        g = min(group, k_len)
    else:
        raise ParameterError(f"mode must be 'per_tensor' or 'per_group', got {mode!r}")
    cfg = HgqConfig(sub_group=g, base_group=g, shift_bits=shift_bits, code_bits=code_bits)
    codes, shifts, bsf = _group_quantize(view, g, g, cfg.max_shift, cfg.code_max)
    if axis == "rows":
        codes = np.ascontiguousarray(codes.T)
        shifts = np.ascontiguousarray(shifts.T)
        bsf = np.ascontiguousarray(bsf.T)
    return HgqTensor(codes=codes, shifts=shifts, bsf=bsf, axis=axis, config=cfg)


def hgq_dequantize(t: HgqTensor) -> np.ndarray:
    """Reconstruct float32 values: code * bsf * 2**-shift (exact in float32)."""
    cfg = t.config
    codes = t.codes if t.axis == "cols" else t.codes.T
    shifts = t.shifts if t.axis == "cols" else t.shifts.T
    bsf = t.bsf if t.axis == "cols" else t.bsf.T
    rows, k_len = codes.shape
    n_sub = shifts.shape[1]
    sub_to_base = np.arange(n_sub) // (cfg.base_group // cfg.sub_group)
    scale = np.ldexp(bsf.astype(np.float64)[:, sub_to_base], -shifts.astype(np.int64))
    per_elem = np.repeat(scale, cfg.sub_group, axis=1)[:, :k_len]
    out = (codes.astype(np.float64) * per_elem).astype(np.float32)
    return out if t.axis == "cols" else np.ascontiguousarray(out.T)


def hgq_gemm(a: HgqTensor, w: HgqTensor) -> tuple[np.ndarray, HgqGemmStats]:
    """Fused GEMM over quantized operands.

    ``a`` must be grouped along its columns and ``w`` along its rows with the
    same configuration. Integer arithmetic is exact; the only floating-point
    rounding is the one accumulation per base-group pair, performed in a
    fixed ascending order so the result is identical at any thread count.
    """
    if a.axis != "cols" or w.axis != "rows":
        raise ParameterError(
            f"operands must be grouped a=cols/w=rows, got a={a.axis!r} w={w.axis!r}"
        )
    if a.config != w.config:
        raise ParameterError(f"config mismatch: {a.config} vs {w.config}")
    m_dim, k_dim = a.shape
    k_dim_w, n_dim = w.shape
    if k_dim != k_dim_w:
        raise ShapeError(f"reduction lengths differ: {a.shape} x {w.shape}")
    cfg = a.config
    out = kernels().hgq_gemm_core(
        np.ascontiguousarray(a.codes),
        np.ascontiguousarray(a.shifts),
        np.ascontiguousarray(a.bsf.astype(np.float32)),
        np.ascontiguousarray(w.codes),
        np.ascontiguousarray(w.shifts),
        np.ascontiguousarray(w.bsf.astype(np.float32)),
        cfg.sub_group,
        cfg.base_group,
        cfg.max_total_shift,
    )
    n_sub = a.shifts.shape[1]
    n_base = a.bsf.shape[1]
    outputs = m_dim * n_dim
    stats = HgqGemmStats(
        int_accumulations=outputs * n_sub,
        shift_alignments=outputs * n_sub,
        fp_accumulations=outputs * n_base,
        int_mac_count=outputs * k_dim,
    )
    return out, stats


# ---------------------------------------------------------------------------
# HGQ1 container
# ---------------------------------------------------------------------------
#
# bytes 0-3  magic "HGQ1"
# u32 x4     sub_group, base_group, shift_bits, code_bits
# u32 x3     rows, cols, axis (0 = cols, 1 = rows)
# payload    codes packed two per byte (low nibble first, two's complement
#            nibbles), shifts packed four per byte (2-bit fields, low bits
#            first), base scales as raw little-endian 16-bit patterns


def _pack_nibbles(codes: np.ndarray) -> bytes:
    flat = codes.astype(np.int64).ravel()
    if flat.size % 2:
        flat = np.concatenate([flat, np.zeros(1, dtype=np.int64)])
    lo = flat[0::2] & 0xF
    hi = flat[1::2] & 0xF
    return (lo | (hi << 4)).astype(np.uint8).tobytes()


def _unpack_nibbles(blob: bytes, count: int) -> np.ndarray:
    raw = np.frombuffer(blob, dtype=np.uint8)
    lo = raw & 0xF
    hi = raw >> 4
    vals = np.empty(raw.size * 2, dtype=np.int64)
    vals[0::2] = lo
    vals[1::2] = hi
    vals = vals[:count]
    return np.where(vals >= 8, vals - 16, vals).astype(np.int8)


def _pack_crumbs(shifts: np.ndarray) -> bytes:
    flat = shifts.astype(np.int64).ravel()
    pad = (-flat.size) % 4
    if pad:
        flat = np.concatenate([flat, np.zeros(pad, dtype=np.int64)])
    quads = flat.reshape(-1, 4)
    packed = quads[:, 0] | (quads[:, 1] << 2) | (quads[:, 2] << 4) | (quads[:, 3] << 6)
    return packed.astype(np.uint8).tobytes()


def _unpack_crumbs(blob: bytes, count: int) -> np.ndarray:
    raw = np.frombuffer(blob, dtype=np.uint8).astype(np.int64)
    vals = np.empty(raw.size * 4, dtype=np.int64)
    for i in range(4):
        vals[i::4] = (raw >> (2 * i)) & 0x3
    return vals[:count].astype(np.uint8)


def write_hgq(path, t: HgqTensor) -> None:
    """Serialize an HgqTensor; requires the default 4-bit codes / 2-bit shifts."""
    cfg = t.config
    if cfg.code_bits != 4 or cfg.shift_bits != 2:
        raise ParameterError(
            f"container supports code_bits=4/shift_bits=2, got {cfg.code_bits}/{cfg.shift_bits}"
        )
    rows, cols = t.shape
    axis_code = 0 if t.axis == "cols" else 1
    with open(path, "wb") as f:
        f.write(HGQ_MAGIC)
        f.write(struct.pack("<IIII", cfg.sub_group, cfg.base_group, cfg.shift_bits, cfg.code_bits))
        f.write(struct.pack("<III", rows, cols, axis_code))
        f.write(_pack_nibbles(t.codes))
        f.write(_pack_crumbs(t.shifts))
        f.write(t.bsf.astype("<f2").tobytes())


def read_hgq(path) -> HgqTensor:
    """Load an HgqTensor from its container."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 32:
        raise FileFormatError(f"{path}: truncated header")
    if blob[:4] != HGQ_MAGIC:
        raise FileFormatError(f"{path}: bad magic {blob[:4]!r}")
    sub, base, shift_bits, code_bits = struct.unpack_from("<IIII", blob, 4)
    rows, cols, axis_code = struct.unpack_from("<III", blob, 20)
    if axis_code not in (0, 1):
        raise FileFormatError(f"{path}: bad axis code {axis_code}")
    axis = "cols" if axis_code == 0 else "rows"
    cfg = HgqConfig(sub_group=sub, base_group=base, shift_bits=shift_bits, code_bits=code_bits)
    k_len = cols if axis == "cols" else rows
    other = rows if axis == "cols" else cols
    n_sub = -(-k_len // sub)
    n_base = -(-k_len // base)
    n_codes = rows * cols
    codes_bytes = (n_codes + 1) // 2
    shift_count = other * n_sub
    shift_bytes = (shift_count + 3) // 4
    bsf_count = other * n_base
    offset = 32
    expected = offset + codes_bytes + shift_bytes + 2 * bsf_count
    if len(blob) != expected:
        raise FileFormatError(f"{path}: payload is {len(blob)} bytes, expected {expected}")
    codes = _unpack_nibbles(blob[offset : offset + codes_bytes], n_codes).reshape(rows, cols)
    offset += codes_bytes
    shifts = _unpack_crumbs(blob[offset : offset + shift_bytes], shift_count)
    offset += shift_bytes
    bsf = np.frombuffer(blob, dtype="<f2", count=bsf_count, offset=offset)
    if axis == "cols":
        shifts = shifts.reshape(other, n_sub)
        bsf = bsf.reshape(other, n_base)
    else:
        shifts = shifts.reshape(n_sub, other)
        bsf = bsf.reshape(n_base, other)
    return HgqTensor(codes=codes, shifts=shifts, bsf=bsf.copy(), axis=axis, config=cfg)
