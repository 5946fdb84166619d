"""Dense float32 matrix primitives.

Reference GEMM with a fixed accumulation order, software binary16 rounding
helpers, seeded synthetic outlier data, and the SVT1 binary tensor file
format used by every other module.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import DataError, FileFormatError, ParameterError, ShapeError

SVT_MAGIC = b"SVT1"
SVT_DTYPE_F32 = 0
HALF_MAX = 65504.0


def as_tensor2d(x, name: str = "tensor") -> np.ndarray:
    """Validate and return ``x`` as a C-contiguous float32 2-D array.

    Rejects anything that is not two-dimensional with at least one row and
    column, and rejects NaN/Inf entries.
    """
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must have at least one row and column, got {arr.shape}")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def matmul_ref(a, b) -> np.ndarray:
    """Reference GEMM: float64 accumulation, fixed left-to-right order.

    Every downstream error measurement compares against this product. The
    result is deterministic for a given input regardless of backend or
    thread count.
    """
    a = as_tensor2d(a, "a")
    b = as_tensor2d(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return kernels().matmul_f32(a, b)


# ---------------------------------------------------------------------------
# binary16 helpers
# ---------------------------------------------------------------------------
#
# numpy's float16 conversions are software routines with round-to-nearest-even
# semantics, which keeps the scale-factor arithmetic bit-exact across
# platforms. Conversions always go float64 -> float16 in a single rounding;
# overflow saturates to the largest finite half instead of infinity.


def half_rtne(values) -> np.ndarray:
    """Round an array to binary16, ties to even, saturating at +-65504."""
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DataError("half conversion requires finite input")
    with np.errstate(over="ignore"):
        h = v.astype(np.float16)
    over = np.isinf(h)
    if np.any(over):
        h = h.copy()
        h[over] = np.copysign(HALF_MAX, v[over]).astype(np.float16)
    return h


def to_half_rtne(x: float) -> np.float16:
    """Scalar version of :func:`half_rtne`."""
    return half_rtne(np.float64(x))[()]


def half_bits(h) -> int:
    """Raw 16-bit pattern of a binary16 value."""
    return int(np.asarray(h, dtype=np.float16).view(np.uint16))


def half_from_bits(bits: int) -> np.float16:
    """binary16 value for a raw 16-bit pattern."""
    return np.asarray(np.uint16(bits)).view(np.float16)[()]


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a Gaussian matrix with amplified leading channels.

    The first ``salient_channels`` columns are multiplied by ``salient_gain``,
    which mimics activation tensors whose outliers concentrate in a few input
    channels. Identical specs produce bit-identical tensors.
    """

    rows: int
    cols: int
    seed: int
    salient_channels: int = 0
    salient_gain: float = 1.0
    base_std: float = 1.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ShapeError(f"rows/cols must be positive, got {self.rows}x{self.cols}")
        if not 0 <= self.salient_channels <= self.cols:
            raise ParameterError(f"salient_channels {self.salient_channels} not in [0, {self.cols}]")
        if self.salient_gain < 1.0:
            raise ParameterError(f"salient_gain must be >= 1, got {self.salient_gain}")
        if not self.base_std > 0.0:
            raise ParameterError(f"base_std must be > 0, got {self.base_std}")


def gen_synthetic(spec: SyntheticSpec) -> np.ndarray:
    """Draw the tensor described by ``spec`` (pure function of the spec)."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    data = rng.standard_normal((spec.rows, spec.cols)) * spec.base_std
    if spec.salient_channels:
        data[:, : spec.salient_channels] *= spec.salient_gain
    return data.astype(np.float32)


# ---------------------------------------------------------------------------
# SVT1 tensor file format
# ---------------------------------------------------------------------------
#
# bytes 0-3   magic "SVT1"
# u32 LE      dtype code (0 = float32)
# u32 LE      rows
# u32 LE      cols
# payload     rows*cols little-endian float32, row-major


def write_svt(path, tensor) -> None:
    """Write a float32 matrix in the SVT1 container."""
    t = as_tensor2d(tensor)
    with open(path, "wb") as f:
        f.write(SVT_MAGIC)
        f.write(struct.pack("<III", SVT_DTYPE_F32, t.shape[0], t.shape[1]))
        f.write(t.astype("<f4").tobytes())


def read_svt(path) -> np.ndarray:
    """Read an SVT1 file, validating magic, dtype, sizes, and finiteness."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16:
        raise FileFormatError(f"{path}: truncated header ({len(blob)} bytes)")
    if blob[:4] != SVT_MAGIC:
        raise FileFormatError(f"{path}: bad magic {blob[:4]!r}")
    dtype_code, rows, cols = struct.unpack_from("<III", blob, 4)
    if dtype_code != SVT_DTYPE_F32:
        raise FileFormatError(f"{path}: unsupported dtype code {dtype_code}")
    if rows < 1 or cols < 1:
        raise FileFormatError(f"{path}: degenerate shape {rows}x{cols}")
    expected = 16 + 4 * rows * cols
    if len(blob) != expected:
        raise FileFormatError(f"{path}: payload is {len(blob)} bytes, expected {expected}")
    data = np.frombuffer(blob, dtype="<f4", offset=16).reshape(rows, cols)
    return as_tensor2d(data, str(path))


def frexp_ceil_log2(m: np.ndarray) -> np.ndarray:
    """ceil(log2(m)) for positive entries, computed exactly via frexp.

    Entries equal to zero map to zero. Exact powers of two return their
    exponent (frexp reports mantissa 0.5 there, so the exponent is one high).
    """
    mant, ex = np.frexp(np.asarray(m, dtype=np.float64))
    out = np.where(mant == 0.5, ex - 1, ex)
    return np.where(mant == 0.0, 0, out).astype(np.int64)


def ceil_log2_scalar(x: float) -> int:
    """Scalar ceil(log2(x)) for x > 0, exact at powers of two."""
    mant, ex = math.frexp(x)
    return ex - 1 if mant == 0.5 else ex
