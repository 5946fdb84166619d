"""svdlowbit: low-rank weight decomposition with low-bit group quantization.

Kernels exist twice - a compiled extension and a numpy fallback with
identical bit-level semantics - selected at import (see
``svdlowbit.backend_name`` and the ``SVDLOWBIT_KERNELS`` environment
variable).
"""

from ._backend import BACKEND as backend_name
from ._backend import available_backends
from .cost import (
    CostCounters,
    CostTable,
    EventCost,
    compare_hgq,
    compare_lowrank,
    default_cost_table,
    estimate,
    load_cost_table,
)
from .errors import DataError, FileFormatError, ParameterError, ShapeError
from .hgq import (
    HgqConfig,
    HgqGemmStats,
    HgqTensor,
    baseline_quantize,
    hgq_dequantize,
    hgq_gemm,
    hgq_quantize,
    read_hgq,
    write_hgq,
)
from .mixedprec import (
    AlignedActivations,
    MpLayout,
    QuantizedLowRank,
    SliceMode,
    align_activations,
    bitslice_mac,
    build_mp_layout,
    dequantize_activations,
    dequantize_lowrank_weights,
    lowrank_forward,
    mp_gemm,
    quantize_lowrank_weights,
    read_smp,
    write_smp,
)
from .pipeline import (
    DEFAULT_BASELINES,
    KNOWN_SCENARIOS,
    RunConfig,
    SyntheticLayerSpec,
    make_synthetic_layer,
    run_baselines,
    run_decomposed_layer,
    selftest,
)
from .svd import (
    DecomposedWeight,
    LowRankFactors,
    SaliencyReport,
    build_saliency_report,
    decompose,
    identify_l1_sensitive,
    jacobi_svd,
    l2_sensitive_indices,
    read_decomposition,
    truncated_svd,
    write_decomposition,
)
from .tensor import (
    SyntheticSpec,
    as_tensor2d,
    gen_synthetic,
    half_bits,
    half_from_bits,
    half_rtne,
    matmul_ref,
    read_svt,
    to_half_rtne,
    write_svt,
)

__version__ = "0.1.0"
