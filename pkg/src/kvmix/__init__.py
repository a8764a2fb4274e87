"""Norm-aware mixed-precision quantization analysis for transformer KV caches."""

__version__ = "0.1.0"

from .allocator import BitAllocation, allocate, allocate_for_dump, bit_delta
from .errors import (
    AllocationError,
    ConvergenceError,
    DataError,
    FormatError,
    KVMixError,
    LengthError,
    ParameterError,
    SizeError,
    SpecError,
    WriteError,
)
from .metrics import (
    ErrorRecord,
    bit_sweep,
    evaluate_dump,
    frobenius_bound,
    mse,
    spectral_bound,
    sweep_dump,
    verify_bounds,
)
from .propagation import (
    LayerStack,
    PropagationTrace,
    amplification_curve,
    forward,
    propagate_with_quantization,
)
from .quantizer import (
    QuantizedTensor,
    compression_ratio,
    dequantize,
    pack_codes,
    quantize,
    unpack_codes,
)
from .spectral import (
    LayerAggregate,
    SpectrumReport,
    analyze_dump,
    frobenius_norm,
    rank_estimate,
    singular_values,
    spectral_norm,
    svd,
)
from .tensor import (
    KVDump,
    SyntheticSpec,
    generate_synthetic,
    read_kvdump,
    synthesize_dump,
    synthesize_kv_pair,
    write_kvdump,
)
