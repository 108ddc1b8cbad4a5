"""CPU inference engine for attentional GRU translation models.

All linear algebra runs in one of two precision modes: 32-bit float (BLAS)
or 8-bit integer kernels with float32 outputs.  The package covers model
generation and serialization, beam-search decoding, precision-parity
analysis, and a words-per-core-second benchmark harness.
"""

__version__ = "0.1.0"

from .bench import BenchReport, PhaseTimer, profile_phases, run_benchmark
from .bleu import bleu
from .decoder import (
    BeamHypothesis,
    DecodeConfig,
    ParityReport,
    bpe_merge,
    compare_precisions,
    translate,
)
from .layers import LinearOp, Network, build_network
from .model import (
    ModelParams,
    QuantizedModel,
    generate_model,
    load_model,
    quantize_model,
    save_model,
)
from .qmath import (
    QuantizationStats,
    QuantizedMatrix,
    dequantize,
    gemm_f32,
    gemm_f32_blocked,
    qgemm,
    qgemm_panel,
    quantize,
)

__all__ = [
    "BeamHypothesis", "BenchReport", "DecodeConfig", "LinearOp", "ModelParams",
    "Network", "ParityReport", "PhaseTimer", "QuantizationStats",
    "QuantizedMatrix", "QuantizedModel", "bleu", "bpe_merge", "build_network",
    "compare_precisions", "dequantize", "gemm_f32", "gemm_f32_blocked",
    "generate_model", "load_model", "profile_phases", "qgemm", "qgemm_panel",
    "quantize", "quantize_model", "run_benchmark", "save_model", "translate",
]
