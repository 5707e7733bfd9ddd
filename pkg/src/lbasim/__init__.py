"""Bit-exact simulation of low bit-width accumulators for neural network training.

Modules:

* :mod:`lbasim.qformats` fixed-point and minifloat quantizers
* :mod:`lbasim.fmaq` quantized fused multiply-add and the chunked GEMM
* :mod:`lbasim.grad` straight-through estimators for the accumulator
* :mod:`lbasim.nn` MLP layers, training, zero-shot and landscape probes
* :mod:`lbasim.gates` gate-count model of a quantized FMA unit
* :mod:`lbasim.data` datasets, checkpoints and metric files
* :mod:`lbasim.cli` command-line front end
"""

from .qformats import (EventKind, FixedFormat, FloatFormat, FormatParseError, RoundMode, classify,
                       classify_array, parse_format, quantize_fixed, quantize_float)
from .fmaq import EventTrace, FmaqConfig, accumulate_chunked, fmaq, gemm_forward, gemm_forward_traced
from .grad import SteConfig, SteKind, compute_masks, gemm_backward, gemm_masks
from .gates import GateParams, gate_breakdown, gate_ratio_report
from .data import Dataset, SyntheticSpec, generate, load_idx
from .nn import (MLP, LbaLinear, Stage, TrainSchedule, TrainingDiverged, WaQuant, build_mlp, evaluate,
                 landscape_probe, stuck_underflow_rate, train, zeroshot_eval)

__version__ = "0.1.0"

__all__ = [
    "EventKind", "FixedFormat", "FloatFormat", "FormatParseError", "RoundMode", "classify", "classify_array",
    "parse_format", "quantize_fixed", "quantize_float",
    "EventTrace", "FmaqConfig", "accumulate_chunked", "fmaq", "gemm_forward", "gemm_forward_traced",
    "SteConfig", "SteKind", "compute_masks", "gemm_backward", "gemm_masks",
    "GateParams", "gate_breakdown", "gate_ratio_report",
    "Dataset", "SyntheticSpec", "generate", "load_idx",
    "MLP", "LbaLinear", "Stage", "TrainSchedule", "TrainingDiverged", "WaQuant", "build_mlp", "evaluate",
    "landscape_probe", "stuck_underflow_rate", "train", "zeroshot_eval",
]
