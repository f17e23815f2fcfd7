"""Training-free sensitivity-proxy discovery for mixed-precision quantization."""

__version__ = "0.1.0"

from .smallnet import (Dataset, Layer, LayerMeta, Model, accuracy, forward,
                       layer_inventory, load_dataset, load_model)
from .quantsim import (BitAssignment, CalibRanges, CostReport,
                       calibrate_activation_ranges, cost, fake_quant_forward,
                       layer_quant_error, quantize_tensor, quantized_accuracy)
from .dsl import ProxyCandidate, evaluate, parse, print_canonical
from .stats import LayerStats, builtin_norm_entropy_decay, builtin_ompq, \
    compute_layer_stats
from .allocator import AllocationRequest, allocate, validate_assignment
from .fitness import CandidateEvaluator, EvaluatedCandidate, kendall, novelty, \
    spearman
from .evolve import RunConfig, RunResult, run

__all__ = [
    "Dataset", "Layer", "LayerMeta", "Model", "accuracy", "forward",
    "layer_inventory", "load_dataset", "load_model",
    "BitAssignment", "CalibRanges", "CostReport",
    "calibrate_activation_ranges", "cost", "fake_quant_forward",
    "layer_quant_error", "quantize_tensor", "quantized_accuracy",
    "ProxyCandidate", "evaluate", "parse", "print_canonical",
    "LayerStats", "builtin_norm_entropy_decay", "builtin_ompq",
    "compute_layer_stats",
    "AllocationRequest", "allocate", "validate_assignment",
    "CandidateEvaluator", "EvaluatedCandidate", "kendall", "novelty",
    "spearman",
    "RunConfig", "RunResult", "run",
]
