"""quantlab: a desk-scale laboratory for discrete representation bottlenecks.

Finite scalar quantization (fixed grid, implicit codebook, zero parameters)
against a vector quantization baseline (learned codebook with the usual life
support), plus the measurement stack: masked-schedule entropy coding,
codebook-usage census, and trade-off sweeps.
"""

from .analysis import UsageReport, codebook_usage, parameter_count, reconstruction_error
from .autodiff import (GradientError, ShapeError, Tensor, adam_step, backward,
                       init_adam_state, round_ste, ste)
from .codec import (Bitstream, MaskSchedule, R_MIN, TokenGrid, cfg_logits,
                    compress, compression_cost, cosine_mask_count, decompress,
                    deterministic_schedule, masked_sample, sample_masking_ratio)
from .fsq import (LevelsSpec, bound, codes_to_indexes, implicit_codebook,
                  indexes_to_codes, quantize, recommend_levels)
from .rangecoder import CodecError
from .tokenmodel import NeighborhoodModel, Order0Model, UniformModel, fit_order0
from .vq import (VqCodebook, VqLossWeights, ema_update, split_codebook,
                 vq_losses, vq_quantize)

__version__ = "0.1.0"

__all__ = [
    "Bitstream", "CodecError", "GradientError", "LevelsSpec", "MaskSchedule",
    "NeighborhoodModel", "Order0Model", "R_MIN", "ShapeError", "Tensor",
    "TokenGrid", "UniformModel", "UsageReport", "VqCodebook", "VqLossWeights",
    "adam_step", "backward", "bound", "cfg_logits", "codebook_usage",
    "codes_to_indexes", "compress", "compression_cost", "cosine_mask_count",
    "decompress", "deterministic_schedule", "ema_update", "fit_order0",
    "implicit_codebook", "indexes_to_codes", "init_adam_state", "masked_sample",
    "parameter_count", "quantize", "recommend_levels", "reconstruction_error",
    "round_ste", "sample_masking_ratio", "split_codebook", "ste", "vq_losses",
    "vq_quantize",
]
