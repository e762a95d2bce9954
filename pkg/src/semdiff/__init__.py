"""Semantic diffusion: guided explicit diffusion, difference convolutions with
hand-derived gradients, a diffusion-style network neck, segmentation metrics,
and a desk-scale benchmark comparing neck variants.
"""

from .diffusion import DiffusionSchedule, DiffusivityConfig, diffuse, diffusion_step, diffusivity
from .metrics import boundary_fscore, confusion_matrix, miou
from .operators import SdcKernel, cdc2d, conv2d, flop_estimate, sdc2d, semantic_similarity
from .sdn import SdnParams, as_diffusion_step, sdn_backward, sdn_forward

__all__ = [
    "DiffusionSchedule",
    "DiffusivityConfig",
    "SdcKernel",
    "SdnParams",
    "as_diffusion_step",
    "boundary_fscore",
    "cdc2d",
    "confusion_matrix",
    "conv2d",
    "diffuse",
    "diffusion_step",
    "diffusivity",
    "flop_estimate",
    "miou",
    "sdc2d",
    "sdn_backward",
    "sdn_forward",
    "semantic_similarity",
]
