"""Low-rank image restoration by rank-residual shrinkage of patch groups."""

from .denoise import DEFAULT_SCHEDULE, DenoiseConfig, denoise, denoise_nnm
from .imageio import load_image, save_image
from .jpeg import DeblockConfig, QuantizationContext, deblock, deblock_config, jpeg_simulate
from .metrics import psnr, ssim

__all__ = [
    "DEFAULT_SCHEDULE",
    "DeblockConfig",
    "DenoiseConfig",
    "QuantizationContext",
    "deblock",
    "deblock_config",
    "denoise",
    "denoise_nnm",
    "jpeg_simulate",
    "load_image",
    "psnr",
    "save_image",
    "ssim",
]

__version__ = "0.1.0"
