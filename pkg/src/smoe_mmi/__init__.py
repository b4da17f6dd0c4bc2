"""Steered mixture-of-experts block models and multi-model image denoising."""
from .core import (
    BlockData,
    KernelParams,
    SMoEModel,
    eval_kernel,
    gating_centroids,
    gating_weights,
    match_kernels,
    param_names,
    permute_kernels,
    pixel_coords,
    predict,
    predict_block,
)
from .fitter import FitConfig, FitReport, fit_block, grad_loss, init_model, loss_mse
from .fusion import (
    FusionWeights,
    average_parameters,
    average_predictions,
    gating_mass,
    reliability_weights,
)
from .image_io import FormatError, load_image, save_image
from .metrics import psnr, ssim
from .noise import NoiseSpec, add_gaussian, add_noise, add_speckle
from .pipeline import (
    BlockMatchConfig,
    PipelineConfig,
    PixelAccumulator,
    block_match,
    bm_smoe_denoise,
    denoise,
    extract_blocks,
    s_smoe_denoise,
)

__version__ = "0.1.0"
