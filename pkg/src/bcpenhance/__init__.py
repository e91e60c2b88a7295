"""Low-light enhancement from a bright channel prior with thermal attention.

The pipeline estimates an initial illumination map from the visible frame,
refines it under a matting-Laplacian smoothness prior (directly, or with a
small attention-gated encoder-decoder), and inverts the image-formation
model to recover the enhanced image.
"""

__version__ = "0.1.0"

from .attention import AttentionMap, attention_pyramid, build_attention
from .detector import DetectorLossProvider, StubDetector, TotalLoss, stub_detector, total_loss
from .enhance import EnhanceResult, PipelineConfig, enhance_pair, recover, resynthesize
from .image import PixelIndex, RasterImage, load_image, resize_nearest, rgb_to_hsv_v, save_image
from .laplacian import LossBreakdown, SparseAffinity, bcp_loss, bcp_loss_grad, build_matting_laplacian, smoothness_energy
from .network import NetworkParams, TrainConfig, backward, forward, load_checkpoint, save_checkpoint, train
from .prior import (
    AmbientLight,
    IlluminationMap,
    PatchSpec,
    bright_channel,
    estimate_ambient,
    initial_illumination,
)
from .solver import ConvergenceError, SolverConfig, cg_solve, refine_illumination

__all__ = [
    "AmbientLight", "AttentionMap", "ConvergenceError", "DetectorLossProvider", "EnhanceResult",
    "IlluminationMap", "LossBreakdown", "NetworkParams", "PatchSpec", "PipelineConfig", "PixelIndex",
    "RasterImage", "SolverConfig", "SparseAffinity", "StubDetector", "TotalLoss", "TrainConfig",
    "attention_pyramid", "backward", "bcp_loss", "bcp_loss_grad", "bright_channel", "build_attention",
    "build_matting_laplacian", "cg_solve", "enhance_pair", "estimate_ambient", "forward",
    "initial_illumination", "load_checkpoint", "load_image", "recover", "refine_illumination",
    "resize_nearest", "resynthesize", "rgb_to_hsv_v", "save_checkpoint", "save_image",
    "smoothness_energy", "stub_detector", "total_loss", "train",
]
