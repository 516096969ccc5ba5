"""Patch-wise retinal cyst segmentation for OCT B-scans.

Pipeline: vendor-aware preprocessing (8-bit conversion, band crop, NLM
denoising, CLAHE, bilinear resize to 256x512), balanced 11x11 patch
extraction on a fixed grid, a compact residual CNN on a from-scratch
autodiff engine, sliding-window mask reconstruction, and grader-aware
Dice/precision/recall evaluation.
"""

__version__ = "0.1.0"

from .config import (AugmentPolicy, Config, ModelConfig, NlmParams, PatchConfig,
                     PredictConfig, PreprocessConfig, TrainConfig, load_config)
from .errors import CystsegError, InputError, RuntimeFailure
from .frames import Frame, FusionRule, MaskSet, Split, Vendor, Volume
from .manifest import Manifest, load_manifest, save_manifest

__all__ = [
    "__version__",
    "AugmentPolicy", "Config", "ModelConfig", "NlmParams", "PatchConfig",
    "PredictConfig", "PreprocessConfig", "TrainConfig", "load_config",
    "CystsegError", "InputError", "RuntimeFailure",
    "Frame", "FusionRule", "MaskSet", "Split", "Vendor", "Volume",
    "Manifest", "load_manifest", "save_manifest",
]
