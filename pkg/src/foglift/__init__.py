"""Voxel radiance fields trained on fogged posed images, with automatic
density-threshold fog removal at render time."""

from .field import (
    AnalyticScene,
    Box,
    FieldFormatError,
    RadianceField,
    Sphere,
    bake,
    load_field,
    save_field,
)
from .metrics import MaskedPsnrConfig, NoForegroundError, masked_psnr, psnr, ssim
from .render import Camera, Ray, RaySamples, composite, pixel_ray, render_image, sample_ray
from .scenegen import SceneSpec, generate_dataset, preset, random_scene, sample_camera
from .threshold import (
    ContrastCurve,
    NoPlateauError,
    ThresholdConfig,
    detect_plateau,
    estimate_threshold,
    luminance,
    michelson,
    savgol_smooth,
)
from .train import TrainConfig, fit, photometric_loss

__version__ = "0.1.0"

__all__ = [
    "AnalyticScene", "Box", "Camera", "ContrastCurve", "FieldFormatError",
    "MaskedPsnrConfig", "NoForegroundError", "NoPlateauError", "RadianceField",
    "Ray", "RaySamples", "SceneSpec", "Sphere", "ThresholdConfig", "TrainConfig",
    "bake", "composite", "detect_plateau", "estimate_threshold", "fit",
    "generate_dataset", "load_field", "luminance", "masked_psnr", "michelson",
    "photometric_loss", "pixel_ray", "preset", "psnr", "random_scene",
    "render_image", "sample_camera", "sample_ray", "save_field", "savgol_smooth",
    "ssim",
]
