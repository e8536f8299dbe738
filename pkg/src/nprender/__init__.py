"""Point-based neural scene rendering with multi-scale gated fusion."""

from .camera import Camera, project_point
from .editor import edit_move, edit_remove, panorama, stitch
from .errors import NumericalError, ValidationError
from .losses import psnr, ssim
from .omeganet import OmegaNet
from .raster import build_pyramid, rasterize_level, visible_point_set
from .scene import AABox, RigidTransform, Scene, init_descriptors
from .synthetic import toy_dataset
from .trainer import TrainConfig, evaluate, fit, render_view, train_step

__all__ = [
    "AABox", "Camera", "NumericalError", "OmegaNet", "RigidTransform", "Scene",
    "TrainConfig", "ValidationError", "build_pyramid", "edit_move", "edit_remove",
    "evaluate", "fit", "init_descriptors", "panorama", "project_point", "psnr",
    "rasterize_level", "render_view", "ssim", "stitch", "toy_dataset", "train_step",
    "visible_point_set",
]
__version__ = "0.1.0"
