"""Object removal from radiance fields trained on posed RGB-D frames.

Masked regions are supervised by 2D inpaintings; learned per-frame
confidences decide which inpaintings keep supervising, and frames below the
median confidence are pruned between training rounds.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, grad_check, stop_gradient
from .evaluation import EvalReport, ablation_subsets, evaluate, masked_depth_error, masked_psnr, masked_ssim
from .field import FieldConfig, FieldParams, init_field, load_field, query_field, save_field
from .objective import ActiveSet, LossWeights, PixelBatch
from .render import SceneBounds, composite, distortion, render_depth, render_frame, render_rays
from .scene import BBox3, Frame, SceneDataset, load_scene, save_scene
from .synthetic import SyntheticSpec, make_synthetic
from .trainer import TrainConfig, adam_step, lr_schedule, prune_active_set, run

__all__ = [
    "Tensor", "backward", "grad_check", "stop_gradient",
    "EvalReport", "ablation_subsets", "evaluate", "masked_depth_error", "masked_psnr", "masked_ssim",
    "FieldConfig", "FieldParams", "init_field", "load_field", "query_field", "save_field",
    "ActiveSet", "LossWeights", "PixelBatch",
    "SceneBounds", "composite", "distortion", "render_depth", "render_frame", "render_rays",
    "BBox3", "Frame", "SceneDataset", "load_scene", "save_scene",
    "SyntheticSpec", "make_synthetic",
    "TrainConfig", "adam_step", "lr_schedule", "prune_active_set", "run",
]
