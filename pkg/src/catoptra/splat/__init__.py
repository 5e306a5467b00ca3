"""Differentiable Gaussian splatting with hull-depth regularization."""

from .fit import FitConfig, FitResult, evaluate, fit, initialize_from_hull, render_eval, write_log
from .gaussians import GaussianCloud, read_cloud, write_cloud
from .loss import (DepthPair, LossTerms, LossWeights, combined_loss, depth_loss, depth_weight,
                   dssim_loss, l1_loss, loss_region)
from .render import RenderOutput, RenderSettings, project, project_gaussian, render, render_backward

__all__ = [
    "FitConfig", "FitResult", "evaluate", "fit", "initialize_from_hull", "render_eval", "write_log",
    "GaussianCloud", "read_cloud", "write_cloud",
    "DepthPair", "LossTerms", "LossWeights", "combined_loss", "depth_loss", "depth_weight",
    "dssim_loss", "l1_loss", "loss_region",
    "RenderOutput", "RenderSettings", "project", "project_gaussian", "render", "render_backward",
]
