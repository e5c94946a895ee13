"""chamferlab: a desk-scale guided-diffusion laboratory.

Steers a toy conditional diffusion sampler toward a handful of real
exemplar points via the gradient of a Chamfer set distance in feature
space, and evaluates the result with grounded quality/diversity metrics.
"""

__version__ = "0.1.0"

from .chamfer import GuidanceConfig, chamfer, chamfer_grad, guidance_step
from .datasets import DatasetSpec, ExemplarSet, LabeledSet, generate, split
from .denoiser import ConditionalDenoiser, TrainConfig, train
from .featspace import FeatureSet, NeighborIndex, Projector
from .metrics import MetricsReport, evaluate, f1_pc
from .sampler import cfg_combine, ddpm_step, sample
from .schedule import NoiseSchedule, ddim_x0, forward_noise, make_schedule

__all__ = [
    "GuidanceConfig", "chamfer", "chamfer_grad", "guidance_step",
    "DatasetSpec", "ExemplarSet", "LabeledSet", "generate", "split",
    "ConditionalDenoiser", "TrainConfig", "train",
    "FeatureSet", "NeighborIndex", "Projector",
    "MetricsReport", "evaluate", "f1_pc",
    "cfg_combine", "ddpm_step", "sample",
    "NoiseSchedule", "ddim_x0", "forward_noise", "make_schedule",
]
