"""Toy text-and-style conditioned denoising diffusion."""

from .model import (ATTN_DIM, BLOCKS, ConditioningBundle, Denoiser,
                    SemanticEncoder, dual_cross_attention)
from .sampler import InpaintTask, sample_inpaint
from .schedule import NoiseSchedule, build_schedule, forward_noise
from .train import (LOG_HEADER, NSDModel, from_diffusion_space,
                    save_nsd_checkpoint, to_diffusion_space, train_nsd,
                    training_loss)

__all__ = [
    "ATTN_DIM", "BLOCKS", "ConditioningBundle", "Denoiser", "SemanticEncoder",
    "dual_cross_attention", "InpaintTask", "sample_inpaint", "NoiseSchedule",
    "build_schedule", "forward_noise", "LOG_HEADER", "NSDModel",
    "from_diffusion_space", "save_nsd_checkpoint", "to_diffusion_space",
    "train_nsd", "training_loss",
]
