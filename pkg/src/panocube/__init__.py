"""Cubemap panorama diffusion at desk scale.

Exact cubemap/equirectangular geometry with 95-to-90 degree overlap cropping,
a multi-view denoiser with inflated cross-face attention and synchronized
GroupNorm, a v-prediction DDIM engine with dual-axis classifier-free
guidance, synthetic-panorama training, and pretrained-network-free metrics.
"""

from .denoiser import ConditioningBundle, Denoiser, DenoiserConfig, assemble_input, count_parameters
from .diffusion import (
    NoiseSchedule,
    SamplerConfig,
    add_noise,
    cfg_combine,
    cosine_schedule,
    ddim_sample,
    eps_from_v,
    sample_cubemap_latents,
    v_target,
    x0_from_v,
)
from .geometry import FaceId, angles_to_direction, direction_to_angles, direction_to_face_uv, \
    face_frame, pixel_to_direction, positional_encoding
from .latents import PixelLatentCodec
from .metrics import face_color_divergence, kid_mmd, sample_perspective_views, seam_discontinuity, \
    wraparound_error
from .projection import Cubemap, crop_overlap, cubemap_to_equirect, equirect_to_cubemap
from .synth import synth_panorama, toy_text_embed
from .training import AdamOptimizer, TrainConfig, run_training

__version__ = "0.1.0"
