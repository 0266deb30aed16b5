"""Noise schedule, v-parameterization algebra, DDIM sampling, guidance.

The schedule is variance preserving: ``x_t = alpha[t] * x0 + sigma[t] * eps``
with ``alpha^2 + sigma^2 = 1``.  The network predicts
``v = alpha * eps - sigma * x0``, from which ``x0`` and ``eps`` are recovered
by the inverse rotations.  Sampling is deterministic DDIM (eta = 0) over a
uniform stride of the training timesteps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .denoiser import (
    ConditioningBundle,
    Denoiser,
    assemble_input,
    combined_mask_fn,
    image_drop_mask_fn,
    positional_encoding_stack,
)
from .errors import ConfigError, DomainError, NumericsError
from .geometry import FaceId
from .tensor import inference_mode, no_finite_check

__all__ = [
    "NoiseSchedule",
    "SamplerConfig",
    "cosine_schedule",
    "add_noise",
    "v_target",
    "x0_from_v",
    "eps_from_v",
    "cfg_combine",
    "ddim_timesteps",
    "ddim_sample",
    "sample_cubemap_latents",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep ``(alpha, sigma)`` pairs; strictly decreasing alpha."""

    alpha: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        a, s = np.asarray(self.alpha, dtype=np.float64), np.asarray(self.sigma, dtype=np.float64)
        if a.ndim != 1 or a.shape != s.shape or a.shape[0] < 2:
            raise ConfigError("schedule needs 1D alpha/sigma of equal length >= 2")
        if np.any(np.diff(a) >= 0):
            raise ConfigError("alpha must be strictly decreasing")
        if np.max(np.abs(a * a + s * s - 1.0)) > 1e-9:
            raise ConfigError("schedule is not variance preserving")
        if a[0] < 0.99 or a[-1] > 0.2:
            raise ConfigError("schedule must start near alpha=1 and end near alpha=0")

    @property
    def T(self) -> int:
        return self.alpha.shape[0]


def cosine_schedule(T: int, s: float = 0.008) -> NoiseSchedule:
    """Squared-cosine schedule with offset ``s``, normalized so alpha[0] = 1."""
    if T < 2:
        raise DomainError("schedule needs T >= 2")
    t = np.arange(T, dtype=np.float64)
    angle = (t / T + s) / (1.0 + s) * math.pi / 2.0
    alpha = np.cos(angle) / math.cos(s / (1.0 + s) * math.pi / 2.0)
    alpha = np.clip(alpha, 0.0, 1.0)
    sigma = np.sqrt(1.0 - alpha * alpha)
    return NoiseSchedule(alpha=alpha, sigma=sigma)


def _coef(values: np.ndarray, t, ndim: int) -> np.ndarray:
    """Schedule coefficient(s) reshaped to broadcast over an ``ndim`` tensor."""
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= values.shape[0]):
        raise DomainError(f"timestep {t} outside schedule range [0, {values.shape[0]})")
    c = values[t]
    if c.ndim == 0:
        return c
    return c.reshape((-1,) + (1,) * (ndim - 1))


def add_noise(x0: np.ndarray, eps: np.ndarray, t, sched: NoiseSchedule) -> np.ndarray:
    """Forward process: ``x_t = alpha[t] x0 + sigma[t] eps``."""
    x0 = np.asarray(x0)
    if x0.shape != np.shape(eps):
        raise ConfigError("x0 and eps shapes differ")
    return _coef(sched.alpha, t, x0.ndim) * x0 + _coef(sched.sigma, t, x0.ndim) * eps


def v_target(x0: np.ndarray, eps: np.ndarray, t, sched: NoiseSchedule) -> np.ndarray:
    """Training target ``v = alpha[t] eps - sigma[t] x0``."""
    x0 = np.asarray(x0)
    return _coef(sched.alpha, t, x0.ndim) * eps - _coef(sched.sigma, t, x0.ndim) * x0


def x0_from_v(x_t: np.ndarray, v: np.ndarray, t, sched: NoiseSchedule) -> np.ndarray:
    x_t = np.asarray(x_t)
    return _coef(sched.alpha, t, x_t.ndim) * x_t - _coef(sched.sigma, t, x_t.ndim) * v


def eps_from_v(x_t: np.ndarray, v: np.ndarray, t, sched: NoiseSchedule) -> np.ndarray:
    x_t = np.asarray(x_t)
    return _coef(sched.sigma, t, x_t.ndim) * x_t + _coef(sched.alpha, t, x_t.ndim) * v


def cfg_combine(out_uncond: np.ndarray, out_cond: np.ndarray, scale: float) -> np.ndarray:
    """Classifier-free extrapolation ``u + scale * (c - u)``.

    The endpoints are exact: scale 0 returns the unconditional output and
    scale 1 the conditional one, bit for bit.
    """
    out_uncond = np.asarray(out_uncond)
    out_cond = np.asarray(out_cond)
    if out_uncond.shape != out_cond.shape:
        raise ConfigError("guidance operands must share a shape")
    if scale == 0.0:
        return out_uncond.copy()
    if scale == 1.0:
        return out_cond.copy()
    return out_uncond + scale * (out_cond - out_uncond)


@dataclass(frozen=True)
class SamplerConfig:
    ddim_steps: int = 50
    cfg_scale_text: float = 3.0
    cfg_scale_image: float = 3.0
    seed: int = 0
    eta: float = 0.0
    clamp_x0: bool = True
    clamp_range: float = 1.0

    def __post_init__(self):
        if self.ddim_steps < 1:
            raise ConfigError("ddim_steps must be >= 1")
        if self.eta != 0.0:
            raise ConfigError("only deterministic sampling (eta = 0) is supported")


def ddim_timesteps(T: int, steps: int) -> np.ndarray:
    """Uniformly strided timesteps from T-1 down to 0 (inclusive)."""
    if not 1 <= steps <= T:
        raise ConfigError(f"ddim steps must be in [1, {T}], got {steps}")
    return np.unique(np.round(np.linspace(T - 1, 0, steps)).astype(np.int64))[::-1]


def ddim_sample(model_fn, x_init: np.ndarray, sched: NoiseSchedule, cfg: SamplerConfig) -> np.ndarray:
    """Deterministic DDIM trajectory; returns the final x0 estimate.

    ``model_fn(x_t, t) -> v`` supplies the (already guidance-combined)
    v-prediction.  Each step converts v to the x0/eps pair and re-noises to
    the next stride point; the x0 estimate may be clamped for stability.
    """
    x = np.asarray(x_init, dtype=np.float64)
    ts = ddim_timesteps(sched.T, cfg.ddim_steps)
    x0 = x
    for k, t in enumerate(ts):
        v = np.asarray(model_fn(x, int(t)), dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise NumericsError(f"non-finite model output at sampling step {k} (t={t})")
        x0 = x0_from_v(x, v, int(t), sched)
        if cfg.clamp_x0:
            x0 = np.clip(x0, -cfg.clamp_range, cfg.clamp_range)
        if k + 1 < len(ts):
            t_next = int(ts[k + 1])
            eps = eps_from_v(x, v, int(t), sched)
            x = add_noise(x0, eps, t_next, sched)
    return x0


def sample_cubemap_latents(
    model: Denoiser,
    sched: NoiseSchedule,
    cfg: SamplerConfig,
    fov_deg: float,
    batch: int = 1,
    cond_latent: np.ndarray | None = None,
    text_tokens: np.ndarray | None = None,
    extra_mask_fn=None,
) -> np.ndarray:
    """Guided DDIM sampling of all six face latents, ``(b, 6, c, h, w)``.

    Guidance axes follow the trained dropout states: with both conditions the
    combined prediction is ``u + s_text (e_text - u) + s_img (e_full - e_text)``,
    which collapses to plain CFG when the scales agree.  Branches that drop
    the image also mask the conditioning face's attention keys, mirroring the
    dropped-state training inputs.  The conditioning face of the returned
    latents is the conditioning latent itself.
    """
    mcfg = model.config
    h = w = mcfg.face_latent_size
    c = mcfg.latent_channels
    rng = np.random.default_rng(np.random.SeedSequence((0x5A17, int(cfg.seed))))
    x = rng.standard_normal((batch, 6, c, h, w))
    posenc = positional_encoding_stack(h, w, fov_deg)

    has_image = cond_latent is not None
    has_text = text_tokens is not None
    if has_image and np.shape(cond_latent) != (batch, c, h, w):
        raise ConfigError(f"conditioning latent shape {np.shape(cond_latent)} != {(batch, c, h, w)}")

    # branch list of (drop_text, drop_image) states; order fixes the guidance algebra
    branches = [(True, True)]
    if has_text:
        branches.append((False, True))
    if has_image:
        branches.append((not has_text, False))

    cond_face = int(FaceId.FRONT)
    drop_mask = image_drop_mask_fn(cond_face)

    def model_fn(x_t, t):
        # per-op finite guards are lifted inside the loop; ddim_sample checks
        # every model output and reports the failing step
        outs = []
        with inference_mode(), no_finite_check():
            for drop_text, drop_image in branches:
                bundle = ConditioningBundle(
                    cond_latent=cond_latent if has_image else None,
                    text_tokens=text_tokens if has_text else None,
                    drop_text=drop_text,
                    drop_image=drop_image,
                )
                assembled = assemble_input(x_t.astype(mcfg.dtype), bundle, posenc)
                kv = None
                if has_text and not drop_text:
                    kv = np.asarray(text_tokens, dtype=mcfg.dtype)
                mask_fn = combined_mask_fn(
                    drop_mask if (drop_image or not has_image) else None, extra_mask_fn
                )
                t_arr = np.full(batch, t, dtype=np.int64)
                outs.append(model(assembled, t_arr, kv, mask_fn).data.astype(np.float64))
        if len(outs) == 1:
            return outs[0]
        if len(outs) == 2:
            scale = cfg.cfg_scale_text if (has_text and not has_image) else cfg.cfg_scale_image
            return cfg_combine(outs[0], outs[1], scale)
        u, e_text, e_full = outs
        guided = cfg_combine(u, e_text, cfg.cfg_scale_text)
        return guided + cfg.cfg_scale_image * (e_full - e_text)

    latents = ddim_sample(model_fn, x, sched, cfg)
    if has_image:
        latents = latents.copy()
        latents[:, cond_face] = cond_latent
    return latents
