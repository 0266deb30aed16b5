"""Training loop: data stream, condition dropout, v-prediction loss, Adam.

Every random draw is counter-based: example content is a pure function of
``(seed, example index)`` and per-step noise of ``(seed, step)``, so a run is
a deterministic function of its config and a resumed run continues the exact
trajectory of an uninterrupted one.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from .checkpoint import load_arrays, save_arrays
from .denoiser import (
    ConditioningBundle,
    Denoiser,
    DenoiserConfig,
    assemble_input,
    positional_encoding_stack,
)
from .diffusion import NoiseSchedule, add_noise, cosine_schedule, v_target
from .errors import CheckpointError, ConfigError, NumericsError
from .latents import PixelLatentCodec
from .ops import NEG_MASK, combine_masks
from .projection import equirect_to_cubemap
from .synth import caption_for, synth_panorama, toy_text_embed
from .tensor import Tensor

__all__ = [
    "TrainConfig",
    "TrainingExample",
    "AdamOptimizer",
    "dropout_conditions",
    "lr_schedule",
    "dataset_example",
    "batch_indices",
    "train_step",
    "run_training",
    "save_train_state",
    "load_train_state",
]


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale training recipe.

    The peak learning rate matches the production recipe; step counts and
    batch size are scaled down to stay CPU tractable.  Panoramas are rendered
    and projected at the overlap field of view so the model learns the
    overlapping-face regime end to end.
    """

    steps: int = 5000
    batch_size: int = 8
    peak_lr: float = 8e-5
    warmup_steps: int = 500
    dropout_prob: float = 0.10
    seed: int = 0
    schedule_T: int = 1000
    face_size: int = 64
    overlap_fov_deg: float = 95.0
    kinds: tuple = ("beacon_room", "checker_sphere")
    dataset_size: int = 512
    log_every: int = 50

    def __post_init__(self):
        if self.warmup_steps > self.steps:
            raise ConfigError("warmup_steps must be <= steps")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ConfigError("dropout_prob must lie in [0, 1)")
        if self.batch_size < 1 or self.steps < 1 or self.dataset_size < 1:
            raise ConfigError("steps, batch_size and dataset_size must be positive")
        for k in self.kinds:
            if k not in ("sky_gradient", "checker_sphere", "beacon_room"):
                raise ConfigError(f"unknown dataset kind {k!r}")


@dataclass
class TrainingExample:
    latents: np.ndarray  # (6, c, h, w), scaled to [-1, 1]
    caption: str
    kind: str
    pano_seed: int


def dropout_conditions(rng: np.random.Generator, p: float = 0.10) -> tuple[bool, bool]:
    """Independent (drop_text, drop_image) draws with probability ``p`` each."""
    if not 0.0 <= p < 1.0:
        raise ConfigError("dropout probability must lie in [0, 1)")
    return bool(rng.random() < p), bool(rng.random() < p)


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear ramp 0 -> peak over the warmup, constant afterwards."""
    if step < 0:
        raise ConfigError("step must be >= 0")
    if cfg.warmup_steps == 0 or step >= cfg.warmup_steps:
        return cfg.peak_lr
    return cfg.peak_lr * step / cfg.warmup_steps


class AdamOptimizer:
    """Adam with bias correction; state arrays mirror parameter dtypes."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


class _ExampleCache:
    """Memoizes dataset examples; every entry is a pure function of its index."""

    def __init__(self, cfg: TrainConfig, model_cfg: DenoiserConfig):
        self.cfg = cfg
        self.model_cfg = model_cfg
        self.codec = PixelLatentCodec(model_cfg.latent_block)
        self.cache: dict[int, TrainingExample] = {}

    def __call__(self, index: int) -> TrainingExample:
        ex = self.cache.get(index)
        if ex is None:
            ex = dataset_example(self.cfg, self.model_cfg, index, self.codec)
            self.cache[index] = ex
        return ex


def dataset_example(cfg: TrainConfig, model_cfg: DenoiserConfig, index: int,
                    codec: PixelLatentCodec | None = None) -> TrainingExample:
    """Render, project and encode dataset example ``index``."""
    codec = codec or PixelLatentCodec(model_cfg.latent_block)
    kind = cfg.kinds[index % len(cfg.kinds)]
    pano_seed = int(np.random.default_rng(np.random.SeedSequence((cfg.seed, 2, index))).integers(2**31))
    pano = synth_panorama(pano_seed, kind, height=2 * cfg.face_size)
    cm = equirect_to_cubemap(pano, cfg.face_size, cfg.overlap_fov_deg)
    latents = codec.encode(cm.faces).astype(np.float32)
    if latents.shape[1:] != (model_cfg.latent_channels, model_cfg.face_latent_size,
                             model_cfg.face_latent_size):
        raise ConfigError(
            f"dataset latents {latents.shape[1:]} do not match the model "
            f"({model_cfg.latent_channels}, {model_cfg.face_latent_size}, {model_cfg.face_latent_size})"
        )
    return TrainingExample(latents, caption_for(kind, pano_seed), kind, pano_seed)


def batch_indices(cfg: TrainConfig, step: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 4, step)))
    return rng.integers(0, cfg.dataset_size, size=cfg.batch_size)


def train_step(model: Denoiser, opt: AdamOptimizer, sched: NoiseSchedule, cfg: TrainConfig,
               step: int, examples: list[TrainingExample], posenc: np.ndarray,
               extra_mask_fn=None) -> float:
    """One optimization step; returns the scalar loss.

    Per example: draw a timestep and noise, form ``x_t``, assemble the input
    (clean conditioning face unless the image condition is dropped), predict
    v, and take the mean squared error over target faces only.
    """
    mcfg = model.config
    b = len(examples)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 3, step)))
    x0 = np.stack([ex.latents for ex in examples]).astype(np.float64)
    t_idx = rng.integers(0, sched.T, size=b)
    eps = rng.standard_normal(x0.shape)
    flags = [dropout_conditions(rng, cfg.dropout_prob) for _ in range(b)]
    x_t = add_noise(x0, eps, t_idx, sched)
    v_tgt = v_target(x0, eps, t_idx, sched)

    cond_face = 0
    assembled = np.empty((b, 6, mcfg.in_channels, *x0.shape[-2:]), dtype=mcfg.dtype)
    kv = np.zeros((b, mcfg.text_tokens, mcfg.text_dim), dtype=mcfg.dtype)
    weight = np.ones((b, 6), dtype=np.float64)
    for i, (ex, (drop_text, drop_image)) in enumerate(zip(examples, flags)):
        bundle = ConditioningBundle(
            cond_latent=None if drop_image else x0[i : i + 1, cond_face],
            drop_image=drop_image,
            cond_face=cond_face,
        )
        assembled[i] = assemble_input(x_t[i : i + 1], bundle, posenc)[0].astype(mcfg.dtype)
        if not drop_image:
            weight[i, cond_face] = 0.0  # conditioning face carries no loss
        if not drop_text:
            kv[i] = toy_text_embed(ex.caption, mcfg.text_tokens, mcfg.text_dim)

    drop_rows = np.array([f[1] for f in flags])

    def mask_fn(t: int, tokens_per_face: int):
        key_mask = np.zeros((b, 1, t * tokens_per_face))
        lo = cond_face * tokens_per_face
        key_mask[drop_rows, :, lo : lo + tokens_per_face] = NEG_MASK
        extra = extra_mask_fn(t, tokens_per_face) if extra_mask_fn is not None else None
        return combine_masks(key_mask, extra)

    v_pred = model.forward(assembled, t_idx, kv, mask_fn)
    diff = v_pred - Tensor(v_tgt.astype(mcfg.dtype))
    w = Tensor(np.broadcast_to(weight[:, :, None, None, None], x0.shape).astype(mcfg.dtype).copy())
    per_elem = weight.sum() * float(np.prod(x0.shape[2:]))
    loss = (diff * diff * w).sum() * (1.0 / per_elem)
    loss_val = loss.item()
    if not np.isfinite(loss_val):
        raise NumericsError(f"non-finite training loss at step {step} (t={t_idx.tolist()})")
    opt.zero_grad()
    loss.backward()
    opt.step(lr_schedule(step, cfg))
    return loss_val


def save_train_state(path, model: Denoiser, opt: AdamOptimizer, step: int,
                     train_cfg: TrainConfig) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, p in model.params.items():
        arrays[f"param.{name}"] = p.data
    for name in model.params:
        arrays[f"opt.m.{name}"] = opt.m[name]
        arrays[f"opt.v.{name}"] = opt.v[name]
    meta = {
        "format": "CPAN1",
        "step": int(step),
        "adam_t": int(opt.t),
        "model_config": asdict(model.config),
        "train_config": asdict(train_cfg),
        "rng_state": {"scheme": "counter", "seed": int(train_cfg.seed)},
    }
    save_arrays(path, arrays, meta)


def load_train_state(path) -> tuple[Denoiser, AdamOptimizer, int, TrainConfig]:
    arrays, meta = load_arrays(path)
    for key in ("step", "adam_t", "model_config", "train_config"):
        if key not in meta:
            raise CheckpointError(f"checkpoint lacks metadata key {key!r}")
    mc = dict(meta["model_config"])
    for k in ("channel_mult", "attention_levels"):
        mc[k] = tuple(mc[k])
    model_cfg = DenoiserConfig(**mc)
    tc = dict(meta["train_config"])
    tc["kinds"] = tuple(tc["kinds"])
    train_cfg = TrainConfig(**tc)
    model = Denoiser(model_cfg, seed=train_cfg.seed)
    opt = AdamOptimizer(model.params)
    opt.t = int(meta["adam_t"])
    for name, p in model.params.items():
        key = f"param.{name}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint lacks parameter {name!r}")
        if arrays[key].shape != p.data.shape:
            raise CheckpointError(f"parameter {name!r} shape mismatch")
        p.data = arrays[key].astype(model_cfg.dtype)
        opt.m[name] = arrays[f"opt.m.{name}"].astype(model_cfg.dtype)
        opt.v[name] = arrays[f"opt.v.{name}"].astype(model_cfg.dtype)
    return model, opt, int(meta["step"]), train_cfg


def run_training(model_cfg: DenoiserConfig, train_cfg: TrainConfig,
                 checkpoint_path=None, log_path=None, resume_from=None,
                 extra_mask_fn=None, stop_after: int | None = None,
                 progress=False) -> tuple[Denoiser, AdamOptimizer, list[dict]]:
    """Deterministic training run; optionally resumes an interrupted one.

    ``stop_after`` ends the run early (simulating an interruption) while still
    writing a resumable checkpoint at the reached step.
    """
    if resume_from is not None:
        model, opt, start_step, saved_cfg = load_train_state(resume_from)
        if asdict(saved_cfg) != asdict(train_cfg):
            raise ConfigError("resume config does not match the checkpoint's train config")
    else:
        model = Denoiser(model_cfg, seed=train_cfg.seed)
        opt = AdamOptimizer(model.params)
        start_step = 0
    end_step = train_cfg.steps if stop_after is None else min(train_cfg.steps, stop_after)
    sched = cosine_schedule(train_cfg.schedule_T)
    cache = _ExampleCache(train_cfg, model.config)
    posenc = positional_encoding_stack(
        model.config.face_latent_size, model.config.face_latent_size, train_cfg.overlap_fov_deg
    )
    history: list[dict] = []
    log_fh = open(log_path, "a") if log_path else None
    try:
        for step in range(start_step, end_step):
            t0 = time.monotonic()
            examples = [cache(int(i)) for i in batch_indices(train_cfg, step)]
            loss = train_step(model, opt, sched, train_cfg, step, examples, posenc, extra_mask_fn)
            record = {
                "step": step,
                "lr": lr_schedule(step, train_cfg),
                "loss": loss,
                "wallclock_ms": (time.monotonic() - t0) * 1000.0,
            }
            history.append(record)
            if log_fh and (step % train_cfg.log_every == 0 or step == end_step - 1):
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if progress and step % 200 == 0:
                print(f"step {step} loss {loss:.5f}", flush=True)
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_path is not None:
        save_train_state(checkpoint_path, model, opt, end_step, train_cfg)
    return model, opt, history
