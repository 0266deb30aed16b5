"""Multi-view denoising UNet over six cube faces.

Input per face is the channel concatenation of latent, two positional-encoding
channels, and a binary conditioning-mask channel.  The trunk downsamples three
times; the full-resolution blocks at the top carry no attention, interior
levels run inflated self-attention plus text cross-attention over the
concatenated face tokens, and every normalization is a synchronized GroupNorm
so statistics pool across faces.  The output head is zero-initialized and
predicts the v-parameterization with the latent channel count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, NumericsError
from .geometry import FaceId, positional_encoding
from .ops import (
    block_diagonal_face_mask,
    combine_masks,
    condition_attention_mask,
    cross_attention,
    faces_to_tokens,
    group_norm,
    inflated_self_attention,
    tokens_to_faces,
)
from .tensor import Tensor, avg_pool2x, concat, conv2d, linear, silu, upsample_nearest2x

__all__ = [
    "DenoiserConfig",
    "ConditioningBundle",
    "Denoiser",
    "assemble_input",
    "count_parameters",
    "positional_encoding_stack",
    "timestep_embedding",
    "image_drop_mask_fn",
    "block_diagonal_mask_fn",
    "combined_mask_fn",
]

N_FACES = 6


@dataclass(frozen=True)
class DenoiserConfig:
    """Desk-scale model shape; the defaults give a ~0.9M parameter UNet."""

    face_latent_size: int = 32
    latent_channels: int = 12
    latent_block: int = 2
    base_channels: int = 32
    channel_mult: tuple = (1, 2, 2, 4)
    attention_levels: tuple = (False, True, True, True)
    heads: int = 4
    gn_groups: int = 8
    text_dim: int = 64
    text_tokens: int = 8
    time_dim: int = 64
    synchronized_gn: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if len(self.channel_mult) != 4:
            raise ConfigError("channel_mult must list 4 levels (3 downsamplings)")
        if len(self.attention_levels) != 4:
            raise ConfigError("attention_levels must list 4 levels")
        if self.attention_levels[0]:
            raise ConfigError("the full-resolution blocks must not carry attention")
        if self.base_channels < 1 or min(self.channel_mult) < 1:
            raise ConfigError("channel counts must be positive")
        if self.face_latent_size % 8 != 0:
            raise ConfigError("face_latent_size must be divisible by 8 (3 downsamplings)")
        if self.time_dim % 2 != 0:
            raise ConfigError("time_dim must be even")
        for c in self.level_channels:
            if c % self.gn_groups:
                raise ConfigError(f"level channels {c} not divisible by gn_groups {self.gn_groups}")
            if c % self.heads:
                raise ConfigError(f"level channels {c} not divisible by heads {self.heads}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    @property
    def level_channels(self) -> tuple:
        return tuple(self.base_channels * m for m in self.channel_mult)

    @property
    def in_channels(self) -> int:
        # latent + (u, v) positional channels + conditioning mask channel
        return self.latent_channels + 3


@dataclass
class ConditioningBundle:
    """Inputs that condition one sampled/trained batch.

    ``cond_latent`` is the clean latent of the conditioning face (Front);
    ``text_tokens`` is a pre-flattened ``(b, s, text_dim)`` array or ``None``
    for the null condition.  Dropping a condition removes its signal: dropped
    text becomes zero tokens, a dropped image leaves the conditioning face
    noisy, zeroes the mask channel, and masks its self-attention keys.
    """

    cond_latent: np.ndarray | None = None
    text_tokens: np.ndarray | None = None
    drop_text: bool = False
    drop_image: bool = False
    cond_face: int = int(FaceId.FRONT)

    @property
    def image_active(self) -> bool:
        return self.cond_latent is not None and not self.drop_image


@lru_cache(maxsize=32)
def positional_encoding_stack(h: int, w: int, fov_deg: float) -> np.ndarray:
    """``(6, h, w, 2)`` UV encodings of all faces at the given field of view."""
    return np.stack([positional_encoding(f, h, w, fov_deg) for f in FaceId])


def assemble_input(noisy: np.ndarray, bundle: ConditioningBundle, posenc: np.ndarray) -> np.ndarray:
    """Channel-concatenate latents, positional encodings, and the mask channel.

    The conditioning face's latent is replaced by the clean conditioning
    latent when the image condition is active; with a dropped image every face
    stays noisy and the mask channel is all zero.
    """
    noisy = np.asarray(noisy)
    if noisy.ndim != 5 or noisy.shape[1] != N_FACES:
        raise ConfigError(f"expected (b, 6, c, h, w) latents, got {noisy.shape}")
    b, t, c, h, w = noisy.shape
    if posenc.shape != (N_FACES, h, w, 2):
        raise ConfigError(f"positional encodings {posenc.shape} do not match faces ({h}x{w})")
    x = noisy.copy()
    mask = np.zeros((b, t, 1, h, w), dtype=noisy.dtype)
    if bundle.image_active:
        cond = np.asarray(bundle.cond_latent, dtype=noisy.dtype)
        if cond.shape != (b, c, h, w):
            raise ConfigError(f"conditioning latent {cond.shape} does not match {(b, c, h, w)}")
        x[:, bundle.cond_face] = cond
        mask[:, bundle.cond_face] = 1.0
    uv = posenc.transpose(0, 3, 1, 2).astype(noisy.dtype)  # (6, 2, h, w)
    uv = np.broadcast_to(uv[None], (b, t, 2, h, w))
    return np.concatenate([x, uv, mask], axis=2)


def timestep_embedding(t_idx: np.ndarray, dim: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape ``(b, dim)``."""
    t_idx = np.asarray(t_idx, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = t_idx[:, None] * freqs[None, :]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1).astype(dtype)


def image_drop_mask_fn(cond_face: int = 0):
    """Mask factory hiding the conditioning face's keys at every attention level."""

    def fn(t: int, tokens_per_face: int) -> np.ndarray:
        lo = cond_face * tokens_per_face
        return condition_attention_mask(
            t * tokens_per_face, range(lo, lo + tokens_per_face), drop_image=True
        )

    return fn


def block_diagonal_mask_fn():
    """Mask factory that severs cross-face attention (the ablation control)."""

    def fn(t: int, tokens_per_face: int) -> np.ndarray:
        return block_diagonal_face_mask(t, tokens_per_face)

    return fn


def combined_mask_fn(*fns):
    fns = [f for f in fns if f is not None]
    if not fns:
        return None

    def fn(t: int, tokens_per_face: int):
        return combine_masks(*(f(t, tokens_per_face) for f in fns))

    return fn


class Denoiser:
    """UNet with per-face convolutions and cross-face attention/normalization."""

    def __init__(self, config: DenoiserConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self._build(np.random.default_rng(np.random.SeedSequence((0x9A37, seed))))

    # ------------------------------------------------------------------ build

    def _add(self, name: str, arr: np.ndarray) -> None:
        if name in self.params:
            raise ConfigError(f"duplicate parameter {name}")
        self.params[name] = Tensor(arr.astype(self.config.dtype), requires_grad=True)

    def _init_conv(self, rng, name, cout, cin, k):
        std = 1.0 / math.sqrt(cin * k * k)
        self._add(f"{name}.w", rng.standard_normal((cout, cin, k, k)) * std)
        self._add(f"{name}.b", np.zeros(cout))

    def _init_linear(self, rng, name, din, dout, zero=False):
        w = np.zeros((din, dout)) if zero else rng.standard_normal((din, dout)) / math.sqrt(din)
        self._add(f"{name}.w", w)
        self._add(f"{name}.b", np.zeros(dout))

    def _init_gn(self, name, c):
        self._add(f"{name}.scale", np.ones(c))
        self._add(f"{name}.bias", np.zeros(c))

    def _init_res(self, rng, name, cin, cout):
        self._init_gn(f"{name}.gn1", cin)
        self._init_conv(rng, f"{name}.conv1", cout, cin, 3)
        self._init_linear(rng, f"{name}.time", self.config.time_dim, cout)
        self._init_gn(f"{name}.gn2", cout)
        self._init_conv(rng, f"{name}.conv2", cout, cout, 3)
        if cin != cout:
            self._init_conv(rng, f"{name}.skip", cout, cin, 1)

    def _init_attn(self, rng, name, c):
        self._init_gn(f"{name}.gn_self", c)
        for leaf in ("wq", "wk", "wv", "wo"):
            self._add(f"{name}.self.{leaf}", rng.standard_normal((c, c)) / math.sqrt(c))
            self._add(f"{name}.self.{leaf[0]}b{leaf[1]}", np.zeros(c))
        self._init_gn(f"{name}.gn_cross", c)
        d = self.config.text_dim
        for leaf, din in (("wq", c), ("wk", d), ("wv", d), ("wo", c)):
            self._add(f"{name}.cross.{leaf}", rng.standard_normal((din, c)) / math.sqrt(din))
            self._add(f"{name}.cross.{leaf[0]}b{leaf[1]}", np.zeros(c))

    def _build(self, rng):
        cfg = self.config
        chans = cfg.level_channels
        self._init_linear(rng, "time_mlp.fc1", cfg.time_dim, cfg.time_dim)
        self._init_linear(rng, "time_mlp.fc2", cfg.time_dim, cfg.time_dim)
        self._init_conv(rng, "conv_in", chans[0], cfg.in_channels, 3)
        cur = chans[0]
        for lvl in range(3):
            self._init_res(rng, f"enc{lvl}.res", cur, chans[lvl])
            cur = chans[lvl]
            if cfg.attention_levels[lvl]:
                self._init_attn(rng, f"enc{lvl}.attn", cur)
        self._init_res(rng, "mid.res1", cur, chans[3])
        cur = chans[3]
        if cfg.attention_levels[3]:
            self._init_attn(rng, "mid.attn", cur)
        self._init_res(rng, "mid.res2", cur, cur)
        for lvl in (2, 1, 0):
            self._init_res(rng, f"dec{lvl}.res", cur + chans[lvl], chans[lvl])
            cur = chans[lvl]
            if cfg.attention_levels[lvl]:
                self._init_attn(rng, f"dec{lvl}.attn", cur)
        self._init_gn("out.gn", cur)
        self._add("out.conv.w", np.zeros((cfg.latent_channels, cur, 3, 3)))
        self._add("out.conv.b", np.zeros(cfg.latent_channels))

    # ---------------------------------------------------------------- forward

    def _attn_weights(self, prefix):
        p = self.params
        return {
            "wq": p[f"{prefix}.wq"], "bq": p[f"{prefix}.wbq"],
            "wk": p[f"{prefix}.wk"], "bk": p[f"{prefix}.wbk"],
            "wv": p[f"{prefix}.wv"], "bv": p[f"{prefix}.wbv"],
            "wo": p[f"{prefix}.wo"], "bo": p[f"{prefix}.wbo"],
        }

    def _gn(self, name, x5):
        return group_norm(
            x5, self.config.gn_groups, synchronized=self.config.synchronized_gn,
            scale=self.params[f"{name}.scale"], bias=self.params[f"{name}.bias"],
        )

    def _conv(self, name, x5):
        b, t, c, h, w = x5.shape
        out = conv2d(
            x5.reshape(b * t, c, h, w),
            self.params[f"{name}.w"], self.params[f"{name}.b"],
        )
        co = out.shape[1]
        return out.reshape(b, t, co, h, w)

    def _res(self, name, x5, temb_act):
        p = self.params
        cout = p[f"{name}.conv1.w"].shape[0]
        h = self._gn(f"{name}.gn1", x5)
        h = self._conv(f"{name}.conv1", silu(h))
        tt = linear(temb_act, p[f"{name}.time.w"], p[f"{name}.time.b"])
        h = h + tt.reshape(tt.shape[0], 1, cout, 1, 1)
        h = self._gn(f"{name}.gn2", h)
        h = self._conv(f"{name}.conv2", silu(h))
        skip = self._conv(f"{name}.skip", x5) if f"{name}.skip.w" in p else x5
        return skip + h

    def _attn(self, name, x5, text_kv, mask_fn):
        b, t, c, h, w = x5.shape
        mask = mask_fn(t, h * w) if mask_fn is not None else None
        xn = self._gn(f"{name}.gn_self", x5)
        x5 = x5 + inflated_self_attention(xn, self._attn_weights(f"{name}.self"), self.config.heads, mask)
        xn = self._gn(f"{name}.gn_cross", x5)
        upd = cross_attention(
            faces_to_tokens(xn), text_kv, self._attn_weights(f"{name}.cross"), self.config.heads
        )
        return x5 + tokens_to_faces(upd, t, h, w)

    def _pool(self, x5):
        b, t, c, h, w = x5.shape
        return avg_pool2x(x5.reshape(b * t, c, h, w)).reshape(b, t, c, h // 2, w // 2)

    def _up(self, x5):
        b, t, c, h, w = x5.shape
        return upsample_nearest2x(x5.reshape(b * t, c, h, w)).reshape(b, t, c, h * 2, w * 2)

    def __call__(self, assembled, t_idx, text_kv=None, mask_fn=None) -> Tensor:
        return self.forward(assembled, t_idx, text_kv, mask_fn)

    def forward(self, assembled, t_idx, text_kv=None, mask_fn=None) -> Tensor:
        """Predict v for every face; output has the latent channel count."""
        cfg = self.config
        x = assembled if isinstance(assembled, Tensor) else Tensor(np.asarray(assembled, dtype=cfg.dtype))
        if x.ndim != 5:
            raise ConfigError(f"expected (b, t, c, h, w) input, got {x.shape}")
        b, t, c, h, w = x.shape
        if c != cfg.in_channels:
            raise ConfigError(f"expected {cfg.in_channels} input channels, got {c}")
        if text_kv is None:
            text_kv = np.zeros((b, cfg.text_tokens, cfg.text_dim))
        if not isinstance(text_kv, Tensor):
            text_kv = Tensor(np.asarray(text_kv, dtype=cfg.dtype))

        temb = timestep_embedding(t_idx, cfg.time_dim, dtype=cfg.dtype)
        if temb.shape[0] != b:
            raise ConfigError("timestep batch does not match input batch")
        p = self.params
        emb = linear(Tensor(temb), p["time_mlp.fc1.w"], p["time_mlp.fc1.b"])
        emb = linear(silu(emb), p["time_mlp.fc2.w"], p["time_mlp.fc2.b"])
        temb_act = silu(emb)

        def run(layer, fn):
            try:
                return fn()
            except NumericsError as e:
                raise NumericsError(f"layer {layer!r}: {e}") from None

        hx = run("conv_in", lambda: self._conv("conv_in", x))
        skips = []
        for lvl in range(3):
            name = f"enc{lvl}"
            hx = run(name + ".res", lambda: self._res(f"{name}.res", hx, temb_act))
            if cfg.attention_levels[lvl]:
                hx = run(name + ".attn", lambda: self._attn(f"{name}.attn", hx, text_kv, mask_fn))
            skips.append(hx)
            hx = self._pool(hx)
        hx = run("mid.res1", lambda: self._res("mid.res1", hx, temb_act))
        if cfg.attention_levels[3]:
            hx = run("mid.attn", lambda: self._attn("mid.attn", hx, text_kv, mask_fn))
        hx = run("mid.res2", lambda: self._res("mid.res2", hx, temb_act))
        for lvl in (2, 1, 0):
            name = f"dec{lvl}"
            hx = self._up(hx)
            hx = concat([hx, skips[lvl]], axis=2)
            hx = run(name + ".res", lambda: self._res(f"{name}.res", hx, temb_act))
            if cfg.attention_levels[lvl]:
                hx = run(name + ".attn", lambda: self._attn(f"{name}.attn", hx, text_kv, mask_fn))
        hx = run("out", lambda: self._conv("out.conv", silu(self._gn("out.gn", hx))))
        return hx


def count_parameters(model: Denoiser) -> int:
    return sum(t.size for t in model.params.values())
