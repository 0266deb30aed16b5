"""Fixed pixel-latent codec: space-to-depth in place of a learned autoencoder.

Faces of shape ``(h*k, w*k, C)`` become latents ``(C*k*k, h, w)`` scaled to
``[-1, 1]``; the inverse reverses both. ``block=1`` is the identity layout
(handy for tiny test models).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

__all__ = ["PixelLatentCodec"]


class PixelLatentCodec:
    def __init__(self, block: int = 2, image_channels: int = 3):
        if block < 1:
            raise ConfigError("block must be >= 1")
        self.block = block
        self.image_channels = image_channels

    @property
    def latent_channels(self) -> int:
        return self.image_channels * self.block * self.block

    def encode(self, faces: np.ndarray) -> np.ndarray:
        """``(..., H, W, C)`` images in [0, 1] -> ``(..., C*k*k, H/k, W/k)`` latents."""
        faces = np.asarray(faces, dtype=np.float64)
        *lead, hp, wp, c = faces.shape
        k = self.block
        if c != self.image_channels:
            raise ConfigError(f"expected {self.image_channels} channels, got {c}")
        if hp % k or wp % k:
            raise ConfigError(f"image size {hp}x{wp} not divisible by block {k}")
        h, w = hp // k, wp // k
        x = faces.reshape(-1, h, k, w, k, c)
        x = x.transpose(0, 5, 2, 4, 1, 3)  # (N, c, k_i, k_j, h, w)
        x = x.reshape(*lead, c * k * k, h, w)
        return 2.0 * x - 1.0

    def decode(self, latents: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`encode`; output clipped to [0, 1]."""
        latents = np.asarray(latents, dtype=np.float64)
        *lead, cl, h, w = latents.shape
        k = self.block
        c = self.image_channels
        if cl != c * k * k:
            raise ConfigError(f"expected {c * k * k} latent channels, got {cl}")
        x = (latents + 1.0) / 2.0
        x = x.reshape(-1, c, k, k, h, w)
        x = x.transpose(0, 4, 2, 5, 3, 1)  # (N, h, k_i, w, k_j, c)
        x = x.reshape(*lead, h * k, w * k, c)
        return np.clip(x, 0.0, 1.0)
