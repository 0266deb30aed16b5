"""Procedural training panoramas and the deterministic toy text embedder.

Three panorama kinds, each a pure function of ``(seed, kind, height)``:

* ``sky_gradient``: per-row color ramp over latitude plus one hard sun disk.
* ``checker_sphere``: angular checkerboard in two seeded colors.
* ``beacon_room``: seeded constant wall color with six distinct palette
  markers, one centred on each cube face.  The palette assignment is a seeded
  rotation, so the Front marker determines every other face's color; this is
  what makes conditioned beacon placement require cross-face information.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

from .errors import DomainError
from .geometry import FaceId, angles_to_direction, face_frame

__all__ = [
    "KINDS",
    "PALETTE",
    "MARKER_RADIUS",
    "synth_panorama",
    "beacon_assignment",
    "caption_for",
    "toy_text_embed",
]

KINDS = ("sky_gradient", "checker_sphere", "beacon_room")

# six saturated, mutually distant marker colors
PALETTE = np.array(
    [
        [0.95, 0.10, 0.10],  # red
        [0.95, 0.90, 0.10],  # yellow
        [0.10, 0.85, 0.10],  # green
        [0.10, 0.85, 0.90],  # cyan
        [0.15, 0.15, 0.95],  # blue
        [0.90, 0.15, 0.90],  # magenta
    ]
)

MARKER_RADIUS = 0.45  # radians of angular distance from the face centre


def _rng(seed: int, kind: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((0x50A0, int(seed), KINDS.index(kind))))


def _angle_grids(height: int):
    w = 2 * height
    jj, ii = np.meshgrid(np.arange(w), np.arange(height))
    lon = (jj + 0.5) / w * 2.0 * math.pi - math.pi
    lat = math.pi / 2.0 - (ii + 0.5) / height * math.pi
    return lon, lat


def beacon_assignment(seed: int) -> dict:
    """Per-face palette indices and wall color of ``beacon_room`` seed ``seed``.

    The wall is a muted tint of the rotation's palette color, so the dominant
    surface of every view carries the same rotation signal as the markers;
    the panorama stays self-consistent and the Front view alone determines
    the whole room.
    """
    rng = _rng(seed, "beacon_room")
    jitter = rng.uniform(-0.03, 0.03, size=3)
    k = int(rng.integers(6))
    wall = np.clip(0.5 + 0.3 * (PALETTE[k] - 0.5) + jitter, 0.0, 1.0)
    return {
        "rotation": k,
        "face_palette": {int(f): (int(f) + k) % 6 for f in FaceId},
        "wall": wall,
    }


def synth_panorama(seed: int, kind: str, height: int = 128) -> np.ndarray:
    """Deterministic procedural panorama, ``(height, 2*height, 3)`` in [0, 1]."""
    if kind not in KINDS:
        raise DomainError(f"unknown panorama kind {kind!r}; expected one of {KINDS}")
    if height < 4:
        raise DomainError("panorama height must be >= 4")
    lon, lat = _angle_grids(height)
    rng = _rng(seed, kind)

    if kind == "sky_gradient":
        top = np.array([0.25, 0.45, 0.85]) + rng.uniform(-0.15, 0.15, 3)
        bottom = np.array([0.75, 0.65, 0.50]) + rng.uniform(-0.15, 0.15, 3)
        tt = (1.0 - np.sin(lat)) / 2.0  # 0 at the north pole, 1 at the south
        img = top[None, None, :] * (1 - tt[..., None]) + bottom[None, None, :] * tt[..., None]
        sun_lon = rng.uniform(-math.pi, math.pi)
        sun_lat = rng.uniform(-math.pi / 3, math.pi / 3)
        radius = rng.uniform(0.10, 0.25)
        sun_dir = angles_to_direction(sun_lon, sun_lat)
        d = angles_to_direction(lon, lat)
        ang = np.arccos(np.clip(d @ sun_dir, -1.0, 1.0))
        sun_color = np.array([1.0, 0.95, 0.75])
        img = np.where((ang < radius)[..., None], sun_color[None, None, :], img)
        return np.clip(img, 0.0, 1.0)

    if kind == "checker_sphere":
        ca = 0.15 + rng.uniform(0.0, 0.35, 3)
        cb = 0.55 + rng.uniform(0.0, 0.35, 3)
        cell = math.pi / 6.0
        parity = (np.floor((lon + math.pi) / cell) + np.floor((lat + math.pi / 2) / cell)) % 2
        img = np.where(parity[..., None] == 0, ca[None, None, :], cb[None, None, :])
        return np.clip(img, 0.0, 1.0)

    assignment = beacon_assignment(seed)
    img = np.broadcast_to(assignment["wall"][None, None, :], (height, 2 * height, 3)).copy()
    d = angles_to_direction(lon, lat)
    for f in FaceId:
        fwd = face_frame(f).forward
        ang = np.arccos(np.clip(d @ fwd, -1.0, 1.0))
        color = PALETTE[assignment["face_palette"][int(f)]]
        img = np.where((ang < MARKER_RADIUS)[..., None], color[None, None, :], img)
    return np.clip(img, 0.0, 1.0)


def caption_for(kind: str, seed: int) -> str:
    """Generic per-panorama caption; intentionally silent about marker layout."""
    return {
        "sky_gradient": "open sky with a bright sun",
        "checker_sphere": "spherical checkerboard pattern",
        "beacon_room": "room with colored beacon markers",
    }[kind]


def toy_text_embed(caption: str, tokens: int = 8, dim: int = 64) -> np.ndarray:
    """Deterministic stand-in text encoder: hash-seeded unit-norm token rows.

    The empty caption is the null condition and maps to all-zero tokens.
    """
    if caption == "":
        return np.zeros((tokens, dim))
    digest = hashlib.sha256(caption.encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    mat = rng.standard_normal((tokens, dim))
    return mat / np.linalg.norm(mat, axis=1, keepdims=True)
