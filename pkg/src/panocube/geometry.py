"""Cube-face frames, sphere directions, equirectangular angles, and UV positional encodings.

Conventions used throughout the package:

* Directions are unit 3-vectors ``(x, y, z)`` in a right-handed frame with
  ``+Y`` up and ``+Z`` through the centre of the Front face.
* Face order is Front, Right, Back, Left, Up, Down with stable integer codes
  0..5.  The four equatorial faces share the ``+Y`` up vector; Up and Down use
  the Front forward axis (``+Z``) as their up reference.
* Pixel centres sit at half-integer offsets: pixel ``(i, j)`` of an ``n`` pixel
  face covers ``[i, i+1) x [j, j+1)`` and its centre is ``(i+0.5, j+0.5)``.
  Row index ``i`` grows downwards (image convention), column ``j`` to the right.
* Longitude ``lon = atan2(x, z)`` in ``[-pi, pi]``, latitude
  ``lat = atan2(y, sqrt(x^2+z^2))`` in ``[-pi/2, pi/2]``.  At the poles the
  ``atan2(0, 0) = 0`` convention applies, so no special casing is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import DomainError

__all__ = [
    "FaceId",
    "FaceFrame",
    "face_frame",
    "normalize",
    "pixel_to_direction",
    "direction_to_angles",
    "angles_to_direction",
    "direction_to_face_uv",
    "positional_encoding",
    "pixel_grid",
]


class FaceId(IntEnum):
    FRONT = 0
    RIGHT = 1
    BACK = 2
    LEFT = 3
    UP = 4
    DOWN = 5


_FORWARD = np.array(
    [
        [0.0, 0.0, 1.0],   # Front
        [1.0, 0.0, 0.0],   # Right
        [0.0, 0.0, -1.0],  # Back
        [-1.0, 0.0, 0.0],  # Left
        [0.0, 1.0, 0.0],   # Up
        [0.0, -1.0, 0.0],  # Down
    ]
)

_Y_UP = np.array([0.0, 1.0, 0.0])
_Z_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class FaceFrame:
    """Orthonormal right-handed basis of one cube face (right x up = forward)."""

    right: np.ndarray
    up: np.ndarray
    forward: np.ndarray


def normalize(v: np.ndarray) -> np.ndarray:
    """Return ``v`` scaled to unit length along the last axis."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise DomainError("cannot normalize a zero vector")
    return v / n


def face_frame(face: FaceId | int) -> FaceFrame:
    """Fixed basis for ``face``; equatorial faces keep +Y up, Up/Down use +Z."""
    face = FaceId(face)
    forward = _FORWARD[face].copy()
    up = _Z_UP.copy() if face in (FaceId.UP, FaceId.DOWN) else _Y_UP.copy()
    right = np.cross(up, forward)
    return FaceFrame(right=right, up=up, forward=forward)


# Per-face basis rows stacked for vectorised lookups.
_FRAMES = [face_frame(f) for f in FaceId]
_RIGHTS = np.stack([f.right for f in _FRAMES])
_UPS = np.stack([f.up for f in _FRAMES])
_FORWARDS = np.stack([f.forward for f in _FRAMES])


def _tan_half(fov_deg: float) -> float:
    if not 0.0 < fov_deg < 180.0:
        raise DomainError(f"field of view must be in (0, 180) degrees, got {fov_deg}")
    return math.tan(math.radians(fov_deg) / 2.0)


def pixel_to_direction(face, i, j, size: int, fov_deg: float = 90.0) -> np.ndarray:
    """Direction through the centre of pixel ``(i, j)`` of a ``size`` pixel face.

    ``i`` and ``j`` may be float arrays, which allows continuous (sub-pixel)
    coordinates; the pixel-centre convention is baked into the formula, so the
    face centre is at ``i = j = size/2 - 0.5``.
    """
    if size < 1:
        raise DomainError(f"face size must be >= 1, got {size}")
    half = _tan_half(fov_deg)
    frame = face_frame(face)
    i = np.asarray(i, dtype=np.float64)
    j = np.asarray(j, dtype=np.float64)
    a = half * (2.0 * (j + 0.5) / size - 1.0)
    b = half * (1.0 - 2.0 * (i + 0.5) / size)
    d = frame.forward + a[..., None] * frame.right + b[..., None] * frame.up
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def direction_to_angles(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(lon, lat)`` of unit direction(s) ``d``; shapes follow the input."""
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    lon = np.arctan2(x, z)
    lat = np.arctan2(y, np.sqrt(x * x + z * z))
    return lon, lat


def angles_to_direction(lon, lat) -> np.ndarray:
    """Inverse of :func:`direction_to_angles`."""
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    cl = np.cos(lat)
    return np.stack([cl * np.sin(lon), np.sin(lat), cl * np.cos(lon)], axis=-1)


def direction_to_face_uv(d: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cubemap lookup: ``(face, u, v)`` with ``u, v`` in ``[0, 1]`` on a 90 degree face.

    The face whose forward axis carries the largest component wins; exact ties
    are broken by face order (argmax keeps the first maximum).  ``u`` grows with
    the column index and ``v`` with the row index of the face image, so
    ``pixel_to_direction(face, v*size - 0.5, u*size - 0.5, size)`` reconstructs ``d``.
    """
    d = np.asarray(d, dtype=np.float64)
    dots = d @ _FORWARDS.T  # (..., 6)
    face = np.argmax(dots, axis=-1)
    fwd = np.take_along_axis(dots, face[..., None], axis=-1)[..., 0]
    right = _RIGHTS[face]
    up = _UPS[face]
    a = np.sum(d * right, axis=-1) / fwd
    b = np.sum(d * up, axis=-1) / fwd
    u = (a + 1.0) / 2.0
    v = (1.0 - b) / 2.0
    return face, u, v


def pixel_grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer index grids ``(i, j)`` of shape ``(size, size)``."""
    idx = np.arange(size)
    return np.meshgrid(idx, idx, indexing="ij")


def positional_encoding(face, h: int, w: int, fov_deg: float = 90.0) -> np.ndarray:
    """Per-pixel sphere coordinates of a face, normalised to ``[0, 1]``.

    Returns an ``(h, w, 2)`` array whose channels are
    ``u = (lon + pi) / (2 pi)`` and ``v = (lat + pi/2) / pi``.  Values of
    adjacent faces agree along shared edges because both derive from the same
    global angles.
    """
    if h < 1 or w < 1:
        raise DomainError("positional encoding needs h, w >= 1")
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    # Non-square grids reuse the square-face formula with per-axis sizes.
    half = _tan_half(fov_deg)
    frame = face_frame(face)
    a = half * (2.0 * (jj + 0.5) / w - 1.0)
    b = half * (1.0 - 2.0 * (ii + 0.5) / h)
    d = frame.forward + a[..., None] * frame.right + b[..., None] * frame.up
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    lon, lat = direction_to_angles(d)
    u = (lon + math.pi) / (2.0 * math.pi)
    v = (lat + math.pi / 2.0) / math.pi
    return np.stack([u, v], axis=-1)
