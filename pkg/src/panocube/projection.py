"""Resampling between equirectangular panoramas and cubemaps.

Equirect images are ``(H, W, C)`` arrays with ``W = 2 H``; row 0 is the north
pole (``lat = +pi/2``), columns span longitude ``-pi .. pi`` left to right.
Cubemaps hold six square faces indexed by :class:`~panocube.geometry.FaceId`
plus the field of view they were rendered at.  All resampling is bilinear; the
equirect lookup wraps horizontally and clamps vertically, face lookups clamp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DomainError
from .geometry import (
    FaceId,
    angles_to_direction,
    direction_to_angles,
    direction_to_face_uv,
    pixel_to_direction,
)

__all__ = [
    "Cubemap",
    "EdgePair",
    "bilinear_sample",
    "equirect_to_cubemap",
    "crop_overlap",
    "crop_ratio",
    "cubemap_to_equirect",
    "seam_edge_pairs",
    "border_strip",
    "border_pixel_directions",
    "validate_equirect",
]

_EDGES = ("top", "right", "bottom", "left")


@dataclass
class Cubemap:
    """Six square faces ``(6, size, size, C)`` and the per-face field of view."""

    faces: np.ndarray
    fov_deg: float = 90.0

    def __post_init__(self):
        self.faces = np.asarray(self.faces, dtype=np.float64)
        if self.faces.ndim != 4 or self.faces.shape[0] != 6:
            raise ConfigError(f"cubemap faces must be (6, s, s, c), got {self.faces.shape}")
        if self.faces.shape[1] != self.faces.shape[2]:
            raise ConfigError("cubemap faces must be square")
        if not 0.0 < self.fov_deg < 180.0:
            raise DomainError(f"cubemap fov must be in (0, 180), got {self.fov_deg}")

    @property
    def size(self) -> int:
        return self.faces.shape[1]

    @property
    def channels(self) -> int:
        return self.faces.shape[3]


def validate_equirect(eq: np.ndarray) -> np.ndarray:
    eq = np.asarray(eq)
    if eq.ndim == 2:
        eq = eq[..., None]
    if eq.ndim != 3:
        raise ConfigError(f"equirect image must be (h, w, c), got shape {eq.shape}")
    h, w = eq.shape[:2]
    if w != 2 * h:
        raise DomainError(f"equirect width must equal 2*height, got {w}x{h}")
    if not np.all(np.isfinite(eq)):
        raise ConfigError("equirect image contains non-finite values")
    return eq.astype(np.float64, copy=False)


def bilinear_sample(img: np.ndarray, x, y, wrap: str = "clamp") -> np.ndarray:
    """Bilinear lookup of ``img[(y, x)]`` at continuous pixel-centre coordinates.

    ``x`` indexes columns, ``y`` rows; integer coordinates hit pixel centres
    exactly.  ``wrap='wrap_x'`` wraps horizontally (longitude continuity) and
    clamps vertically; ``wrap='clamp'`` clamps both axes.
    """
    if wrap not in ("clamp", "wrap_x"):
        raise ConfigError(f"unknown wrap mode {wrap!r}")
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    h, w = img.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)

    if wrap == "wrap_x":
        x = np.mod(x, w)
        x0 = np.floor(x).astype(np.int64)
        fx = x - x0
        x1 = np.mod(x0 + 1, w)
        x0 = np.mod(x0, w)
    else:
        x = np.clip(x, 0.0, w - 1.0)
        x0 = np.floor(x).astype(np.int64)
        fx = x - x0
        x1 = np.minimum(x0 + 1, w - 1)

    y = np.clip(y, 0.0, h - 1.0)
    y0 = np.floor(y).astype(np.int64)
    fy = y - y0
    y1 = np.minimum(y0 + 1, h - 1)

    fx = fx[..., None]
    fy = fy[..., None]
    out = (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x1] * fx * (1 - fy)
        + img[y1, x0] * (1 - fx) * fy
        + img[y1, x1] * fx * fy
    )
    return out[..., 0] if squeeze else out


def _equirect_coords(d: np.ndarray, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    lon, lat = direction_to_angles(d)
    x = (lon + math.pi) / (2.0 * math.pi) * w - 0.5
    y = (math.pi / 2.0 - lat) / math.pi * h - 0.5
    return x, y


def equirect_to_cubemap(eq: np.ndarray, face_size: int, fov_deg: float = 90.0) -> Cubemap:
    """Render the six cube faces of a panorama by perspective projection."""
    eq = validate_equirect(eq)
    if face_size < 2:
        raise DomainError(f"face_size must be >= 2, got {face_size}")
    h, w = eq.shape[:2]
    ii, jj = np.meshgrid(np.arange(face_size), np.arange(face_size), indexing="ij")
    faces = np.empty((6, face_size, face_size, eq.shape[2]), dtype=np.float64)
    for f in FaceId:
        d = pixel_to_direction(f, ii, jj, face_size, fov_deg)
        x, y = _equirect_coords(d, h, w)
        faces[f] = bilinear_sample(eq, x, y, wrap="wrap_x")
    return Cubemap(faces, fov_deg)


def crop_ratio(fov_from_deg: float, fov_to_deg: float) -> float:
    """Half-extent ratio of the central ``fov_to`` region inside a ``fov_from`` face."""
    return math.tan(math.radians(fov_to_deg) / 2.0) / math.tan(math.radians(fov_from_deg) / 2.0)


def crop_overlap(face: np.ndarray, fov_from_deg: float, fov_to_deg: float,
                 out_size: int | None = None) -> np.ndarray:
    """Resample the central ``fov_to`` portion out of a ``fov_from`` face.

    Continuous-coordinate bilinear resampling: the ratio of tangents is
    irrational in pixels, so integer cropping would not land on the grid.
    ``fov_to == fov_from`` degenerates to an identity resample.
    """
    if fov_to_deg > fov_from_deg:
        raise DomainError(
            f"cannot crop to a wider view: fov_to={fov_to_deg} > fov_from={fov_from_deg}"
        )
    if not 0.0 < fov_to_deg < 180.0 or not 0.0 < fov_from_deg < 180.0:
        raise DomainError("fields of view must be in (0, 180)")
    face = np.asarray(face, dtype=np.float64)
    size = face.shape[0]
    if face.ndim < 2 or face.shape[1] != size:
        raise ConfigError(f"face must be square, got {face.shape}")
    out = out_size or size
    r = crop_ratio(fov_from_deg, fov_to_deg)
    # target pixel k has tangent-plane offset r*(2(k+.5)/out - 1); invert the
    # source grid mapping to get the continuous source pixel coordinate
    k = np.arange(out, dtype=np.float64)
    src = ((r * (2.0 * (k + 0.5) / out - 1.0)) + 1.0) / 2.0 * size - 0.5
    xs, ys = np.meshgrid(src, src, indexing="xy")
    return bilinear_sample(face, xs, ys, wrap="clamp")


def cubemap_to_equirect(cm: Cubemap, out_height: int) -> np.ndarray:
    """Assemble an equirect panorama from a cubemap, cropping overlap first.

    Faces rendered wider than 90 degrees are cropped to their central 90
    degree portion before assembly; the gnomonic face lookup assumes 90.
    """
    if out_height < 1:
        raise DomainError("out_height must be >= 1")
    if cm.fov_deg > 90.0 + 1e-9:
        faces = np.stack([crop_overlap(cm.faces[f], cm.fov_deg, 90.0) for f in range(6)])
        cm = Cubemap(faces, 90.0)
    elif cm.fov_deg < 90.0 - 1e-9:
        raise DomainError(f"cannot assemble from faces narrower than 90 degrees ({cm.fov_deg})")
    h = out_height
    w = 2 * out_height
    size = cm.size
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    lon = (jj + 0.5) / w * 2.0 * math.pi - math.pi
    lat = math.pi / 2.0 - (ii + 0.5) / h * math.pi
    d = angles_to_direction(lon, lat)
    face, u, v = direction_to_face_uv(d)
    x = u * size - 0.5
    y = v * size - 0.5
    out = np.empty((h, w, cm.channels), dtype=np.float64)
    for f in range(6):
        m = face == f
        if np.any(m):
            out[m] = bilinear_sample(cm.faces[f], x[m], y[m], wrap="clamp")
    return out


@dataclass(frozen=True)
class EdgePair:
    """One shared cube edge: border ``edge_a`` of ``face_a`` meets ``edge_b`` of
    ``face_b``; ``flipped`` says the border index runs in opposite directions."""

    face_a: FaceId
    edge_a: str
    face_b: FaceId
    edge_b: str
    flipped: bool


def _border_coords(edge: str, size: int, inset: float):
    """Continuous (i, j) coordinates running along a face border.

    ``inset = 0`` lies exactly on the geometric face boundary, ``inset = 0.5``
    on the border pixel centres.  Index order is canonical: j ascending for
    top/bottom, i ascending for left/right.
    """
    t = np.arange(size, dtype=np.float64)
    lo = -0.5 + inset
    hi = size - 0.5 - inset
    if edge == "top":
        return np.full(size, lo), t
    if edge == "bottom":
        return np.full(size, hi), t
    if edge == "left":
        return t, np.full(size, lo)
    if edge == "right":
        return t, np.full(size, hi)
    raise ConfigError(f"unknown edge {edge!r}")


def border_pixel_directions(face: FaceId, edge: str, size: int, fov_deg: float = 90.0,
                            inset: float = 0.5) -> np.ndarray:
    """Directions of the points along a face border (see :func:`_border_coords`)."""
    i, j = _border_coords(edge, size, inset)
    return pixel_to_direction(face, i, j, size, fov_deg)


def border_strip(face_img: np.ndarray, edge: str) -> np.ndarray:
    """The border pixel row/column of a face image, in canonical index order."""
    if edge == "top":
        return face_img[0, :]
    if edge == "bottom":
        return face_img[-1, :]
    if edge == "left":
        return face_img[:, 0]
    if edge == "right":
        return face_img[:, -1]
    raise ConfigError(f"unknown edge {edge!r}")


@lru_cache(maxsize=1)
def seam_edge_pairs() -> tuple[EdgePair, ...]:
    """The 12 cube edges as matched face-border pairs.

    Derived from the face geometry itself: two half-edges pair up when their
    boundary directions coincide (possibly in reversed order), so the table is
    always consistent with the frame conventions in :mod:`panocube.geometry`.
    """
    size = 8
    half_edges = {}
    for f in FaceId:
        for e in _EDGES:
            half_edges[(f, e)] = border_pixel_directions(f, e, size, 90.0, inset=0.0)
    pairs = []
    used = set()
    keys = list(half_edges)
    for ka in keys:
        if ka in used:
            continue
        da = half_edges[ka]
        for kb in keys:
            if kb == ka or kb in used or kb[0] == ka[0]:
                continue
            db = half_edges[kb]
            if np.max(np.abs(da - db)) <= 1e-9:
                pairs.append(EdgePair(ka[0], ka[1], kb[0], kb[1], flipped=False))
                used.update((ka, kb))
                break
            if np.max(np.abs(da - db[::-1])) <= 1e-9:
                pairs.append(EdgePair(ka[0], ka[1], kb[0], kb[1], flipped=True))
                used.update((ka, kb))
                break
    if len(pairs) != 12:
        raise RuntimeError(f"expected 12 cube edges, matched {len(pairs)}")
    return tuple(pairs)
