"""PNG input/output for equirect panoramas and cubemaps.

On disk a cubemap is six files ``<stem>_front.png``, ``_right.png``,
``_back.png``, ``_left.png``, ``_up.png``, ``_down.png`` plus a ``<stem>.json``
sidecar ``{"fov_deg": ..., "face_size": ..., "channels": ...}``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DomainError
from .projection import Cubemap, validate_equirect

__all__ = [
    "FACE_SUFFIXES",
    "load_image",
    "save_image",
    "load_equirect",
    "save_equirect",
    "load_cubemap",
    "save_cubemap",
    "cubemap_face_paths",
]

FACE_SUFFIXES = ("front", "right", "back", "left", "up", "down")


def load_image(path) -> np.ndarray:
    """Read a PNG into a float ``(h, w, c)`` array scaled to ``[0, 1]``."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        else:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[..., None]
    return arr


def save_image(path, arr: np.ndarray, bit_depth: int = 8) -> None:
    """Write ``arr`` (values clipped to ``[0, 1]``) as an 8- or 16-bit PNG."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ConfigError(f"cannot save image of shape {arr.shape}")
    arr = np.clip(arr, 0.0, 1.0)
    if bit_depth == 8:
        data = np.round(arr * 255.0).astype(np.uint8)
        im = Image.fromarray(data[..., 0], "L") if data.shape[2] == 1 else Image.fromarray(data, "RGB")
    elif bit_depth == 16:
        if arr.shape[2] != 1:
            raise ConfigError("16-bit PNG output supports single-channel images only")
        data = np.round(arr[..., 0] * 65535.0).astype(np.uint16)
        im = Image.fromarray(data)
    else:
        raise ConfigError(f"bit_depth must be 8 or 16, got {bit_depth}")
    im.save(path, format="PNG")


def load_equirect(path) -> np.ndarray:
    """Load a panorama PNG, enforcing the 2:1 aspect invariant."""
    arr = load_image(path)
    return validate_equirect(arr)


def save_equirect(path, eq: np.ndarray, bit_depth: int = 8) -> None:
    save_image(path, validate_equirect(eq), bit_depth)


def cubemap_face_paths(stem) -> list[Path]:
    stem = Path(stem)
    return [stem.parent / f"{stem.name}_{s}.png" for s in FACE_SUFFIXES]


def save_cubemap(stem, cm: Cubemap, bit_depth: int = 8) -> None:
    """Write six face PNGs and the JSON sidecar."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    for f, path in enumerate(cubemap_face_paths(stem)):
        save_image(path, cm.faces[f], bit_depth)
    sidecar = {"fov_deg": cm.fov_deg, "face_size": cm.size, "channels": cm.channels}
    (stem.parent / f"{stem.name}.json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_cubemap(stem) -> Cubemap:
    """Load six face PNGs plus sidecar; missing files raise FileNotFoundError."""
    stem = Path(stem)
    sidecar_path = stem.parent / f"{stem.name}.json"
    if not sidecar_path.exists():
        raise FileNotFoundError(f"missing cubemap sidecar: {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text())
    for key in ("fov_deg", "face_size", "channels"):
        if key not in sidecar:
            raise ConfigError(f"cubemap sidecar {sidecar_path} lacks key {key!r}")
    faces = []
    for path in cubemap_face_paths(stem):
        if not path.exists():
            raise FileNotFoundError(f"missing cubemap face: {path}")
        face = load_image(path)
        if face.shape[0] != sidecar["face_size"] or face.shape[1] != sidecar["face_size"]:
            raise ConfigError(f"face {path} size {face.shape[:2]} does not match sidecar")
        faces.append(face)
    cm = Cubemap(np.stack(faces), float(sidecar["fov_deg"]))
    if cm.channels != sidecar["channels"]:
        raise ConfigError("face channel count does not match sidecar")
    return cm
