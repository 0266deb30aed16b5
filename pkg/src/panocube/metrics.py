"""Panorama quality metrics that need no pretrained networks.

Seam discontinuity compares matched border strips across the 12 cube edges;
wraparound error checks the equirect left/right boundary; face color
divergence measures cross-face tone drift.  Distribution distance is the
unbiased squared maximum mean discrepancy under a cubic polynomial kernel,
computed on features from a pluggable extractor (default: per-cell mean,
variance, and gradient-orientation histograms on a 4x4 grid).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .geometry import FaceId, angles_to_direction, face_frame, normalize
from .ops import group_norm
from .projection import Cubemap, bilinear_sample, border_strip, seam_edge_pairs, validate_equirect
from .tensor import Tensor

__all__ = [
    "SeamReport",
    "seam_discontinuity",
    "wraparound_error",
    "face_color_divergence",
    "render_view",
    "sample_perspective_views",
    "patch_stats_features",
    "kid_mmd",
    "sync_gn_autoencoder_divergence",
    "metric_report",
]


@dataclass
class SeamReport:
    per_edge_mean: list
    per_edge_max: list
    mean: float
    max: float


def seam_discontinuity(cm: Cubemap) -> SeamReport:
    """Absolute border differences over the 12 cube edges of a 90 degree cubemap."""
    if abs(cm.fov_deg - 90.0) > 1e-6:
        raise DomainError(f"seam metric needs 90 degree faces, got {cm.fov_deg}; crop first")
    means, maxes = [], []
    for p in seam_edge_pairs():
        sa = border_strip(cm.faces[p.face_a], p.edge_a)
        sb = border_strip(cm.faces[p.face_b], p.edge_b)
        if p.flipped:
            sb = sb[::-1]
        d = np.abs(sa - sb)
        means.append(float(d.mean()))
        maxes.append(float(d.max()))
    return SeamReport(means, maxes, float(np.mean(means)), float(np.max(maxes)))


def wraparound_error(eq: np.ndarray) -> float:
    """Mean absolute difference between the first and last pixel columns."""
    eq = validate_equirect(eq)
    return float(np.mean(np.abs(eq[:, 0] - eq[:, -1])))


def face_color_divergence(cm: Cubemap) -> float:
    """Largest pairwise gap between per-face mean colors, averaged over channels."""
    means = cm.faces.mean(axis=(1, 2))  # (6, c)
    worst = 0.0
    for a in range(6):
        for b in range(a + 1, 6):
            worst = max(worst, float(np.mean(np.abs(means[a] - means[b]))))
    return worst


def render_view(eq: np.ndarray, forward: np.ndarray, fov_deg: float, size: int) -> np.ndarray:
    """Perspective view of a panorama along ``forward`` with +Y up."""
    eq = validate_equirect(eq)
    fwd = normalize(np.asarray(forward, dtype=np.float64))
    if abs(fwd[1]) > 0.999:
        raise DomainError("view direction too close to a pole for a +Y-up camera")
    up_world = np.array([0.0, 1.0, 0.0])
    right = normalize(np.cross(up_world, fwd))
    up = np.cross(fwd, right)
    half = math.tan(math.radians(fov_deg) / 2.0)
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    a = half * (2.0 * (jj + 0.5) / size - 1.0)
    b = half * (1.0 - 2.0 * (ii + 0.5) / size)
    d = fwd + a[..., None] * right + b[..., None] * up
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    h, w = eq.shape[:2]
    lon = np.arctan2(d[..., 0], d[..., 2])
    lat = np.arctan2(d[..., 1], np.hypot(d[..., 0], d[..., 2]))
    x = (lon + math.pi) / (2 * math.pi) * w - 0.5
    y = (math.pi / 2 - lat) / math.pi * h - 0.5
    return bilinear_sample(eq, x, y, wrap="wrap_x")


def sample_perspective_views(eq: np.ndarray, n: int = 10, fov_deg: float = 90.0,
                             seed: int = 0, size: int = 64) -> list[np.ndarray]:
    """``n`` random views: azimuth uniform, elevation within +-45 degrees."""
    rng = np.random.default_rng(np.random.SeedSequence((0x71E3, int(seed))))
    views = []
    for _ in range(n):
        az = rng.uniform(-math.pi, math.pi)
        el = rng.uniform(-math.pi / 4, math.pi / 4)
        views.append(render_view(eq, angles_to_direction(az, el), fov_deg, size))
    return views


def patch_stats_features(image: np.ndarray, grid: int = 4, bins: int = 8) -> np.ndarray:
    """Default feature extractor: per-cell channel mean/variance plus a
    magnitude-weighted gradient-orientation histogram on the gray image."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[..., None]
    h, w, c = image.shape
    gray = image.mean(axis=-1)
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    ori = np.mod(np.arctan2(gy, gx), math.pi)  # orientation modulo pi
    feats = []
    ys = np.linspace(0, h, grid + 1).astype(int)
    xs = np.linspace(0, w, grid + 1).astype(int)
    for i in range(grid):
        for j in range(grid):
            cell = image[ys[i]:ys[i + 1], xs[j]:xs[j + 1]]
            feats.extend(cell.reshape(-1, c).mean(axis=0))
            feats.extend(cell.reshape(-1, c).var(axis=0))
            m = mag[ys[i]:ys[i + 1], xs[j]:xs[j + 1]].reshape(-1)
            o = ori[ys[i]:ys[i + 1], xs[j]:xs[j + 1]].reshape(-1)
            hist, _ = np.histogram(o, bins=bins, range=(0.0, math.pi), weights=m)
            total = hist.sum()
            feats.extend(hist / total if total > 0 else hist)
    return np.asarray(feats)


def _poly_kernel(a: np.ndarray, b: np.ndarray, degree: int) -> np.ndarray:
    d = a.shape[1]
    return (a @ b.T / d + 1.0) ** degree


def kid_mmd(feats_a: np.ndarray, feats_b: np.ndarray, degree: int = 3,
            unbiased: bool = True) -> float:
    """Squared maximum mean discrepancy with the polynomial kernel
    ``(x.y / d + 1)^degree``; the unbiased estimator may be slightly negative."""
    a = np.atleast_2d(np.asarray(feats_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(feats_b, dtype=np.float64))
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise DomainError("kid_mmd needs at least 2 samples per set")
    if a.shape[1] != b.shape[1]:
        raise ConfigError("feature dimensions differ between sets")
    m, n = a.shape[0], b.shape[0]
    kaa = _poly_kernel(a, a, degree)
    kbb = _poly_kernel(b, b, degree)
    kab = _poly_kernel(a, b, degree)
    if unbiased:
        term_a = (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
        term_b = (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
    else:
        term_a = kaa.sum() / (m * m)
        term_b = kbb.sum() / (n * n)
    return float(term_a + term_b - 2.0 * kab.mean())


def sync_gn_autoencoder_divergence(cm: Cubemap, seed: int = 0) -> tuple[float, float]:
    """Color drift of a toy normalize/denormalize autoencoder, sync vs unsync.

    The encoder is a fixed random channel mix, the bottleneck a group norm,
    and the decoder inverts the mix and restores the panorama's joint
    statistics.  With synchronized normalization the restored faces keep their
    true relative tones; per-face normalization shifts each face before the
    shared denormalization, so the reconstruction error drifts per face.
    Returns ``face_color_divergence`` of the residual for both modes.
    """
    rng = np.random.default_rng(np.random.SeedSequence((0xAE, int(seed))))
    c = cm.channels
    mix = np.eye(c) + 0.1 * rng.standard_normal((c, c))
    x = cm.faces @ mix.T  # (6, s, s, c)
    x5 = Tensor(x.transpose(0, 3, 1, 2)[None])  # (1, 6, c, s, s)
    joint_mu = x.mean(axis=(0, 1, 2))
    joint_sd = x.std(axis=(0, 1, 2)) + 1e-8

    results = []
    for synchronized in (True, False):
        y = group_norm(x5, groups=1, synchronized=synchronized).data[0]
        y = y.transpose(0, 2, 3, 1) * joint_sd + joint_mu  # denormalize with joint stats
        recon = y @ np.linalg.inv(mix).T
        residual = Cubemap(recon - cm.faces + 0.5, cm.fov_deg)
        results.append(face_color_divergence(residual))
    return results[0], results[1]


def metric_report(metric: str, value, n: int, seed, config: dict | None = None) -> dict:
    """Canonical JSON structure for metric outputs."""
    blob = json.dumps(config or {}, sort_keys=True).encode()
    return {
        "metric": metric,
        "value": value,
        "n": n,
        "seed": seed,
        "config_hash": hashlib.sha256(blob).hexdigest()[:16],
    }
