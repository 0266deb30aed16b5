import math

import numpy as np
import pytest

from panocube.errors import DomainError
from panocube.geometry import FaceId, pixel_to_direction, direction_to_angles
from panocube.projection import (
    Cubemap,
    bilinear_sample,
    border_pixel_directions,
    border_strip,
    crop_overlap,
    crop_ratio,
    cubemap_to_equirect,
    equirect_to_cubemap,
    seam_edge_pairs,
)


def analytic_panorama(height, channels=3):
    """Band-limited test pattern: smooth in (lon, lat), wrap-continuous,
    constant along the pole rows."""
    w = 2 * height
    jj, ii = np.meshgrid(np.arange(w), np.arange(height))
    lon = (jj + 0.5) / w * 2 * math.pi - math.pi
    lat = math.pi / 2 - (ii + 0.5) / height * math.pi
    return analytic_value(lon, lat, channels)


def analytic_value(lon, lat, channels=3):
    cl = np.cos(lat)
    chans = [
        0.5 + 0.25 * np.sin(lon) * cl + 0.2 * np.sin(lat),
        0.5 + 0.2 * np.cos(2 * lon) * cl - 0.15 * np.cos(2 * lat),
        0.5 + 0.15 * np.sin(lon + 1.0) * cl * np.cos(lat) + 0.1 * np.sin(3 * lat),
    ]
    return np.stack(chans[:channels], axis=-1)


def psnr(a, b):
    mse = np.mean((a - b) ** 2)
    return math.inf if mse == 0 else 10 * math.log10(1.0 / mse)


class TestBilinear:
    def test_pixel_centers(self):
        rng = np.random.default_rng(0)
        img = rng.random((5, 7, 3))
        xs, ys = np.meshgrid(np.arange(7.0), np.arange(5.0))
        out = bilinear_sample(img, xs, ys)
        assert np.allclose(out, img, atol=1e-12)

    def test_midpoint_mean(self):
        img = np.array([[[0.0], [1.0]]])
        assert abs(bilinear_sample(img, 0.5, 0.0)[0] - 0.5) <= 1e-12

    def test_wrap_x_blend(self):
        # one row, W columns; x = W - 0.25 blends last (weight .25) and first (.75)
        w = 6
        img = np.arange(w, dtype=np.float64).reshape(1, w, 1)
        got = bilinear_sample(img, w - 0.25, 0.0, wrap="wrap_x")[0]
        want = 0.25 * img[0, w - 1, 0] + 0.75 * img[0, 0, 0]
        assert abs(got - want) <= 1e-12

    def test_linearity(self):
        rng = np.random.default_rng(3)
        a, b = rng.random((4, 8, 2)), rng.random((4, 8, 2))
        x, y = rng.random(20) * 7, rng.random(20) * 3
        lhs = bilinear_sample(2.0 * a + 0.5 * b, x, y)
        rhs = 2.0 * bilinear_sample(a, x, y) + 0.5 * bilinear_sample(b, x, y)
        assert np.allclose(lhs, rhs, atol=1e-12)


class TestEquirectToCubemap:
    def test_constant_color(self):
        eq = np.full((32, 64, 3), 0.63)
        cm = equirect_to_cubemap(eq, 16, 90.0)
        assert np.allclose(cm.faces, 0.63, atol=1e-12)

    def test_analytic_oracle(self):
        eq = analytic_panorama(256)
        cm = equirect_to_cubemap(eq, 128, 90.0)
        ii, jj = np.meshgrid(np.arange(128), np.arange(128), indexing="ij")
        worst = 0.0
        for f in FaceId:
            d = pixel_to_direction(f, ii, jj, 128, 90.0)
            lon, lat = direction_to_angles(d)
            want = analytic_value(lon, lat)
            rms = math.sqrt(np.mean((cm.faces[f] - want) ** 2))
            worst = max(worst, rms)
        assert worst <= 0.01

    def test_projection_linearity(self):
        rng = np.random.default_rng(1)
        a = rng.random((16, 32, 1))
        b = rng.random((16, 32, 1))
        pa = equirect_to_cubemap(a, 8).faces
        pb = equirect_to_cubemap(b, 8).faces
        pab = equirect_to_cubemap(1.5 * a + 0.25 * b, 8).faces
        assert np.max(np.abs(pab - (1.5 * pa + 0.25 * pb))) <= 1e-6

    def test_wide_fov_contains_narrow(self):
        eq = analytic_panorama(128)
        wide = equirect_to_cubemap(eq, 64, 95.0)
        narrow = equirect_to_cubemap(eq, 64, 90.0)
        cropped = np.stack([crop_overlap(wide.faces[f], 95.0, 90.0) for f in range(6)])
        rms = math.sqrt(np.mean((cropped - narrow.faces) ** 2))
        assert rms <= 0.01

    def test_horizontal_wrap_shift(self):
        eq = analytic_panorama(64)
        k = 32  # quarter turn of the 128-wide panorama
        shifted = np.roll(eq, -k, axis=1)
        cm_shift = equirect_to_cubemap(shifted, 128, 90.0)
        # rotating longitude by the same amount before lookup gives the same faces
        ii, jj = np.meshgrid(np.arange(128), np.arange(128), indexing="ij")
        worst = 0.0
        for f in FaceId:
            d = pixel_to_direction(f, ii, jj, 128, 90.0)
            lon, lat = direction_to_angles(d)
            want = analytic_value(lon + k / 128.0 * 2 * math.pi, lat)
            rms = math.sqrt(np.mean((cm_shift.faces[f] - want) ** 2))
            worst = max(worst, rms)
        assert worst <= 0.01


class TestCropOverlap:
    def test_identity_same_fov(self):
        rng = np.random.default_rng(2)
        face = rng.random((17, 17, 3))
        out = crop_overlap(face, 90.0, 90.0)
        assert np.max(np.abs(out - face)) <= 1e-6

    def test_ratio_95_to_90(self):
        # regression constant: tan(45 deg) / tan(47.5 deg)
        assert abs(crop_ratio(95.0, 90.0) - 0.9163311740174234) <= 1e-12

    def test_cropped_grid_directions(self):
        size = 32
        r = crop_ratio(95.0, 90.0)
        k = np.arange(size, dtype=np.float64)
        src = ((r * (2 * (k + 0.5) / size - 1)) + 1) / 2 * size - 0.5
        ii_src, jj_src = np.meshgrid(src, src, indexing="ij")
        d_cropped = pixel_to_direction(FaceId.LEFT, ii_src, jj_src, size, 95.0)
        ii, jj = np.meshgrid(k, k, indexing="ij")
        d_direct = pixel_to_direction(FaceId.LEFT, ii, jj, size, 90.0)
        assert np.max(np.abs(d_cropped - d_direct)) <= 1e-9

    def test_widen_rejected(self):
        with pytest.raises(DomainError):
            crop_overlap(np.zeros((4, 4, 1)), 90.0, 95.0)


class TestCubemapToEquirect:
    def test_constant(self):
        cm = Cubemap(np.full((6, 8, 8, 3), 0.4), 90.0)
        eq = cubemap_to_equirect(cm, 16)
        assert np.allclose(eq, 0.4, atol=1e-12)

    def test_round_trip_psnr(self):
        eq = analytic_panorama(256)
        cm = equirect_to_cubemap(eq, 128, 90.0)
        back = cubemap_to_equirect(cm, 256)
        assert psnr(eq, back) >= 30.0

    def test_overlap_path_equivalence(self):
        eq = analytic_panorama(128)
        cm95 = equirect_to_cubemap(eq, 64, 95.0)
        direct = cubemap_to_equirect(cm95, 128)
        pre = Cubemap(
            np.stack([crop_overlap(cm95.faces[f], 95.0, 90.0) for f in range(6)]), 90.0
        )
        manual = cubemap_to_equirect(pre, 128)
        rms = math.sqrt(np.mean((direct - manual) ** 2))
        assert rms <= 1e-3


class TestSeamEdgePairs:
    def test_twelve_edges(self):
        pairs = seam_edge_pairs()
        assert len(pairs) == 12
        halves = set()
        for p in pairs:
            halves.add((p.face_a, p.edge_a))
            halves.add((p.face_b, p.edge_b))
        assert len(halves) == 24  # every half-edge appears exactly once

    def test_matched_border_directions_close(self):
        size = 16
        pitch = math.radians(90.0) / size
        for p in seam_edge_pairs():
            da = border_pixel_directions(p.face_a, p.edge_a, size, 90.0)
            db = border_pixel_directions(p.face_b, p.edge_b, size, 90.0)
            if p.flipped:
                db = db[::-1]
            ang = np.arccos(np.clip(np.sum(da * db, axis=-1), -1, 1))
            assert np.max(ang) <= pitch

    def test_projected_cubemap_border_agreement(self):
        eq = analytic_panorama(128)
        cm = equirect_to_cubemap(eq, 64, 90.0)
        for p in seam_edge_pairs():
            sa = border_strip(cm.faces[p.face_a], p.edge_a)
            sb = border_strip(cm.faces[p.face_b], p.edge_b)
            if p.flipped:
                sb = sb[::-1]
            assert np.mean(np.abs(sa - sb)) <= 0.02
