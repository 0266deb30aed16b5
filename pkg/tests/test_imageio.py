import json

import numpy as np
import pytest

from panocube.errors import ConfigError, DomainError
from panocube.imageio import (
    load_cubemap,
    load_equirect,
    load_image,
    save_cubemap,
    save_equirect,
    save_image,
)
from panocube.projection import Cubemap


class TestPngRoundTrip:
    def test_8bit(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.random((16, 32, 3))
        p = tmp_path / "x.png"
        save_image(p, img)
        back = load_image(p)
        assert back.shape == img.shape
        assert np.max(np.abs(back - img)) <= 0.5 / 255.0 + 1e-9

    def test_16bit_grayscale(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.random((8, 16, 1))
        p = tmp_path / "g.png"
        save_image(p, img, bit_depth=16)
        back = load_image(p)
        assert back.shape == (8, 16, 1)
        assert np.max(np.abs(back - img)) <= 0.5 / 65535.0 + 1e-12

    def test_clipping(self, tmp_path):
        p = tmp_path / "c.png"
        save_image(p, np.array([[[1.7], [-0.3]]]))
        back = load_image(p)
        assert back[0, 0, 0] == 1.0 and back[0, 1, 0] == 0.0


class TestEquirectIO:
    def test_aspect_enforced_on_load(self, tmp_path):
        p = tmp_path / "bad.png"
        save_image(p, np.zeros((16, 16, 3)))
        with pytest.raises(DomainError):
            load_equirect(p)

    def test_round_trip(self, tmp_path):
        eq = np.random.default_rng(2).random((8, 16, 3))
        p = tmp_path / "eq.png"
        save_equirect(p, eq)
        assert load_equirect(p).shape == (8, 16, 3)


class TestCubemapIO:
    def test_round_trip_with_sidecar(self, tmp_path):
        cm = Cubemap(np.random.default_rng(3).random((6, 8, 8, 3)), 95.0)
        stem = tmp_path / "cube"
        save_cubemap(stem, cm)
        sidecar = json.loads((tmp_path / "cube.json").read_text())
        assert sidecar == {"fov_deg": 95.0, "face_size": 8, "channels": 3}
        back = load_cubemap(stem)
        assert back.fov_deg == 95.0
        assert np.max(np.abs(back.faces - cm.faces)) <= 0.5 / 255.0 + 1e-9

    def test_missing_face_listed(self, tmp_path):
        cm = Cubemap(np.zeros((6, 4, 4, 3)), 90.0)
        stem = tmp_path / "cube"
        save_cubemap(stem, cm)
        (tmp_path / "cube_left.png").unlink()
        with pytest.raises(FileNotFoundError, match="cube_left.png"):
            load_cubemap(stem)

    def test_size_mismatch_rejected(self, tmp_path):
        cm = Cubemap(np.zeros((6, 4, 4, 3)), 90.0)
        stem = tmp_path / "cube"
        save_cubemap(stem, cm)
        save_image(tmp_path / "cube_front.png", np.zeros((8, 8, 3)))
        with pytest.raises(ConfigError):
            load_cubemap(stem)
