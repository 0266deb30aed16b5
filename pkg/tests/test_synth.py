import numpy as np
import pytest

from panocube.errors import DomainError
from panocube.geometry import FaceId
from panocube.projection import equirect_to_cubemap
from panocube.synth import (
    KINDS,
    MARKER_RADIUS,
    PALETTE,
    beacon_assignment,
    synth_panorama,
    toy_text_embed,
)


class TestSynthPanorama:
    @pytest.mark.parametrize("kind", KINDS)
    def test_deterministic(self, kind):
        a = synth_panorama(7, kind, 64)
        b = synth_panorama(7, kind, 64)
        assert np.array_equal(a, b)
        c = synth_panorama(8, kind, 64)
        assert not np.array_equal(a, c)

    @pytest.mark.parametrize("kind", KINDS)
    def test_range_and_shape(self, kind):
        img = synth_panorama(3, kind, 48)
        assert img.shape == (48, 96, 3)
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_sky_rows_constant_outside_sun(self):
        img = synth_panorama(11, "sky_gradient", 64)
        sun = np.array([1.0, 0.95, 0.75])
        for row in img:
            outside = row[np.any(np.abs(row - sun) > 1e-9, axis=-1)]
            if len(outside):
                assert np.max(np.abs(outside - outside[0])) <= 1e-12

    def test_beacon_markers_at_face_centers(self):
        seed = 5
        assignment = beacon_assignment(seed)
        pano = synth_panorama(seed, "beacon_room", 128)
        cm = equirect_to_cubemap(pano, 64, 95.0)
        for f in FaceId:
            center = cm.faces[f, 28:36, 28:36].reshape(-1, 3).mean(axis=0)
            want = PALETTE[assignment["face_palette"][int(f)]]
            assert np.max(np.abs(center - want)) <= 0.02, (f, center, want)
            # a border corner patch is wall, not marker
            corner = cm.faces[f, :4, :4].reshape(-1, 3).mean(axis=0)
            assert np.max(np.abs(corner - assignment["wall"])) <= 0.05

    def test_beacon_palette_distinct(self):
        a = beacon_assignment(1)
        idxs = list(a["face_palette"].values())
        assert sorted(idxs) == [0, 1, 2, 3, 4, 5]

    def test_rotation_varies_with_seed(self):
        ks = {beacon_assignment(s)["rotation"] for s in range(40)}
        assert len(ks) == 6

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            synth_panorama(0, "lava_lamp")


class TestToyTextEmbed:
    def test_null_condition(self):
        tok = toy_text_embed("", 8, 64)
        assert tok.shape == (8, 64)
        assert np.all(tok == 0.0)

    def test_deterministic(self):
        a = toy_text_embed("a quiet library", 8, 64)
        b = toy_text_embed("a quiet library", 8, 64)
        assert np.array_equal(a, b)

    def test_unit_rows(self):
        tok = toy_text_embed("sunset", 4, 32)
        assert np.allclose(np.linalg.norm(tok, axis=1), 1.0, atol=1e-12)

    def test_distinct_captions_low_similarity(self):
        rng = np.random.default_rng(0)
        captions = [f"scene number {i}" for i in range(24)]
        vecs = [toy_text_embed(c, 1, 64)[0] for c in captions]
        sims = []
        for i in range(len(vecs)):
            for j in range(i + 1, len(vecs)):
                sims.append(abs(np.dot(vecs[i], vecs[j])))
        # random unit vectors in dim 64: |cos| stays well under 0.5
        assert np.max(sims) < 0.5
        assert np.mean(sims) < 0.2
