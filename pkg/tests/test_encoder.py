import numpy as np
import pytest

from diif.encoder import FeatureMap, load_feature_map, save_feature_map, unfold_encode
from diif.errors import FormatError


class TestUnfoldEncode:
    def test_radius_zero_is_identity(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(size=(5, 4, 3))
        fmap = unfold_encode(img, radius=0)
        assert (fmap.height, fmap.width, fmap.depth) == (5, 4, 3)
        np.testing.assert_array_equal(fmap.data, img)

    def test_constant_image_repeats(self):
        img = np.full((4, 4, 3), 0.25)
        fmap = unfold_encode(img, radius=1)
        assert fmap.depth == 27
        np.testing.assert_array_equal(fmap.data, np.full((4, 4, 27), 0.25))

    def test_interior_pixel_matches_hand_gather(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(size=(6, 6, 3))
        fmap = unfold_encode(img, radius=1)
        r, c = 3, 2
        expect = np.concatenate([
            img[r + dy, c + dx] for dy in (-1, 0, 1) for dx in (-1, 0, 1)
        ])
        np.testing.assert_array_equal(fmap.data[r, c], expect)

    def test_border_clamps(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(size=(3, 3, 3))
        fmap = unfold_encode(img, radius=1)
        # top-left pixel: out-of-range neighbors clamp onto row/col 0
        expect = np.concatenate([
            img[max(dy, 0), max(dx, 0)] for dy in (-1, 0, 1) for dx in (-1, 0, 1)
        ])
        np.testing.assert_array_equal(fmap.data[0, 0], expect)

    def test_translation_equivariance_interior(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(size=(7, 7, 3))
        shifted = np.roll(img, 1, axis=0)
        a = unfold_encode(img, radius=1)
        b = unfold_encode(shifted, radius=1)
        np.testing.assert_array_equal(a.data[2:5], b.data[3:6])

    def test_radius_two_depth(self):
        img = np.zeros((6, 6, 3))
        assert unfold_encode(img, radius=2).depth == 75


class TestFeatureMapValidation:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            FeatureMap(2, 2, 3, np.zeros((2, 2, 4)))

    def test_grid_matches_dims(self):
        fmap = FeatureMap(3, 5, 1, np.zeros((3, 5, 1)))
        g = fmap.grid()
        assert (g.height, g.width) == (3, 5)


class TestFeatureMapFiles:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(4)
        fmap = FeatureMap(3, 4, 5, rng.standard_normal((3, 4, 5)).astype(np.float32))
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_feature_map(p1, fmap)
        back = load_feature_map(p1)
        np.testing.assert_array_equal(back.data, fmap.data)
        save_feature_map(p2, back)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_only_file(self, tmp_path):
        p = tmp_path / "short.bin"
        p.write_bytes(b"DIFM" + b"\x01\x00\x00\x00")
        with pytest.raises(FormatError, match="byte"):
            load_feature_map(p)

    def test_wrong_magic(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(FormatError, match="magic"):
            load_feature_map(p)

    def test_trailing_bytes_rejected(self, tmp_path):
        fmap = FeatureMap(2, 2, 1, np.zeros((2, 2, 1), dtype=np.float32))
        p = tmp_path / "extra.bin"
        save_feature_map(p, fmap)
        p.write_bytes(p.read_bytes() + b"\x00")
        with pytest.raises(FormatError):
            load_feature_map(p)
