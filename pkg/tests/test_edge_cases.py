import numpy as np
import pytest
import torch

from warpstyle.image import bilinear_sample, resize_to
from warpstyle.keypoints import Correspondence, KeypointSet, select, umeyama
from warpstyle.validation import as_image, as_points
from warpstyle.viz import render_overlay


class TestDegenerateShapes:
    def test_bilinear_on_single_column(self):
        img = torch.tensor([[[0.3]], [[0.9]]], dtype=torch.float64)  # 2 rows, 1 col
        out = bilinear_sample(img, torch.tensor([[0.0, 0.5], [5.0, 1.0]]))
        assert float(out[0, 0]) == pytest.approx(0.6, abs=1e-15)
        assert float(out[1, 0]) == 0.9  # x clamps onto the only column

    def test_bilinear_on_single_pixel(self):
        img = torch.full((1, 1, 2), 0.7, dtype=torch.float64)
        out = bilinear_sample(img, torch.tensor([[3.0, -2.0]]))
        assert torch.equal(out[0], img[0, 0])

    def test_grayscale_promoted_to_one_channel(self, rng):
        img = as_image(rng.random((4, 5)))
        assert img.shape == (4, 5, 1)
        up = resize_to(img, 8, 10)
        assert up.shape == (8, 10, 1)

    def test_upsample_single_row(self, rng):
        img = torch.from_numpy(rng.random((1, 6, 3)))
        out = resize_to(img, 3, 12)
        assert out.shape == (3, 12, 3)
        # a 1-row image is constant along y after resize
        assert torch.equal(out[0], out[2])


class TestValidation:
    def test_non_finite_image_rejected(self):
        bad = np.full((2, 2, 3), np.nan)
        with pytest.raises(ValueError, match="finite"):
            as_image(bad)

    def test_bad_point_shape_rejected(self):
        with pytest.raises(ValueError, match="N, 2"):
            as_points(np.zeros((3, 4)))

    def test_select_rejects_nonpositive_spacing(self):
        with pytest.raises(ValueError, match="min_spacing"):
            select([Correspondence((0.0, 0.0), (0.0, 0.0), 1.0)], min_spacing=0.0)


class TestTwoPointUmeyama:
    def test_two_points_recover_exact_similarity(self):
        # two distinct pairs determine scale, rotation, and translation
        src = np.array([[0.0, 0.0], [2.0, 0.0]])
        dst = np.array([[1.0, 1.0], [1.0, 5.0]])  # scale 2, rotate 90, shift
        t = umeyama(src, dst)
        assert t.scale == pytest.approx(2.0, abs=1e-12)
        assert np.linalg.norm(t.apply(src) - dst) < 1e-9
        assert np.linalg.det(t.rotation) == pytest.approx(1.0, abs=1e-12)


class TestOverlay:
    def test_render_overlay_shape_and_determinism(self, rng):
        img = torch.from_numpy(rng.random((32, 40, 3)))
        kps = KeypointSet(
            source=rng.uniform(4, 28, (5, 2)),
            target=rng.uniform(4, 28, (5, 2)),
        )
        canvas = render_overlay(img, kps)
        assert canvas.size == (40, 32)
        again = render_overlay(img, kps)
        assert canvas.tobytes() == again.tobytes()

    def test_overlay_marks_differ_from_background(self, rng):
        img = torch.zeros((20, 20, 3), dtype=torch.float64)
        kps = KeypointSet(source=[[10.0, 10.0]], target=[[15.0, 15.0]])
        canvas = render_overlay(img, kps)
        assert np.asarray(canvas).sum() > 0
