import math

import numpy as np
import pytest

from facedecomp.core import Image, LandmarkSet, Mask, NormalMap
from facedecomp.warp import (
    align_loss_albedo,
    align_loss_normal,
    estimate_warp,
    rasterize_contour,
    warp_albedo,
    warp_normal,
)

W = H = 40


def spread_landmarks():
    """A non-degenerate landmark set well inside the raster."""
    ring = np.array(
        [
            [20.0, 8.0], [28.0, 11.0], [32.0, 20.0], [28.0, 29.0], [20.0, 32.0],
            [12.0, 29.0], [8.0, 20.0], [12.0, 11.0],
        ]
    )
    inner = np.array([[20.0, 16.0], [24.0, 20.0], [20.0, 24.0], [16.0, 20.0]])
    pts = np.vstack([ring, inner])
    return LandmarkSet(pts, groups=(tuple(range(8)) + (0,), (8, 9, 10, 11)))


def similarity(pts, theta, s, tx, ty, cx=19.5, cy=19.5):
    c, d = math.cos(theta), math.sin(theta)
    rel = pts - [cx, cy]
    out = np.empty_like(rel)
    out[:, 0] = s * (c * rel[:, 0] - d * rel[:, 1]) + cx + tx
    out[:, 1] = s * (d * rel[:, 0] + c * rel[:, 1]) + cy + ty
    return out


class TestEstimateWarp:
    def test_identity_is_pixel_exact(self):
        lm = spread_landmarks()
        wf = estimate_warp(lm, lm, W, H)
        yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
        coords = np.stack([xx, yy], axis=2)
        assert wf.valid.any()
        assert np.array_equal(wf.src[wf.valid], coords[wf.valid])
        assert (wf.theta[wf.valid] == 0.0).all()

    def test_translation_recovered(self):
        lm = spread_landmarks()
        moved = LandmarkSet(lm.points + [5.0, 0.0], groups=lm.groups)
        wf = estimate_warp(lm, moved, W, H)
        it = wf.interior
        assert it.any()
        yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
        assert np.abs(wf.src[it][:, 0] - (xx[it] - 5.0)).max() < 1e-9
        assert np.abs(wf.src[it][:, 1] - yy[it]).max() < 1e-9
        assert np.abs(wf.theta[it]).max() < 1e-12

    def test_rotation_angle_and_sign(self):
        lm = spread_landmarks()
        theta = math.radians(20.0)
        moved = LandmarkSet(similarity(lm.points, theta, 1.0, 0.0, 0.0), groups=lm.groups)
        wf = estimate_warp(lm, moved, W, H)
        it = wf.interior
        assert it.any()
        # pixel-frame rotation by +theta reads as -theta for y-up normals
        assert np.abs(wf.theta[it] - (-theta)).max() < 1e-3

    def test_full_similarity_recovered(self):
        lm = spread_landmarks()
        theta, s, tx, ty = math.radians(-12.0), 1.15, 2.0, -3.0
        moved = LandmarkSet(similarity(lm.points, theta, s, tx, ty), groups=lm.groups)
        wf = estimate_warp(lm, moved, W, H)
        it = wf.interior
        assert it.sum() > 20
        yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
        tgt = np.stack([xx, yy], axis=2)[it]
        # invert the similarity to get expected source coordinates
        rel = tgt - [19.5 + tx, 19.5 + ty]
        c, d = math.cos(-theta), math.sin(-theta)
        exp = np.empty_like(rel)
        exp[:, 0] = (c * rel[:, 0] - d * rel[:, 1]) / s + 19.5
        exp[:, 1] = (d * rel[:, 0] + c * rel[:, 1]) / s + 19.5
        assert np.abs(wf.src[it] - exp).max() < 0.1
        assert np.abs(wf.theta[it] - (-theta)).max() < 1e-3

    def test_collinear_landmarks_rejected(self):
        pts = np.array([[5.0, 5.0], [10.0, 10.0], [15.0, 15.0], [20.0, 20.0]])
        with pytest.raises(ValueError):
            lm = LandmarkSet(pts, groups=((0, 1, 2, 3),))
            estimate_warp(lm, lm, W, H)

    def test_mismatched_counts_rejected(self):
        a = spread_landmarks()
        b = LandmarkSet(a.points[:-1], groups=(tuple(range(8)) + (0,), (8, 9, 10)))
        with pytest.raises(ValueError):
            estimate_warp(a, b, W, H)


class TestWarpAlbedo:
    def test_identity_roundtrip(self):
        r = np.random.default_rng(0)
        a = Image(r.uniform(0, 1, (H, W, 3)))
        m = Mask(np.ones((H, W), dtype=bool))
        lm = spread_landmarks()
        wf = estimate_warp(lm, lm, W, H)
        out, om = warp_albedo(a, wf, m)
        assert np.abs(out.data[om.valid] - a.data[om.valid]).max() < 1e-12

    def test_translation_shifts_content(self):
        a = np.zeros((H, W, 3))
        a[:, :, :] = np.linspace(0, 1, W)[None, :, None]
        lm = spread_landmarks()
        moved = LandmarkSet(lm.points + [4.0, 0.0], groups=lm.groups)
        wf = estimate_warp(lm, moved, W, H)
        out, om = warp_albedo(Image(a), wf, Mask(np.ones((H, W), dtype=bool)))
        it = wf.interior & om.valid
        yy, xx = np.mgrid[0:H, 0:W]
        expected = np.clip((xx - 4) / (W - 1), 0, 1)
        assert np.abs(out.data[:, :, 0][it] - expected[it]).max() < 1e-9

    def test_no_color_transformation(self):
        # warping a constant-color image must return exactly that color
        a = Image(np.tile(np.array([0.7, 0.2, 0.5]), (H, W, 1)))
        lm = spread_landmarks()
        moved = LandmarkSet(similarity(lm.points, 0.2, 1.05, 1.0, 1.0), groups=lm.groups)
        wf = estimate_warp(lm, moved, W, H)
        out, om = warp_albedo(a, wf, Mask(np.ones((H, W), dtype=bool)))
        assert np.abs(out.data[om.valid] - [0.7, 0.2, 0.5]).max() < 1e-12

    def test_mask_excludes_infected_samples(self):
        a = Image(np.ones((H, W, 3)))
        m = np.ones((H, W), dtype=bool)
        m[20, 20] = False
        lm = spread_landmarks()
        wf = estimate_warp(lm, lm, W, H)
        _, om = warp_albedo(a, wf, Mask(m))
        assert not om.valid[20, 20]

    def test_dimension_mismatch(self):
        lm = spread_landmarks()
        wf = estimate_warp(lm, lm, W, H)
        with pytest.raises(ValueError):
            warp_albedo(Image(np.zeros((8, 8, 3))), wf, Mask(np.ones((8, 8), dtype=bool)))


class TestWarpNormal:
    def test_rotation_redirects_normals(self):
        # a smooth field so bilinear resampling stays near the nearest pixel
        yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
        v = np.stack(
            [0.4 * np.sin(xx / 9.0), 0.4 * np.cos(yy / 7.0), np.ones((H, W))],
            axis=2,
        )
        v /= np.linalg.norm(v, axis=2, keepdims=True)
        n = NormalMap(v)
        m = Mask(np.ones((H, W), dtype=bool))
        lm = spread_landmarks()
        theta = math.radians(15.0)
        moved = LandmarkSet(similarity(lm.points, theta, 1.0, 0.0, 0.0), groups=lm.groups)
        wf = estimate_warp(lm, moved, W, H)
        out, om = warp_normal(n, wf, m)
        keep = wf.interior & om.valid
        assert keep.any()
        assert np.abs(np.linalg.norm(out.vectors, axis=2)[keep] - 1.0).max() < 1e-12
        # z must survive a pure in-plane rotation
        src = wf.src[keep]
        zi = v[:, :, 2]
        sampled_z = [
            zi[int(round(sy)), int(round(sx))]
            for sx, sy in src
        ]
        # nearest-pixel oracle; bilinear smoothing keeps them close
        assert np.abs(out.vectors[:, :, 2][keep] - sampled_z).max() < 0.05


class TestAlignLosses:
    def test_gt_pair_losses_small(self, small_seq):
        f0, f1 = small_seq.frames[0], small_seq.frames[1]
        la = align_loss_albedo(f0.gt.albedo, f1.gt.albedo, f0.landmarks, f1.landmarks, f1.mask)
        ln = align_loss_normal(f0.gt.normal, f1.gt.normal, f0.landmarks, f1.landmarks, f1.mask)
        assert la < 0.05
        assert ln < 0.15  # per-frame deformation differences dominate


class TestRasterizeContour:
    def test_contour_hits_landmark_pixels(self):
        lm = spread_landmarks()
        img = rasterize_contour(lm, W, H)
        for x, y in lm.points:
            assert img.data[int(round(y)), int(round(x))].max() > 0.4

    def test_intensity_range(self):
        img = rasterize_contour(spread_landmarks(), W, H)
        assert img.data.min() >= 0.0
        assert img.data.max() <= 1.0
