import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from facedecomp.core import (
    FrameSequence,
    Image,
    LandmarkSet,
    Mask,
    NormalMap,
    ShLighting,
    apply_mask,
    decode_normals,
    encode_normals,
    masked_l1,
)


def unit_field(h, w, seed=0):
    r = np.random.default_rng(seed)
    v = r.normal(size=(h, w, 3))
    v[:, :, 2] = np.abs(v[:, :, 2]) + 0.3
    return v / np.linalg.norm(v, axis=2, keepdims=True)


class TestImage:
    def test_plain_image_rejects_negative(self):
        with pytest.raises(ValueError):
            Image(np.full((4, 4, 3), -0.1))

    def test_residual_image_allows_negative(self):
        img = Image(np.full((4, 4, 3), -0.5), residual=True)
        assert img.residual

    def test_non_residual_negative_rejected_even_slightly(self):
        d = np.zeros((4, 4, 3))
        d[3, 3, 1] = -1e-9
        with pytest.raises(ValueError):
            Image(d)

    def test_rejects_wrong_shape(self):
        with pytest.raises(ValueError):
            Image(np.zeros((4, 4)))

    def test_rejects_nan(self):
        bad = np.zeros((4, 4, 3))
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            Image(bad)

    def test_data_is_frozen(self):
        img = Image(np.zeros((4, 4, 3)))
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 1.0


class TestNormalMap:
    def test_accepts_unit_field(self):
        NormalMap(unit_field(5, 5))

    def test_check_unit_normals_rejects_non_unit(self):
        from facedecomp.core import check_unit_normals

        n = NormalMap(unit_field(5, 5) * 1.1)
        with pytest.raises(ValueError):
            check_unit_normals(n)

    def test_check_unit_normals_ignores_masked_pixels(self):
        from facedecomp.core import check_unit_normals

        v = unit_field(5, 5)
        v = v.copy()
        v[0, 0] *= 3.0
        m = np.ones((5, 5), dtype=bool)
        m[0, 0] = False
        check_unit_normals(NormalMap(v), Mask(m))


class TestLandmarkSet:
    def test_requires_at_least_four_points(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(ValueError):
            LandmarkSet(pts, groups=((0, 1, 2),))

    def test_rejects_collinear(self):
        pts = np.stack([np.arange(5.0), np.arange(5.0)], axis=1)
        with pytest.raises(ValueError):
            LandmarkSet(pts, groups=((0, 1, 2, 3, 4),))

    def test_rejects_group_index_out_of_range(self):
        pts = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0], [4.0, 4.0]])
        with pytest.raises(ValueError):
            LandmarkSet(pts, groups=((0, 1, 7),))

    def test_valid_set(self):
        pts = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0], [4.0, 4.0]])
        lm = LandmarkSet(pts, groups=((0, 1), (2, 3)))
        assert lm.points.shape == (4, 2)


class TestFrameSequence:
    def test_rejects_single_frame(self, small_seq):
        with pytest.raises(ValueError):
            FrameSequence(identity="x", frames=(small_seq.frames[0],))

    def test_len(self, small_seq):
        assert len(small_seq) == 3


class TestMaskedL1:
    def test_identical_is_zero(self):
        img = Image(np.random.default_rng(0).uniform(0, 1, (6, 6, 3)))
        m = Mask(np.ones((6, 6), dtype=bool))
        assert masked_l1(img, img, m) == 0.0

    def test_empty_mask_is_zero(self):
        a = Image(np.ones((4, 4, 3)))
        b = Image(np.zeros((4, 4, 3)))
        assert masked_l1(a, b, Mask(np.zeros((4, 4), dtype=bool))) == 0.0

    def test_constant_offset(self):
        a = Image(np.full((4, 4, 3), 0.5))
        b = Image(np.full((4, 4, 3), 0.3))
        m = Mask(np.ones((4, 4), dtype=bool))
        assert masked_l1(a, b, m) == pytest.approx(0.2)

    @given(
        data=hnp.arrays(np.float64, (5, 5, 3), elements=st.floats(0, 1)),
        mask=hnp.arrays(np.bool_, (5, 5)),
    )
    @settings(max_examples=25, deadline=None)
    def test_symmetry_and_nonnegativity(self, data, mask):
        a = Image(data)
        b = Image(1.0 - data)
        m = Mask(mask)
        d = masked_l1(a, b, m)
        assert d >= 0.0
        assert d == masked_l1(b, a, m)

    def test_only_valid_pixels_count(self):
        a = np.zeros((4, 4, 3))
        b = np.zeros((4, 4, 3))
        b[0, 0] = 1.0  # masked out below
        m = np.ones((4, 4), dtype=bool)
        m[0, 0] = False
        assert masked_l1(Image(a), Image(b), Mask(m)) == 0.0


class TestApplyMask:
    def test_zeroes_invalid(self):
        img = Image(np.ones((4, 4, 3)))
        m = np.zeros((4, 4), dtype=bool)
        m[1, 1] = True
        out = apply_mask(img, Mask(m))
        assert out.data[1, 1, 0] == 1.0
        assert out.data[0, 0, 0] == 0.0


class TestNormalCodec:
    def test_roundtrip_precision(self):
        n = NormalMap(unit_field(16, 16, seed=3))
        raster = encode_normals(n)
        back = decode_normals(raster)
        # 16-bit quantization keeps ~1e-4 component accuracy
        assert np.abs(back - n.vectors).max() < 5e-5

    def test_decoded_normals_are_unit(self):
        n = NormalMap(unit_field(8, 8, seed=4))
        back = decode_normals(encode_normals(n))
        assert np.abs(np.linalg.norm(back, axis=2) - 1.0).max() < 1e-12

    def test_masked_pixels_encode_to_zero(self):
        n = NormalMap(unit_field(4, 4))
        m = np.ones((4, 4), dtype=bool)
        m[2, 2] = False
        raster = encode_normals(n, Mask(m))
        assert (raster[2, 2] == 0).all()

    def test_raster_dtype(self):
        raster = encode_normals(NormalMap(unit_field(4, 4)))
        assert raster.dtype == np.uint16


class TestShLighting:
    def test_shape_enforced(self):
        with pytest.raises(ValueError):
            ShLighting(np.zeros((8, 3)))

    def test_valid(self):
        l = ShLighting(np.zeros((9, 3)))
        assert l.coeffs.shape == (9, 3)
