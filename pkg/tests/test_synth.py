import math

import numpy as np
import pytest

from facedecomp.core import Image, Mask, NormalMap
from facedecomp.shading import render_global, render_local
from facedecomp.synth import (
    Pose,
    PoseError,
    PosedShape,
    gen_sequence,
    key_direction_of,
    make_identity,
    make_residual,
    pose_frame,
    sample_lighting,
)

SIZE = 48


@pytest.fixture(scope="module")
def identity():
    return make_identity(3, SIZE)


class TestLighting:
    def test_sampling_ranges(self):
        for seed in range(30):
            l = sample_lighting(seed).sh.coeffs
            assert (l[0] >= 0.6).all() and (l[0] <= 1.1).all()
            assert (np.abs(l[1:4]) <= 0.35).all()
            assert (np.abs(l[4:]) <= 0.15).all()

    def test_hemisphere_positive(self):
        # the invariant behind the sampler: shading stays positive on the
        # visible hemisphere for every accepted draw
        from facedecomp.shading import sh_basis

        r = np.random.default_rng(0)
        dirs = r.normal(size=(200, 3))
        dirs[:, 2] = np.abs(dirs[:, 2])
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        for seed in range(10):
            l = sample_lighting(seed).sh.coeffs
            vals = np.stack([sh_basis(d) for d in dirs]) @ l
            assert vals.min() > 0.0

    def test_deterministic(self):
        a = sample_lighting(5).sh.coeffs
        b = sample_lighting(5).sh.coeffs
        assert np.array_equal(a, b)

    def test_key_direction_fallback(self):
        from facedecomp.core import ShLighting

        l = np.zeros((9, 3))
        l[0] = 1.0
        d = key_direction_of(ShLighting(l))
        assert np.array_equal(d, [0.0, 0.0, 1.0])

    def test_key_direction_is_unit(self):
        d = key_direction_of(sample_lighting(2).sh)
        assert abs(np.linalg.norm(d) - 1.0) < 1e-12


class TestPose:
    def test_identity_pose_zero_weights_matches_base(self, identity):
        shape, _, _, anchors = identity
        pose = Pose(theta=0.0, tx=0.0, ty=0.0, scale=1.0)
        normals, landmarks, mask = pose_frame(shape, pose, np.zeros(20), anchors)
        base_normals, base_mask = PosedShape(shape, pose, np.zeros(20)).geometry()
        both = mask.valid & base_mask.valid
        dot = (normals.vectors * base_normals.vectors).sum(axis=2)[both]
        ang = np.degrees(np.arccos(np.clip(dot, -1.0, 1.0)))
        assert ang.max() < 1e-5  # arccos roundoff on identical inputs

    def test_pure_translation_moves_landmarks_exactly(self, identity):
        shape, _, _, anchors = identity
        p0 = Pose(theta=0.0, tx=0.0, ty=0.0, scale=1.0)
        p1 = Pose(theta=0.0, tx=2.5, ty=-1.5, scale=1.0)
        _, lm0, _ = pose_frame(shape, p0, np.zeros(20), anchors)
        _, lm1, _ = pose_frame(shape, p1, np.zeros(20), anchors)
        shift = lm1.points - lm0.points
        assert np.abs(shift - np.array([2.5, -1.5])).max() < 1e-9

    def test_rotation_limit_enforced(self, identity):
        shape, _, _, anchors = identity
        bad = Pose(theta=math.radians(45.0), tx=0.0, ty=0.0, scale=1.0)
        with pytest.raises(PoseError):
            pose_frame(shape, bad, np.zeros(20), anchors)

    def test_scale_limit_enforced(self, identity):
        shape, _, _, anchors = identity
        bad = Pose(theta=0.0, tx=0.0, ty=0.0, scale=1.5)
        with pytest.raises(PoseError):
            pose_frame(shape, bad, np.zeros(20), anchors)

    def test_ninety_degree_rotation_transports_normals(self, identity):
        # test-only pose override: compare against the closed-form rotation
        shape, _, _, anchors = identity
        p0 = Pose(theta=0.0, tx=0.0, ty=0.0, scale=1.0)
        p90 = Pose(theta=math.radians(90.0), tx=0.0, ty=0.0, scale=1.0)
        n0, _, m0 = pose_frame(shape, p0, np.zeros(20), anchors)
        n90, _, m90 = pose_frame(shape, p90, np.zeros(20), anchors, enforce_limits=False)

        # a pixel rotates about the raster center; +theta in pixel coords is
        # -theta for y-up normal components
        c = (SIZE - 1) / 2.0
        errs = []
        for y in range(0, SIZE, 5):
            for x in range(0, SIZE, 5):
                if not m0.valid[y, x]:
                    continue
                xr = c - (y - c)
                yr = c + (x - c)
                xi, yi = int(round(xr)), int(round(yr))
                if not (0 <= xi < SIZE and 0 <= yi < SIZE and m90.valid[yi, xi]):
                    continue
                src = n0.vectors[y, x]
                expect = np.array([src[1], -src[0], src[2]])
                got = n90.vectors[yi, xi]
                errs.append(math.degrees(math.acos(np.clip(got @ expect, -1, 1))))
        assert errs, "no corresponded samples"
        assert max(errs) < 1.0


class TestResidual:
    def test_frontal_light_convex_cap_casts_no_shadow(self, identity):
        from facedecomp.core import ShLighting
        from facedecomp.synth import SceneLight

        shape, albedo, _, anchors = identity
        pose = Pose(theta=0.0, tx=0.0, ty=0.0, scale=1.0)
        posed = PosedShape(shape, pose, np.zeros(20))
        normals, mask = posed.geometry()
        l = np.zeros((9, 3))
        l[0] = 1.0
        light = SceneLight(sh=ShLighting(l), key_direction=np.array([0.0, 0.0, 1.0]))
        i_l = render_local(albedo, normals, light.sh, mask)
        r = make_residual(posed, normals, mask, light, i_l)
        # only the nonnegative highlight term remains
        assert r.data.min() >= 0.0

    def test_residual_in_range(self):
        seq = gen_sequence(9, 2, size=32)
        for fr in seq.frames:
            assert fr.gt.residual.data.min() >= -1.0
            assert fr.gt.residual.data.max() <= 1.0

    def test_oblique_light_casts_shadow_somewhere(self):
        # across a few seeds at least one frame must contain a negative region
        found = any(
            fr.gt.residual.data.min() < -0.01
            for seed in range(4)
            for fr in gen_sequence(seed, 2, size=32).frames
        )
        assert found


class TestGenSequence:
    def test_rejects_single_frame(self):
        with pytest.raises(ValueError):
            gen_sequence(0, 1)

    def test_deterministic(self):
        a = gen_sequence(4, 2, size=24)
        b = gen_sequence(4, 2, size=24)
        for fa, fb in zip(a.frames, b.frames):
            assert np.array_equal(fa.image_global.data, fb.image_global.data)
            assert np.array_equal(fa.gt.normal.vectors, fb.gt.normal.vectors)
            assert np.array_equal(fa.landmarks.points, fb.landmarks.points)

    def test_reconstruction_invariant(self):
        seq = gen_sequence(6, 3, size=32)
        for fr in seq.frames:
            rebuilt = render_global(
                render_local(fr.gt.albedo, fr.gt.normal, fr.gt.lighting, fr.mask),
                fr.gt.residual,
            )
            assert np.abs(rebuilt.data - fr.image_global.data).max() < 1e-4

    def test_normals_unit_on_mask(self):
        seq = gen_sequence(6, 2, size=32)
        for fr in seq.frames:
            norms = np.linalg.norm(fr.gt.normal.vectors, axis=2)[fr.mask.valid]
            assert np.abs(norms - 1.0).max() < 1e-9

    def test_landmarks_inside_raster(self):
        seq = gen_sequence(8, 3, size=32)
        for fr in seq.frames:
            pts = fr.landmarks.points
            assert (pts >= 0).all() and (pts <= 31).all()

    def test_masks_nonempty(self):
        seq = gen_sequence(8, 3, size=32)
        for fr in seq.frames:
            assert fr.mask.count > 30
