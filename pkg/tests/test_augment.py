import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from udapose.augment import (COMPONENTS, AugmentConfig, GeometricTransform, OcclusionPolicy, PhotometricParams,
                             adaptive_occlusion, apply_inverse_to_heatmap, apply_to_image, peaks_inside,
                             sample_augmentation, transform_points, warp)
from udapose.heatmap import ConfigError, GaussianSpec, decode_heatmap, generate_heatmap, KeypointAnnotation

IDENT = PhotometricParams()


def smooth_image(size=64, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    chans = []
    for _ in range(3):
        a, b, c = rng.uniform(1, 3, size=3)
        chans.append(0.5 + 0.4 * np.sin(a * xx * 3 + b) * np.cos(c * yy * 3))
    return np.stack(chans)


def bilinear_oracle(img, dst_to_src):
    """Loop-based bilinear resampler with zero fill, mirroring grid_sample(align_corners=True)."""
    c, h, w = img.shape
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            sx, sy = transform_points(dst_to_src, [x, y])
            x0, y0 = math.floor(sx), math.floor(sy)
            fx, fy = sx - x0, sy - y0
            for dy, wy in ((0, 1 - fy), (1, fy)):
                for dx, wx in ((0, 1 - fx), (1, fx)):
                    xi, yi = x0 + dx, y0 + dy
                    if 0 <= xi < w and 0 <= yi < h:
                        out[:, y, x] += wx * wy * img[:, yi, xi]
    return out


class TestSampling:
    def test_all_disabled_is_identity(self):
        cfg = AugmentConfig(enabled=())
        g, p = sample_augmentation(np.random.default_rng(0), cfg)
        assert g.is_identity() and p.is_identity()

    def test_rotation_only_monte_carlo(self):
        cfg = AugmentConfig(enabled=("rotation",))
        rng = np.random.default_rng(1)
        draws = [sample_augmentation(rng, cfg) for _ in range(10_000)]
        rot = np.array([g.rotation for g, _ in draws])
        assert rot.min() > -30 and rot.max() < 30
        assert abs(rot.mean()) <= 1.0
        assert all(g.scale == 1 and g.shear == 0 and g.translation == (0.0, 0.0) for g, _ in draws)
        assert all(p.is_identity() for _, p in draws)

    def test_seed_determinism(self):
        cfg = AugmentConfig()
        a = [sample_augmentation(np.random.default_rng(5), cfg) for _ in range(3)]
        r1, r2 = np.random.default_rng(7), np.random.default_rng(7)
        assert [sample_augmentation(r1, cfg) for _ in range(50)] == [sample_augmentation(r2, cfg) for _ in range(50)]
        assert a[0] == a[1] == a[2]

    def test_disabled_components_keep_stream_aligned(self):
        full, rot = AugmentConfig(), AugmentConfig(enabled=("rotation",))
        r1, r2 = np.random.default_rng(3), np.random.default_rng(3)
        for _ in range(20):
            assert sample_augmentation(r1, full)[0].rotation == sample_augmentation(r2, rot)[0].rotation

    def test_color_factors_within_bounds(self):
        cfg = AugmentConfig(enabled=("color",), color=(0.9, 1.1))
        rng = np.random.default_rng(2)
        f = np.array([sample_augmentation(rng, cfg)[1].factors for _ in range(500)])
        assert f.min() >= 0.9 and f.max() <= 1.1

    @pytest.mark.parametrize("bad", [dict(rotation=(10, -10)), dict(scale=(0.0, 1.0)), dict(enabled=("warp",))])
    def test_invalid_config(self, bad):
        with pytest.raises(ConfigError):
            AugmentConfig(**bad)

    def test_singular_matrix_rejected(self):
        with pytest.raises(ConfigError):
            GeometricTransform(scale=1e-4).matrix((64, 64))


class TestImageWarp:
    def test_identity_is_pixel_identical(self):
        img = smooth_image()
        out = apply_to_image(GeometricTransform(), IDENT, img)
        np.testing.assert_array_equal(out, img)
        assert out is not img

    def test_rotation_round_trip_central_disk(self):
        img = smooth_image(64)
        there = apply_to_image(GeometricTransform(rotation=90.0), IDENT, img)
        back = apply_to_image(GeometricTransform(rotation=-90.0), IDENT, there)
        yy, xx = np.mgrid[0:64, 0:64]
        disk = (xx - 31.5) ** 2 + (yy - 31.5) ** 2 <= 28 ** 2
        assert np.abs(back - img)[:, disk].max() <= 2 / 255

    def test_translation_leaves_zero_column(self):
        img = smooth_image(64) + 0.05
        out = apply_to_image(GeometricTransform(translation=(0.05, 0.0)), IDENT, img)
        shift = 0.05 * 64
        zero_cols = [c for c in range(64) if np.all(out[:, :, c] == 0)]
        assert zero_cols == list(range(int(math.floor(shift))))
        assert np.all(out[:, :, int(math.ceil(shift)):] > 0)

    def test_matches_loop_oracle(self):
        img = smooth_image(16, seed=3)
        t = GeometricTransform(rotation=17.0, translation=(0.03, -0.05), scale=1.1, shear=4.0)
        ours = apply_to_image(t, IDENT, img)
        np.testing.assert_allclose(ours, bilinear_oracle(img, t.inverse_matrix((16, 16))), atol=1e-9)

    def test_photometric_scales_channels(self):
        img = np.full((3, 4, 4), 0.5)
        out = apply_to_image(GeometricTransform(), PhotometricParams((0.8, 1.0, 1.2)), img)
        np.testing.assert_allclose(out[:, 0, 0], [0.4, 0.5, 0.6])

    def test_torch_batch_warp_is_differentiable(self):
        x = torch.rand(2, 3, 8, 8, requires_grad=True)
        y = warp(x, [GeometricTransform(rotation=10).matrix((8, 8)), np.eye(3)])
        y.sum().backward()
        assert x.grad is not None and torch.allclose(y[1], x[1], atol=1e-6)


class TestHeatmapInverse:
    spec = GaussianSpec(2.0)

    def test_identity(self):
        h = np.random.default_rng(0).random((2, 8, 8))
        np.testing.assert_array_equal(apply_inverse_to_heatmap(GeometricTransform(), h, (32, 32)), h)

    def test_forward_then_inverse_peak(self):
        h, _ = generate_heatmap(KeypointAnnotation(np.array([[128.0, 128.0]])), (64, 64), self.spec, (256, 256))
        t = GeometricTransform(rotation=23.0, translation=(0.04, -0.02), scale=0.9, shear=5.0)
        m = t.heatmap_matrix((256, 256), (64, 64))
        fwd = warp(torch.as_tensor(h)[None], [m])[0].numpy()
        back = apply_inverse_to_heatmap(t, fwd, (256, 256))
        err = np.abs(decode_heatmap(back, (64, 64)).coords - [[32, 32]])
        assert err.max() <= 1

    def test_inverse_matches_loop_oracle(self):
        h = np.random.default_rng(4).random((2, 12, 12))
        t = GeometricTransform(rotation=-12.0, translation=(0.05, 0.0), scale=1.15)
        ours = apply_inverse_to_heatmap(t, h, (48, 48))
        oracle = bilinear_oracle(h, t.heatmap_matrix((48, 48), (12, 12)))
        np.testing.assert_allclose(ours, oracle, atol=1e-9)

    def test_peak_leaving_grid_is_flagged(self):
        t = GeometricTransform(translation=(0.05, 0.0))
        cells = np.array([[0.0, 10.0], [20.0, 10.0]])
        assert peaks_inside(t, cells, (32, 32), (64, 64)).tolist() == [False, True]


@settings(max_examples=100, deadline=None)
@given(rot=st.floats(-30, 30), tx=st.floats(-0.05, 0.05), ty=st.floats(-0.05, 0.05),
       sc=st.floats(0.8, 1.2), sh=st.floats(-10, 10),
       pts=st.lists(st.tuples(st.floats(0, 255), st.floats(0, 255)), min_size=1, max_size=8))
def test_coordinate_round_trip_exact(rot, tx, ty, sc, sh, pts):
    t = GeometricTransform(rot, (tx, ty), sc, sh)
    p = np.array(pts)
    back = transform_points(t.inverse_matrix((256, 256)), transform_points(t.matrix((256, 256)), p))
    assert np.abs(back - p).max() <= 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_augmentation_stream_reproducible(seed):
    cfg = AugmentConfig()
    img = smooth_image(16)
    runs = []
    for _ in range(2):
        rng = np.random.default_rng(seed)
        g, p = sample_augmentation(rng, cfg)
        runs.append(apply_to_image(g, p, img))
    np.testing.assert_array_equal(runs[0], runs[1])


def test_components_constant():
    assert set(COMPONENTS) == {"translation", "scale", "color", "rotation", "shear"}


class TestOcclusion:
    policy = OcclusionPolicy(tau_occ=0.9, patch_size=(20, 20), occlude_prob=1.0)

    def heat(self, confs, size=64):
        h = np.zeros((len(confs), size, size))
        for k, c in enumerate(confs):
            h[k, 10 + 10 * k, 30] = c
        return h

    def test_gate_below_threshold(self):
        img = np.random.default_rng(0).random((3, 256, 256))
        out, flags = adaptive_occlusion(img, self.heat([0.9, 0.5, 0.2]), self.policy, np.random.default_rng(0))
        np.testing.assert_array_equal(out, img)
        assert not flags.any()

    def test_single_confident_keypoint_pixel_count(self):
        img = np.random.default_rng(1).random((3, 256, 256))
        rng = np.random.default_rng(2)
        out, flags = adaptive_occlusion(img, self.heat([0.95, 0.3]), self.policy, rng)
        assert flags.tolist() == [True, False]
        diff = np.any(out != img, axis=0)
        assert diff.sum() == 400
        rows, cols = np.nonzero(diff)
        assert rows.max() - rows.min() == 19 and cols.max() - cols.min() == 19
        # peak at cell (30, 10) on a 64 grid -> pixel (120, 40)
        assert (cols.min(), rows.min()) == (110, 30)
        # the pasted content is a copy of some 20x20 window of the same image
        patch = out[:, 30:50, 110:130]
        found = any(np.array_equal(patch, img[:, y:y + 20, x:x + 20])
                    for y in range(237) for x in range(237))
        assert found

    def test_prob_zero_unchanged(self):
        img = np.random.default_rng(3).random((3, 64, 64))
        pol = OcclusionPolicy(0.9, (5, 5), 0.0)
        out, flags = adaptive_occlusion(img, self.heat([0.99, 0.99], 32), pol, np.random.default_rng(0))
        np.testing.assert_array_equal(out, img)
        assert not flags.any()

    def test_patch_clipped_at_border(self):
        img = np.random.default_rng(4).random((3, 64, 64))
        pol = OcclusionPolicy(0.9, (10, 10), 1.0)
        out, flags = adaptive_occlusion(img, np.ones((1, 8, 8)), pol, np.random.default_rng(0),
                                        locations=np.array([[0.0, 0.0]]))
        diff = np.any(out != img, axis=0)
        assert flags.tolist() == [True]
        assert diff.sum() == 25 and diff[:5, :5].all()

    def test_torch_input(self):
        img = torch.rand(3, 64, 64)
        out, flags = adaptive_occlusion(img, torch.full((2, 16, 16), 0.95), OcclusionPolicy(0.9, (5, 5), 1.0),
                                        np.random.default_rng(0))
        assert isinstance(out, torch.Tensor) and flags.all()

    @pytest.mark.parametrize("tau", [0.0, 1.5])
    def test_bad_tau(self, tau):
        with pytest.raises(ConfigError):
            OcclusionPolicy(tau_occ=tau)

    def test_patch_must_fit(self):
        with pytest.raises(ConfigError):
            adaptive_occlusion(np.zeros((3, 8, 8)), np.ones((1, 4, 4)), OcclusionPolicy(0.5, (10, 10), 1.0),
                               np.random.default_rng(0))
