import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from combcn import data
from combcn.errors import EmptyInput, IndivisibleSize, ShapeMismatch


def frames(n, h=480, w=640, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8) for _ in range(n)]


class TestExtractSamples:
    def test_count_and_shape(self):
        out = data.extract_samples(frames(160, 48, 64), data.PipelineConfig(target_size=16))
        assert len(out) == 5
        assert all(s.clean.shape == (32, 16, 16, 3) for s in out)
        assert [s.frame_offset for s in out] == [0, 32, 64, 96, 128]

    def test_default_size_640x480(self):
        out = data.extract_samples(frames(32), data.PipelineConfig())
        assert out[0].clean.shape == (32, 128, 128, 3)
        assert out[0].mask is None

    def test_center_crop_region(self):
        # only the central 480x480 window is bright; after cropping the border is gone
        img = np.zeros((480, 640, 3), dtype=np.uint8)
        img[:, 80:560] = 255
        out = data.extract_samples([img] * 32, data.PipelineConfig())
        np.testing.assert_allclose(out[0].clean, 1.0, atol=1e-6)
        assert data.center_square(img).shape == (480, 480, 3)

    def test_no_crop_keeps_border(self):
        img = np.zeros((480, 640, 3), dtype=np.uint8)
        img[:, 80:560] = 255
        out = data.extract_samples([img] * 32, data.PipelineConfig(crop_mode="none"))
        assert out[0].clean[0, :, 0].max() < 0.5

    def test_too_few(self):
        assert data.extract_samples(frames(31, 16, 16), data.PipelineConfig(target_size=16)) == []

    def test_errors(self):
        with pytest.raises(EmptyInput):
            data.extract_samples([], data.PipelineConfig())
        bad = frames(2, 16, 16) + frames(1, 16, 20)
        with pytest.raises(ShapeMismatch):
            data.extract_samples(bad, data.PipelineConfig(sample_frames=1, target_size=16))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 40), st.integers(1, 8))
    def test_count_property(self, n, f):
        cfg = data.PipelineConfig(sample_frames=f, target_size=8, crop_mode="none")
        if n == 0:
            with pytest.raises(EmptyInput):
                data.extract_samples([], cfg)
        else:
            assert len(data.extract_samples(frames(n, 8, 8), cfg)) == n // f


class TestSplit:
    @pytest.mark.parametrize("n,ratio,expected", [
        (12, (5, 1), (10, 2)), (6, (5, 1), (5, 1)), (7, (1, 1), (4, 3)),
    ])
    def test_sizes(self, n, ratio, expected):
        tr, va = data.split_train_val(list(range(n)), ratio)
        assert (len(tr), len(va)) == expected
        assert tr + va == list(range(n))

    def test_empty(self):
        with pytest.raises(EmptyInput):
            data.split_train_val([], (5, 1))

    def test_bad_ratio(self):
        with pytest.raises(ValueError):
            data.split_train_val([1], (0, 1))


def hole_geometry(frame):
    ys, xs = np.nonzero(frame)
    return ys.min(), xs.min(), ys.max() - ys.min() + 1, xs.max() - xs.min() + 1


class TestMasks:
    def test_side_range_l128(self):
        assert data.hole_side_range(128) == (48, 64)

    def test_regular_mask_properties(self):
        for seed in range(50):
            m = data.gen_regular_mask(6, 128, seed)
            assert m.shape == (6, 128, 128) and m.dtype == np.uint8
            assert set(np.unique(m)) == {0, 1}
            assert all(np.array_equal(m[t], m[t + 1]) for t in range(5))
            y, x, h, w = hole_geometry(m[0])
            assert h == w and 48 <= h <= 64
            assert m.sum() == 6 * h * w

    def test_boundary_placement(self):
        m = data.render_holes(np.array([[64, 64, 64]]), 128)[0]
        assert m[64:, 64:].all() and m.sum() == 64 * 64

    def test_random_side_range(self):
        m = data.gen_random_masks(32, 128, 3)
        for fr in m:
            y, x, h, w = hole_geometry(fr)
            assert h == w and 48 <= h <= 64 and fr.sum() == h * w

    def test_random_positions_distinct(self):
        # collision bound: one placement has probability at most 1/(17 * 65**2),
        # so 32 identical draws happen with probability < 1e-100
        m = data.gen_random_masks(32, 128, 11)
        positions = {hole_geometry(fr) for fr in m}
        assert len(positions) >= 2

    def test_random_f1_matches_regular(self):
        np.testing.assert_array_equal(data.gen_random_masks(1, 64, 5), data.gen_regular_mask(1, 64, 5))

    def test_small_frames_rejected(self):
        with pytest.raises(ValueError):
            data.gen_regular_mask(1, 7, 0)


class TestPrefill:
    def test_identity_and_constant(self, rng):
        v = rng.random((2, 8, 8, 3), dtype=np.float32)
        zero = np.zeros((2, 8, 8), np.uint8)
        np.testing.assert_array_equal(data.prefill(v, zero, (0.1, 0.2, 0.3)), v)
        full = data.prefill(v, np.ones_like(zero), (0.1, 0.2, 0.3))
        np.testing.assert_allclose(full, np.broadcast_to(np.float32([0.1, 0.2, 0.3]), v.shape))

    def test_idempotent(self, rng):
        v = rng.random((3, 16, 16, 3), dtype=np.float32)
        m = data.gen_random_masks(3, 16, 0)
        once = data.prefill(v, m, (0.4, 0.5, 0.6))
        np.testing.assert_array_equal(data.prefill(once, m, (0.4, 0.5, 0.6)), once)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            data.prefill(rng.random((2, 8, 8, 3)), np.zeros((2, 8, 4)), 0.5)

    def test_mean_pixel_brute_force(self):
        vids = data.synth_corpus(2, 4, 16, 9)
        masks = [data.gen_regular_mask(4, 16, 1), None]
        got = data.mean_pixel(vids, masks)
        for c in range(3):
            total, n = 0.0, 0
            for v, m in zip(vids, masks):
                for t in range(4):
                    for y in range(16):
                        for x in range(16):
                            if m is None or m[t, y, x] == 0:
                                total += float(v[t, y, x, c])
                                n += 1
            assert got[c] == pytest.approx(total / n, abs=1e-9)


class TestAssemble:
    def test_channels(self, rng):
        v = rng.random((32, 16, 16, 3), dtype=np.float32)
        m = data.gen_regular_mask(32, 16, 0)
        out = data.assemble_input(v, m)
        assert out.shape == (32, 16, 16, 4)
        np.testing.assert_array_equal(out[..., :3], v)
        np.testing.assert_array_equal(out[..., 3], m)
        t, y, x = np.argwhere(m)[0]
        assert out[t, y, x, 3] == 1

    def test_full_size(self):
        out = data.assemble_input(np.zeros((32, 128, 128, 3), np.float32), np.zeros((32, 128, 128), np.uint8))
        assert out.shape == (32, 128, 128, 4)

    def test_needs_rgb(self):
        with pytest.raises(ShapeMismatch):
            data.assemble_input(np.zeros((1, 8, 8, 1)), np.zeros((1, 8, 8)))


class TestDownsample:
    def test_shape(self):
        assert data.downsample_volume(np.zeros((32, 128, 128, 3), np.float32), 2).shape == (32, 64, 64, 3)

    def test_identity(self, rng):
        v = rng.random((2, 8, 8, 3), dtype=np.float32)
        np.testing.assert_array_equal(data.downsample_volume(v, 1), v)

    def test_constant(self):
        v = np.full((2, 8, 8, 3), 0.3, np.float32)
        np.testing.assert_allclose(data.downsample_volume(v, 4), 0.3, atol=1e-7)

    def test_indivisible(self):
        with pytest.raises(IndivisibleSize):
            data.downsample_volume(np.zeros((1, 10, 10, 3)), 4)
        with pytest.raises(IndivisibleSize):
            data.downsample_mask(np.zeros((1, 10, 10)), 4)

    def test_mask_maxpool(self):
        m = np.zeros((1, 4, 4), np.uint8)
        m[0, 1, 2] = 1
        np.testing.assert_array_equal(data.downsample_mask(m, 2)[0], [[0, 1], [0, 0]])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from([1, 2, 4]))
    def test_range_and_mean(self, seed, r):
        v = np.random.default_rng(seed).random((2, 8, 8, 3), dtype=np.float32)
        d = data.downsample_volume(v, r)
        assert d.min() >= 0.0 and d.max() <= 1.0
        assert abs(float(d.mean(dtype=np.float64)) - float(v.mean(dtype=np.float64))) < 1e-6


class TestSynth:
    def test_deterministic(self):
        a = data.synth_corpus(3, 8, 32, 7)
        b = data.synth_corpus(3, 8, 32, 7)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_shapes(self):
        vids = data.synth_corpus(2, 8, 32, 0)
        assert [v.shape for v in vids] == [(8, 32, 32, 3)] * 2
        assert all(v.min() >= 0 and v.max() <= 1 for v in vids)

    def test_rect_count(self):
        for s in data.synth_scene_params(20, 8, 32, 1):
            assert 2 <= len(s.rects) <= 4

    def test_motion_against_loop_render(self):
        """Re-draw frame t+1 pixel by pixel from the scene description."""
        F, l = 6, 24
        scenes = data.synth_scene_params(2, F, l, 3)
        vids = data.synth_corpus(2, F, l, 3)
        for scene, vid in zip(scenes, vids):
            c = scene.corner_colors
            for t in range(F - 1):
                k = t + 1
                ref = np.zeros((l, l, 3))
                for y in range(l):
                    for x in range(l):
                        wy, wx = y / (l - 1), x / (l - 1)
                        ref[y, x] = ((1 - wy) * (1 - wx) * c[0, 0] + (1 - wy) * wx * c[0, 1]
                                     + wy * (1 - wx) * c[1, 0] + wy * wx * c[1, 1])
                        for r in scene.rects:
                            y0, x0 = r.top + r.vy * k, r.left + r.vx * k
                            if y0 <= y < y0 + r.height and x0 <= x < x0 + r.width:
                                ref[y, x] = r.color
                np.testing.assert_allclose(vid[k], ref, atol=1e-6)
            # interior of the top rectangle moves by its velocity
            r = scene.rects[-1]
            for t in range(F - 1):
                y, x = r.top + r.vy * t + r.height // 2, r.left + r.vx * t + r.width // 2
                y2, x2 = y + r.vy, x + r.vx
                if 0 <= y < l and 0 <= x < l and 0 <= y2 < l and 0 <= x2 < l:
                    np.testing.assert_array_equal(vid[t + 1, y2, x2], vid[t, y, x])


def test_pipeline_config_validation():
    with pytest.raises(ValueError):
        data.PipelineConfig(hole_lo_frac=0.6, hole_hi_frac=0.5)
    with pytest.raises(IndivisibleSize):
        data.PipelineConfig(target_size=30, downsample_rate=4)


def test_sample_seed_stable():
    assert data.sample_seed(0, "a", 32) == data.sample_seed(0, "a", 32)
    assert data.sample_seed(0, "a", 32) != data.sample_seed(0, "a", 64)
