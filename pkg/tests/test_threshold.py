import numpy as np
import pytest

from foglift.field import bake
from foglift.render import composite, sample_ray_batch
from foglift.scenegen import preset, sample_camera
from foglift.threshold import (
    ContrastCurve,
    NoPlateauError,
    ThresholdConfig,
    detect_plateau,
    estimate_threshold,
    luminance,
    michelson,
    sample_ray_cache,
    savgol_smooth,
)


class TestLuminance:
    def test_white_is_one(self):
        assert luminance((1.0, 1.0, 1.0)) == pytest.approx(1.0, abs=1e-12)

    def test_black_is_zero(self):
        assert luminance((0.0, 0.0, 0.0)) == 0.0

    def test_red_coefficient(self):
        assert luminance((1.0, 0.0, 0.0)) == pytest.approx(0.2126, abs=1e-15)

    def test_vectorized_over_batches(self, rng):
        rgb = rng.uniform(0, 1, (10, 4, 3))
        out = luminance(rgb)
        assert out.shape == (10, 4)
        assert out[0, 0] == pytest.approx(luminance(rgb[0, 0]))

    def test_rejects_negative_channels(self):
        with pytest.raises(ValueError, match="non-negative"):
            luminance((-0.1, 0.5, 0.5))


class TestMichelson:
    def test_constant_values_have_zero_contrast(self):
        assert michelson([0.4, 0.4, 0.4]) == 0.0

    def test_zero_min_gives_full_contrast(self):
        assert michelson([0.0, 0.3, 0.8]) == 1.0

    def test_direct_ratio(self):
        assert michelson([0.8, 0.5, 0.2]) == pytest.approx(0.6, abs=1e-12)

    def test_all_zero_is_zero(self):
        assert michelson([0.0, 0.0]) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            michelson([])


class TestSavgolSmooth:
    def test_constant_is_reproduced(self):
        y = np.full(60, 0.37)
        np.testing.assert_allclose(savgol_smooth(y, 21, 2), y, atol=1e-12)

    def test_quadratic_is_reproduced(self):
        x = np.linspace(-2, 2, 80)
        y = 1.5 - 0.3 * x + 0.05 * x * x
        out = savgol_smooth(y, 21, 2)
        np.testing.assert_allclose(out, y, atol=1e-9)

    def test_matches_windowed_regression_oracle(self, rng):
        y = np.cumsum(rng.normal(0, 0.1, 90)) + np.linspace(0, 3, 90)
        window, order = 21, 2
        half = window // 2
        out = savgol_smooth(y, window, order)
        # brute-force oracle: polynomial least squares per (truncated) window
        for i in range(len(y)):
            lo = max(0, i - half)
            hi = min(len(y), i + half + 1)
            xs = np.arange(lo, hi) - i
            poly = np.polynomial.Polynomial.fit(xs, y[lo:hi], order)
            assert out[i] == pytest.approx(poly(0.0), abs=1e-9)

    def test_window_must_be_odd(self):
        with pytest.raises(ValueError, match="odd"):
            savgol_smooth(np.zeros(50), 20, 2)

    def test_short_input_rejected(self):
        with pytest.raises(ValueError, match="at least"):
            savgol_smooth(np.zeros(10), 21, 2)


class TestDetectPlateau:
    def test_constant_curve_detects_index_zero(self):
        assert detect_plateau(np.full(100, 0.5), 0.05, 21, 1e-3) == 0

    def test_logistic_plateau_lands_past_the_rise(self):
        cfg = ThresholdConfig()
        q = cfg.candidates()
        curve = 1.0 / (1.0 + np.exp(-10.0 * (q - 2.0)))
        idx = detect_plateau(curve, cfg.q_step, 21, 1e-3)
        detected = q[idx]
        assert 2.0 <= detected <= 3.0
        # oracle: analytic derivative magnitude must stay below tolerance
        # over one full window starting at the detected candidate
        deriv = 10.0 * np.exp(-10.0 * (q - 2.0)) / (1 + np.exp(-10.0 * (q - 2.0))) ** 2
        assert np.all(np.abs(deriv[idx:idx + 21]) <= 1e-3 + 1e-4)

    def test_steadily_rising_curve_has_no_plateau(self):
        curve = np.linspace(0, 1, 100)  # gradient 0.2 per unit, far above tolerance
        with pytest.raises(NoPlateauError):
            detect_plateau(curve, 0.05, 21, 1e-3)

    def test_short_curve_rejected(self):
        with pytest.raises(ValueError, match="at least"):
            detect_plateau(np.zeros(30), 0.05, 21, 1e-3)


class TestConfig:
    def test_default_candidate_count_is_161(self):
        assert len(ThresholdConfig().candidates()) == 161

    def test_candidates_start_at_zero_and_step(self):
        q = ThresholdConfig(q_max=0.3, q_step=0.1).candidates()
        np.testing.assert_allclose(q, [0.0, 0.1, 0.2, 0.3], atol=1e-12)
        assert q[0] == 0.0

    def test_invalid_configs_rejected(self):
        with pytest.raises(ValueError):
            ThresholdConfig(q_step=0.0)
        with pytest.raises(ValueError):
            ThresholdConfig(savgol_window=20)
        with pytest.raises(ValueError):
            ThresholdConfig(savgol_window=3, savgol_order=5)
        with pytest.raises(ValueError):
            ThresholdConfig(batch_size=1)

    def test_curve_must_start_at_zero(self):
        with pytest.raises(ValueError, match="start at 0"):
            ContrastCurve(
                sigma_thre=np.array([0.1, 0.2]),
                kappa_raw=np.zeros(2),
                kappa_smooth=np.zeros(2),
            )


def small_cfg(batch=256, seed=0):
    return ThresholdConfig(batch_size=batch, rng_seed=seed)


class TestEstimateThreshold:
    def cams(self, spec, n=4, seed=11):
        rng = np.random.default_rng(seed)
        return [sample_camera(spec, rng) for _ in range(n)]

    def test_fog_free_scene_detects_immediately(self):
        spec = preset("clear", width=48, height=48)
        field = bake(spec.scene(), (48, 48, 48), spec.fog_bbox_min, spec.fog_bbox_max)
        thr, _ = estimate_threshold(field, self.cams(spec), small_cfg(), n_samples=64)
        assert thr <= 2 * 0.05

    def test_foggy_scene_threshold_in_band(self, fog_sphere_scene):
        spec = preset("pedestal", width=48, height=48)
        field = bake(spec.scene(), (64, 64, 64), spec.fog_bbox_min, spec.fog_bbox_max)
        thr, curve = estimate_threshold(field, self.cams(spec), small_cfg(), n_samples=96)
        assert 0.5 < thr <= 8.0
        assert curve.detected == thr
        assert np.all((curve.kappa_raw >= 0) & (curve.kappa_raw <= 1))

    def test_piecewise_constant_contrast_on_analytic_scene(self, fog_sphere_scene):
        # exact two-level scene: contrast can only change where the sweep
        # crosses the fog density (the solid sits far above q_max)
        cams = self.cams(preset("pedestal", width=32, height=32,
                                dist_min=1.5, dist_max=1.9))
        _, curve = estimate_threshold(fog_sphere_scene, cams, small_cfg(), n_samples=64)
        q = curve.sigma_thre
        low = curve.kappa_raw[q <= 0.5]
        high = curve.kappa_raw[q > 0.5]
        assert np.all(low == low[0])
        assert np.all(high == high[0])
        assert high[0] > low[0]

    def test_sweep_recomposite_equals_fresh_render(self, fog_sphere_scene):
        # thresholding cached samples must equal a full re-render of the same
        # rays at that threshold; this is what makes the sweep a single-pass
        # operation over the field
        from foglift.render import camera_rays

        field = bake(fog_sphere_scene, (32, 32, 32), (-2, -2, -2), (2, 2, 2))
        cam = self.cams(preset("pedestal", width=32, height=32), n=1)[0]
        pixels = np.stack(np.meshgrid(np.arange(0, 32, 7), np.arange(0, 32, 7)),
                          axis=-1).reshape(-1, 2)
        origins, dirs = camera_rays(cam, pixels)
        cached = sample_ray_batch(field, origins, dirs, cam.near, cam.far, 48)
        for q in (0.0, 0.55, 1.3, 6.0):
            from_cache = composite(cached, q)
            fresh = composite(
                sample_ray_batch(field, origins, dirs, cam.near, cam.far, 48), q
            )
            np.testing.assert_array_equal(from_cache[0], fresh[0])
            np.testing.assert_array_equal(from_cache[1], fresh[1])

    def test_field_queried_once_per_cached_sample(self, fog_sphere_scene):
        calls = []

        class CountingField:
            def query_many(self, pts):
                calls.append(len(np.atleast_2d(pts)))
                return fog_sphere_scene.query_many(pts)

        spec = preset("pedestal", width=32, height=32)
        cams = self.cams(spec, n=3)
        cfg = small_cfg(batch=128)
        estimate_threshold(CountingField(), cams, cfg, n_samples=32)
        assert sum(calls) == 128 * 32

    def test_empty_camera_list_rejected(self, fog_sphere_scene):
        with pytest.raises(ValueError, match="camera"):
            estimate_threshold(fog_sphere_scene, [], small_cfg())

    def test_seeded_batches_are_reproducible(self, fog_sphere_scene):
        spec = preset("pedestal", width=32, height=32)
        cams = self.cams(spec)
        t1, c1 = estimate_threshold(fog_sphere_scene, cams, small_cfg(seed=5), n_samples=32)
        t2, c2 = estimate_threshold(fog_sphere_scene, cams, small_cfg(seed=5), n_samples=32)
        assert t1 == t2
        np.testing.assert_array_equal(c1.kappa_raw, c2.kappa_raw)
