import numpy as np
import pytest

from foglift.field import (
    AnalyticScene,
    Box,
    FieldFormatError,
    RadianceField,
    Sphere,
    bake,
    load_field,
    save_field,
    voxel_centers,
)


def uniform_field(sigma=2.0, value=0.5, dims=(4, 4, 4)):
    return RadianceField(
        bbox_min=(-1.0, -1.0, -1.0),
        bbox_max=(1.0, 1.0, 1.0),
        density=np.full(dims, sigma),
        rgb=np.full(dims + (3,), value),
    )


class TestQuery:
    def test_outside_bbox_is_empty(self):
        f = uniform_field()
        for p in [(2.0, 0, 0), (0, -1.5, 0), (0, 0, 99.0), (5, 5, 5)]:
            sigma, rgb = f.query(p)
            assert sigma == 0.0
            assert np.all(rgb == 0.0)

    def test_uniform_grid_interpolates_to_constant(self, rng):
        f = uniform_field(sigma=2.0, value=0.5)
        pts = rng.uniform(-0.99, 0.99, size=(200, 3))
        sigma, rgb = f.query_many(pts)
        np.testing.assert_allclose(sigma, 2.0, rtol=1e-12)
        np.testing.assert_allclose(rgb, 0.5, rtol=1e-12)

    def test_midpoint_between_centers_averages(self):
        # density steps from 0 to 4 across x; halfway must interpolate to 2
        density = np.zeros((2, 2, 2))
        density[1] = 4.0
        f = RadianceField(
            bbox_min=(0.0, 0.0, 0.0),
            bbox_max=(2.0, 2.0, 2.0),
            density=density,
            rgb=np.full((2, 2, 2, 3), 0.25),
        )
        # voxel centers along x sit at 0.5 and 1.5
        sigma, rgb = f.query((1.0, 1.0, 1.0))
        assert sigma == pytest.approx(2.0, abs=1e-12)
        np.testing.assert_allclose(rgb, 0.25, rtol=1e-12)

    def test_values_exact_at_voxel_centers(self, rng):
        dims = (5, 4, 3)
        density = rng.uniform(0, 10, dims)
        rgb = rng.uniform(0, 1, dims + (3,))
        f = RadianceField((-1, -2, 0), (3, 1, 2), density, rgb)
        centers = voxel_centers(f.bbox_min, f.bbox_max, dims)
        sigma, color = f.query_many(centers)
        np.testing.assert_array_equal(sigma, f.density.reshape(-1).astype(np.float64))
        np.testing.assert_array_equal(color, f.rgb.reshape(-1, 3).astype(np.float64))

    def test_continuous_inside_cells(self, rng):
        f = RadianceField(
            (-1, -1, -1), (1, 1, 1),
            rng.uniform(0, 5, (8, 8, 8)),
            rng.uniform(0, 1, (8, 8, 8, 3)),
        )
        p = rng.uniform(-0.9, 0.9, size=3)
        eps = 1e-7
        s0, c0 = f.query(p)
        s1, c1 = f.query(p + eps)
        assert abs(s1 - s0) < 1e-4
        assert np.all(np.abs(c1 - c0) < 1e-4)


class TestInvariants:
    def test_rejects_negative_density(self):
        with pytest.raises(ValueError, match="non-negative"):
            uniform_field(sigma=-1.0)

    def test_rejects_out_of_range_rgb(self):
        with pytest.raises(ValueError, match="rgb"):
            RadianceField((-1, -1, -1), (1, 1, 1), np.zeros((2, 2, 2)),
                          np.full((2, 2, 2, 3), 1.5))

    def test_rejects_inverted_bbox(self):
        with pytest.raises(ValueError, match="bbox"):
            RadianceField((1, -1, -1), (-1, 1, 1), np.zeros((2, 2, 2)),
                          np.zeros((2, 2, 2, 3)))

    def test_arrays_are_read_only(self):
        f = uniform_field()
        with pytest.raises(ValueError):
            f.density[0, 0, 0] = 3.0


class TestAnalyticScene:
    def test_inside_primitive(self, fog_sphere_scene):
        sigma, rgb = fog_sphere_scene.query((0.0, 0.0, 0.1))
        assert sigma == 50.0
        np.testing.assert_array_equal(rgb, (1.0, 0.0, 0.0))

    def test_in_fog_region(self, fog_sphere_scene):
        sigma, rgb = fog_sphere_scene.query((1.5, 1.5, 1.5))
        assert sigma == 0.5
        np.testing.assert_array_equal(rgb, (0.7, 0.7, 0.7))

    def test_outside_fog_bbox(self, fog_sphere_scene):
        sigma, rgb = fog_sphere_scene.query((3.0, 0.0, 0.0))
        assert sigma == 0.0
        assert np.all(rgb == 0.0)

    def test_later_primitive_wins_overlap(self):
        scene = AnalyticScene(
            fog_sigma=0.0,
            fog_color=(0.7, 0.7, 0.7),
            fog_bbox_min=(-1, -1, -1),
            fog_bbox_max=(1, 1, 1),
            primitives=(
                Sphere(center=(0, 0, 0), radius=0.5, solid_sigma=10.0, albedo=(1, 0, 0)),
                Sphere(center=(0, 0, 0), radius=0.3, solid_sigma=20.0, albedo=(0, 1, 0)),
            ),
        )
        sigma, rgb = scene.query((0, 0, 0))
        assert sigma == 20.0
        np.testing.assert_array_equal(rgb, (0, 1, 0))

    def test_fog_must_stay_below_solids(self):
        with pytest.raises(ValueError, match="below"):
            AnalyticScene(
                fog_sigma=5.0,
                fog_color=(0.7, 0.7, 0.7),
                fog_bbox_min=(-1, -1, -1),
                fog_bbox_max=(1, 1, 1),
                primitives=(
                    Sphere(center=(0, 0, 0), radius=0.5, solid_sigma=2.0, albedo=(1, 0, 0)),
                ),
            )


class TestBake:
    def test_fog_only_scene_bakes_constant(self):
        scene = AnalyticScene(
            fog_sigma=0.25,
            fog_color=(0.7, 0.7, 0.7),
            fog_bbox_min=(-1, -1, -1),
            fog_bbox_max=(1, 1, 1),
            primitives=(),
        )
        f = bake(scene, (8, 8, 8), scene.fog_bbox_min, scene.fog_bbox_max)
        np.testing.assert_array_equal(f.density, np.full((8, 8, 8), np.float32(0.25)))

    def test_bake_matches_analytic_at_centers(self, fog_sphere_scene):
        f = bake(fog_sphere_scene, (16, 16, 16), (-2, -2, -2), (2, 2, 2))
        centers = voxel_centers(f.bbox_min, f.bbox_max, f.dims)
        sigma_a, rgb_a = fog_sphere_scene.query_many(centers)
        np.testing.assert_array_equal(
            f.density.reshape(-1), sigma_a.astype(np.float32))
        np.testing.assert_array_equal(f.rgb.reshape(-1, 3), rgb_a.astype(np.float32))

    def test_sphere_volume_fraction_matches_monte_carlo(self, rng):
        scene = AnalyticScene(
            fog_sigma=0.0,
            fog_color=(0, 0, 0),
            fog_bbox_min=(-1, -1, -1),
            fog_bbox_max=(1, 1, 1),
            primitives=(
                Sphere(center=(0, 0, 0), radius=0.7, solid_sigma=50.0, albedo=(1, 1, 1)),
            ),
        )
        f = bake(scene, (64, 64, 64), (-1, -1, -1), (1, 1, 1))
        voxel_fraction = np.mean(f.density == np.float32(50.0))
        # independent Monte-Carlo estimate of sphere volume / bbox volume
        pts = rng.uniform(-1, 1, size=(200_000, 3))
        mc_fraction = np.mean(np.sum(pts * pts, axis=1) <= 0.7 * 0.7)
        assert voxel_fraction == pytest.approx(mc_fraction, rel=0.1)

    def test_rejects_tiny_dims(self, fog_sphere_scene):
        with pytest.raises(ValueError, match="at least 2"):
            bake(fog_sphere_scene, (1, 8, 8), (-1, -1, -1), (1, 1, 1))


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        f = RadianceField(
            (-1.5, -2.5, 0.25), (1.5, 0.5, 3.25),
            rng.uniform(0, 80, (7, 5, 6)),
            rng.uniform(0, 1, (7, 5, 6, 3)),
        )
        path = tmp_path / "field.fgnf"
        save_field(f, path)
        g = load_field(path)
        np.testing.assert_array_equal(f.density, g.density)
        np.testing.assert_array_equal(f.rgb, g.rgb)
        np.testing.assert_array_equal(f.bbox_min, g.bbox_min)
        np.testing.assert_array_equal(f.bbox_max, g.bbox_max)
        assert f.density.dtype == g.density.dtype == np.float32

    def test_truncated_file_is_rejected(self, tmp_path):
        f = uniform_field()
        path = tmp_path / "field.fgnf"
        save_field(f, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 17])
        with pytest.raises(FieldFormatError, match="size"):
            load_field(path)

    def test_wrong_magic_is_named(self, tmp_path):
        f = uniform_field()
        path = tmp_path / "field.fgnf"
        save_field(f, path)
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(FieldFormatError, match="magic"):
            load_field(path)

    def test_short_header_is_rejected(self, tmp_path):
        path = tmp_path / "field.fgnf"
        path.write_bytes(b"FGNF\x01")
        with pytest.raises(FieldFormatError, match="short"):
            load_field(path)


class TestPrimitiveRays:
    def test_sphere_entry_distance(self):
        s = Sphere(center=(0, 0, 0), radius=1.0, solid_sigma=1.0, albedo=(1, 1, 1))
        t = s.ray_entry(np.array([[0.0, 0.0, 5.0]]), np.array([[0.0, 0.0, -1.0]]))
        assert t[0] == pytest.approx(4.0, abs=1e-12)
        miss = s.ray_entry(np.array([[0.0, 3.0, 5.0]]), np.array([[0.0, 0.0, -1.0]]))
        assert np.isinf(miss[0])

    def test_box_entry_distance(self):
        b = Box(center=(0, 0, 0), half_size=(1, 1, 1), solid_sigma=1.0, albedo=(1, 1, 1))
        t = b.ray_entry(np.array([[0.0, 0.0, 4.0]]), np.array([[0.0, 0.0, -1.0]]))
        assert t[0] == pytest.approx(3.0, abs=1e-12)
        inside = b.ray_entry(np.array([[0.0, 0.0, 0.0]]), np.array([[0.0, 0.0, -1.0]]))
        assert inside[0] == pytest.approx(1.0, abs=1e-12)
