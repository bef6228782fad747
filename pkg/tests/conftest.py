import numpy as np
import pytest

from foglift.field import AnalyticScene, Box, Sphere


@pytest.fixture
def fog_sphere_scene():
    """One red sphere in mid-gray fog; the standard two-level test scene."""
    return AnalyticScene(
        fog_sigma=0.5,
        fog_color=(0.7, 0.7, 0.7),
        fog_bbox_min=(-2.0, -2.0, -2.0),
        fog_bbox_max=(2.0, 2.0, 2.0),
        primitives=(
            Sphere(center=(0.0, 0.0, 0.0), radius=0.6, solid_sigma=50.0,
                   albedo=(1.0, 0.0, 0.0)),
        ),
    )


@pytest.fixture
def box_scene():
    return AnalyticScene(
        fog_sigma=0.0,
        fog_color=(0.7, 0.7, 0.7),
        fog_bbox_min=(-2.0, -2.0, -2.0),
        fog_bbox_max=(2.0, 2.0, 2.0),
        primitives=(
            Box(center=(0.0, 0.0, 0.0), half_size=(0.5, 0.5, 0.5),
                solid_sigma=80.0, albedo=(0.3, 0.6, 0.9)),
        ),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
