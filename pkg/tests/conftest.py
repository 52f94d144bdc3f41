import numpy as np
import pytest

from posefuse.geometry import Pose, Rotation
from posefuse.metrics import ObjectModel
from posefuse.tessellation import make_axis_grid, sample_so3_uniform


def cylinder_points(radius: float, height: float, n_ring: int, rings: int) -> np.ndarray:
    """Stacked rings on a cylinder's lateral surface, centered at the origin."""
    pts = []
    for i in range(rings):
        z = -height / 2 + (i + 0.5) * height / rings
        ang = 2 * np.pi * (np.arange(n_ring) + 0.5 * (i % 2)) / n_ring
        pts.append(np.stack(
            [radius * np.cos(ang), radius * np.sin(ang), np.full(n_ring, z)], axis=1))
    p = np.concatenate(pts)
    return p - p.mean(axis=0)


@pytest.fixture(scope="session")
def small_cylinder() -> ObjectModel:
    return ObjectModel(cylinder_points(0.05, 0.2, 16, 3), "cylinder48")


@pytest.fixture(scope="session")
def small_bins():
    return sample_so3_uniform(60)


@pytest.fixture(scope="session")
def rgbd_grids():
    g = make_axis_grid(10, -0.2, 0.2)
    return (g, g, g)


def random_pose(rng: np.random.Generator, t_scale: float = 0.2) -> Pose:
    return Pose(Rotation.random(rng), rng.uniform(-t_scale, t_scale, 3))
