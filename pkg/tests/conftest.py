import numpy as np
import pytest

from crossreg.cloud import PointCloud


def box_surface_points(rng, n, half_sizes=(4.0, 6.0, 3.0)):
    """n points spread over the six faces of an axis-aligned box."""
    parts = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            m = n // 6
            p = rng.random((m, 3)) * 2.0 - 1.0
            p[:, axis] = sign
            parts.append(p)
    return np.vstack(parts) * np.asarray(half_sizes)


def structured_cloud(seed, n=600, half_sizes=(4.0, 6.0, 3.0)) -> PointCloud:
    """Asymmetric test cloud: box shell plus a rod sticking out one face."""
    rng = np.random.default_rng(seed)
    box = box_surface_points(rng, n, half_sizes)
    rod = rng.random((n // 6, 3)) * np.array([3.0, 0.6, 0.6]) + np.array([half_sizes[0], -0.3, -0.3])
    return PointCloud(np.vstack([box, rod]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
