import numpy as np
import pytest
from scipy import ndimage

from blockreg import _kernels
from blockreg.geometry import AffineTransform, Grid, Volume


@pytest.fixture(params=_kernels.available_backends())
def backend(request):
    """Run kernel-level tests on every available backend."""
    previous = _kernels.active_backend()
    _kernels.use(request.param)
    yield request.param
    _kernels.use(previous)


def smooth_phantom(dims, seed, sigma=2.0, spacing=1.0, origin=(0.0, 0.0, 0.0)):
    """Textured phantom: Gaussian-smoothed white noise."""
    rng = np.random.default_rng(seed)
    data = ndimage.gaussian_filter(rng.normal(size=dims), sigma)
    return Volume(Grid.isotropic(dims, spacing, origin), data)


def rotation_about_center(axis, degrees, center):
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.eye(3)
    i, j = [(1, 2), (0, 2), (0, 1)][axis]
    rot[i, i] = c
    rot[i, j] = -s if axis != 1 else s
    rot[j, i] = s if axis != 1 else -s
    rot[j, j] = c
    matrix = np.eye(4)
    matrix[:3, :3] = rot
    center = np.asarray(center, dtype=np.float64)
    matrix[:3, 3] = center - rot @ center
    return AffineTransform(matrix)


def random_small_affine(rng, center, max_translation=10.0, max_rotation_deg=10.0,
                        scale_range=(0.95, 1.05)):
    """Random rotation+scale+translation about a center, as a 4x4 transform."""
    angles = rng.uniform(-np.deg2rad(max_rotation_deg), np.deg2rad(max_rotation_deg), 3)
    rotation = np.eye(3)
    for axis, angle in enumerate(angles):
        c, s = np.cos(angle), np.sin(angle)
        plane = np.eye(3)
        i, j = [(1, 2), (0, 2), (0, 1)][axis]
        plane[i, i] = c
        plane[i, j] = -s
        plane[j, i] = s
        plane[j, j] = c
        rotation = plane @ rotation
    scales = rng.uniform(*scale_range, 3)
    linear = rotation @ np.diag(scales)
    translation = rng.uniform(-max_translation, max_translation, 3)
    translation /= max(1.0, np.linalg.norm(translation) / max_translation)
    center = np.asarray(center, dtype=np.float64)
    matrix = np.eye(4)
    matrix[:3, :3] = linear
    matrix[:3, 3] = center - linear @ center + translation
    return AffineTransform(matrix)
