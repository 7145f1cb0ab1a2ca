import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blockreg.errors import GeometryError
from blockreg.geometry import (
    AffineTransform,
    Grid,
    LandmarkSet,
    Mask,
    Volume,
    compose,
    voxel_from_world,
    world_from_voxel,
)


def random_grid(rng):
    # random invertible direction with bounded anisotropy
    while True:
        linear = rng.normal(size=(3, 3))
        if abs(np.linalg.det(linear)) > 0.1:
            break
    matrix = np.eye(4)
    matrix[:3, :3] = linear
    matrix[:3, 3] = rng.uniform(-20, 20, 3)
    return Grid.from_matrix((5, 6, 7), matrix)


def random_affine(rng):
    while True:
        linear = rng.normal(size=(3, 3))
        if abs(np.linalg.det(linear)) > 0.1:
            break
    matrix = np.eye(4)
    matrix[:3, :3] = linear
    matrix[:3, 3] = rng.uniform(-50, 50, 3)
    return AffineTransform(matrix)


class TestWorldFromVoxel:
    def test_identity_origin(self):
        grid = Grid.isotropic((4, 4, 4), 1.0)
        assert np.allclose(world_from_voxel(grid, (0.0, 0.0, 0.0)), (0, 0, 0))

    def test_diagonal_scaling(self):
        grid = Grid.isotropic((4, 4, 4), 2.0)
        assert np.allclose(world_from_voxel(grid, (1.0, 2.0, 3.0)), (2, 4, 6))

    def test_matches_matrix_multiply_oracle(self):
        rng = np.random.default_rng(1)
        grid = random_grid(rng)
        index = np.array([0.5, 1.5, 2.5])
        # independent oracle: explicit homogeneous matrix-vector product
        expected = (grid.voxel_to_world @ np.append(index, 1.0))[:3]
        assert np.allclose(world_from_voxel(grid, index), expected, atol=1e-12)


class TestVoxelFromWorld:
    def test_identity(self):
        grid = Grid.isotropic((4, 4, 4), 1.0)
        assert np.allclose(voxel_from_world(grid, (0.0, 0.0, 0.0)), (0, 0, 0))

    def test_round_trip_many_points(self):
        rng = np.random.default_rng(2)
        grid = random_grid(rng)
        points = rng.uniform(-10, 10, (100, 3))
        back = voxel_from_world(grid, world_from_voxel(grid, points))
        assert np.abs(back - points).max() < 1e-9

    def test_singular_matrix_rejected(self):
        matrix = np.eye(4)
        matrix[0, 0] = 0.0  # collapses the first axis
        with pytest.raises(GeometryError):
            Grid((4, 4, 4), (1.0, 1.0, 1.0), matrix)


class TestCompose:
    def test_identity_neutral(self):
        rng = np.random.default_rng(3)
        transform = random_affine(rng)
        out = compose(AffineTransform.identity(), transform)
        assert np.array_equal(out.matrix, transform.matrix)

    def test_translation_inverse_pair(self):
        out = compose(
            AffineTransform.translation((1.0, 0.0, 0.0)),
            AffineTransform.translation((-1.0, 0.0, 0.0)),
        )
        assert np.allclose(out.matrix, np.eye(4), atol=1e-15)

    def test_pointwise_sequential_oracle(self):
        rng = np.random.default_rng(4)
        a, b = random_affine(rng), random_affine(rng)
        points = rng.uniform(-30, 30, (50, 3))
        sequential = a.apply(b.apply(points))
        composed = compose(a, b).apply(points)
        assert np.abs(composed - sequential).max() <= 1e-10

    def test_associative(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            a, b, c = (random_affine(rng) for _ in range(3))
            left = compose(compose(a, b), c)
            right = compose(a, compose(b, c))
            assert np.abs(left.matrix - right.matrix).max() < 1e-10


class TestInverse:
    def test_inverse_round_trip_points(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            transform = random_affine(rng)
            points = rng.uniform(-100, 100, (25, 3))
            back = transform.inverse().apply(transform.apply(points))
            assert np.abs(back - points).max() < 1e-6

    def test_non_invertible_rejected(self):
        matrix = np.eye(4)
        matrix[1, 1] = 0.0
        with pytest.raises(GeometryError):
            AffineTransform(matrix)


class TestGridInvariants:
    def test_rejects_bad_dims(self):
        with pytest.raises(GeometryError):
            Grid((0, 4, 4), (1.0, 1.0, 1.0), np.eye(4))

    def test_rejects_bad_spacing(self):
        with pytest.raises(GeometryError):
            Grid((4, 4, 4), (1.0, -1.0, 1.0), np.eye(4))

    def test_rejects_bad_last_row(self):
        matrix = np.eye(4)
        matrix[3, 0] = 1e-12
        with pytest.raises(GeometryError):
            Grid((4, 4, 4), (1.0, 1.0, 1.0), matrix)

    def test_rejects_spacing_matrix_mismatch(self):
        with pytest.raises(GeometryError):
            Grid((4, 4, 4), (2.0, 1.0, 1.0), np.eye(4))

    def test_matrix_is_immutable(self):
        grid = Grid.isotropic((4, 4, 4), 1.0)
        with pytest.raises(ValueError):
            grid.voxel_to_world[0, 0] = 5.0


class TestVolumeAndMask:
    def test_volume_shape_mismatch(self):
        with pytest.raises(GeometryError):
            Volume(Grid.isotropic((4, 4, 4), 1.0), np.zeros((4, 4, 5)))

    def test_volume_rejects_nan(self):
        data = np.zeros((4, 4, 4))
        data[1, 2, 3] = np.nan
        with pytest.raises(GeometryError):
            Volume(Grid.isotropic((4, 4, 4), 1.0), data)

    def test_volume_data_immutable(self):
        volume = Volume(Grid.isotropic((4, 4, 4), 1.0), np.zeros((4, 4, 4)))
        with pytest.raises(ValueError):
            volume.data[0, 0, 0] = 1.0

    def test_mask_count(self):
        data = np.zeros((4, 4, 4), bool)
        data[1, 1, 1] = True
        assert Mask(Grid.isotropic((4, 4, 4), 1.0), data).count() == 1


class TestLandmarkSet:
    def test_label_count_mismatch(self):
        with pytest.raises(GeometryError):
            LandmarkSet(np.zeros((3, 3)), labels=("a", "b"))

    def test_rejects_non_finite(self):
        with pytest.raises(GeometryError):
            LandmarkSet(np.array([[0.0, 0.0, np.inf]]))

    def test_empty_allowed(self):
        assert len(LandmarkSet(np.zeros((0, 3)))) == 0


@settings(max_examples=30, deadline=None)
@given(
    index=st.tuples(*[st.floats(-5, 15) for _ in range(3)]),
    spacing=st.floats(0.25, 4.0),
)
def test_world_voxel_round_trip_property(index, spacing):
    grid = Grid.isotropic((8, 8, 8), spacing, origin=(-3.0, 2.0, 1.0))
    index = np.asarray(index)
    back = voxel_from_world(grid, world_from_voxel(grid, index))
    assert np.abs(back - index).max() < 1e-9
