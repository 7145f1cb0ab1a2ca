import numpy as np
import pytest

from blockreg.errors import ParseError
from blockreg.geometry import AffineTransform, LandmarkSet
from blockreg.textio import read_affine, read_landmarks, write_affine, write_landmarks


class TestLandmarks:
    def test_single_line(self, tmp_path):
        path = tmp_path / "lm.csv"
        path.write_text("L1, 1.0, 2.0, 3.0\n")
        landmarks = read_landmarks(path)
        assert landmarks.labels == ("L1",)
        assert np.allclose(landmarks.points, [[1.0, 2.0, 3.0]])

    def test_empty_file(self, tmp_path):
        path = tmp_path / "lm.csv"
        path.write_text("")
        assert len(read_landmarks(path)) == 0

    def test_round_trip_random(self, tmp_path):
        rng = np.random.default_rng(0)
        landmarks = LandmarkSet(rng.uniform(-100, 100, (10, 3)))
        path = tmp_path / "lm.csv"
        write_landmarks(landmarks, path)
        back = read_landmarks(path)
        assert np.abs(back.points - landmarks.points).max() < 1e-6

    def test_round_trip_exact_at_double_precision(self, tmp_path):
        rng = np.random.default_rng(1)
        landmarks = LandmarkSet(rng.uniform(-100, 100, (5, 3)), ("a", "b", "c", "d", "e"))
        path = tmp_path / "lm.csv"
        write_landmarks(landmarks, path)
        back = read_landmarks(path)
        assert np.array_equal(back.points, landmarks.points)
        assert back.labels == landmarks.labels

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "lm.csv"
        path.write_text("L1, 1.0, 2.0, 3.0\nL2, 1.0, 2.0\n")
        with pytest.raises(ParseError, match=":2"):
            read_landmarks(path)

    def test_bad_coordinate(self, tmp_path):
        path = tmp_path / "lm.csv"
        path.write_text("L1, 1.0, two, 3.0\n")
        with pytest.raises(ParseError, match=":1"):
            read_landmarks(path)


class TestAffineText:
    def test_identity_file(self, tmp_path):
        path = tmp_path / "affine.txt"
        path.write_text("1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n")
        assert np.array_equal(read_affine(path).matrix, np.eye(4))

    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(2)
        linear = rng.normal(size=(3, 3)) + np.eye(3)
        transform = AffineTransform.from_linear(linear, rng.uniform(-10, 10, 3))
        path = tmp_path / "affine.txt"
        write_affine(transform, path)
        assert np.array_equal(read_affine(path).matrix, transform.matrix)

    def test_three_rows_rejected(self, tmp_path):
        path = tmp_path / "affine.txt"
        path.write_text("1 0 0 0\n0 1 0 0\n0 0 1 0\n")
        with pytest.raises(ParseError, match="4 matrix rows"):
            read_affine(path)

    def test_wrong_column_count(self, tmp_path):
        path = tmp_path / "affine.txt"
        path.write_text("1 0 0\n0 1 0\n0 0 1\n0 0 0\n")
        with pytest.raises(ParseError, match="4 numbers"):
            read_affine(path)
