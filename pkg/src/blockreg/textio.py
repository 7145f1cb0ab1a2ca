"""Plain-text interchange: landmark tables and 4x4 affine matrices.

Landmarks: one per line, ``label, x, y, z`` in world mm, comma-separated.
Affines: four lines of four numbers, row-major.  Values are printed with 17
significant digits so round-trips are exact at double precision.
"""

from __future__ import annotations

import numpy as np

from .errors import GeometryError, ParseError
from .geometry import AffineTransform, LandmarkSet

__all__ = ["read_landmarks", "write_landmarks", "read_affine", "write_affine"]


def read_landmarks(path):
    points = []
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            fields = [f.strip() for f in stripped.split(",")]
            if len(fields) != 4:
                raise ParseError(
                    f"{path}:{lineno}: expected 'label, x, y, z', got {len(fields)} fields"
                )
            try:
                coords = [float(v) for v in fields[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad coordinate: {exc}") from exc
            labels.append(fields[0])
            points.append(coords)
    try:
        return LandmarkSet(np.asarray(points, dtype=np.float64), tuple(labels))
    except GeometryError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def write_landmarks(landmarks, path):
    labels = landmarks.labels
    if labels is None:
        labels = tuple(f"L{i + 1}" for i in range(len(landmarks)))
    with open(path, "w", encoding="utf-8") as fh:
        for label, point in zip(labels, landmarks.points):
            fh.write(f"{label}, {point[0]:.17g}, {point[1]:.17g}, {point[2]:.17g}\n")


def read_affine(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            fields = stripped.split()
            if len(fields) != 4:
                raise ParseError(
                    f"{path}:{lineno}: expected 4 numbers per row, got {len(fields)}"
                )
            try:
                rows.append([float(v) for v in fields])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad matrix entry: {exc}") from exc
    if len(rows) != 4:
        raise ParseError(f"{path}: expected 4 matrix rows, got {len(rows)}")
    try:
        return AffineTransform(np.asarray(rows, dtype=np.float64))
    except GeometryError as exc:
        raise ParseError(f"{path}: invalid affine: {exc}") from exc


def write_affine(transform, path):
    with open(path, "w", encoding="utf-8") as fh:
        for row in transform.matrix:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
