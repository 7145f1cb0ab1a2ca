"""Quantitative evaluation: landmark TRE, LTS-proportion grid search and
per-phase similarity reporting.

TRE maps each fixed landmark through the total transform (affine first, then
the displacement field sampled trilinearly at the mapped point when one is
given) and reports Euclidean distances to the paired moving landmarks.
Phase reports always show SSC-MSE and TRE side by side, per phase, so cases
where the two metrics disagree are directly visible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .affine_pipeline import register_affine
from .errors import BlockregError, GeometryError, StageError, ValidationError
from .geometry import AffineTransform, voxel_from_world
from .ssc import SSCParams, compute_ssc, ssc_mse
from .warp import Volume, apply_affine, apply_field

__all__ = [
    "TreResult",
    "PhaseReport",
    "compute_tre",
    "grid_search_proportion",
    "run_phase_report",
    "write_grid_search_csv",
]

PHASE_ORDER = ("original", "affine", "deformable")


@dataclass(frozen=True)
class TreResult:
    mean_mm: float
    per_landmark_mm: tuple
    affine_only_indices: tuple  # landmarks outside the field grid, flagged


@dataclass(frozen=True)
class PhaseReport:
    phase: str
    ssc_mse: float
    tre: TreResult = None

    def as_dict(self):
        entry = {"phase": self.phase, "ssc_mse": self.ssc_mse}
        if self.tre is not None:
            entry["tre"] = {
                "mean_mm": self.tre.mean_mm,
                "per_landmark_mm": list(self.tre.per_landmark_mm),
                "affine_only_indices": list(self.tre.affine_only_indices),
            }
        return entry


def _sample_field_at(field, points):
    """Trilinear field lookup at world points; returns (vectors, inside)."""
    dims = field.grid.dims
    voxels = voxel_from_world(field.grid, points)
    inside = np.all(
        (voxels >= 0.0) & (voxels <= np.asarray(dims, dtype=np.float64) - 1.0), axis=1
    )
    base = np.clip(np.floor(voxels).astype(np.intp), 0, np.asarray(dims) - 1)
    upper = np.minimum(base + 1, np.asarray(dims) - 1)
    frac = voxels - base
    out = np.zeros_like(points)
    for corner in range(8):
        picks = [(corner >> axis) & 1 for axis in range(3)]
        idx = [
            np.where(picks[axis], upper[:, axis], base[:, axis]) for axis in range(3)
        ]
        weight = np.ones(len(points))
        for axis in range(3):
            weight = weight * np.where(picks[axis], frac[:, axis], 1.0 - frac[:, axis])
        out += field.vectors[idx[0], idx[1], idx[2]] * weight[:, None]
    return out, inside


def compute_tre(fixed_landmarks, moving_landmarks, transform=None, field=None):
    """Target registration error after mapping fixed landmarks.

    Landmarks falling outside the field grid are mapped affine-only and
    flagged in ``affine_only_indices``.
    """
    if len(fixed_landmarks) != len(moving_landmarks):
        raise GeometryError(
            f"landmark counts differ: {len(fixed_landmarks)} vs {len(moving_landmarks)}"
        )
    transform = transform if transform is not None else AffineTransform.identity()
    mapped = transform.apply(np.asarray(fixed_landmarks.points))
    if len(mapped) == 0:
        return TreResult(0.0, (), ())
    flagged = ()
    if field is not None:
        vectors, inside = _sample_field_at(field, mapped)
        vectors[~inside] = 0.0
        mapped = mapped + vectors
        flagged = tuple(int(i) for i in np.flatnonzero(~inside))
    distances = np.linalg.norm(mapped - np.asarray(moving_landmarks.points), axis=1)
    return TreResult(float(distances.mean()), tuple(float(d) for d in distances), flagged)


def grid_search_proportion(fixed, moving, config, candidates, mask=None,
                           ssc_params=SSCParams(), threads=1):
    """Run the affine stage per LTS proportion candidate and score by SSC-MSE.

    Returns ``(best_proportion, table)`` with the table one
    ``(proportion, ssc_mse)`` row per candidate in input order (NaN score for
    candidates whose registration failed).  Ties pick the smaller proportion.
    """
    candidates = [float(c) for c in candidates]
    if not candidates:
        raise ValidationError("grid search needs at least one candidate proportion")
    bad = [c for c in candidates if not 0.0 < c <= 1.0]
    if bad:
        raise ValidationError([f"candidate proportion {c} outside (0, 1]" for c in bad])
    reference = compute_ssc(fixed, ssc_params, threads=threads)
    table = []
    failures = []
    for proportion in candidates:
        try:
            transform, _ = register_affine(
                fixed, moving, config.with_proportion(proportion), threads=threads
            )
            warped = apply_affine(moving, transform, fixed.grid, threads=threads)
            score = ssc_mse(
                reference, compute_ssc(warped, ssc_params, threads=threads), mask
            )
        except BlockregError as exc:
            failures.append(f"proportion {proportion}: {exc}")
            score = math.nan
        table.append((proportion, score))
    scored = [(score, proportion) for proportion, score in table if not math.isnan(score)]
    if not scored:
        raise StageError(
            "every grid-search candidate failed: " + "; ".join(failures)
        )
    best = min(scored)[1]
    return best, table


def write_grid_search_csv(table, path):
    with open(path, "w", encoding="ascii") as fh:
        fh.write("proportion,ssc_mse\n")
        for proportion, score in table:
            rendered = "" if math.isnan(score) else f"{score:.17g}"
            fh.write(f"{proportion:.17g},{rendered}\n")


def run_phase_report(fixed, moving, affine=None, field=None, mask=None,
                     fixed_landmarks=None, moving_landmarks=None,
                     ssc_params=SSCParams(), threads=1):
    """SSC-MSE (and TRE when landmarks are given) per pipeline phase.

    ``field`` is the total composed displacement field on the fixed grid
    (affine folded in), as produced by the pipeline's compose step.  Returns
    ``(reports, difference_volumes)`` where the difference volumes
    (fixed - warped moving) mirror the visual per-phase comparison.
    """
    reference = compute_ssc(fixed, ssc_params, threads=threads)
    identity = AffineTransform.identity()
    have_landmarks = fixed_landmarks is not None and moving_landmarks is not None

    warped = {"original": apply_affine(moving, identity, fixed.grid, threads=threads)}
    if affine is not None:
        warped["affine"] = apply_affine(moving, affine, fixed.grid, threads=threads)
    if field is not None:
        if not field.grid.matches(fixed.grid, tol=1e-6):
            raise GeometryError("phase-report field must live on the fixed grid")
        warped["deformable"] = apply_field(moving, field, threads=threads)

    tre_args = {
        "original": (identity, None),
        "affine": (affine, None),
        "deformable": (identity, field),
    }
    reports = []
    differences = {}
    for phase in PHASE_ORDER:
        if phase not in warped:
            continue
        volume = warped[phase]
        score = ssc_mse(reference, compute_ssc(volume, ssc_params, threads=threads), mask)
        tre = None
        if have_landmarks:
            tre = compute_tre(fixed_landmarks, moving_landmarks, *tre_args[phase])
        reports.append(PhaseReport(phase=phase, ssc_mse=score, tre=tre))
        differences[phase] = Volume(fixed.grid, fixed.data - volume.data)
    return reports, differences
