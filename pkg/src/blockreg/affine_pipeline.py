"""Two-level coarse-to-fine affine registration loop.

Each level resamples both images to an isotropic spacing, then alternates
block matching against the current warp of the moving image with a trimmed
least-squares fit of the incremental correction, composing corrections in
world space.  The moving image is re-warped from its level resample every
iteration so resampling error never accumulates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .blockmatch import BlockMatchParams, match_blocks, partition_and_select
from .errors import StageError
from .geometry import AffineTransform, Volume, compose
from .lts import MIN_PAIRS, LTSParams, fit_affine_lts
from .warp import apply_affine, resample_to_resolution

__all__ = [
    "AffineStageConfig",
    "AffineIterationRow",
    "AffineStageDiagnostics",
    "initialize_center_alignment",
    "register_affine",
]

# fraction of the level spacing under which an increment counts as converged
_MOTION_STOP_FACTOR = 0.1

# intensity clamp percentiles applied per level before matching
CLAMP_PERCENTILES = (0.5, 99.5)


@dataclass(frozen=True)
class AffineStageConfig:
    """Pyramid schedule plus block-matching and LTS parameters.

    ``levels`` is an ordered (coarse to fine) tuple of
    ``(iso_spacing_mm, outer_iterations)``.  ``initializer`` is ``"center"``
    (translation aligning volume centers), ``"identity"``, or an explicit
    AffineTransform.
    """

    levels: tuple = ((1.0, 5), (0.5, 5))
    block_match: BlockMatchParams = field(default_factory=BlockMatchParams)
    lts: LTSParams = field(default_factory=LTSParams)
    initializer: object = "center"

    def __post_init__(self):
        if not self.levels:
            raise ValueError("at least one pyramid level is required")
        spacings = [float(s) for s, _ in self.levels]
        iterations = [int(n) for _, n in self.levels]
        if any(s <= 0 for s in spacings):
            raise ValueError(f"level spacings must be positive, got {spacings}")
        if any(b >= a for a, b in zip(spacings, spacings[1:])):
            raise ValueError(f"level spacings must strictly decrease, got {spacings}")
        if any(n < 1 for n in iterations):
            raise ValueError(f"outer iterations must be >= 1, got {iterations}")
        object.__setattr__(
            self, "levels", tuple((s, n) for s, n in zip(spacings, iterations))
        )

    def with_proportion(self, proportion):
        return replace(self, lts=replace(self.lts, inlier_proportion=proportion))


@dataclass(frozen=True)
class AffineIterationRow:
    level_spacing_mm: float
    iteration: int
    n_correspondences: int
    inlier_count: int
    trimmed_rms_mm: float
    max_motion_mm: float


@dataclass(frozen=True)
class AffineStageDiagnostics:
    rows: tuple

    def level_rows(self, spacing):
        return [r for r in self.rows if r.level_spacing_mm == spacing]

    def format_report(self):
        lines = [
            f"{'level_mm':>9} {'iter':>5} {'pairs':>7} {'inliers':>8} "
            f"{'trimmed_rms_mm':>15} {'max_motion_mm':>14}"
        ]
        for r in self.rows:
            lines.append(
                f"{r.level_spacing_mm:>9.3f} {r.iteration:>5d} "
                f"{r.n_correspondences:>7d} {r.inlier_count:>8d} "
                f"{r.trimmed_rms_mm:>15.6f} {r.max_motion_mm:>14.6f}"
            )
        return "\n".join(lines) + "\n"


def initialize_center_alignment(fixed, moving):
    """Translation mapping the fixed volume's world center onto the moving's."""
    shift = moving.grid.world_center() - fixed.grid.world_center()
    return AffineTransform.translation(shift)


def _resolve_initializer(initializer, fixed, moving):
    if isinstance(initializer, AffineTransform):
        return initializer
    if initializer == "center":
        return initialize_center_alignment(fixed, moving)
    if initializer == "identity":
        return AffineTransform.identity()
    raise ValueError(f"unknown initializer {initializer!r}")


def _clamp_percentiles(data):
    lo, hi = np.percentile(data, CLAMP_PERCENTILES)
    return lo, hi


def register_affine(fixed, moving, config=AffineStageConfig(), threads=1):
    """Estimate the fixed-world -> moving-world affine; returns
    (transform, diagnostics)."""
    current = _resolve_initializer(config.initializer, fixed, moving)
    rows = []
    for spacing, outer_iterations in config.levels:
        fixed_level = resample_to_resolution(fixed, spacing, threads=threads)
        moving_level = resample_to_resolution(moving, spacing, threads=threads)
        flo, fhi = _clamp_percentiles(fixed_level.data)
        fixed_level = Volume(fixed_level.grid, np.clip(fixed_level.data, flo, fhi))
        mlo, mhi = _clamp_percentiles(moving_level.data)
        corners = fixed_level.grid.corners_world()
        active = partition_and_select(fixed_level, config.block_match)
        if active.size == 0:
            raise StageError(f"no blocks available at level {spacing} mm")
        motion_stop = _MOTION_STOP_FACTOR * spacing
        for iteration in range(1, outer_iterations + 1):
            warped = apply_affine(
                moving_level, current, fixed_level.grid, threads=threads
            )
            warped = Volume(warped.grid, np.clip(warped.data, mlo, mhi))
            correspondences = match_blocks(
                fixed_level, warped, active, config.block_match,
                source_level=f"{spacing:g}mm", threads=threads,
            )
            if len(correspondences) < MIN_PAIRS:
                raise StageError(
                    f"only {len(correspondences)} usable correspondences at level "
                    f"{spacing} mm; volume too flat for block matching"
                )
            increment, report = fit_affine_lts(correspondences, config.lts)
            current = compose(current, increment)
            motion = float(
                np.linalg.norm(increment.apply(corners) - corners, axis=1).max()
            )
            rows.append(
                AffineIterationRow(
                    level_spacing_mm=spacing,
                    iteration=iteration,
                    n_correspondences=len(correspondences),
                    inlier_count=report.inlier_count,
                    trimmed_rms_mm=report.final_trimmed_rms_mm,
                    max_motion_mm=motion,
                )
            )
            if motion < motion_stop:
                break
    if abs(np.linalg.det(current.linear)) <= 1e-6:
        raise StageError("affine stage collapsed to a near-singular transform")
    return current, AffineStageDiagnostics(tuple(rows))
