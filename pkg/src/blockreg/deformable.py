"""Masked local deformation estimation after affine alignment.

Classical variational refinement honoring the stage contract: a dense
world-mm displacement field on the fixed grid, exactly zero outside the
region of interest, smooth under a Gaussian regularizer whose strength is
the ``smoothness`` knob (sigma = smoothness * 2 voxels).  Forces descend the
chosen similarity (SSC channel SSD by default, local NCC optionally); each
step is capped at ``step_size_mm`` per voxel and accepted only if it does
not increase the objective (backtracking halves the step otherwise), so the
recorded similarity trace is non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy import ndimage

from .errors import GeometryError, StageError
from .ssc import SSCParams, compute_ssc, ssc_mse
from .warp import (
    DisplacementField,
    apply_field,
    resample_field_to_grid,
    resample_mask_to_grid,
    resample_to_resolution,
)

__all__ = [
    "DeformableConfig",
    "DeformableIterationRow",
    "DeformableDiagnostics",
    "register_deformable",
]

_SIGMA_PER_SMOOTHNESS = 2.0  # voxels of Gaussian sigma per unit of smoothness
_MAX_BACKTRACKS = 4
_ACCEPT_SLACK = 1e-12


@dataclass(frozen=True)
class DeformableConfig:
    """Regularization strength, pyramid schedule and step control."""

    smoothness: float = 0.5
    levels: tuple = (2.0, 1.0)
    iterations_per_level: int = 50
    step_size_mm: float = 0.5
    similarity: str = "ssc_ssd"
    ssc: SSCParams = dataclass_field(default_factory=SSCParams)

    def __post_init__(self):
        if self.smoothness < 0:
            raise ValueError(f"smoothness must be >= 0, got {self.smoothness}")
        spacings = tuple(float(s) for s in self.levels)
        if not spacings or any(s <= 0 for s in spacings):
            raise ValueError(f"levels must be positive spacings, got {self.levels}")
        if any(b >= a for a, b in zip(spacings, spacings[1:])):
            raise ValueError(f"level spacings must strictly decrease, got {spacings}")
        if self.iterations_per_level < 1:
            raise ValueError(
                f"iterations_per_level must be >= 1, got {self.iterations_per_level}"
            )
        if not self.step_size_mm > 0:
            raise ValueError(f"step_size_mm must be positive, got {self.step_size_mm}")
        if self.similarity not in ("ssc_ssd", "local_ncc"):
            raise ValueError(
                f"similarity must be 'ssc_ssd' or 'local_ncc', got {self.similarity!r}"
            )
        object.__setattr__(self, "levels", spacings)


@dataclass(frozen=True)
class DeformableIterationRow:
    level_spacing_mm: float
    iteration: int
    similarity: float
    step_mm: float
    backtracks: int
    accepted: bool


@dataclass(frozen=True)
class DeformableDiagnostics:
    rows: tuple

    def similarity_trace(self, spacing=None):
        return [
            r.similarity
            for r in self.rows
            if spacing is None or r.level_spacing_mm == spacing
        ]

    def format_report(self):
        lines = [
            f"{'level_mm':>9} {'iter':>5} {'similarity':>14} {'step_mm':>9} "
            f"{'backtracks':>11} {'accepted':>9}"
        ]
        for r in self.rows:
            lines.append(
                f"{r.level_spacing_mm:>9.3f} {r.iteration:>5d} {r.similarity:>14.8f} "
                f"{r.step_mm:>9.4f} {r.backtracks:>11d} {str(r.accepted):>9}"
            )
        return "\n".join(lines) + "\n"


class _SscObjective:
    """SSC channel SSD: objective is the masked SSC-MSE, force follows the
    descriptor gradient of the warped image."""

    def __init__(self, fixed_level, roi_level, params, threads):
        self.params = params
        self.threads = threads
        self.roi = roi_level
        self.spacing = fixed_level.grid.spacing
        self.reference = compute_ssc(fixed_level, params, threads=threads)

    def evaluate(self, warped):
        descriptor = compute_ssc(warped, self.params, threads=self.threads)
        try:
            objective = ssc_mse(self.reference, descriptor, self.roi)
        except StageError:
            objective = 0.0
        return objective, descriptor

    def force(self, state):
        descriptor = state
        diff = self.reference.channels - descriptor.channels
        dims = descriptor.grid.dims
        force = np.zeros(dims + (3,))
        for axis in range(3):
            if dims[axis] < 2:
                continue
            grad = np.gradient(descriptor.channels, axis=axis + 1) / self.spacing[axis]
            force[..., axis] = 2.0 * np.einsum("c...,c...->...", diff, grad)
        return force


class _LocalNccObjective:
    """Local windowed NCC: objective is mean (1 - CC^2) over the ROI."""

    window_radius = 2

    def __init__(self, fixed_level, roi_level, params, threads):
        self.roi = roi_level
        self.spacing = fixed_level.grid.spacing
        self.fixed = fixed_level.data
        size = 2 * self.window_radius + 1
        self._box = lambda a: ndimage.uniform_filter(a, size=size, mode="nearest")
        self.fixed_centered = self.fixed - self._box(self.fixed)
        self._eps = 1e-12 * (float(self.fixed.var()) + 1e-12)

    def _stats(self, warped):
        centered_m = warped.data - self._box(warped.data)
        cross = self._box(self.fixed_centered * centered_m)
        var_f = self._box(self.fixed_centered**2)
        var_m = self._box(centered_m**2)
        return centered_m, cross, var_f, var_m

    def evaluate(self, warped):
        centered_m, cross, var_f, var_m = self._stats(warped)
        denom = var_f * var_m
        valid = denom > self._eps
        cc2 = np.zeros_like(denom)
        cc2[valid] = np.clip(cross[valid] ** 2 / denom[valid], 0.0, 1.0)
        in_roi = self.roi.data
        if not in_roi.any():
            return 0.0, (warped, centered_m, cross, var_f, var_m)
        objective = float(np.mean(1.0 - cc2[in_roi]))
        return objective, (warped, centered_m, cross, var_f, var_m)

    def force(self, state):
        warped, centered_m, cross, var_f, var_m = state
        denom = var_f * var_m
        valid = (denom > self._eps) & (var_m > self._eps)
        factor = np.zeros_like(denom)
        safe_m = np.where(var_m > self._eps, var_m, 1.0)
        factor[valid] = (
            2.0
            * cross[valid]
            / denom[valid]
            * (self.fixed_centered[valid] - (cross[valid] / safe_m[valid]) * centered_m[valid])
        )
        dims = warped.grid.dims
        force = np.zeros(dims + (3,))
        for axis in range(3):
            if dims[axis] < 2:
                continue
            grad = np.gradient(warped.data, axis=axis) / self.spacing[axis]
            force[..., axis] = factor * grad
        return force


_OBJECTIVES = {"ssc_ssd": _SscObjective, "local_ncc": _LocalNccObjective}


def _smooth_and_mask(vectors, sigma, roi_data):
    if sigma > 0:
        smoothed = np.empty_like(vectors)
        for component in range(3):
            # constant-zero boundary: the field is identity beyond the FOV
            ndimage.gaussian_filter(
                vectors[..., component], sigma=sigma, mode="constant", cval=0.0,
                output=smoothed[..., component],
            )
    else:
        smoothed = vectors.copy()
    smoothed[~roi_data] = 0.0
    return smoothed


def register_deformable(fixed, moving_affine_aligned, roi, config=DeformableConfig(),
                        threads=1):
    """Estimate a masked displacement field; returns (field, diagnostics).

    ``moving_affine_aligned`` must already live on the fixed grid (the
    affine stage output); the returned field is on that same grid and is
    exactly zero outside ``roi``.
    """
    if not moving_affine_aligned.grid.matches(fixed.grid, tol=1e-6):
        raise GeometryError("moving volume grid does not match the fixed grid")
    if not roi.grid.matches(fixed.grid, tol=1e-6):
        raise GeometryError("roi grid does not match the fixed grid")
    if roi.count() == 0:
        raise GeometryError("empty roi")

    sigma = _SIGMA_PER_SMOOTHNESS * config.smoothness
    objective_cls = _OBJECTIVES[config.similarity]
    rows = []
    field = None

    for spacing in config.levels:
        fixed_level = resample_to_resolution(fixed, spacing, threads=threads)
        moving_level = resample_to_resolution(
            moving_affine_aligned, spacing, threads=threads
        )
        roi_level = resample_mask_to_grid(roi, fixed_level.grid, threads=threads)
        if field is None:
            vectors = np.zeros(fixed_level.grid.dims + (3,))
        else:
            vectors = resample_field_to_grid(field, fixed_level.grid, threads=threads).vectors.copy()
        vectors[~roi_level.data] = 0.0
        field = DisplacementField(fixed_level.grid, vectors)

        if roi_level.count() == 0:
            continue
        objective = objective_cls(fixed_level, roi_level, config.ssc, threads)
        warped = apply_field(moving_level, field, edge_clamp=True, threads=threads)
        current_value, state = objective.evaluate(warped)

        for iteration in range(1, config.iterations_per_level + 1):
            force = objective.force(state)
            force[~roi_level.data] = 0.0
            magnitude = np.sqrt((force**2).sum(axis=-1))
            max_magnitude = float(magnitude.max())
            if max_magnitude == 0.0:
                rows.append(DeformableIterationRow(
                    spacing, iteration, current_value, 0.0, 0, False))
                break
            trial = config.step_size_mm
            accepted = False
            backtracks = 0
            candidate = None
            while backtracks <= _MAX_BACKTRACKS:
                delta = force * (trial / max_magnitude)
                vectors = _smooth_and_mask(
                    field.vectors + delta, sigma, roi_level.data
                )
                candidate = DisplacementField(fixed_level.grid, vectors)
                warped_candidate = apply_field(
                    moving_level, candidate, edge_clamp=True, threads=threads)
                value, state_candidate = objective.evaluate(warped_candidate)
                if value <= current_value + _ACCEPT_SLACK:
                    accepted = True
                    break
                trial *= 0.5
                backtracks += 1
            if accepted:
                field = candidate
                current_value = value
                state = state_candidate
                rows.append(DeformableIterationRow(
                    spacing, iteration, current_value, trial, backtracks, True))
            else:
                rows.append(DeformableIterationRow(
                    spacing, iteration, current_value, 0.0, backtracks, False))
                break

    if not field.grid.matches(fixed.grid, tol=1e-6):
        vectors = resample_field_to_grid(field, fixed.grid, threads=threads).vectors.copy()
        vectors[~roi.data] = 0.0
        field = DisplacementField(fixed.grid, vectors)
    else:
        vectors = field.vectors.copy()
        vectors[~roi.data] = 0.0
        field = DisplacementField(fixed.grid, vectors)
    return field, DeformableDiagnostics(tuple(rows))
