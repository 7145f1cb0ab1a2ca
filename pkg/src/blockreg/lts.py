"""Affine estimation from point correspondences by least trimmed squares.

The trimmed fit iterates concentration steps: fit on the current inlier set,
rank every pair by residual under that fit, keep the fixed-size
smallest-residual subset, refit.  Each step provably does not increase the
trimmed sum of squares, so the RMS trace is non-increasing.  The kept
fraction is the robustness hyperparameter exposed to grid search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RankError
from .geometry import AffineTransform
from .blockmatch import ceil_fraction

__all__ = ["LTSParams", "LTSReport", "fit_affine_least_squares", "fit_affine_lts"]

MIN_PAIRS = 4
_RANK_TOL = 1e-9


@dataclass(frozen=True)
class LTSParams:
    """Trimming fraction and iteration limits for the robust fit."""

    inlier_proportion: float = 0.5
    max_iterations: int = 30
    convergence_tol: float = 1e-4  # mm, max point motion between iterations

    def __post_init__(self):
        if not 0.0 < self.inlier_proportion <= 1.0:
            raise ValueError(
                f"inlier_proportion must be in (0, 1], got {self.inlier_proportion}"
            )
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.convergence_tol > 0:
            raise ValueError(
                f"convergence_tol must be positive, got {self.convergence_tol}"
            )


@dataclass(frozen=True)
class LTSReport:
    iterations_used: int
    final_trimmed_rms_mm: float
    inlier_count: int
    condition_estimate: float
    converged: bool
    rms_trace: tuple
    inlier_indices: tuple


def _fit_points(fixed, moving):
    """Least-squares 12-parameter affine via normal equations on centered
    coordinates; returns (transform, condition estimate)."""
    if len(fixed) < MIN_PAIRS:
        raise RankError(f"need at least {MIN_PAIRS} pairs, got {len(fixed)}")
    center_f = fixed.mean(axis=0)
    center_m = moving.mean(axis=0)
    fc = fixed - center_f
    mc = moving - center_m
    singular = np.linalg.svd(fc, compute_uv=False)
    if singular[-1] <= _RANK_TOL:
        raise RankError(
            f"fixed points are coplanar or collinear "
            f"(smallest singular value {singular[-1]:.3e})"
        )
    design = np.hstack([fc, np.ones((len(fc), 1))])
    gram = design.T @ design
    rhs = design.T @ mc
    solution = np.linalg.solve(gram, rhs)  # (4, 3)
    linear = solution[:3].T
    offset = center_m + solution[3] - linear @ center_f
    return (
        AffineTransform.from_linear(linear, offset),
        float(singular[0] / singular[-1]),
    )


def _canonical_order(points):
    return np.lexsort((points[:, 2], points[:, 1], points[:, 0]))


def fit_affine_least_squares(pairs):
    """Ordinary least-squares affine over all correspondences."""
    transform, _ = _fit_points(
        np.asarray(pairs.fixed_points), np.asarray(pairs.moving_points)
    )
    return transform


def fit_affine_lts(pairs, params=LTSParams()):
    """Least-trimmed-squares affine; returns (transform, LTSReport).

    Pairs are canonically sorted by fixed point first, so the result does
    not depend on input order.  Residual ties during trimming keep the
    earlier pair in canonical order.
    """
    fixed = np.asarray(pairs.fixed_points, dtype=np.float64)
    moving = np.asarray(pairs.moving_points, dtype=np.float64)
    order = _canonical_order(fixed)
    fixed = fixed[order]
    moving = moving[order]
    n_pairs = len(fixed)
    keep = ceil_fraction(params.inlier_proportion, n_pairs)
    if keep < MIN_PAIRS:
        raise RankError(
            f"inlier_proportion {params.inlier_proportion} keeps {keep} of "
            f"{n_pairs} pairs; need at least {MIN_PAIRS}"
        )

    inliers = np.arange(n_pairs)
    previous = None
    best = None
    trace = []
    iterations = 0
    converged = False
    for iterations in range(1, params.max_iterations + 1):
        transform, condition = _fit_points(fixed[inliers], moving[inliers])
        residuals = np.linalg.norm(transform.apply(fixed) - moving, axis=1)
        ranked = np.argsort(residuals, kind="stable")
        new_inliers = np.sort(ranked[:keep])
        trimmed_rms = float(np.sqrt(np.mean(residuals[new_inliers] ** 2)))
        trace.append(trimmed_rms)
        if best is None or trimmed_rms < best[0]:
            best = (trimmed_rms, transform, condition, new_inliers)
        if np.array_equal(new_inliers, inliers):
            converged = True
            break
        if previous is not None:
            motion = np.linalg.norm(
                transform.apply(fixed) - previous.apply(fixed), axis=1
            ).max()
            if motion < params.convergence_tol:
                inliers = new_inliers
                converged = True
                break
        previous = transform
        inliers = new_inliers

    trimmed_rms, transform, condition, final_inliers = best
    report = LTSReport(
        iterations_used=iterations,
        final_trimmed_rms_mm=trimmed_rms,
        inlier_count=keep,
        condition_estimate=condition,
        converged=converged,
        rms_trace=tuple(trace),
        inlier_indices=tuple(int(order[i]) for i in final_inliers),
    )
    return transform, report
