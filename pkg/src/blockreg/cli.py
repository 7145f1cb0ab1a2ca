"""Batch command-line front end for the registration pipeline.

Every stage is also exposed individually (affine, deform, warp, ssc, tre,
gridsearch) so pipelines can be composed from files.  Options may come from
flags or a JSON config file (flags win).  Exit codes: 0 success,
1 validation error, 2 runtime/numerical error, 3 I/O or parse error.
Outputs contain no timestamps: rerunning a command with identical inputs
rewrites byte-identical files.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__, _kernels
from .affine_pipeline import AffineStageConfig, register_affine
from .blockmatch import BlockMatchParams, match_blocks, partition_and_select, \
    write_correspondences_csv
from .deformable import DeformableConfig, register_deformable
from .errors import BlockregError, ParseError, ValidationError
from .evaluation import compute_tre, grid_search_proportion, run_phase_report, \
    write_grid_search_csv
from .geometry import AffineTransform, Mask
from .lts import LTSParams
from .nifti import read_field, read_mask, read_volume, write_field, \
    write_multichannel, write_volume
from .ssc import SSCParams, compute_ssc, ssc_mse
from .textio import read_affine, read_landmarks, write_affine
from .warp import InterpolationKind, apply_affine, apply_field, \
    compose_affine_then_field, crop_mask, crop_volume, embed_field, \
    mask_bounding_box, resample_to_resolution

EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_IO = 3

THREADS_ENV = "BLOCKREG_THREADS"

DEFAULTS = {
    "levels": "1.0x5,0.5x5",
    "block_size": 4,
    "active_fraction": 0.25,
    "search_radius": 4,
    "search_stride": 1,
    "proportion": 0.5,
    "lts_iterations": 30,
    "lts_tol": 1e-4,
    "smoothness": 0.5,
    "deform_levels": "2.0,1.0",
    "deform_iterations": 50,
    "step_size": 0.5,
    "similarity": "ssc_ssd",
    "patch_radius": 1,
    "neighbor_step": 1,
    "epsilon": 1e-6,
    "crop_margin": 8,
    "background": 0.0,
    "candidates": "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
    "direction": "forward",
}


def _guarded(body):
    try:
        body()
    except ValidationError as exc:
        for problem in exc.problems:
            click.echo(f"error: validation: {problem}", err=True)
        sys.exit(EXIT_VALIDATION)
    except ParseError as exc:
        click.echo(f"error: parse: {exc}", err=True)
        sys.exit(EXIT_IO)
    except OSError as exc:
        click.echo(f"error: io: {exc}", err=True)
        sys.exit(EXIT_IO)
    except BlockregError as exc:
        click.echo(f"error: runtime: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)


def _load_config_file(path, problems):
    if path is None:
        return {}
    if not os.path.isfile(path):
        problems.append(f"config file not found: {path}")
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        problems.append(f"cannot read config file {path}: {exc}")
        return {}
    if not isinstance(loaded, dict):
        problems.append(f"config file {path} must hold a JSON object")
        return {}
    return loaded


class _Options:
    """Merged view of flags, config file and defaults."""

    def __init__(self, flags, config):
        self.flags = flags
        self.config = config

    def get(self, key):
        value = self.flags.get(key)
        if value is not None:
            return value
        if key in self.config:
            return self.config[key]
        return DEFAULTS[key]


def _resolve_threads(value, problems):
    if value is None:
        env = os.environ.get(THREADS_ENV, "").strip()
        if not env:
            return 1
        try:
            value = int(env)
        except ValueError:
            problems.append(f"{THREADS_ENV}={env!r} is not an integer")
            return 1
    if value < 1:
        problems.append(f"threads must be >= 1, got {value}")
        return 1
    return int(value)


def _parse_level_schedule(text, problems):
    levels = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            spacing_text, _, iter_text = part.partition("x")
            spacing = float(spacing_text)
            iterations = int(iter_text) if iter_text else 5
            levels.append((spacing, iterations))
        except ValueError:
            problems.append(f"bad level spec {part!r}, expected SPACINGxITERS")
    if not levels:
        problems.append(f"no levels parsed from {text!r}")
    return tuple(levels)


def _parse_float_list(text, problems, what):
    values = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            values.append(float(part))
        except ValueError:
            problems.append(f"bad {what} entry {part!r}")
    return tuple(values)


def _require_file(path, what, problems):
    if path is None:
        return
    if not os.path.isfile(str(path)):
        problems.append(f"{what} not found: {path}")


def _build_affine_config(opts, problems):
    levels = _parse_level_schedule(opts.get("levels"), problems)
    config = None
    try:
        config = AffineStageConfig(
            levels=levels or ((1.0, 5),),
            block_match=BlockMatchParams(
                block_size=int(opts.get("block_size")),
                active_fraction=float(opts.get("active_fraction")),
                search_radius=int(opts.get("search_radius")),
                search_stride=int(opts.get("search_stride")),
            ),
            lts=LTSParams(
                inlier_proportion=float(opts.get("proportion")),
                max_iterations=int(opts.get("lts_iterations")),
                convergence_tol=float(opts.get("lts_tol")),
            ),
        )
    except (TypeError, ValueError) as exc:
        problems.append(str(exc))
    return config


def _build_deform_config(opts, ssc_params, problems):
    spacings = _parse_float_list(opts.get("deform_levels"), problems, "deform level")
    config = None
    try:
        config = DeformableConfig(
            smoothness=float(opts.get("smoothness")),
            levels=spacings or (1.0,),
            iterations_per_level=int(opts.get("deform_iterations")),
            step_size_mm=float(opts.get("step_size")),
            similarity=str(opts.get("similarity")),
            ssc=ssc_params or SSCParams(),
        )
    except (TypeError, ValueError) as exc:
        problems.append(str(exc))
    return config


def _build_ssc_params(opts, problems):
    try:
        return SSCParams(
            patch_radius=int(opts.get("patch_radius")),
            neighbor_step=int(opts.get("neighbor_step")),
            epsilon=float(opts.get("epsilon")),
        )
    except (TypeError, ValueError) as exc:
        problems.append(str(exc))
        return None


def _finish_validation(problems):
    if problems:
        raise ValidationError(problems)


def _register_with_direction(fixed, moving, config, direction, threads):
    if direction == "reverse":
        transform, diagnostics = register_affine(moving, fixed, config, threads=threads)
        return transform.inverse(), diagnostics
    return register_affine(fixed, moving, config, threads=threads)


_common_affine_options = [
    click.option("--levels", default=None,
                 help="Pyramid schedule SPACINGxITERS,... (default: 1.0x5,0.5x5)."),
    click.option("--block-size", type=int, default=None,
                 help="Block edge length in voxels (default: 4)."),
    click.option("--active-fraction", type=float, default=None,
                 help="Fraction of highest-variance blocks kept (default: 0.25)."),
    click.option("--search-radius", type=int, default=None,
                 help="Search window half-width in voxels (default: 4)."),
    click.option("--search-stride", type=int, default=None,
                 help="Search step in voxels (default: 1)."),
    click.option("--proportion", type=float, default=None,
                 help="LTS inlier proportion in (0,1] (default: 0.5)."),
    click.option("--lts-iterations", type=int, default=None,
                 help="Max LTS concentration steps (default: 30)."),
    click.option("--lts-tol", type=float, default=None,
                 help="LTS convergence tolerance, mm (default: 0.0001)."),
    click.option("--direction", type=click.Choice(["forward", "reverse"]), default=None,
                 help="Match fixed-to-moving (forward, default) or estimate on "
                      "swapped roles and invert (reverse)."),
]

_ssc_options = [
    click.option("--patch-radius", type=int, default=None,
                 help="Descriptor patch radius in voxels (default: 1)."),
    click.option("--neighbor-step", type=int, default=None,
                 help="Descriptor neighborhood step in voxels (default: 1)."),
    click.option("--epsilon", type=float, default=None,
                 help="Descriptor variance clamp epsilon (default: 1e-06)."),
]

_deform_options = [
    click.option("--smoothness", type=float, default=None,
                 help="Warp smoothness weight; Gaussian sigma is 2x this in "
                      "voxels (default: 0.5)."),
    click.option("--deform-levels", default=None,
                 help="Deformable pyramid spacings, mm (default: 2.0,1.0)."),
    click.option("--deform-iterations", type=int, default=None,
                 help="Iterations per deformable level (default: 50)."),
    click.option("--step-size", type=float, default=None,
                 help="Max displacement update per iteration, mm (default: 0.5)."),
    click.option("--similarity", type=click.Choice(["ssc_ssd", "local_ncc"]),
                 default=None,
                 help="Deformable similarity force (default: ssc_ssd)."),
]

_shared_options = [
    click.option("--threads", type=int, default=None,
                 help=f"Worker threads for data-parallel kernels "
                      f"(default: ${THREADS_ENV} or 1)."),
    click.option("--config", "config_path", default=None,
                 help="JSON config file; flags override file values."),
]


def _add_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn
    return wrap


@click.group()
@click.version_option(version=__version__, prog_name="blockreg")
def main():
    """Coarse-to-fine multimodal 3D registration (block matching + LTS affine,
    SSC similarity, masked deformable refinement)."""


@main.command()
@click.option("--fixed", "fixed_path", required=True, help="Fixed volume (NIfTI).")
@click.option("--moving", "moving_path", required=True, help="Moving volume (NIfTI).")
@click.option("--mask", "mask_path", default=None,
              help="ROI mask on the fixed grid; deformation is zero outside it.")
@click.option("--fixed-landmarks", "fixed_landmarks_path", default=None,
              help="Fixed landmark CSV for TRE reporting.")
@click.option("--moving-landmarks", "moving_landmarks_path", default=None,
              help="Moving landmark CSV for TRE reporting.")
@click.option("--out", "out_dir", required=True, help="Output directory.")
@click.option("--grid-search", is_flag=True, default=False,
              help="Pick the LTS proportion by SSC-MSE grid search first.")
@click.option("--candidates", default=None,
              help="Grid-search proportions (default: 0.1,0.2,...,0.9).")
@click.option("--crop-margin", type=int, default=None,
              help="Mask bounding-box margin in voxels before the deformable "
                   "stage (default: 8).")
@click.option("--background", type=float, default=None,
              help="Out-of-field intensity (default: 0.0).")
@_add_options(_common_affine_options)
@_add_options(_deform_options)
@_add_options(_ssc_options)
@_add_options(_shared_options)
def pipeline(**flags):
    """Run the full pipeline: affine, crop, deformable, compose, warp, report."""
    def body():
        problems = []
        config_file = _load_config_file(flags.pop("config_path"), problems)
        opts = _Options(flags, config_file)
        threads = _resolve_threads(flags.get("threads"), problems)

        fixed_path = flags["fixed_path"]
        moving_path = flags["moving_path"]
        mask_path = flags.get("mask_path") or config_file.get("mask")
        _require_file(fixed_path, "fixed volume", problems)
        _require_file(moving_path, "moving volume", problems)
        _require_file(mask_path, "mask volume", problems)
        _require_file(flags.get("fixed_landmarks_path"), "fixed landmarks", problems)
        _require_file(flags.get("moving_landmarks_path"), "moving landmarks", problems)
        lm_paths = (flags.get("fixed_landmarks_path"), flags.get("moving_landmarks_path"))
        if (lm_paths[0] is None) != (lm_paths[1] is None):
            problems.append("landmarks require both --fixed-landmarks and --moving-landmarks")

        ssc_params = _build_ssc_params(opts, problems)
        affine_config = _build_affine_config(opts, problems)
        deform_config = _build_deform_config(opts, ssc_params, problems)
        background = float(opts.get("background"))
        crop_margin = int(opts.get("crop_margin"))
        if crop_margin < 0:
            problems.append(f"crop margin must be >= 0, got {crop_margin}")
        direction = str(opts.get("direction"))
        use_grid_search = bool(flags.get("grid_search")) or bool(
            config_file.get("grid_search", False))
        candidates = ()
        if use_grid_search:
            candidates = _parse_float_list(
                opts.get("candidates"), problems, "candidate proportion")
            if not candidates:
                problems.append("grid search requested but no candidate proportions given")
        out_dir = Path(flags["out_dir"])
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            problems.append(f"cannot create output directory {out_dir}: {exc}")
        _finish_validation(problems)

        fixed = read_volume(fixed_path)
        moving = read_volume(moving_path)
        mask = read_mask(mask_path) if mask_path else None
        landmarks_fixed = read_landmarks(lm_paths[0]) if lm_paths[0] else None
        landmarks_moving = read_landmarks(lm_paths[1]) if lm_paths[1] else None

        if use_grid_search:
            best, table = grid_search_proportion(
                fixed, moving, affine_config, candidates, mask=mask,
                ssc_params=ssc_params, threads=threads)
            write_grid_search_csv(table, out_dir / "grid_search.csv")
            click.echo(f"grid search best proportion: {best:g}")
            affine_config = affine_config.with_proportion(best)

        affine, affine_diag = _register_with_direction(
            fixed, moving, affine_config, direction, threads)

        roi = mask if mask is not None else Mask(fixed.grid, np.ones(fixed.grid.dims, bool))
        if mask is not None:
            lo, hi = mask_bounding_box(roi, crop_margin)
            fixed_crop = crop_volume(fixed, lo, hi)
            roi_crop = crop_mask(roi, lo, hi)
        else:
            lo = (0, 0, 0)
            fixed_crop = fixed
            roi_crop = roi
        moving_aligned = apply_affine(
            moving, affine, fixed_crop.grid, background=background, threads=threads)
        field_crop, deform_diag = register_deformable(
            fixed_crop, moving_aligned, roi_crop, deform_config, threads=threads)
        field_local = embed_field(field_crop, fixed.grid, lo)
        total_field = compose_affine_then_field(affine, field_local)
        warped = apply_field(moving, total_field, background=background, threads=threads)

        reports, differences = run_phase_report(
            fixed, moving, affine=affine, field=total_field, mask=mask,
            fixed_landmarks=landmarks_fixed, moving_landmarks=landmarks_moving,
            ssc_params=ssc_params, threads=threads)

        write_affine(affine, out_dir / "affine.txt")
        write_field(total_field, out_dir / "field.nii.gz")
        write_volume(warped, out_dir / "warped.nii.gz")
        for phase, diff in differences.items():
            write_volume(diff, out_dir / f"diff_{phase}.nii.gz")
        report_payload = {
            "phases": [r.as_dict() for r in reports],
            "settings": {
                "lts_proportion": affine_config.lts.inlier_proportion,
                "direction": direction,
                "backend": _kernels.active_backend(),
            },
        }
        with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
            json.dump(report_payload, fh, indent=2)
            fh.write("\n")
        with open(out_dir / "diagnostics.txt", "w", encoding="utf-8") as fh:
            fh.write("affine stage\n")
            fh.write(affine_diag.format_report())
            fh.write("\ndeformable stage\n")
            fh.write(deform_diag.format_report())
        for report in reports:
            line = f"{report.phase}: ssc_mse={report.ssc_mse:.8g}"
            if report.tre is not None:
                line += f" tre_mean_mm={report.tre.mean_mm:.6g}"
            click.echo(line)
    _guarded(body)


@main.command()
@click.option("--fixed", "fixed_path", required=True, help="Fixed volume (NIfTI).")
@click.option("--moving", "moving_path", required=True, help="Moving volume (NIfTI).")
@click.option("--out", "out_path", required=True, help="Output affine text file.")
@click.option("--diagnostics", "diagnostics_path", default=None,
              help="Write the per-level, per-iteration table here.")
@click.option("--dump-correspondences", "dump_path", default=None,
              help="Write final-level correspondences (fixed_xyz, moving_xyz, score) CSV.")
@_add_options(_common_affine_options)
@_add_options(_shared_options)
def affine(**flags):
    """Estimate the affine transform by hierarchical block matching + LTS."""
    def body():
        problems = []
        config_file = _load_config_file(flags.pop("config_path"), problems)
        opts = _Options(flags, config_file)
        threads = _resolve_threads(flags.get("threads"), problems)
        _require_file(flags["fixed_path"], "fixed volume", problems)
        _require_file(flags["moving_path"], "moving volume", problems)
        affine_config = _build_affine_config(opts, problems)
        direction = str(opts.get("direction"))
        _finish_validation(problems)

        fixed = read_volume(flags["fixed_path"])
        moving = read_volume(flags["moving_path"])
        transform, diagnostics = _register_with_direction(
            fixed, moving, affine_config, direction, threads)
        write_affine(transform, flags["out_path"])
        if flags.get("diagnostics_path"):
            with open(flags["diagnostics_path"], "w", encoding="utf-8") as fh:
                fh.write(diagnostics.format_report())
        if flags.get("dump_path"):
            spacing = affine_config.levels[-1][0]
            fixed_level = resample_to_resolution(fixed, spacing, threads=threads)
            warped = apply_affine(moving, transform, fixed_level.grid, threads=threads)
            active = partition_and_select(fixed_level, affine_config.block_match)
            correspondences = match_blocks(
                fixed_level, warped, active, affine_config.block_match,
                source_level=f"{spacing:g}mm", threads=threads)
            write_correspondences_csv(correspondences, flags["dump_path"])
        click.echo(f"wrote {flags['out_path']}")
    _guarded(body)


@main.command()
@click.option("--fixed", "fixed_path", required=True, help="Fixed volume (NIfTI).")
@click.option("--moving", "moving_path", required=True,
              help="Moving volume already affine-aligned onto the fixed grid.")
@click.option("--roi", "roi_path", required=True,
              help="Mask on the fixed grid; the field is exactly zero outside it.")
@click.option("--out", "out_path", required=True, help="Output field (NIfTI, 5-D vector).")
@click.option("--diagnostics", "diagnostics_path", default=None,
              help="Write the per-iteration similarity table here.")
@_add_options(_deform_options)
@_add_options(_ssc_options)
@_add_options(_shared_options)
def deform(**flags):
    """Estimate the masked local deformation after affine alignment."""
    def body():
        problems = []
        config_file = _load_config_file(flags.pop("config_path"), problems)
        opts = _Options(flags, config_file)
        threads = _resolve_threads(flags.get("threads"), problems)
        _require_file(flags["fixed_path"], "fixed volume", problems)
        _require_file(flags["moving_path"], "moving volume", problems)
        _require_file(flags["roi_path"], "roi mask", problems)
        ssc_params = _build_ssc_params(opts, problems)
        deform_config = _build_deform_config(opts, ssc_params, problems)
        _finish_validation(problems)

        fixed = read_volume(flags["fixed_path"])
        moving = read_volume(flags["moving_path"])
        roi = read_mask(flags["roi_path"])
        field, diagnostics = register_deformable(
            fixed, moving, roi, deform_config, threads=threads)
        write_field(field, flags["out_path"])
        if flags.get("diagnostics_path"):
            with open(flags["diagnostics_path"], "w", encoding="utf-8") as fh:
                fh.write(diagnostics.format_report())
        click.echo(f"wrote {flags['out_path']}")
    _guarded(body)


@main.command()
@click.option("--input", "input_path", required=True, help="Volume to warp (NIfTI).")
@click.option("--out", "out_path", required=True, help="Output volume (NIfTI).")
@click.option("--affine", "affine_path", default=None, help="Affine text file to apply.")
@click.option("--field", "field_path", default=None,
              help="Displacement field to apply (NIfTI, 5-D vector). When both "
                   "affine and field are given they are composed into one warp.")
@click.option("--like", "like_path", default=None,
              help="Reference volume whose grid defines the output (default: "
                   "the field grid, else the input grid).")
@click.option("--interp", type=click.Choice(["trilinear", "nearest"]), default=None,
              help="Interpolation (default: trilinear).")
@click.option("--background", type=float, default=None,
              help="Out-of-field intensity (default: 0.0).")
@_add_options(_shared_options)
def warp(**flags):
    """Apply an affine and/or a displacement field to a volume."""
    def body():
        problems = []
        _load_config_file(flags.pop("config_path"), problems)
        threads = _resolve_threads(flags.get("threads"), problems)
        _require_file(flags["input_path"], "input volume", problems)
        _require_file(flags.get("affine_path"), "affine file", problems)
        _require_file(flags.get("field_path"), "field file", problems)
        _require_file(flags.get("like_path"), "reference volume", problems)
        _finish_validation(problems)

        volume = read_volume(flags["input_path"])
        interp = (InterpolationKind.NEAREST if flags.get("interp") == "nearest"
                  else InterpolationKind.TRILINEAR)
        background = float(flags.get("background") or 0.0)
        transform = (read_affine(flags["affine_path"])
                     if flags.get("affine_path") else None)
        if flags.get("field_path"):
            field = read_field(flags["field_path"])
            if transform is not None:
                field = compose_affine_then_field(transform, field)
            out = apply_field(volume, field, interp=interp,
                              background=background, threads=threads)
        else:
            transform = transform if transform is not None else AffineTransform.identity()
            like = (read_volume(flags["like_path"]).grid
                    if flags.get("like_path") else volume.grid)
            out = apply_affine(volume, transform, like, interp=interp,
                               background=background, threads=threads)
        write_volume(out, flags["out_path"])
        click.echo(f"wrote {flags['out_path']}")
    _guarded(body)


@main.command()
@click.option("--fixed", "fixed_path", required=True, help="Fixed volume (NIfTI).")
@click.option("--moving", "moving_path", required=True,
              help="Moving volume on the same grid (NIfTI).")
@click.option("--mask", "mask_path", default=None, help="Score only inside this mask.")
@click.option("--export-descriptors", "export_dir", default=None,
              help="Also write the 12-channel descriptors here (debug aid).")
@_add_options(_ssc_options)
@_add_options(_shared_options)
def ssc(**flags):
    """Print the SSC-MSE similarity between two aligned volumes."""
    def body():
        problems = []
        config_file = _load_config_file(flags.pop("config_path"), problems)
        opts = _Options(flags, config_file)
        threads = _resolve_threads(flags.get("threads"), problems)
        _require_file(flags["fixed_path"], "fixed volume", problems)
        _require_file(flags["moving_path"], "moving volume", problems)
        _require_file(flags.get("mask_path"), "mask volume", problems)
        ssc_params = _build_ssc_params(opts, problems)
        _finish_validation(problems)

        fixed = read_volume(flags["fixed_path"])
        moving = read_volume(flags["moving_path"])
        mask = read_mask(flags["mask_path"]) if flags.get("mask_path") else None
        descriptor_fixed = compute_ssc(fixed, ssc_params, threads=threads)
        descriptor_moving = compute_ssc(moving, ssc_params, threads=threads)
        value = ssc_mse(descriptor_fixed, descriptor_moving, mask)
        if flags.get("export_dir"):
            export = Path(flags["export_dir"])
            export.mkdir(parents=True, exist_ok=True)
            write_multichannel(fixed.grid, descriptor_fixed.channels,
                               export / "ssc_fixed.nii.gz")
            write_multichannel(moving.grid, descriptor_moving.channels,
                               export / "ssc_moving.nii.gz")
        click.echo(f"{value:.17g}")
    _guarded(body)


@main.command()
@click.option("--fixed-landmarks", "fixed_path", required=True,
              help="Fixed landmark CSV (label, x, y, z in mm).")
@click.option("--moving-landmarks", "moving_path", required=True,
              help="Moving landmark CSV, paired by order.")
@click.option("--affine", "affine_path", default=None, help="Affine text file to apply.")
@click.option("--field", "field_path", default=None,
              help="Displacement field sampled at the affine-mapped points.")
@_add_options(_shared_options)
def tre(**flags):
    """Print landmark target registration error (mean and per landmark)."""
    def body():
        problems = []
        _load_config_file(flags.pop("config_path"), problems)
        _resolve_threads(flags.get("threads"), problems)
        _require_file(flags["fixed_path"], "fixed landmarks", problems)
        _require_file(flags["moving_path"], "moving landmarks", problems)
        _require_file(flags.get("affine_path"), "affine file", problems)
        _require_file(flags.get("field_path"), "field file", problems)
        _finish_validation(problems)

        fixed = read_landmarks(flags["fixed_path"])
        moving = read_landmarks(flags["moving_path"])
        transform = (read_affine(flags["affine_path"])
                     if flags.get("affine_path") else None)
        field = read_field(flags["field_path"]) if flags.get("field_path") else None
        result = compute_tre(fixed, moving, transform, field)
        click.echo(f"mean_mm: {result.mean_mm:.9g}")
        labels = fixed.labels or tuple(f"L{i + 1}" for i in range(len(fixed)))
        for index, (label, distance) in enumerate(zip(labels, result.per_landmark_mm)):
            suffix = " (affine-only)" if index in result.affine_only_indices else ""
            click.echo(f"{label}: {distance:.9g}{suffix}")
    _guarded(body)


@main.command()
@click.option("--fixed", "fixed_path", required=True, help="Fixed volume (NIfTI).")
@click.option("--moving", "moving_path", required=True, help="Moving volume (NIfTI).")
@click.option("--mask", "mask_path", default=None, help="Score only inside this mask.")
@click.option("--candidates", default=None,
              help="Comma-separated LTS proportions (default: 0.1,0.2,...,0.9).")
@click.option("--out", "out_path", default=None, help="Write the score table CSV here.")
@_add_options(_common_affine_options)
@_add_options(_ssc_options)
@_add_options(_shared_options)
def gridsearch(**flags):
    """Grid-search the LTS proportion, scoring each candidate by SSC-MSE."""
    def body():
        problems = []
        config_file = _load_config_file(flags.pop("config_path"), problems)
        opts = _Options(flags, config_file)
        threads = _resolve_threads(flags.get("threads"), problems)
        _require_file(flags["fixed_path"], "fixed volume", problems)
        _require_file(flags["moving_path"], "moving volume", problems)
        _require_file(flags.get("mask_path"), "mask volume", problems)
        ssc_params = _build_ssc_params(opts, problems)
        affine_config = _build_affine_config(opts, problems)
        candidates = _parse_float_list(opts.get("candidates"), problems,
                                       "candidate proportion")
        if not candidates:
            problems.append("no grid-search candidates given")
        _finish_validation(problems)

        fixed = read_volume(flags["fixed_path"])
        moving = read_volume(flags["moving_path"])
        mask = read_mask(flags["mask_path"]) if flags.get("mask_path") else None
        best, table = grid_search_proportion(
            fixed, moving, affine_config, candidates, mask=mask,
            ssc_params=ssc_params, threads=threads)
        for proportion, score in table:
            click.echo(f"{proportion:g}: {score:.17g}")
        click.echo(f"best proportion: {best:g}")
        if flags.get("out_path"):
            write_grid_search_csv(table, flags["out_path"])
    _guarded(body)


if __name__ == "__main__":
    main()
