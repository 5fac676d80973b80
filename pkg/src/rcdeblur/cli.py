"""Command-line interface: blur synthesis, blind deblurring, metrics,
and PSF generation.

Exit codes: 0 success, 2 usage/config errors, 3 I/O or decode errors,
4 numerical failures (a partial trace CSV is still written).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import report
from .imgio import read_image, write_image
from .recovery import (
    GaussianPSFSpec,
    MotionPSFSpec,
    blur,
    isnr,
    snr,
    synth_gaussian_psf,
    synth_motion_psf,
    write_psf_text,
)
from .solver import NumericalError, SolverConfig, TraceRecord
from .support import PipelineConfig, deblur_pipeline

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class CLIError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# config-file key -> (section, attribute, parser)
_CONFIG_KEYS = {
    "lambda": ("solver", "lam", float),
    "rank": ("solver", "rank", int),
    "sigma0": ("solver", "sigma0", float),
    "rho": ("solver", "rho", float),
    "eps0": ("solver", "eps0", float),
    "outer_iters": ("solver", "outer_iters", int),
    "lbfgs_memory": ("solver", "lbfgs_memory", int),
    "lbfgs_max_iters": ("solver", "lbfgs_max_iters", int),
    "lbfgs_grad_tol": ("solver", "lbfgs_grad_tol", float),
    "lbfgs_ftol": ("solver", "lbfgs_ftol", float),
    "keep_fraction": ("pipeline", "image_keep_fraction", float),
    "threshold_factor": ("pipeline", "row_threshold_factor", float),
    "max_rounds": ("pipeline", "max_refinement_rounds", int),
    "image_rounds": ("pipeline", "image_refinement_rounds", int),
    "haar_depth": ("pipeline", "haar_depth", int),
    "seed": ("run", "seed", int),
    "bbox": ("run", "bbox", str),
    "noise": ("run", "noise", float),
    "psf": ("run", "psf", str),
}

# calibrated pipeline-scale solver defaults (see support.default_solver_config)
_SOLVER_DEFAULTS = dict(lam=0.5, lbfgs_max_iters=200, lbfgs_ftol=1e-10)


def parse_config_file(path: str) -> dict:
    """Line-oriented key=value settings; unknown keys are errors."""
    settings = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise CLIError(EXIT_USAGE, f"{path}:{lineno}: expected key=value")
                key, value = (part.strip() for part in line.split("=", 1))
                if key not in _CONFIG_KEYS:
                    raise CLIError(EXIT_USAGE, f"{path}:{lineno}: unknown key {key!r}")
                settings[key] = value
    except OSError as exc:
        raise CLIError(EXIT_IO, f"cannot read config {path!r}: {exc}") from exc
    return settings


def parse_bbox(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return (int(h), int(w))
    except ValueError as exc:
        raise CLIError(EXIT_USAGE, f"bad bbox {text!r}, expected HxW") from exc


def parse_psf_spec(text: str):
    try:
        kind, params = text.split(":", 1)
        parts = params.split(",")
        if kind == "motion":
            return MotionPSFSpec(int(parts[0]), float(parts[1]))
        if kind == "gaussian":
            return GaussianPSFSpec(int(parts[0]), float(parts[1]))
    except (ValueError, IndexError) as exc:
        raise CLIError(EXIT_USAGE, f"bad psf spec {text!r}") from exc
    raise CLIError(EXIT_USAGE, f"unknown psf kind {kind!r} (use motion: or gaussian:)")


def synth_psf(spec, grid: tuple[int, int]) -> np.ndarray:
    if isinstance(spec, MotionPSFSpec):
        return synth_motion_psf(spec, grid)
    return synth_gaussian_psf(spec, grid)


def _load_image(path: str) -> np.ndarray:
    try:
        return read_image(path)
    except (OSError, ValueError) as exc:
        raise CLIError(EXIT_IO, f"cannot read image {path!r}: {exc}") from exc


def _save_image(path: str, img: np.ndarray) -> None:
    try:
        write_image(path, img)
    except OSError as exc:
        raise CLIError(EXIT_IO, f"cannot write image {path!r}: {exc}") from exc


def _write_text(path: str, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise CLIError(EXIT_IO, f"cannot write {path!r}: {exc}") from exc


def _merged_value(args, file_settings: dict, key: str, cast):
    """Flag value wins over the config file entry."""
    flag = getattr(args, key.replace("-", "_"), None)
    if flag is not None:
        return flag
    if key in file_settings:
        return cast(file_settings[key])
    return None


def build_pipeline_config(args, file_settings: dict) -> PipelineConfig:
    solver_kwargs = dict(_SOLVER_DEFAULTS)
    pipeline_kwargs = {}
    for key, (section, attr, cast) in _CONFIG_KEYS.items():
        if key in file_settings and section in ("solver", "pipeline"):
            try:
                value = cast(file_settings[key])
            except ValueError as exc:
                raise CLIError(EXIT_USAGE, f"bad value for config key {key!r}") from exc
            if section == "solver":
                solver_kwargs[attr] = value
            else:
                pipeline_kwargs[attr] = value
    if getattr(args, "lam", None) is not None:
        solver_kwargs["lam"] = args.lam

    bbox_text = args.bbox or file_settings.get("bbox")
    if bbox_text is None:
        raise CLIError(EXIT_USAGE, "deblur requires --bbox HxW (or bbox= in config)")
    seed = _merged_value(args, file_settings, "seed", int) or 0
    try:
        return PipelineConfig(
            bbox=parse_bbox(bbox_text),
            solver=SolverConfig(**solver_kwargs),
            seed=seed,
            **pipeline_kwargs,
        )
    except ValueError as exc:
        raise CLIError(EXIT_USAGE, f"invalid configuration: {exc}") from exc


def cmd_blur(args) -> int:
    file_settings = parse_config_file(args.config) if args.config else {}
    psf_text = args.psf or file_settings.get("psf")
    if psf_text is None:
        raise CLIError(EXIT_USAGE, "blur requires --psf")
    spec = parse_psf_spec(psf_text)
    noise = _merged_value(args, file_settings, "noise", float) or 0.0
    seed = _merged_value(args, file_settings, "seed", int) or 0

    x = _load_image(args.input)
    try:
        kernel = synth_psf(spec, x.shape)
        if args.offset:
            dr, dc = (int(v) for v in args.offset.split(","))
            kernel = np.roll(kernel, (dr, dc), axis=(0, 1))
        y = blur(x, kernel, noise_sigma=noise, rng=seed)
    except ValueError as exc:
        raise CLIError(EXIT_USAGE, str(exc)) from exc

    _save_image(args.output, y)
    kernel_out = args.kernel_out or os.path.splitext(args.output)[0] + "_kernel.txt"
    _write_text(kernel_out, write_psf_text(kernel))
    return EXIT_OK


def cmd_deblur(args) -> int:
    file_settings = parse_config_file(args.config) if args.config else {}
    cfg = build_pipeline_config(args, file_settings)
    y = _load_image(args.input)

    stem = os.path.splitext(args.output)[0]
    trace_path = args.trace or stem + "_trace.csv"
    sink: list = []
    try:
        result = deblur_pipeline(y, cfg, trace_sink=sink)
    except NumericalError as exc:
        _write_trace(trace_path, sink)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        raise CLIError(EXIT_USAGE, str(exc)) from exc

    _save_image(args.output, result.image)
    _write_text(stem + "_kernel.txt", write_psf_text(result.kernel))
    if result.kernel_mask is not None:
        _write_text(stem + "_kernel_mask.txt", result.kernel_mask.to_text())
    if result.image_mask is not None:
        _write_text(stem + "_image_mask.txt", result.image_mask.to_text())
    _write_trace(trace_path, sink)
    if not args.no_figures:
        report.save_kernel_figure(result.kernel, stem + "_kernel.png")
        report.save_trace_figure(sink, stem + "_convergence.png")

    for msg in result.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    if args.truth:
        x = _load_image(args.truth)
        if x.shape != y.shape:
            raise CLIError(EXIT_USAGE, "truth image dimensions differ from input")
        print(f"SNR={snr(x, result.image):.4f}")
        try:
            print(f"ISNR={isnr(y, x, result.image):.4f}")
        except ValueError:
            pass  # observation equals truth: improvement undefined
    return EXIT_OK


def _write_trace(path: str, sink: list) -> None:
    lines = [TraceRecord.CSV_HEADER]
    lines.extend(rec.csv_row() for _, _, rec in sink)
    _write_text(path, "\n".join(lines) + "\n")


def cmd_metrics(args) -> int:
    y = _load_image(args.input)
    x = _load_image(args.truth)
    rec = _load_image(args.recovered)
    if not (y.shape == x.shape == rec.shape):
        raise CLIError(EXIT_USAGE, "images must share dimensions")
    print(f"SNR={snr(x, rec):.4f}")
    try:
        print(f"ISNR={isnr(y, x, rec):.4f}")
    except ValueError:
        print("ISNR=undefined")
    return EXIT_OK


def cmd_psf(args) -> int:
    spec = parse_psf_spec(args.psf)
    if args.grid:
        grid = parse_bbox(args.grid)
    else:
        scratch = (256, 256)
        try:
            tight = synth_psf(spec, scratch)
        except ValueError as exc:
            raise CLIError(EXIT_USAGE, str(exc)) from exc
        rows, cols = np.nonzero(tight)
        grid = (int(rows.max()) + 1, int(cols.max()) + 1)
    try:
        kernel = synth_psf(spec, grid)
    except ValueError as exc:
        raise CLIError(EXIT_USAGE, str(exc)) from exc
    _write_text(args.output, write_psf_text(kernel))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcdeblur",
        description="Blind grayscale deblurring via rank-one lifting with "
        "row/column sparsity.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_blur = sub.add_parser("blur", help="synthesize a blurred observation")
    p_blur.add_argument("--input", required=True)
    p_blur.add_argument("--output", required=True)
    p_blur.add_argument("--psf", help="motion:l,theta or gaussian:radius,sigma")
    p_blur.add_argument("--noise", type=float, default=None)
    p_blur.add_argument("--seed", type=int, default=None)
    p_blur.add_argument("--config")
    p_blur.add_argument("--offset", help="R,C cyclic shift applied to the kernel")
    p_blur.add_argument("--kernel-out", dest="kernel_out")
    p_blur.set_defaults(func=cmd_blur)

    p_deblur = sub.add_parser("deblur", help="recover kernel and latent image")
    p_deblur.add_argument("--input", required=True)
    p_deblur.add_argument("--output", required=True)
    p_deblur.add_argument("--bbox", help="initial kernel bounding box HxW")
    p_deblur.add_argument("--config")
    p_deblur.add_argument("--seed", type=int, default=None)
    p_deblur.add_argument("--trace", help="trace CSV path")
    p_deblur.add_argument("--truth", help="ground-truth image for metrics")
    p_deblur.add_argument("--lambda", dest="lam", type=float, default=None)
    p_deblur.add_argument("--no-figures", action="store_true")
    p_deblur.set_defaults(func=cmd_deblur)

    p_metrics = sub.add_parser("metrics", help="SNR/ISNR of a reconstruction")
    p_metrics.add_argument("--input", required=True, help="blurred image")
    p_metrics.add_argument("--truth", required=True)
    p_metrics.add_argument("--recovered", required=True)
    p_metrics.set_defaults(func=cmd_metrics)

    p_psf = sub.add_parser("psf", help="emit a synthesized kernel grid")
    p_psf.add_argument("--psf", required=True)
    p_psf.add_argument("--output", required=True)
    p_psf.add_argument("--grid", help="grid HxW (default: tight box)")
    p_psf.set_defaults(func=cmd_psf)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
