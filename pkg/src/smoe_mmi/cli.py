"""Command-line entry point: ``smoe {denoise,bench,demo1d,fitblock}``.

Exit status is 0 on success, 1 on a usage error and 2 on an I/O or file
format error. All diagnostics go to standard error.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys

import numpy as np

from .bench import load_job, parse_mode, run_job
from .core import BlockData
from .demo1d import Demo1DConfig, run_demo, write_tables
from .fitter import FitConfig, fit_block
from .image_io import FormatError, load_image, quantize, save_image
from .metrics import psnr
from .model_text import format_model
from .pipeline import WEIGHTINGS, BlockMatchConfig, PipelineConfig, denoise

SEED_ENV = "SMOE_SEED"
EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _add_fit_flags(p, kernels: int, seed: int):
    p.add_argument("--kernels", type=int, default=kernels, help="kernels per model (L)")
    p.add_argument("--max-iters", type=int, default=400, help="optimizer iterations per fit")
    p.add_argument("--step-size", type=float, default=0.05, help="optimizer step size")
    p.add_argument("--seed", type=int, default=seed, help=f"seed (default from ${SEED_ENV}, else 0)")


def build_parser(seed: int = 0) -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="smoe", description="Steered mixture-of-experts block denoising.",
                     formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("denoise", help="denoise one image", formatter_class=fmt)
    p.add_argument("--in", dest="input", required=True, help="input image (.pgm or .png)")
    p.add_argument("--out", required=True, help="output PGM path")
    p.add_argument("--mode", default="s-smoe", choices=["s-smoe", "bm-smoe"], help="pipeline")
    p.add_argument("--stride", type=int, default=1, help="S-SMoE block shift s")
    p.add_argument("--block-size", type=int, default=8, help="block edge B")
    p.add_argument("--weighting", default="uniform", choices=list(WEIGHTINGS), help="model fusion weights")
    p.add_argument("--noise-var", type=float, default=None,
                   help="noise variance for reliability weighting")
    p.add_argument("--ref-stride", type=int, default=3, help="BM-SMoE step between reference blocks")
    p.add_argument("--search-radius", type=int, default=19, help="BM-SMoE search radius")
    p.add_argument("--max-group", type=int, default=16, help="BM-SMoE blocks per group")
    p.add_argument("--workers", type=int, default=1, help="fitting threads")
    _add_fit_flags(p, 4, seed)

    p = sub.add_parser("bench", help="run a benchmark job", formatter_class=fmt)
    p.add_argument("--config", required=True, help="key=value job file")
    p.add_argument("--out-dir", required=True, help="directory for images and metrics.tsv")

    p = sub.add_parser("demo1d", help="1D small-sample and parameter-averaging experiment",
                       formatter_class=fmt)
    p.add_argument("--out-dir", required=True, help="directory for the TSV tables")
    p.add_argument("--seed", type=int, default=seed, help=f"seed (default from ${SEED_ENV}, else 0)")
    p.add_argument("--trials", type=int, default=5, help="trials per scenario")
    p.add_argument("--models", type=int, default=10, help="models fused per trial (H)")

    p = sub.add_parser("fitblock", help="fit one block and dump the model", formatter_class=fmt)
    p.add_argument("--in", dest="input", required=True, help="input image")
    p.add_argument("--row", type=int, default=0, help="block origin row")
    p.add_argument("--col", type=int, default=0, help="block origin column")
    p.add_argument("--block-size", type=int, default=8, help="block edge B")
    p.add_argument("--out", default=None, help="dump file (default: standard output)")
    _add_fit_flags(p, 4, seed)
    return parser


def _fit_config(args) -> FitConfig:
    return FitConfig(num_kernels=args.kernels, max_iters=args.max_iters,
                     step_size=args.step_size, seed=args.seed)


def _cmd_denoise(args) -> int:
    try:
        cfg = PipelineConfig(block_size=args.block_size, stride=args.stride, fit=_fit_config(args),
                             mode=parse_mode(args.mode),
                             bm=BlockMatchConfig(args.ref_stride, args.search_radius, args.max_group),
                             weighting=args.weighting, noise_var=args.noise_var)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    img = load_image(args.input)
    if cfg.block_size > min(img.shape):
        raise UsageError(f"block size {cfg.block_size} exceeds image size {img.shape}")
    out = denoise(img, cfg, args.workers)
    save_image(out, args.out)
    value = psnr(img, quantize(out) / 255.0)
    print(f"psnr_vs_input_db\t{'inf' if math.isinf(value) else f'{value:.4f}'}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    try:
        job = load_job(args.config, args.out_dir)
    except FormatError:
        raise
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = run_job(job)
    print(f"wrote {len(rows)} rows to {os.path.join(args.out_dir, 'metrics.tsv')}")
    return EXIT_OK


def _cmd_demo1d(args) -> int:
    try:
        cfg = Demo1DConfig(H=args.models, trials=args.trials, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    results = run_demo(cfg)
    write_tables(results, args.out_dir)
    print("n_samples\tnoise_var\tsingle_expert_rmse_median\tfused_expert_rmse_median")
    for r in results:
        single = np.median(r.expert_rmse(r.fits))
        fused = np.median(r.expert_rmse(r.fused))
        print(f"{r.n_samples}\t{r.noise_var!r}\t{single:.6f}\t{fused:.6f}")
    return EXIT_OK


def _cmd_fitblock(args) -> int:
    try:
        cfg = _fit_config(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    img = load_image(args.input)
    b, r, c = args.block_size, args.row, args.col
    if b < 1 or r < 0 or c < 0 or r + b > img.shape[0] or c + b > img.shape[1]:
        raise UsageError(f"block of size {b} at ({r}, {c}) is not inside the {img.shape} image")
    block = BlockData.from_pixels(img[r:r + b, c:c + b], (r, c))
    model, report = fit_block(block, cfg)
    text = format_model(model, source=os.path.basename(args.input), origin=(r, c), block_size=b,
                        final_loss=report.final_loss, iters_used=report.iters_used,
                        grad_norm=report.grad_norm)
    if args.out is None:
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
    return EXIT_OK


COMMANDS = {"denoise": _cmd_denoise, "bench": _cmd_bench, "demo1d": _cmd_demo1d, "fitblock": _cmd_fitblock}


def run_cli(argv=None) -> int:
    """Parse ``argv`` and run the chosen subcommand; returns the exit status."""
    try:
        args = build_parser(_default_seed()).parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run_cli())
