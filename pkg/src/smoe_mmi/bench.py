"""Benchmark harness: noise every image, denoise with every pipeline, score.

A job is described by a flat ``key = value`` text file whose keys are the
command-line flag names (without dashes). List-valued keys take
comma-separated values::

    in = images/            # an image file, or a directory of .pgm/.png files
    noise = gaussian:0.01, speckle:0.01
    mode = s-smoe, bm-smoe
    stride = 8, 2, 1        # S-SMoE only; one pipeline per stride
    kernels = 4
    seed = 7

Results go to a tab-separated table with the header in :data:`HEADER`, one
row per (image, noise, pipeline) in that nesting order.
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, replace

from .fitter import FitConfig
from .image_io import load_image, save_image
from .metrics import psnr, ssim
from .noise import NoiseSpec, add_noise
from .pipeline import BlockMatchConfig, PipelineConfig, denoise, max_models_per_pixel

log = logging.getLogger(__name__)

HEADER = ("image", "method", "H", "noise", "var", "psnr_db", "ssim")
IMAGE_SUFFIXES = (".pgm", ".png")
METHOD_IDS = {"s_smoe": "s-smoe", "bm_smoe": "bm-smoe"}

# Keys accepted in a job file, with their defaults as text.
CONFIG_DEFAULTS = {
    "in": None,
    "noise": None,
    "mode": "s-smoe",
    "stride": "1",
    "block-size": "8",
    "kernels": "4",
    "max-iters": "400",
    "step-size": "0.05",
    "weighting": "uniform",
    "noise-var": "",
    "ref-stride": "3",
    "search-radius": "19",
    "max-group": "16",
    "seed": "0",
    "workers": "1",
}


@dataclass(frozen=True)
class MetricsRow:
    image: str
    method: str
    H: str
    noise: str
    var: float
    psnr_db: float
    ssim: float

    def __post_init__(self):
        if math.isnan(self.psnr_db) or self.psnr_db == -math.inf:
            raise ValueError("psnr_db must be finite or +inf")
        if not -1.0 <= self.ssim <= 1.0:
            raise ValueError(f"ssim {self.ssim} outside [-1, 1]")

    def fields(self) -> tuple[str, ...]:
        p = "inf" if self.psnr_db == math.inf else f"{self.psnr_db:.4f}"
        return (self.image, self.method, self.H, self.noise, repr(float(self.var)), p, f"{self.ssim:.6f}")


def format_table(rows) -> str:
    lines = ["\t".join(HEADER)] + ["\t".join(r.fields()) for r in rows]
    return "\n".join(lines) + "\n"


def write_table(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_table(rows))


def method_id(cfg: PipelineConfig) -> str:
    return METHOD_IDS[cfg.mode]


def h_descriptor(cfg: PipelineConfig) -> str:
    """Models per interior pixel for S-SMoE, ``bm<max_group>`` for BM-SMoE."""
    if cfg.mode == "bm_smoe":
        return f"bm{cfg.bm.max_group}"
    return str(max_models_per_pixel(cfg.block_size, cfg.stride))


@dataclass(frozen=True)
class BenchmarkJob:
    images: tuple[str, ...]
    noise: tuple[NoiseSpec, ...]
    pipelines: tuple[PipelineConfig, ...]
    out_dir: str
    workers: int = 1
    save_images: bool = True
    noise_var_override: float | None = field(default=None)

    def __post_init__(self):
        if not self.images:
            raise ValueError("a benchmark job needs at least one image")
        if not self.noise:
            raise ValueError("a benchmark job needs at least one noise spec")
        if not self.pipelines:
            raise ValueError("a benchmark job needs at least one pipeline config")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat ``key = value`` pairs; ``#`` starts a comment. Unknown keys are errors."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        if key not in CONFIG_DEFAULTS:
            raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    for key in ("in", "noise"):
        if key not in values:
            raise ValueError(f"{source}: missing required key {key!r}")
    return values


def _split(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def parse_mode(text: str) -> str:
    mode = text.strip().replace("-", "_")
    if mode not in METHOD_IDS:
        raise ValueError(f"unknown mode {text!r}; expected s-smoe or bm-smoe")
    return mode


def list_images(path: str, base_dir: str = ".") -> tuple[str, ...]:
    path = os.path.join(base_dir, path)
    if os.path.isdir(path):
        found = sorted(os.path.join(path, n) for n in os.listdir(path)
                       if n.lower().endswith(IMAGE_SUFFIXES))
        if not found:
            raise ValueError(f"no .pgm or .png images in {path}")
        return tuple(found)
    return (path,)


def job_from_config(values: dict[str, str], out_dir: str, base_dir: str = ".") -> BenchmarkJob:
    """Build a job from parsed config values; relative paths resolve against ``base_dir``."""
    v = {k: d for k, d in CONFIG_DEFAULTS.items() if d is not None}
    v.update(values)
    seed = int(v["seed"])
    noise = tuple(NoiseSpec.parse(s, seed) for s in _split(v["noise"]))
    fit = FitConfig(num_kernels=int(v["kernels"]), max_iters=int(v["max-iters"]),
                    step_size=float(v["step-size"]), seed=seed)
    bm = BlockMatchConfig(int(v["ref-stride"]), int(v["search-radius"]), int(v["max-group"]))
    override = float(v["noise-var"]) if v["noise-var"] else None
    # Without an override run_job substitutes each noise spec's variance.
    noise_var = override if override is not None else (0.0 if v["weighting"] == "reliability" else None)
    base = PipelineConfig(block_size=int(v["block-size"]), fit=fit, bm=bm, weighting=v["weighting"],
                          noise_var=noise_var)
    pipelines = []
    for mode in (parse_mode(m) for m in _split(v["mode"])):
        if mode == "bm_smoe":
            pipelines.append(replace(base, mode=mode))
        else:
            pipelines += [replace(base, mode=mode, stride=int(s)) for s in _split(v["stride"])]
    return BenchmarkJob(images=list_images(v["in"], base_dir), noise=noise, pipelines=tuple(pipelines),
                        out_dir=out_dir, workers=int(v["workers"]), noise_var_override=override)


def load_job(config_path: str, out_dir: str) -> BenchmarkJob:
    with open(config_path) as fh:
        text = fh.read()
    values = parse_config_text(text, config_path)
    return job_from_config(values, out_dir, os.path.dirname(os.path.abspath(config_path)))


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def run_job(job: BenchmarkJob) -> list[MetricsRow]:
    """Run every (image, noise, pipeline) case and write ``metrics.tsv``.

    With reliability weighting and no explicit override, each case uses the
    noise spec's variance as the pipeline noise variance.
    """
    os.makedirs(job.out_dir, exist_ok=True)
    rows = []
    for path in job.images:
        clean = load_image(path)
        image_id = _stem(path)
        for spec in job.noise:
            noisy = add_noise(clean, spec)
            tag = f"{image_id}_{spec.kind}{spec.variance:g}"
            if job.save_images:
                save_image(noisy, os.path.join(job.out_dir, f"{tag}_noisy.pgm"))
            log.info("%s: noisy input %.3f dB", tag, psnr(clean, noisy))
            for cfg in job.pipelines:
                var = job.noise_var_override if job.noise_var_override is not None else spec.variance
                run_cfg = replace(cfg, noise_var=var) if cfg.weighting == "reliability" else cfg
                out = denoise(noisy, run_cfg, job.workers)
                row = MetricsRow(image_id, method_id(cfg), h_descriptor(cfg), spec.kind, spec.variance,
                                 psnr(clean, out), ssim(clean, out))
                rows.append(row)
                log.info("%s %s H=%s: %.3f dB", tag, row.method, row.H, row.psnr_db)
                if job.save_images:
                    save_image(out, os.path.join(job.out_dir, f"{tag}_{row.method}_H{row.H}.pgm"))
    write_table(rows, os.path.join(job.out_dir, "metrics.tsv"))
    return rows
