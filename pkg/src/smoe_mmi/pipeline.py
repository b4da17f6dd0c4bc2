"""Whole-image denoising by fusing many block models.

``s_smoe`` slides a block window over the image with a fixed stride, fits
one model per block and averages every prediction that lands on a pixel.
``bm_smoe`` instead groups each reference block with its most similar
neighbours (block matching), fits every group member and aggregates all
member predictions at their own positions.

Images are 2D float arrays with values in [0, 1], indexed ``[row, col]``.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._fastfit import gating_mass_many, predict_many, window_distances
from .core import BlockData, pixel_coords
from .fitter import FitConfig, fit_packed
from .fusion import reliability_scores

log = logging.getLogger(__name__)

MODES = ("s_smoe", "bm_smoe")
WEIGHTINGS = ("uniform", "reliability")

# Blocks per optimizer task. Fixed so results never depend on worker count.
CHUNK = 512


@dataclass(frozen=True)
class BlockMatchConfig:
    ref_stride: int = 3
    search_radius: int = 19
    max_group: int = 16

    def __post_init__(self):
        if self.ref_stride < 1:
            raise ValueError("ref_stride must be >= 1")
        if self.search_radius < 0:
            raise ValueError("search_radius must be >= 0")
        if self.max_group < 1:
            raise ValueError("max_group must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    block_size: int = 8
    stride: int = 1
    fit: FitConfig = field(default_factory=FitConfig)
    mode: str = "s_smoe"
    bm: BlockMatchConfig = field(default_factory=BlockMatchConfig)
    weighting: str = "uniform"
    noise_var: float | None = None

    def __post_init__(self):
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if not 1 <= self.stride <= self.block_size:
            raise ValueError("stride must lie in [1, block_size]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if self.noise_var is not None and self.noise_var < 0:
            raise ValueError("noise_var must be non-negative")
        if self.weighting == "reliability" and self.noise_var is None:
            raise ValueError("reliability weighting needs noise_var")


class PixelAccumulator:
    """Running weighted sums of block predictions per pixel."""

    def __init__(self, shape):
        self.sum = np.zeros(shape)
        self.weight = np.zeros(shape)

    def add(self, origin, block, weight: float = 1.0):
        r, c = origin
        h, w = block.shape
        self.sum[r:r + h, c:c + w] += weight * block
        self.weight[r:r + h, c:c + w] += weight

    def finalize(self) -> np.ndarray:
        if not np.all(self.weight > 0):
            holes = np.argwhere(self.weight <= 0)
            raise RuntimeError(f"{len(holes)} pixels received no prediction, first at {tuple(holes[0])}")
        return np.clip(self.sum / self.weight, 0.0, 1.0)


def as_image(img) -> np.ndarray:
    """Validate a grayscale image: 2D, finite, values in [0, 1]."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min(initial=0.0) < 0 or img.max(initial=0.0) > 1:
        raise ValueError("image values must lie in [0, 1]")
    return img


def axis_origins(length: int, size: int, stride: int) -> list[int]:
    """Block starts ``0, s, 2s, ...`` plus an edge-flushed last block if needed."""
    if size > length:
        raise ValueError(f"block size {size} exceeds image side {length}")
    starts = list(range(0, length - size + 1, stride))
    if starts[-1] != length - size:
        starts.append(length - size)
    return starts


def grid_origins(shape, size: int, stride: int) -> list[tuple[int, int]]:
    rows = axis_origins(shape[0], size, stride)
    cols = axis_origins(shape[1], size, stride)
    return [(r, c) for r in rows for c in cols]


def extract_blocks(img, size: int, stride: int) -> list[BlockData]:
    """All blocks of the sliding-window scan, in row-major origin order."""
    img = as_image(img)
    coords = pixel_coords(size, 2)
    return [BlockData(coords, img[r:r + size, c:c + size].reshape(-1), (r, c), size)
            for r, c in grid_origins(img.shape, size, stride)]


def max_models_per_pixel(size: int, stride: int) -> int:
    """Overlap count ``ceil(B / s) ** 2`` seen by interior pixels."""
    return math.ceil(size / stride) ** 2


def _gather(img, origins, size) -> np.ndarray:
    windows = sliding_window_view(img, (size, size))
    rows = np.array([o[0] for o in origins])
    cols = np.array([o[1] for o in origins])
    return np.ascontiguousarray(windows[rows, cols].reshape(len(origins), size * size))


def _fit_chunk(values, coords, cfg: PipelineConfig):
    theta = fit_packed(coords, values, cfg.fit)[0]
    preds = predict_many(theta, coords)
    if cfg.weighting == "reliability":
        scores = reliability_scores(gating_mass_many(theta, coords), cfg.noise_var)
    else:
        scores = np.ones(len(values))
    return preds, scores


def denoise_blocks(img, origins, cfg: PipelineConfig, workers: int = 1):
    """Fit and predict the block at every origin.

    Returns predictions ``(N, B, B)`` and per-block fusion weights ``(N,)``.
    Blocks are processed in fixed-size chunks; with ``workers > 1`` chunks
    run on a thread pool but results are assembled in origin order.
    """
    size = cfg.block_size
    coords = pixel_coords(size, 2)
    values = _gather(img, origins, size)
    chunks = [values[i:i + CHUNK] for i in range(0, len(values), CHUNK)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda v: _fit_chunk(v, coords, cfg), chunks))
    else:
        parts = [_fit_chunk(v, coords, cfg) for v in chunks]
    preds = np.concatenate([p for p, _ in parts]).reshape(-1, size, size)
    scores = np.concatenate([s for _, s in parts])
    return preds, scores


def s_smoe_denoise(img, cfg: PipelineConfig = PipelineConfig(), workers: int = 1) -> np.ndarray:
    """Sliding-window multi-model denoising."""
    img = as_image(img)
    origins = grid_origins(img.shape, cfg.block_size, cfg.stride)
    log.info("s_smoe: %d blocks, stride %d", len(origins), cfg.stride)
    preds, scores = denoise_blocks(img, origins, cfg, workers)
    acc = PixelAccumulator(img.shape)
    for origin, pred, score in zip(origins, preds, scores):
        acc.add(origin, pred, score)
    return acc.finalize()


def block_match(img, ref_origin, cfg: BlockMatchConfig, size: int) -> list[tuple[int, int]]:
    """Origins of the blocks most similar to the reference block.

    Candidates are all in-bounds origins within ``search_radius`` of the
    reference in both axes. They are ranked by mean squared pixel difference,
    ties by row-major scan order; the reference itself always comes first.
    """
    img = np.ascontiguousarray(img, dtype=float)
    r0, c0 = ref_origin
    h, w = img.shape
    if not (0 <= r0 <= h - size and 0 <= c0 <= w - size):
        raise ValueError(f"reference block at {ref_origin} is not inside the image")
    rad = cfg.search_radius
    rr = np.arange(max(0, r0 - rad), min(h - size, r0 + rad) + 1)
    cc = np.arange(max(0, c0 - rad), min(w - size, c0 + rad) + 1)
    rows = np.repeat(rr, cc.size)
    cols = np.tile(cc, rr.size)
    dist = window_distances(img, r0, c0, size, rows, cols)
    is_ref = (rows == r0) & (cols == c0)
    order = np.lexsort((np.arange(rows.size), dist, ~is_ref))
    order = order[:cfg.max_group]
    return [(int(rows[k]), int(cols[k])) for k in order]


def bm_smoe_denoise(img, cfg: PipelineConfig, workers: int = 1) -> np.ndarray:
    """Block-matching multi-model denoising.

    A block that belongs to several groups is fitted once; its prediction is
    accumulated once per group membership.
    """
    img = as_image(img)
    size = cfg.block_size
    refs = grid_origins(img.shape, size, cfg.bm.ref_stride)
    groups = [block_match(img, ref, cfg.bm, size) for ref in refs]
    slot: dict[tuple[int, int], int] = {}
    for group in groups:
        for origin in group:
            slot.setdefault(origin, len(slot))
    unique = list(slot)
    log.info("bm_smoe: %d groups, %d distinct blocks", len(groups), len(unique))
    preds, scores = denoise_blocks(img, unique, cfg, workers)
    acc = PixelAccumulator(img.shape)
    for group in groups:
        for origin in group:
            k = slot[origin]
            acc.add(origin, preds[k], scores[k])
    return acc.finalize()


def denoise(img, cfg: PipelineConfig = PipelineConfig(), workers: int = 1) -> np.ndarray:
    if cfg.mode == "s_smoe":
        return s_smoe_denoise(img, cfg, workers)
    return bm_smoe_denoise(img, cfg, workers)
