"""Multi-model inference: fusing H block models.

Aligned models (same content, same initialization) are fused by averaging
their parameters; non-aligned ones by a convex combination of their
predictions. Reliability weights derive from the gating mass each kernel
collects, since an expert estimated from ``M_j`` samples has variance
``noise_var / M_j``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BlockData, SMoEModel, match_kernels, packed_gating, permute_kernels


@dataclass(frozen=True, eq=False)
class FusionWeights:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("fusion weights must be finite and non-negative")
        total = w.sum()
        if total <= 0:
            raise ValueError("fusion weights must not all be zero")
        w = w / total
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, count: int) -> "FusionWeights":
        return cls(np.ones(count))

    def __len__(self):
        return self.weights.size


def gating_mass(model: SMoEModel, block: BlockData) -> np.ndarray:
    """Per-kernel sample mass ``M_j = sum_m w_j(x_m)``."""
    if model.dim != block.dim:
        raise ValueError("model and block dimensions differ")
    w = packed_gating(model.packed()[None], block.coords)[0][0]
    return w.sum(axis=0)


def packed_gating_mass(theta: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Gating mass ``(N, L)`` for packed models sharing ``coords``."""
    return packed_gating(theta, coords)[0].sum(axis=1)


def average_parameters(models, coords=None) -> SMoEModel:
    """Average aligned models parameter by parameter.

    Kernels of every model are first put in correspondence with the first
    model's kernels by greedy nearest-location matching: on gating centroids
    over ``coords`` when given, on raw centers otherwise. Raw centers are a
    poor key for fitted models since they can drift without changing the
    model output; pass the block coordinates whenever they are known.
    """
    models = list(models)
    if not models:
        raise ValueError("need at least one model")
    anchor = models[0]
    for m in models[1:]:
        if m.dim != anchor.dim or m.num_kernels != anchor.num_kernels:
            raise ValueError("models must share dimension and number of kernels")
    stacked = np.stack([permute_kernels(m, match_kernels(anchor, m, coords)).packed() for m in models])
    # Averaging offsets from the anchor makes H identical models fuse exactly.
    base = stacked[0]
    return SMoEModel.from_packed(base + (stacked - base).mean(axis=0), anchor.dim)


def average_predictions(block_predictions, weights: FusionWeights | None = None) -> np.ndarray:
    """Weighted per-pixel combination of H predictions of equal shape."""
    preds = [np.asarray(p, dtype=float) for p in block_predictions]
    if not preds:
        raise ValueError("need at least one prediction")
    shape = preds[0].shape
    if any(p.shape != shape for p in preds):
        raise ValueError("all predictions must share one shape")
    if weights is None:
        weights = FusionWeights.uniform(len(preds))
    if len(weights) != len(preds):
        raise ValueError(f"{len(weights)} weights for {len(preds)} predictions")
    out = np.zeros(shape)
    for p, w in zip(preds, weights.weights):
        out += w * p
    return out


def reliability_scores(masses, noise_var: float) -> np.ndarray:
    """Unnormalized reliability per model from per-kernel gating masses.

    ``masses`` is ``(H, L)``. The score is the inverse of the mean expert
    variance ``noise_var / M_j``; with zero noise every model scores 1.
    """
    masses = np.asarray(masses, dtype=float)
    if noise_var < 0:
        raise ValueError("noise_var must be non-negative")
    if noise_var == 0:
        return np.ones(masses.shape[0])
    with np.errstate(divide="ignore"):
        mean_var = (noise_var / masses).mean(axis=1)
    return 1.0 / mean_var


def reliability_weights(models, blocks, noise_var: float) -> FusionWeights:
    models, blocks = list(models), list(blocks)
    if len(models) != len(blocks):
        raise ValueError("need one block per model")
    masses = np.stack([gating_mass(m, b) for m, b in zip(models, blocks)])
    return FusionWeights(reliability_scores(masses, noise_var))
