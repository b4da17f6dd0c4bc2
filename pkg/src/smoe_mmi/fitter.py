"""Gradient-descent fitting of SMoE models to block samples.

The objective is the mean squared error between the model and the block
values. Gradients are analytic and cover every unconstrained parameter in
the packed order of :func:`smoe_mmi.core.param_names`. The optimizer is
full-batch with per-parameter adaptive steps from running first and second
gradient moments; precision log-diagonals and experts are clamped after
every step and the best iterate seen is returned.

Batched routines take blocks that share sample coordinates. The optimizer
loop is compiled and runs block by block, so a block fitted alone or inside
a batch follows a bit-identical trajectory.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._fastfit import cell_means, fit_many
from .core import (
    LOG_DIAG_MAX,
    LOG_DIAG_MIN,
    BlockData,
    SMoEModel,
    packed_gating,
    packed_predict,
    params_per_kernel,
)

_EPS = 1e-8


@dataclass(frozen=True)
class FitConfig:
    num_kernels: int = 4
    max_iters: int = 400
    step_size: float = 0.05
    moment_decays: tuple[float, float] = (0.9, 0.999)
    grad_tolerance: float = 1e-6
    seed: int = 0
    fit_mixing: bool = True
    expert_range: tuple[float, float] | None = (0.0, 1.0)

    def __post_init__(self):
        if self.num_kernels < 1:
            raise ValueError("num_kernels must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        b1, b2 = self.moment_decays
        if not (0 < b1 < 1 and 0 < b2 < 1):
            raise ValueError("moment decays must lie in (0, 1)")
        if self.grad_tolerance < 0:
            raise ValueError("grad_tolerance must be non-negative")
        if self.expert_range is not None and not self.expert_range[0] <= self.expert_range[1]:
            raise ValueError("expert_range must be (low, high) with low <= high")


@dataclass(frozen=True)
class FitReport:
    final_loss: float
    iters_used: int
    grad_norm: float


def _diag_slots(dim: int) -> list[int]:
    return [1] if dim == 1 else [2, 4]


def grid_centers(num_kernels: int, dim: int) -> np.ndarray:
    """Initial kernel centers: cell midpoints of a regular grid.

    In 2D the grid is ``k x k`` with ``k = ceil(sqrt(L))``; when ``L`` is not
    a square the first ``L`` cells in row-major order are used.
    """
    if num_kernels < 1:
        raise ValueError("number of kernels must be >= 1")
    if dim == 1:
        return ((np.arange(num_kernels) + 0.5) / num_kernels)[:, None]
    k = math.isqrt(num_kernels - 1) + 1
    t = (np.arange(k) + 0.5) / k
    rr, cc = np.meshgrid(t, t, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)[:num_kernels]


def init_packed(coords: np.ndarray, values: np.ndarray, num_kernels: int) -> np.ndarray:
    """Initial packed models ``(N, L, k)`` for ``values`` of shape ``(N, M)``."""
    dim = coords.shape[1]
    centers = grid_centers(num_kernels, dim)
    n_blocks = values.shape[0]
    theta = np.zeros((n_blocks, num_kernels, params_per_kernel(dim)))
    theta[:, :, :dim] = centers
    theta[:, :, _diag_slots(dim)] = math.log(2.0 * math.sqrt(num_kernels))

    sq = ((coords[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argmin(sq, axis=1)
    theta[:, :, -1] = cell_means(np.ascontiguousarray(values, dtype=float), nearest, num_kernels)
    return theta


def init_model(block: BlockData, num_kernels: int) -> SMoEModel:
    """Deterministic starting point for :func:`fit_block`.

    Centers sit on a regular grid, each expert is the mean of the block
    values closest to its center, kernels are round with bandwidth
    ``1 / (2 sqrt(L))`` and the mixing logits are zero.
    """
    theta = init_packed(block.coords, block.values[None, :], num_kernels)
    return SMoEModel.from_packed(theta[0], block.dim)


def packed_loss_and_grad(theta: np.ndarray, coords: np.ndarray, values: np.ndarray):
    """MSE loss ``(N,)`` and its gradient ``(N, L, k)`` for packed models."""
    dim = coords.shape[1]
    w, u, d, diag = packed_gating(theta, coords)
    experts = theta[:, None, :, -1]
    f = (w * experts).sum(axis=2)
    resid = f - values
    n_samples = values.shape[1]
    loss = (resid * resid).sum(axis=1) / n_samples

    gw = (2.0 / n_samples) * resid[:, :, None] * w
    grad = np.empty_like(theta)
    grad[:, :, -1] = gw.sum(axis=1)
    # dL/ds_j with s_j = logit_j - q_j
    g = gw * (experts - f[:, :, None])
    grad[:, :, -2] = g.sum(axis=1)

    gu0 = g * u[0]
    s0 = gu0.sum(axis=1)
    a = diag[0][:, 0, :]
    if dim == 1:
        grad[:, :, 0] = 2.0 * a * s0
        grad[:, :, 1] = -2.0 * a * (gu0 * d[0]).sum(axis=1)
        return loss, grad

    gu1 = g * u[1]
    s1 = gu1.sum(axis=1)
    b = theta[:, :, 3]
    e = diag[1][:, 0, :]
    grad[:, :, 0] = 2.0 * a * s0
    grad[:, :, 1] = 2.0 * (b * s0 + e * s1)
    grad[:, :, 2] = -2.0 * a * (gu0 * d[0]).sum(axis=1)
    grad[:, :, 3] = -2.0 * (gu0 * d[1]).sum(axis=1)
    grad[:, :, 4] = -2.0 * e * (gu1 * d[1]).sum(axis=1)
    return loss, grad


def packed_loss(theta: np.ndarray, coords: np.ndarray, values: np.ndarray) -> np.ndarray:
    resid = packed_predict(theta, coords) - values
    return (resid * resid).sum(axis=1) / values.shape[1]


def loss_mse(model: SMoEModel, block: BlockData) -> float:
    _check_dims(model, block)
    return float(packed_loss(model.packed()[None], block.coords, block.values[None])[0])


def grad_loss(model: SMoEModel, block: BlockData) -> np.ndarray:
    """Gradient of :func:`loss_mse`, flat and ordered like ``model.to_vector()``."""
    _check_dims(model, block)
    _, grad = packed_loss_and_grad(model.packed()[None], block.coords, block.values[None])
    return grad[0].reshape(-1)


def _check_dims(model: SMoEModel, block: BlockData):
    if model.dim != block.dim:
        raise ValueError(f"model dimension {model.dim} does not match block dimension {block.dim}")


def fit_packed(coords: np.ndarray, values: np.ndarray, cfg: FitConfig, theta0: np.ndarray | None = None):
    """Fit ``N`` blocks sharing ``coords``; ``values`` is ``(N, M)``.

    Returns ``(theta, loss, iters, grad_norm)`` where ``theta`` is the best
    iterate per block and ``grad_norm`` the gradient infinity-norm there.
    """
    coords = np.ascontiguousarray(coords, dtype=float)
    values = np.ascontiguousarray(values, dtype=float)
    if theta0 is None:
        theta0 = init_packed(coords, values, cfg.num_kernels)
    theta0 = np.ascontiguousarray(theta0, dtype=float)
    b1, b2 = cfg.moment_decays
    trainable = np.ones(theta0.shape[2])
    if not cfg.fit_mixing:
        trainable[-2] = 0.0
    m_lo, m_hi = cfg.expert_range if cfg.expert_range is not None else (-np.inf, np.inf)
    return fit_many(theta0, coords, values, trainable, int(cfg.max_iters), float(cfg.step_size),
                    float(b1), float(b2), float(cfg.grad_tolerance), _EPS,
                    LOG_DIAG_MIN, LOG_DIAG_MAX, float(m_lo), float(m_hi))


def fit_block(block: BlockData, cfg: FitConfig = FitConfig()) -> tuple[SMoEModel, FitReport]:
    """Fit one block; returns the best model seen and a report."""
    theta, loss, iters, gnorm = fit_packed(block.coords, block.values[None], cfg)
    model = SMoEModel.from_packed(theta[0], block.dim)
    return model, FitReport(float(loss[0]), int(iters[0]), float(gnorm[0]))


def fit_blocks(blocks, cfg: FitConfig = FitConfig()) -> list[tuple[SMoEModel, FitReport]]:
    """Fit many blocks, batching those that share sample coordinates."""
    blocks = list(blocks)
    groups: dict[bytes, list[int]] = {}
    for i, blk in enumerate(blocks):
        key = blk.coords.shape[1].to_bytes(1, "little") + blk.coords.tobytes()
        groups.setdefault(key, []).append(i)
    out: list = [None] * len(blocks)
    for members in groups.values():
        coords = blocks[members[0]].coords
        values = np.stack([blocks[i].values for i in members])
        theta, loss, iters, gnorm = fit_packed(coords, values, cfg)
        for row, i in enumerate(members):
            model = SMoEModel.from_packed(theta[row], coords.shape[1])
            out[i] = (model, FitReport(float(loss[row]), int(iters[row]), float(gnorm[row])))
    return out
