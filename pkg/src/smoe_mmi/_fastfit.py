"""Compiled per-block optimizer loop.

Mirrors ``fitter.packed_loss_and_grad`` and the moment-scaled update in
scalar loops so each block's arithmetic is independent of batch size and
thread scheduling.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _loss_grad(th, coords, y, w, grad):
    n_samples = y.shape[0]
    n_kernels = th.shape[0]
    dim = coords.shape[1]
    ia = 1 if dim == 1 else 2
    loss = 0.0
    grad[:, :] = 0.0
    u0 = np.empty(n_kernels)
    u1 = np.empty(n_kernels)
    diag_a = np.empty(n_kernels)
    diag_e = np.empty(n_kernels)
    for j in range(n_kernels):
        diag_a[j] = math.exp(th[j, ia])
        diag_e[j] = math.exp(th[j, 4]) if dim == 2 else 0.0
    for m in range(n_samples):
        smax = -np.inf
        for j in range(n_kernels):
            d0 = coords[m, 0] - th[j, 0]
            if dim == 1:
                u0[j] = diag_a[j] * d0
                q = u0[j] * u0[j]
            else:
                d1 = coords[m, 1] - th[j, 1]
                u0[j] = diag_a[j] * d0 + th[j, 3] * d1
                u1[j] = diag_e[j] * d1
                q = u0[j] * u0[j] + u1[j] * u1[j]
            s = th[j, -2] - q
            w[j] = s
            if s > smax:
                smax = s
        z = 0.0
        for j in range(n_kernels):
            w[j] = math.exp(w[j] - smax)
            z += w[j]
        fm = 0.0
        for j in range(n_kernels):
            w[j] = w[j] / z
            fm += w[j] * th[j, -1]
        r = fm - y[m]
        loss += r * r
        gm = 2.0 * r / n_samples
        for j in range(n_kernels):
            gw = gm * w[j]
            grad[j, -1] += gw
            g = gw * (th[j, -1] - fm)
            grad[j, -2] += g
            a = diag_a[j]
            d0 = coords[m, 0] - th[j, 0]
            gu0 = g * u0[j]
            if dim == 1:
                grad[j, 0] += 2.0 * a * gu0
                grad[j, 1] -= 2.0 * a * gu0 * d0
            else:
                e = diag_e[j]
                d1 = coords[m, 1] - th[j, 1]
                gu1 = g * u1[j]
                grad[j, 0] += 2.0 * a * gu0
                grad[j, 1] += 2.0 * (th[j, 3] * gu0 + e * gu1)
                grad[j, 2] -= 2.0 * a * gu0 * d0
                grad[j, 3] -= 2.0 * gu0 * d1
                grad[j, 4] -= 2.0 * e * gu1 * d1
    return loss / n_samples


@njit(cache=True, nogil=True)
def loss_grad_many(theta, coords, values):
    """Loss ``(N,)`` and gradient ``(N, L, k)`` of every block."""
    n_blocks, n_kernels = theta.shape[0], theta.shape[1]
    loss = np.empty(n_blocks)
    grad = np.empty_like(theta)
    w = np.empty(n_kernels)
    for i in range(n_blocks):
        loss[i] = _loss_grad(theta[i], coords, values[i], w, grad[i])
    return loss, grad


@njit(cache=True, nogil=True)
def cell_means(values, nearest, n_kernels):
    """Per-block mean of the samples assigned to each kernel ``(N, L)``.

    Kernels with no samples get the block mean.
    """
    n_blocks, n_samples = values.shape
    out = np.empty((n_blocks, n_kernels))
    for i in range(n_blocks):
        total = 0.0
        for m in range(n_samples):
            total += values[i, m]
        for j in range(n_kernels):
            acc = 0.0
            count = 0
            for m in range(n_samples):
                if nearest[m] == j:
                    acc += values[i, m]
                    count += 1
            out[i, j] = acc / count if count > 0 else total / n_samples
    return out


@njit(cache=True, nogil=True)
def _project(th, dim, lo, hi, m_lo, m_hi):
    """Clip log-diagonals to ``[lo, hi]`` and experts to ``[m_lo, m_hi]`` in place."""
    last = th.shape[1] - 1
    for j in range(th.shape[0]):
        if dim == 1:
            th[j, 1] = min(max(th[j, 1], lo), hi)
        else:
            th[j, 2] = min(max(th[j, 2], lo), hi)
            th[j, 4] = min(max(th[j, 4], lo), hi)
        th[j, last] = min(max(th[j, last], m_lo), m_hi)


@njit(cache=True, nogil=True)
def fit_many(theta, coords, values, trainable, max_iters, step, b1, b2, tol, eps, lo, hi, m_lo, m_hi):
    """Optimize every block from ``theta``; returns the best iterate of each.

    ``trainable`` is a length-``k`` 0/1 mask; frozen slots keep their
    starting value and are excluded from the gradient norm. Precision
    log-diagonals are clipped to ``[lo, hi]`` and experts to ``[m_lo, m_hi]``
    at the start and after every step.
    """
    n_blocks, n_kernels, n_par = theta.shape
    dim = coords.shape[1]
    best = theta.copy()
    best_loss = np.full(n_blocks, np.inf)
    best_gnorm = np.full(n_blocks, np.inf)
    iters = np.zeros(n_blocks, dtype=np.int64)
    w = np.empty(n_kernels)
    grad = np.empty((n_kernels, n_par))
    m1 = np.empty((n_kernels, n_par))
    m2 = np.empty((n_kernels, n_par))
    for i in range(n_blocks):
        th = theta[i].copy()
        _project(th, dim, lo, hi, m_lo, m_hi)
        m1[:, :] = 0.0
        m2[:, :] = 0.0
        for t in range(1, max_iters + 1):
            loss = _loss_grad(th, coords, values[i], w, grad)
            gnorm = 0.0
            for j in range(n_kernels):
                for p in range(n_par):
                    grad[j, p] *= trainable[p]
                    ag = abs(grad[j, p])
                    if ag > gnorm:
                        gnorm = ag
            if loss < best_loss[i]:
                best_loss[i] = loss
                best_gnorm[i] = gnorm
                best[i] = th
            iters[i] = t
            if gnorm < tol or t == max_iters:
                break
            c1 = 1.0 - b1**t
            c2 = 1.0 - b2**t
            for j in range(n_kernels):
                for p in range(n_par):
                    g = grad[j, p]
                    m1[j, p] = b1 * m1[j, p] + (1.0 - b1) * g
                    m2[j, p] = b2 * m2[j, p] + (1.0 - b2) * (g * g)
                    th[j, p] -= step * (m1[j, p] / c1) / (math.sqrt(m2[j, p] / c2) + eps)
            _project(th, dim, lo, hi, m_lo, m_hi)
    return best, best_loss, iters, best_gnorm


@njit(cache=True, nogil=True)
def _gates(th, x, m, w):
    n_kernels = th.shape[0]
    smax = -np.inf
    for j in range(n_kernels):
        d0 = x[m, 0] - th[j, 0]
        if x.shape[1] == 1:
            u0 = math.exp(th[j, 1]) * d0
            q = u0 * u0
        else:
            d1 = x[m, 1] - th[j, 1]
            u0 = math.exp(th[j, 2]) * d0 + th[j, 3] * d1
            u1 = math.exp(th[j, 4]) * d1
            q = u0 * u0 + u1 * u1
        w[j] = th[j, -2] - q
        if w[j] > smax:
            smax = w[j]
    z = 0.0
    for j in range(n_kernels):
        w[j] = math.exp(w[j] - smax)
        z += w[j]
    for j in range(n_kernels):
        w[j] = w[j] / z


@njit(cache=True, nogil=True)
def predict_many(theta, coords):
    """Predictions ``(N, M)`` of packed models at shared coordinates."""
    n_blocks, n_kernels = theta.shape[0], theta.shape[1]
    out = np.empty((n_blocks, coords.shape[0]))
    w = np.empty(n_kernels)
    for i in range(n_blocks):
        for m in range(coords.shape[0]):
            _gates(theta[i], coords, m, w)
            f = 0.0
            for j in range(n_kernels):
                f += w[j] * theta[i, j, -1]
            out[i, m] = f
    return out


@njit(cache=True, nogil=True)
def gating_mass_many(theta, coords):
    """Per-kernel gating mass ``(N, L)``."""
    n_blocks, n_kernels = theta.shape[0], theta.shape[1]
    out = np.zeros((n_blocks, n_kernels))
    w = np.empty(n_kernels)
    for i in range(n_blocks):
        for m in range(coords.shape[0]):
            _gates(theta[i], coords, m, w)
            for j in range(n_kernels):
                out[i, j] += w[j]
    return out


@njit(cache=True, nogil=True)
def window_distances(img, r0, c0, size, rows, cols):
    """Mean squared difference between the block at ``(r0, c0)`` and each
    candidate origin ``(rows[k], cols[k])``; sums run in row-major order."""
    out = np.empty(rows.shape[0])
    for k in range(rows.shape[0]):
        acc = 0.0
        for i in range(size):
            for j in range(size):
                diff = img[rows[k] + i, cols[k] + j] - img[r0 + i, c0 + j]
                acc += diff * diff
        out[k] = acc / (size * size)
    return out
