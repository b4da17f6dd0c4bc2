"""Steered mixture-of-experts model types and evaluation.

A model with ``L`` kernels predicts

    f(x) = sum_j m_j * w_j(x),   w_j(x) = pi_j K_j(x) / sum_l pi_l K_l(x)

with steered Gaussian kernels ``K_j(x) = exp(-(x - c_j)^T P_j (x - c_j))``.
The precision ``P_j`` is stored as a lower-triangular factor ``R_j`` whose
diagonal holds log-values, ``P_j = R_j R_j^T``, and ``pi_j`` is stored as a
logit. Every stored parameter is therefore unconstrained.

Coordinates are block-local and normalized: pixel ``i`` of an axis of length
``B`` sits at ``(i + 0.5) / B``. In 2D a coordinate is ``(row, col)``.

Besides the per-model API there is a packed representation used by the
optimizer and the image pipeline: an array of shape ``(N, L, k)`` holding
``N`` models, with ``k`` parameters per kernel in the order given by
:func:`param_names`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_DIAG_MIN = float(np.log(1e-2))
LOG_DIAG_MAX = float(np.log(1e3))

_PARAM_NAMES = {
    1: ("center_0", "log_r00", "mix_logit", "expert"),
    2: ("center_0", "center_1", "log_r00", "r10", "log_r11", "mix_logit", "expert"),
}


def param_names(dim: int) -> tuple[str, ...]:
    """Names of the per-kernel unconstrained parameters, in packed order."""
    try:
        return _PARAM_NAMES[dim]
    except KeyError:
        raise ValueError(f"dim must be 1 or 2, got {dim}") from None


def params_per_kernel(dim: int) -> int:
    return len(param_names(dim))


@dataclass(frozen=True, eq=False)
class KernelParams:
    """Unconstrained parameters of one steered kernel and its expert.

    ``precision_factor`` is lower triangular; its diagonal entries are the
    logs of the factor's diagonal.
    """

    center: np.ndarray
    precision_factor: np.ndarray
    mix_logit: float
    expert: float

    def __post_init__(self):
        center = np.array(self.center, dtype=float).reshape(-1)
        n = center.size
        if n not in (1, 2):
            raise ValueError(f"kernel dimension must be 1 or 2, got {n}")
        factor = np.tril(np.array(self.precision_factor, dtype=float).reshape(n, n))
        center.flags.writeable = False
        factor.flags.writeable = False
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "precision_factor", factor)
        object.__setattr__(self, "mix_logit", float(self.mix_logit))
        object.__setattr__(self, "expert", float(self.expert))

    @property
    def dim(self) -> int:
        return self.center.size

    def factor(self) -> np.ndarray:
        """The lower-triangular factor R with the diagonal exponentiated."""
        r = self.precision_factor.copy()
        idx = np.diag_indices(self.dim)
        r[idx] = np.exp(r[idx])
        return r

    def precision(self) -> np.ndarray:
        """Inverse steering matrix ``R R^T``."""
        r = self.factor()
        return r @ r.T

    @classmethod
    def isotropic(cls, center, bandwidth: float, mix_logit: float = 0.0, expert: float = 0.0):
        """Round kernel with precision ``bandwidth**-2 * I``."""
        center = np.atleast_1d(np.asarray(center, dtype=float))
        factor = np.diag(np.full(center.size, -np.log(bandwidth)))
        return cls(center, factor, mix_logit, expert)

    @classmethod
    def from_precision(cls, center, precision, mix_logit: float = 0.0, expert: float = 0.0):
        """Build from an explicit symmetric positive definite precision matrix."""
        center = np.atleast_1d(np.asarray(center, dtype=float))
        precision = np.asarray(precision, dtype=float).reshape(center.size, center.size)
        r = np.linalg.cholesky(precision)
        idx = np.diag_indices(center.size)
        r[idx] = np.log(r[idx])
        return cls(center, r, mix_logit, expert)

    def packed(self) -> np.ndarray:
        r = self.precision_factor
        if self.dim == 1:
            return np.array([self.center[0], r[0, 0], self.mix_logit, self.expert])
        return np.array([self.center[0], self.center[1], r[0, 0], r[1, 0], r[1, 1],
                         self.mix_logit, self.expert])

    @classmethod
    def from_packed(cls, values, dim: int) -> "KernelParams":
        v = np.asarray(values, dtype=float)
        if v.size != params_per_kernel(dim):
            raise ValueError(f"expected {params_per_kernel(dim)} values, got {v.size}")
        if dim == 1:
            return cls(v[:1], [[v[1]]], v[2], v[3])
        return cls(v[:2], [[v[2], 0.0], [v[3], v[4]]], v[5], v[6])


@dataclass(frozen=True, eq=False)
class SMoEModel:
    """An ordered collection of kernels sharing one dimensionality."""

    kernels: tuple[KernelParams, ...]
    dim: int

    def __post_init__(self):
        kernels = tuple(self.kernels)
        if not kernels:
            raise ValueError("a model needs at least one kernel")
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if any(k.dim != self.dim for k in kernels):
            raise ValueError("all kernels must share the model dimension")
        object.__setattr__(self, "kernels", kernels)

    @property
    def num_kernels(self) -> int:
        return len(self.kernels)

    @property
    def centers(self) -> np.ndarray:
        return np.array([k.center for k in self.kernels])

    @property
    def experts(self) -> np.ndarray:
        return np.array([k.expert for k in self.kernels])

    @property
    def mix_logits(self) -> np.ndarray:
        return np.array([k.mix_logit for k in self.kernels])

    def mixing_weights(self) -> np.ndarray:
        """The priors ``pi_j`` (normalized exponentials of the logits)."""
        z = self.mix_logits
        e = np.exp(z - z.max())
        return e / e.sum()

    def packed(self) -> np.ndarray:
        """Parameters as an ``(L, k)`` array."""
        return np.stack([k.packed() for k in self.kernels])

    def to_vector(self) -> np.ndarray:
        """Flat parameter vector, kernel-major, see :func:`param_names`."""
        return self.packed().reshape(-1)

    @classmethod
    def from_packed(cls, packed, dim: int) -> "SMoEModel":
        packed = np.asarray(packed, dtype=float).reshape(-1, params_per_kernel(dim))
        return cls(tuple(KernelParams.from_packed(row, dim) for row in packed), dim)

    from_vector = from_packed


@dataclass(frozen=True, eq=False)
class BlockData:
    """Samples ``(coords[m], values[m])`` of one block.

    ``origin`` is the top-left pixel in the source image; ``size`` is the edge
    length in pixels (the sample count for 1D signals).
    """

    coords: np.ndarray
    values: np.ndarray
    origin: tuple[int, int] = (0, 0)
    size: int = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        coords = np.array(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if values.size < 1:
            raise ValueError("a block needs at least one sample")
        if coords.shape[0] != values.size or coords.shape[1] not in (1, 2):
            raise ValueError(f"coords of shape {coords.shape} do not match {values.size} values")
        coords.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def num_samples(self) -> int:
        return self.values.size

    @classmethod
    def from_pixels(cls, pixels, origin=(0, 0)) -> "BlockData":
        """Square 2D block (or 1D signal) sampled at normalized pixel centers."""
        pixels = np.asarray(pixels, dtype=float)
        if pixels.ndim == 1:
            return cls(pixel_coords(pixels.size, 1), pixels, origin, pixels.size)
        if pixels.ndim != 2 or pixels.shape[0] != pixels.shape[1]:
            raise ValueError(f"expected a square block, got shape {pixels.shape}")
        return cls(pixel_coords(pixels.shape[0], 2), pixels.reshape(-1), origin, pixels.shape[0])


def normalized_coordinate(index, size: int):
    """Normalized coordinate of pixel ``index`` on an axis of ``size`` pixels."""
    return (np.asarray(index, dtype=float) + 0.5) / size


def pixel_index(coord, size: int):
    """Inverse of :func:`normalized_coordinate`."""
    return np.rint(np.asarray(coord, dtype=float) * size - 0.5).astype(int)


def pixel_coords(size: int, dim: int) -> np.ndarray:
    """Row-major normalized coordinates of a ``size``-pixel block: ``(M, dim)``."""
    t = normalized_coordinate(np.arange(size), size)
    if dim == 1:
        return t[:, None]
    if dim == 2:
        rr, cc = np.meshgrid(t, t, indexing="ij")
        return np.stack([rr.ravel(), cc.ravel()], axis=1)
    raise ValueError(f"dim must be 1 or 2, got {dim}")


# --- packed evaluation -----------------------------------------------------

def _steered_offsets(theta: np.ndarray, coords: np.ndarray):
    """Return ``(u, d, diag)`` with ``u = R^T (x - c)`` per sample and kernel.

    theta: ``(N, L, k)``; coords: ``(M, n)``. Arrays are ``(N, M, L)``.
    """
    dim = coords.shape[1]
    if dim == 1:
        d0 = coords[None, :, 0, None] - theta[:, None, :, 0]
        a = np.exp(theta[:, None, :, 1])
        return (a * d0,), (d0,), (a,)
    d0 = coords[None, :, 0, None] - theta[:, None, :, 0]
    d1 = coords[None, :, 1, None] - theta[:, None, :, 1]
    a = np.exp(theta[:, None, :, 2])
    b = theta[:, None, :, 3]
    e = np.exp(theta[:, None, :, 4])
    return (a * d0 + b * d1, e * d1), (d0, d1), (a, e)


def packed_gating(theta: np.ndarray, coords: np.ndarray):
    """Gating weights for packed models.

    Returns ``(w, u, d, diag)``; ``w`` has shape ``(N, M, L)``. The softmax
    runs in the log domain with the per-sample maximum subtracted, so at
    least one term is exactly ``exp(0)``.
    """
    u, d, diag = _steered_offsets(theta, coords)
    q = u[0] * u[0]
    if len(u) == 2:
        q = q + u[1] * u[1]
    s = theta[:, None, :, -2] - q
    s = s - s.max(axis=2, keepdims=True)
    ex = np.exp(s)
    w = ex / ex.sum(axis=2, keepdims=True)
    return w, u, d, diag


def packed_predict(theta: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Predictions ``(N, M)`` of ``N`` packed models at shared coordinates."""
    w = packed_gating(theta, coords)[0]
    return (w * theta[:, None, :, -1]).sum(axis=2)


# --- per-model API ---------------------------------------------------------

def _as_point(x, dim: int) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != dim:
        raise ValueError(f"point of dimension {x.size} does not match model dimension {dim}")
    return x.reshape(1, dim)


def eval_kernel(x, kernel: KernelParams) -> float:
    """``exp(-(x - c)^T P (x - c))`` for one kernel."""
    d = _as_point(x, kernel.dim)[0] - kernel.center
    u = kernel.factor().T @ d
    return float(np.exp(-(u @ u)))


def gating_weights(x, model: SMoEModel) -> np.ndarray:
    """Normalized responsibilities ``w_j(x)`` of every kernel at ``x``."""
    x = _as_point(x, model.dim)
    return packed_gating(model.packed()[None], x)[0][0, 0]


def predict(x, model: SMoEModel) -> float:
    x = _as_point(x, model.dim)
    return float(packed_predict(model.packed()[None], x)[0, 0])


def predict_points(model: SMoEModel, coords) -> np.ndarray:
    """Vectorized :func:`predict` over an ``(M, dim)`` coordinate array."""
    coords = np.asarray(coords, dtype=float).reshape(-1, model.dim)
    return packed_predict(model.packed()[None], coords)[0]


def predict_block(model: SMoEModel, size: int) -> np.ndarray:
    """Evaluate the model on the pixel centers of a ``size``-pixel block.

    Returns a ``(size, size)`` array in 2D and a length-``size`` vector in 1D.
    Values are not clipped.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    values = predict_points(model, pixel_coords(size, model.dim))
    return values if model.dim == 1 else values.reshape(size, size)


def gating_centroids(model: SMoEModel, coords) -> np.ndarray:
    """Gating-weighted mean location ``sum_m x_m w_j(x_m) / M_j`` per kernel.

    Unlike the raw centers these do not move when a common quadratic is
    added to every kernel's log-score, which leaves the model unchanged.
    Kernels with no gating mass fall back to their raw center.
    """
    coords = np.asarray(coords, dtype=float).reshape(-1, model.dim)
    w = packed_gating(model.packed()[None], coords)[0][0]
    mass = w.sum(axis=0)
    out = model.centers.copy()
    alive = mass > 0
    out[alive] = (w.T @ coords)[alive] / mass[alive, None]
    return out


def match_kernels(reference: SMoEModel, other: SMoEModel, coords=None) -> np.ndarray:
    """Greedy nearest-location correspondence between two models.

    Returns ``perm`` such that ``other.kernels[perm[j]]`` is paired with
    ``reference.kernels[j]``. Locations are the raw centers, or the gating
    centroids over ``coords`` when given. Pairs are taken in increasing
    distance; ties go to the lower (reference, other) index pair.
    """
    if reference.num_kernels != other.num_kernels or reference.dim != other.dim:
        raise ValueError("models must share the number of kernels and dimension")
    if coords is None:
        loc_ref, loc_other = reference.centers, other.centers
    else:
        loc_ref, loc_other = gating_centroids(reference, coords), gating_centroids(other, coords)
    dist = np.linalg.norm(loc_ref[:, None, :] - loc_other[None, :, :], axis=2)
    n = reference.num_kernels
    perm = np.full(n, -1)
    used = np.zeros(n, dtype=bool)
    for flat in np.argsort(dist, axis=None, kind="stable"):
        i, j = divmod(int(flat), n)
        if perm[i] < 0 and not used[j]:
            perm[i] = j
            used[j] = True
    return perm


def permute_kernels(model: SMoEModel, perm) -> SMoEModel:
    return SMoEModel(tuple(model.kernels[int(j)] for j in perm), model.dim)
