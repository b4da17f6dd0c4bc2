"""Seeded noise synthesis for grayscale images in [0, 1]."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NOISE_KINDS = ("gaussian", "speckle")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    variance: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not self.variance >= 0:
            raise ValueError("noise variance must be non-negative")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "NoiseSpec":
        """Parse ``kind:variance``, e.g. ``speckle:0.01``."""
        kind, sep, var = text.partition(":")
        if not sep:
            raise ValueError(f"noise spec {text!r} is not of the form kind:variance")
        return cls(kind.strip(), float(var), seed)


def _deviates(shape, spec: NoiseSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    return rng.normal(0.0, np.sqrt(spec.variance), size=shape)


def noise_field(img, spec: NoiseSpec) -> np.ndarray:
    """The unclipped perturbation ``noisy - clean`` that :func:`add_noise` applies."""
    img = np.asarray(img, dtype=float)
    eps = _deviates(img.shape, spec)
    return eps if spec.kind == "gaussian" else img * eps


def add_gaussian(img, spec: NoiseSpec) -> np.ndarray:
    if spec.kind != "gaussian":
        raise ValueError("add_gaussian needs a gaussian NoiseSpec")
    return add_noise(img, spec)


def add_speckle(img, spec: NoiseSpec) -> np.ndarray:
    """Multiplicative speckle ``y + y * eps``, clipped to [0, 1]."""
    if spec.kind != "speckle":
        raise ValueError("add_speckle needs a speckle NoiseSpec")
    return add_noise(img, spec)


def add_noise(img, spec: NoiseSpec) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if spec.variance == 0:
        return img.copy()
    return np.clip(img + noise_field(img, spec), 0.0, 1.0)
