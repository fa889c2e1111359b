"""Noise family definitions and seeded sampling.

Families: gaussian, exponential (rate kappa, one-sided), laplacian (scale b).
Per-axis parameters are derived from a target standard deviation so the
filter's Gaussian Q/R can be matched to the true second moments regardless of
family: exponential kappa = 1/std (mean 1/kappa, var 1/kappa^2), laplace
b = std/sqrt(2) (var 2 b^2).

Sampling draws uniforms from a seeded generator and applies the inverse CDF
of the named density.  ``sample`` returns raw draws (the exponential is
one-sided with mean 1/kappa); sensor synthesis subtracts the mean at
injection so sensors stay unbiased.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

FAMILIES = ("gaussian", "exponential", "laplacian", "none")


@dataclass(frozen=True)
class NoiseSpec:
    """One noise source: a family plus per-axis target standard deviations."""

    family: str
    std: tuple

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown noise family: {self.family!r}")
        if any(s < 0 for s in self.std):
            raise ValueError("noise std must be non-negative")

    @property
    def mean(self) -> np.ndarray:
        """Mean of the raw draws (non-zero only for the exponential)."""
        if self.family == "exponential":
            return np.asarray(self.std, dtype=float)  # mean 1/kappa = std
        return np.zeros(len(self.std))

    @property
    def variance(self) -> np.ndarray:
        return np.asarray(self.std, dtype=float) ** 2


def sample(spec: NoiseSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Raw draws, shape (n, axes); inverse-CDF transform of seeded uniforms."""
    std = np.asarray(spec.std, dtype=float)
    axes = len(spec.std)
    if spec.family == "none":
        return np.zeros((n, axes))
    u = np.clip(rng.random((n, axes)), 1e-15, 1.0 - 1e-15)
    if spec.family == "gaussian":
        return ndtri(u) * std
    if spec.family == "exponential":
        # F(x) = 1 - exp(-kappa x), kappa = 1/std
        return -np.log1p(-u) * std
    # laplace: F^-1 via the signed log transform, b = std/sqrt(2)
    b = std / np.sqrt(2.0)
    centered = u - 0.5
    return -b * np.sign(centered) * np.log1p(-2.0 * np.abs(centered))


def sample_centered(spec: NoiseSpec, n: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Zero-mean draws (exponential re-centered by its mean)."""
    return sample(spec, n, rng) - spec.mean
