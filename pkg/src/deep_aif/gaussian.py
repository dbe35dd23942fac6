"""Diagonal Gaussian algebra.

Parameters may be numpy arrays or autodiff nodes; every operation reduces
over the last axis so a batch of Gaussians (shape ``(B, d)``) yields ``(B,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import STD_FLOOR
from .errors import ContractError, DimensionError

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
HALF_LOG_2PIE = 0.5 * math.log(2.0 * math.pi * math.e)


@dataclass(frozen=True)
class DiagGaussian:
    mean: object
    std: object

    def __post_init__(self) -> None:
        m, s = ad.value_of(self.mean), ad.value_of(self.std)
        if m.shape != s.shape:
            raise DimensionError(f"mean shape {m.shape} != std shape {s.shape}")
        if not np.all(s > 0):
            raise ContractError("std must be strictly positive")

    @property
    def dim(self) -> int:
        return ad.value_of(self.mean).shape[-1]

    def detach(self) -> "DiagGaussian":
        return DiagGaussian(ad.value_of(self.mean).copy(), ad.value_of(self.std).copy())


def _check_dims(a: DiagGaussian, b_dim: int) -> None:
    if a.dim != b_dim:
        raise DimensionError(f"dimension mismatch: {a.dim} vs {b_dim}")


def sample(g: DiagGaussian, rng: np.random.Generator):
    """Reparameterized draw ``mean + eps * std``; differentiable in both."""
    eps = rng.standard_normal(ad.value_of(g.mean).shape)
    return g.mean + eps * g.std


def kl_divergence(q: DiagGaussian, p: DiagGaussian):
    """KL(q || p), summed over dimensions."""
    _check_dims(q, p.dim)
    ratio = q.std / p.std
    term = ad.square(ratio) + ad.square((q.mean - p.mean) / p.std) - 1.0
    return ad.reduce_sum(0.5 * term - ad.log(ratio), axis=-1)


def entropy(g: DiagGaussian):
    return ad.reduce_sum(HALF_LOG_2PIE + ad.log(g.std), axis=-1)


def log_prob(g: DiagGaussian, x):
    _check_dims(g, ad.value_of(x).shape[-1])
    z = (x - g.mean) / g.std
    return ad.reduce_sum(-HALF_LOG_2PI - ad.log(g.std) - 0.5 * ad.square(z), axis=-1)


def fit_from_samples(samples, floor: float = STD_FLOOR) -> DiagGaussian:
    """Moment-matched Gaussian over axis 0 (population variance, floored std)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ContractError("fit_from_samples needs at least two samples")
    mean = x.mean(axis=0)
    std = np.maximum(np.sqrt(x.var(axis=0)), floor)
    return DiagGaussian(mean, std)
