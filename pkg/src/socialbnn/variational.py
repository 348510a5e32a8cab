"""Mean-field Gaussian weights for Bayes-by-backprop.

Every weight is a Gaussian ``N(mu, sigma^2)`` with ``sigma = softplus(rho)``.
Samples are drawn with the reparameterization ``w = mu + sigma * eps`` so
the loss gradient reaches ``mu`` and ``rho`` through the sampled weight.

All functions accept scalars or numpy arrays and compute in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _check_finite(value, what: str) -> None:
    if not np.all(np.isfinite(value)):
        raise ValueError(f"{what} must be finite, got {value!r}")


def sigma_of_rho(rho):
    """Standard deviation ``log(1 + exp(rho))``, overflow-safe."""
    _check_finite(rho, "rho")
    return np.logaddexp(0.0, np.asarray(rho, dtype=np.float64))[()]


def sigmoid(x):
    """Derivative of softplus."""
    x = np.asarray(x, dtype=np.float64)
    # exp(-|x|) never overflows
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))[()]


@dataclass(frozen=True)
class GaussianParameter:
    mu: float
    rho: float

    def __post_init__(self):
        _check_finite(self.mu, "mu")
        _check_finite(self.rho, "rho")

    @property
    def sigma(self) -> float:
        return float(sigma_of_rho(self.rho))


def sample_parameter(p: GaussianParameter, eps: float) -> float:
    """Reparameterized draw ``mu + sigma(rho) * eps``."""
    return p.mu + p.sigma * eps


def sample_weights(mu, rho, eps):
    """Array version of :func:`sample_parameter`; ``eps`` may carry extra leading axes."""
    return mu + sigma_of_rho(rho) * eps


def log_gaussian_density(x, mu, sigma):
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError(f"sigma must be positive, got {sigma!r}")
    z = (np.asarray(x, dtype=np.float64) - mu) / sigma
    return (-LOG_SQRT_2PI - np.log(sigma) - 0.5 * z * z)[()]


class PriorKind(str, Enum):
    SINGLE_GAUSSIAN = "single_gaussian"
    SCALE_MIXTURE = "scale_mixture"


@dataclass(frozen=True)
class PriorSpec:
    """Zero-mean weight prior.

    ``single_gaussian`` uses ``sigma1`` only. ``scale_mixture`` is
    ``pi * N(0, sigma1^2) + (1 - pi) * N(0, sigma2^2)``.
    """

    kind: PriorKind = PriorKind.SINGLE_GAUSSIAN
    sigma1: float = 1.0
    sigma2: float = 0.0025
    pi: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", PriorKind(self.kind))
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ValueError("prior scales must be positive")
        if not 0.0 <= self.pi <= 1.0:
            raise ValueError(f"mixture weight must lie in [0, 1], got {self.pi}")


def log_prior_density(x, prior: PriorSpec):
    if prior.kind is PriorKind.SINGLE_GAUSSIAN or prior.pi == 1.0:
        return log_gaussian_density(x, 0.0, prior.sigma1)
    if prior.pi == 0.0:
        return log_gaussian_density(x, 0.0, prior.sigma2)
    a = math.log(prior.pi) + log_gaussian_density(x, 0.0, prior.sigma1)
    b = math.log1p(-prior.pi) + log_gaussian_density(x, 0.0, prior.sigma2)
    return np.logaddexp(a, b)[()]


def dlog_prior_dw(x, prior: PriorSpec):
    """Derivative of :func:`log_prior_density` with respect to the weight value."""
    x = np.asarray(x, dtype=np.float64)
    g1 = -x / prior.sigma1**2
    if prior.kind is PriorKind.SINGLE_GAUSSIAN or prior.pi == 1.0:
        return g1[()]
    g2 = -x / prior.sigma2**2
    if prior.pi == 0.0:
        return g2[()]
    # responsibility of the first component
    a = math.log(prior.pi) + log_gaussian_density(x, 0.0, prior.sigma1)
    b = math.log1p(-prior.pi) + log_gaussian_density(x, 0.0, prior.sigma2)
    r = np.exp(a - np.logaddexp(a, b))
    return (r * g1 + (1.0 - r) * g2)[()]


def pathwise_gradients(p: GaussianParameter, eps: float, dL_dw: float) -> tuple[float, float]:
    """Chain rule through ``w = mu + softplus(rho) * eps``."""
    return dL_dw, dL_dw * eps * float(sigmoid(p.rho))
