"""Error distributions for simulation and for the limiting-risk equations.

Each distribution knows how to sample itself and how to evaluate the density
and CDF of ``eps + r*Z`` where ``Z ~ N(0,1)`` is independent of ``eps``.  The
convolved law is what the fixed-point equations for high-dimensional
M-estimators integrate against, so both families provide it in closed form:
Gaussian + Gaussian is Gaussian, and Laplace + Gaussian has the classical
exponentially-tilted-erfc form, evaluated through ``erfcx`` to stay finite in
the far tails.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, ndtr

from .errors import UsageError

_SQRT2 = np.sqrt(2.0)


def _tilted_gauss_erfcx(u, v):
    """exp(-u^2/2) * erfcx((v - u)/sqrt(2)), stable for any u and v > 0.

    For (v - u) < 0 the identity erfcx(x) = 2*exp(x^2) - erfcx(-x) is used
    with the analytically simplified exponent v^2/2 - u*v, which is negative
    exactly when the branch is taken, so nothing overflows.
    """
    u = np.asarray(u, dtype=float)
    b = (v - u) / _SQRT2
    out = np.empty_like(u)
    pos = b >= 0
    out[pos] = np.exp(-0.5 * u[pos] ** 2) * erfcx(b[pos])
    neg = ~pos
    e = 0.5 * v * v - u[neg] * v
    out[neg] = 2.0 * np.exp(e) - np.exp(-0.5 * u[neg] ** 2) * erfcx(-b[neg])
    return out


@dataclass(frozen=True)
class GaussianErrors:
    """Centered Gaussian errors with standard deviation ``sigma`` (>= 0).

    ``sigma = 0`` is allowed for noiseless simulations; the convolution
    helpers then require ``r > 0``.
    """

    sigma: float

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise UsageError(f"gaussian sigma must be finite and >= 0, got {self.sigma}")

    @property
    def kind(self) -> str:
        return "gaussian"

    @property
    def variance(self) -> float:
        return self.sigma**2

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.sigma == 0.0:
            return np.zeros(size)
        return rng.normal(0.0, self.sigma, size)

    def conv_pdf(self, t, r: float):
        s2 = self.sigma**2 + r * r
        if s2 <= 0.0:
            raise UsageError("degenerate convolution: sigma = 0 and r = 0")
        t = np.asarray(t, dtype=float)
        return np.exp(-0.5 * t * t / s2) / np.sqrt(2.0 * np.pi * s2)

    def conv_cdf(self, t, r: float):
        s2 = self.sigma**2 + r * r
        if s2 <= 0.0:
            raise UsageError("degenerate convolution: sigma = 0 and r = 0")
        return ndtr(np.asarray(t, dtype=float) / np.sqrt(s2))


@dataclass(frozen=True)
class DoubleExponentialErrors:
    """Double-exponential (Laplace) errors: density (1/2b) exp(-|x|/b), b > 0.

    Variance is 2*b^2.
    """

    b: float

    def __post_init__(self):
        if not np.isfinite(self.b) or self.b <= 0:
            raise UsageError(f"double-exponential scale must be finite and > 0, got {self.b}")

    @property
    def kind(self) -> str:
        return "double_exponential"

    @property
    def variance(self) -> float:
        return 2.0 * self.b**2

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.laplace(0.0, self.b, size)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-np.abs(t) / self.b) / (2.0 * self.b)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t < 0, 0.5 * np.exp(t / self.b), 1.0 - 0.5 * np.exp(-t / self.b))

    def conv_pdf(self, t, r: float):
        if r == 0.0:
            return self.pdf(t)
        t = np.asarray(t, dtype=float)
        u = t / r
        v = r / self.b
        return (_tilted_gauss_erfcx(u, v) + _tilted_gauss_erfcx(-u, v)) / (4.0 * self.b)

    def conv_cdf(self, t, r: float):
        if r == 0.0:
            return self.cdf(t)
        t = np.asarray(t, dtype=float)
        u = t / r
        v = r / self.b
        return ndtr(u) - 0.25 * (_tilted_gauss_erfcx(u, v) - _tilted_gauss_erfcx(-u, v))


ErrorDistribution = GaussianErrors | DoubleExponentialErrors


def make_error_dist(kind: str, scale: float) -> ErrorDistribution:
    """Build a distribution from a (kind, scale) descriptor.

    ``scale`` is sigma for "gaussian" and b for "double_exponential"
    (alias "laplace").
    """
    kind = kind.lower()
    if kind == "gaussian":
        return GaussianErrors(scale)
    if kind in ("double_exponential", "laplace"):
        return DoubleExponentialErrors(scale)
    raise UsageError(f"unknown error distribution {kind!r}")
