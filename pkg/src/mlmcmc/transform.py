"""Gaussian-to-gamma marginal transform for the Young's modulus field.

``E = mu * P^{-1}(kappa, Phi(g))`` where ``P`` is the regularized lower
incomplete gamma function and ``Phi`` the standard normal CDF, i.e. the
quantile-matching map that turns a standard normal marginal into a
Gamma(shape=kappa, scale=mu) marginal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from mlmcmc.grid import Field

PROB_FLOOR = 1e-16


@dataclass(frozen=True)
class GammaTransformParams:
    mu: float
    kappa: float

    def __post_init__(self):
        if not (self.mu > 0 and self.kappa > 0):
            raise ValueError(f"gamma scale and shape must be positive, got {self}")

    @classmethod
    def from_median(cls, median: float = 26.1e9, kappa: float = 10.0) -> "GammaTransformParams":
        """Pick the scale so that ``g = 0`` maps to ``median``."""
        return cls(mu=median / float(special.gammaincinv(kappa, 0.5)), kappa=kappa)

    def to_dict(self) -> dict:
        return {"mu": self.mu, "kappa": self.kappa}


def gaussian_to_gamma(params: GammaTransformParams, g, return_saturation: bool = False):
    """Map Gaussian values to gamma-distributed Young's moduli (Pa).

    The lower tail is computed from ``Phi(g)`` and the upper tail from
    ``Phi(-g)`` so neither side loses precision.  Tail probabilities are
    clamped at ``1e-16``; with ``return_saturation=True`` a boolean mask of
    clamped entries is returned as well.
    """
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("Gaussian values must be finite")
    tail = special.ndtr(-np.abs(g))
    saturated = tail < PROB_FLOOR
    tail = np.maximum(tail, PROB_FLOOR)
    x = np.where(
        g <= 0,
        special.gammaincinv(params.kappa, tail),
        special.gammainccinv(params.kappa, tail),
    )
    out = params.mu * x
    if return_saturation:
        return out, saturated
    return out


def gamma_to_gaussian(params: GammaTransformParams, e) -> np.ndarray:
    """Inverse of :func:`gaussian_to_gamma`."""
    x = np.asarray(e, dtype=float) / params.mu
    if np.any(x <= 0):
        raise ValueError("Young's modulus must be positive")
    lower = special.gammainc(params.kappa, x)
    upper = special.gammaincc(params.kappa, x)
    return np.where(lower <= 0.5, special.ndtri(lower), -special.ndtri(upper))


def transform_field(params: GammaTransformParams, field: Field) -> Field:
    return Field(gaussian_to_gamma(params, field.values), field.grid)
