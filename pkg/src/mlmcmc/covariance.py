"""Isotropic Matérn covariance kernel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import kv


@dataclass(frozen=True)
class MaternParams:
    """Matérn kernel parameters for the Gaussian field ``g``.

    ``sigma2`` is the marginal variance, ``lam`` the length scale in metres and
    ``nu`` the smoothness.  Only the Euclidean norm (``p = 2``) is supported.
    """

    sigma2: float = 1.0
    lam: float = 0.5
    nu: float = 1.5
    p: int = 2

    def __post_init__(self):
        if not (self.sigma2 > 0 and self.lam > 0 and self.nu > 0):
            raise ValueError(f"Matérn parameters must be positive, got {self}")
        if self.p != 2:
            raise ValueError("only the isotropic p=2 kernel is supported")

    def to_dict(self) -> dict:
        return {"sigma2": self.sigma2, "lam": self.lam, "nu": self.nu}


_HALF_INTEGER = (0.5, 1.5, 2.5)


def _closed_form(nu: float, t: np.ndarray) -> np.ndarray:
    # t = sqrt(2 nu) r / lam
    if nu == 0.5:
        return np.exp(-t)
    if nu == 1.5:
        return (1.0 + t) * np.exp(-t)
    return (1.0 + t + t * t / 3.0) * np.exp(-t)


def matern_eval(params: MaternParams, r) -> np.ndarray:
    """Evaluate the Matérn covariance at distance(s) ``r``.

    Half-integer smoothness uses the polynomial-times-exponential closed form;
    anything else goes through the modified Bessel function ``K_nu``.  The
    removable singularity at ``r = 0`` returns ``sigma2`` exactly.
    """
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("distances must be finite")
    if np.any(r < 0):
        raise ValueError("distances must be non-negative")
    t = np.sqrt(2.0 * params.nu) * r / params.lam
    if params.nu in _HALF_INTEGER:
        out = params.sigma2 * _closed_form(params.nu, t)
    else:
        with np.errstate(invalid="ignore", over="ignore"):
            scale = params.sigma2 / (2.0 ** (params.nu - 1.0) * gamma_fn(params.nu))
            out = scale * t**params.nu * kv(params.nu, t)
        # kv underflows to 0 far out and the product is 0*inf at t=0
        out = np.where(t > 700.0, 0.0, out)
    return np.where(r == 0.0, params.sigma2, out)


def covariance_matrix(params: MaternParams, points_a, points_b) -> np.ndarray:
    """Dense covariance matrix between two 2D point sets."""
    a = np.atleast_2d(np.asarray(points_a, dtype=float))
    b = np.atleast_2d(np.asarray(points_b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("point lists must be non-empty")
    if a.shape[1] != 2 or b.shape[1] != 2:
        raise ValueError("points must be two-dimensional")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("points must be finite")
    out = np.empty((a.shape[0], b.shape[0]))
    # explicit differences keep coincident points at exactly zero distance
    step = max(1, 2_000_000 // b.shape[0])
    for i in range(0, a.shape[0], step):
        diff = a[i : i + step, None, :] - b[None, :, :]
        out[i : i + step] = matern_eval(params, np.hypot(diff[..., 0], diff[..., 1]))
    return out
