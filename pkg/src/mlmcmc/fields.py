"""Common front end over the three field representations and per-level models."""

from __future__ import annotations

import math
import time

import numpy as np

from mlmcmc.covariance import MaternParams
from mlmcmc.fem import Mesh
from mlmcmc.grid import RectGrid
from mlmcmc.inverse import LevelLikelihood, ObservationSet
from mlmcmc.kl import kl_precompute
from mlmcmc.las import las_precompute
from mlmcmc.qoi import qoi_batch
from mlmcmc.transform import GammaTransformParams, gaussian_to_gamma
from mlmcmc.wavelet import TorusEmbedding, wavelet_precompute

METHODS = ("kl", "wavelet", "las")


def las_stage(grid: RectGrid) -> int:
    k = int(round(math.log2(grid.ny)))
    if 2**k != grid.ny or grid.nx != 4 * grid.ny:
        raise ValueError(f"grid {grid.nx}x{grid.ny} is not an LAS stage")
    return k


def build_representation(method: str, matern: MaternParams, grid: RectGrid, m_max: int,
                         fft_resolution="auto", strict=False, las_unbiased=False):
    """Precomputed basis whose ``field_matrix(grid, m)`` maps coefficients to cell values."""
    if method == "kl":
        return kl_precompute(matern, grid, m_max)
    if method == "wavelet":
        emb = TorusEmbedding.for_domain(grid.dx, grid.dy)
        return wavelet_precompute(matern, emb, grid, m_max, fft_resolution, strict)
    if method == "las":
        return las_precompute(matern, las_stage(grid), las_unbiased, grid.dx, grid.dy)
    raise ValueError(f"unknown representation {method!r}; choose from {METHODS}")


def timed_precompute(method, matern, grid, m_max, **kw):
    t0 = time.perf_counter()
    rep = build_representation(method, matern, grid, m_max, **kw)
    if method == "las":
        rep.field_matrix(grid, m_max)
    return rep, time.perf_counter() - t0


class LevelModel:
    """Coefficients -> (log-likelihood, QoI, stiffness field) on one level."""

    def __init__(self, matrix: np.ndarray, grid: RectGrid, transform: GammaTransformParams,
                 likelihood: LevelLikelihood | None, mean: np.ndarray | None = None):
        self.matrix = np.ascontiguousarray(matrix)
        self.grid = grid
        self.transform = transform
        self.likelihood = likelihood
        self.mean = mean

    @property
    def m(self) -> int:
        return self.matrix.shape[1]

    def stiffness(self, xi) -> np.ndarray:
        g = self.matrix @ xi
        if self.mean is not None:
            g = g + self.mean
        return gaussian_to_gamma(self.transform, g)

    def __call__(self, xi):
        E = self.stiffness(xi)
        ll = self.likelihood(E) if self.likelihood is not None else 0.0
        return ll, float(qoi_batch(E, self.grid)[0]), E


def level_models(rep, grids, truncations, transform, obs: ObservationSet | None, solver_kw=None,
                 normalize=True) -> list[LevelModel]:
    solver_kw = solver_kw or {}
    out = []
    for grid, m in zip(grids, truncations):
        lik = LevelLikelihood(obs, Mesh.from_grid(grid), normalize, **solver_kw) if obs is not None else None
        out.append(LevelModel(rep.field_matrix(grid, m), grid, transform, lik))
    return out
