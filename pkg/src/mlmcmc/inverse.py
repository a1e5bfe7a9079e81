"""Synthetic observations and level-weighted Gaussian likelihoods."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mlmcmc.covariance import MaternParams
from mlmcmc.fem import ForwardSolver, Mesh
from mlmcmc.grid import Field, RectGrid
from mlmcmc.transform import GammaTransformParams, gaussian_to_gamma


@dataclass(frozen=True)
class GroundTruth:
    kind: str = "piecewise-constant"
    outside: float = 47e9
    inside: float = 12e9
    region: tuple = (4.0 / 3.0, 8.0 / 3.0, 0.0, 0.5)  # x0, x1, y0, y1
    n_coeffs: int = 5000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("piecewise-constant", "prior-sampled-wavelet"):
            raise ValueError(f"unknown ground truth kind {self.kind!r}")

    def youngs(self, grid: RectGrid, matern: MaternParams | None = None,
               transform: GammaTransformParams | None = None) -> Field:
        if self.kind == "piecewise-constant":
            if self.inside <= 0 or self.outside <= 0:
                raise ValueError("ground-truth stiffness must be positive")
            c = grid.cell_centers()
            x0, x1, y0, y1 = self.region
            inside = (c[:, 0] > x0) & (c[:, 0] < x1) & (c[:, 1] > y0) & (c[:, 1] < y1)
            return Field(np.where(inside, self.inside, self.outside), grid)
        from mlmcmc.wavelet import TorusEmbedding, auto_resolution, periodized_covariance_coeffs, wavelet_synthesize

        matern = matern or MaternParams()
        transform = transform or GammaTransformParams.from_median()
        emb = TorusEmbedding.for_domain(grid.dx, grid.dy)
        table = periodized_covariance_coeffs(matern, emb, auto_resolution(self.n_coeffs))
        xi = np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed))).standard_normal(self.n_coeffs)
        g = wavelet_synthesize(table, xi, grid)
        return Field(gaussian_to_gamma(transform, g.values), grid)


@dataclass
class ObservationSet:
    values: np.ndarray
    sigma_f: float
    data_mesh: Mesh
    seed: int = 0
    noiseless: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.sigma_f >= 0:
            raise ValueError("sigma_f must be nonnegative")
        self.values = np.asarray(self.values, dtype=float)


def generate_synthetic_data(truth: Field, data_mesh: Mesh, sigma_f: float, seed: int,
                            estimation_mesh: Mesh | None = None, **solver_kw) -> ObservationSet:
    """Forward-solve the truth on ``data_mesh``, observe the edges and add Gaussian noise."""
    if estimation_mesh is not None and data_mesh.nx <= estimation_mesh.nx:
        raise ValueError("data mesh must be strictly finer than the finest estimation mesh")
    E = truth.values.ravel() if isinstance(truth, Field) else np.ravel(truth)
    if E.size != data_mesh.nx * data_mesh.ny:
        raise ValueError("truth field does not match the data mesh")
    if np.any(E <= 0) or not np.all(np.isfinite(E)):
        raise ValueError("ground-truth stiffness must be positive and finite")
    clean = ForwardSolver(data_mesh, **solver_kw).observe(E)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    noisy = clean + sigma_f * rng.standard_normal(clean.size)
    return ObservationSet(noisy, sigma_f, data_mesh, seed, clean)


def restriction_factor(fine: Mesh, coarse: Mesh) -> int:
    if (fine.dx, fine.dy) != (coarse.dx, coarse.dy) or fine.nx % coarse.nx or fine.ny % coarse.ny:
        raise ValueError(f"mesh {coarse.nx}x{coarse.ny} is not nested in {fine.nx}x{fine.ny}")
    r = fine.nx // coarse.nx
    if fine.ny != coarse.ny * r or r & (r - 1):
        raise ValueError(f"mesh {coarse.nx}x{coarse.ny} is not a dyadic coarsening of {fine.nx}x{fine.ny}")
    return r


def restrict_observations(values: np.ndarray, fine: Mesh, coarse: Mesh) -> np.ndarray:
    """Keep the observations at edge nodes of ``fine`` that coincide with nodes of ``coarse``."""
    r = restriction_factor(fine, coarse)
    v = np.asarray(values).reshape(2, fine.nx + 1, 2)  # edge, node, component
    return v[:, ::r].ravel()


def weight_observations(obs: ObservationSet, level_mesh: Mesh) -> np.ndarray:
    return restrict_observations(obs.values, obs.data_mesh, level_mesh)


def misfit(pred: np.ndarray, target: np.ndarray, sigma_f: float, n_nodes: int | None) -> float:
    d = pred - target
    denom = 2 * sigma_f**2 * (n_nodes if n_nodes else 1)
    return -float(d @ d) / denom


class LevelLikelihood:
    """Log-likelihood of cell-wise stiffness on one level mesh."""

    def __init__(self, obs: ObservationSet, mesh: Mesh, normalize: bool = True, **solver_kw):
        self.mesh = mesh
        self.sigma_f = obs.sigma_f
        self.target = weight_observations(obs, mesh)
        self.n_nodes = mesh.n_obs_nodes if normalize else None
        self.solver = ForwardSolver(mesh, **solver_kw)

    def __call__(self, youngs) -> float:
        return misfit(self.solver.observe(youngs), self.target, self.sigma_f, self.n_nodes)


def log_likelihood(field: Field, obs: ObservationSet, level_mesh: Mesh, normalize: bool = True, **solver_kw) -> float:
    E = field.values if isinstance(field, Field) else np.asarray(field)
    if np.any(E <= 0):
        raise ValueError("stiffness must be positive")
    return LevelLikelihood(obs, level_mesh, normalize, **solver_kw)(E)

