"""Karhunen-Loève expansion of a Matérn field on the rectangle.

The covariance eigenproblem is discretized with a Nyström method using
midpoint quadrature at the cell centres of a quadrature grid.  Eigenfunctions
can be evaluated anywhere through the Nyström interpolant

    b_k(x) = 1/lambda_k * sum_j w_j C(x, y_j) b_k(y_j),

which reproduces the nodal eigenvectors exactly on the quadrature grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from mlmcmc.covariance import MaternParams, covariance_matrix
from mlmcmc.grid import Field, RectGrid


class KLError(RuntimeError):
    pass


@dataclass
class KLBasis:
    params: MaternParams
    grid: RectGrid
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray  # (n_cells, m_max), L2(D)-normalized nodal values
    mean_field: np.ndarray = field(default=None)
    total_variance: float = 0.0

    def __post_init__(self):
        if self.mean_field is None:
            self.mean_field = np.zeros(self.grid.n_cells)

    @property
    def m_max(self) -> int:
        return len(self.eigenvalues)

    def evaluate(self, grid: RectGrid, m: int | None = None) -> np.ndarray:
        """Eigenfunction values at the cell centres of ``grid``, shape ``(n_cells, m)``."""
        m = self.m_max if m is None else m
        if grid == self.grid:
            return self.eigenfunctions[:, :m].copy()
        lam = self.eigenvalues[:m]
        if np.any(lam <= 0):
            raise KLError("cannot interpolate eigenfunctions with zero eigenvalue")
        cross = covariance_matrix(self.params, grid.cell_centers(), self.grid.cell_centers())
        return cross @ (self.eigenfunctions[:, :m] * (self.grid.cell_area / lam))

    def field_matrix(self, grid: RectGrid, m: int) -> np.ndarray:
        """Linear map from the first ``m`` coefficients to cell values on ``grid``."""
        if m > self.m_max:
            raise ValueError(f"truncation {m} exceeds basis size {self.m_max}")
        return self.evaluate(grid, m) * np.sqrt(self.eigenvalues[:m])

    def to_arrays(self) -> dict:
        return {
            "eigenvalues": self.eigenvalues,
            "eigenfunctions": self.eigenfunctions,
            "mean_field": self.mean_field,
        }

    @classmethod
    def from_arrays(cls, params, grid, arrays, total_variance=0.0) -> "KLBasis":
        return cls(
            params,
            grid,
            np.asarray(arrays["eigenvalues"]),
            np.asarray(arrays["eigenfunctions"]).reshape(grid.n_cells, -1),
            np.asarray(arrays["mean_field"]),
            total_variance,
        )


def kl_precompute(params: MaternParams, grid: RectGrid, m_max: int) -> KLBasis:
    """Leading ``m_max`` eigenpairs of the discretized covariance operator."""
    n = grid.n_cells
    if not 1 <= m_max <= n:
        raise ValueError(f"m_max={m_max} must lie in [1, {n}] for a {grid.nx}x{grid.ny} grid")
    w = grid.cell_area
    K = covariance_matrix(params, grid.cell_centers(), grid.cell_centers()) * w
    total = float(np.trace(K))
    try:
        lam, vec = sla.eigh(K, subset_by_index=[n - m_max, n - 1], overwrite_a=True)
    except (sla.LinAlgError, ValueError) as exc:
        cond = np.linalg.cond(covariance_matrix(params, grid.cell_centers(), grid.cell_centers()))
        raise KLError(f"eigen-solver failed on {n}x{n} covariance (cond={cond:.3e}): {exc}") from exc
    lam = lam[::-1].copy()
    vec = vec[:, ::-1].copy()
    floor = -1e-10 * max(lam[0], 0.0)
    if np.any(lam < floor):
        raise KLError(f"covariance operator has negative eigenvalue {lam.min():.3e}")
    lam = np.clip(lam, 0.0, None)

    # sign convention: entry of largest magnitude is positive
    idx = np.argmax(np.abs(vec), axis=0)
    vec *= np.sign(vec[idx, np.arange(m_max)])
    order = np.lexsort((vec[0], -lam))
    lam, vec = lam[order], vec[:, order]
    return KLBasis(params, grid, lam, vec / np.sqrt(w), total_variance=total)


def kl_sample(basis: KLBasis, xi, m: int | None = None) -> Field:
    """Truncated expansion ``mean + sum_k sqrt(lambda_k) xi_k b_k`` on the basis grid."""
    xi = np.asarray(xi, dtype=float)
    m = basis.m_max if m is None else m
    if m > basis.m_max:
        raise ValueError(f"truncation {m} exceeds basis size {basis.m_max}")
    if xi.shape[-1] < m:
        raise ValueError(f"need at least {m} coefficients, got {xi.shape[-1]}")
    coef = np.sqrt(basis.eigenvalues[:m]) * xi[:m]
    return Field(basis.mean_field + basis.eigenfunctions[:, :m] @ coef, basis.grid)


def kl_project(basis: KLBasis, values: np.ndarray) -> np.ndarray:
    """L2(D) inner products of cell values on the basis grid with each eigenfunction."""
    return basis.eigenfunctions.T @ (np.ravel(values) * basis.grid.cell_area)
