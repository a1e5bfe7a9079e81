"""Mean integrated bending stiffness of a cell-wise constant stiffness field."""

from __future__ import annotations

import numpy as np

from mlmcmc.grid import Field, RectGrid


def _as_field(E, grid: RectGrid | None = None) -> Field:
    if isinstance(E, Field):
        return E
    if grid is None:
        raise ValueError("grid required for raw arrays")
    return Field(E, grid)


def neutral_line(E, grid: RectGrid | None = None) -> np.ndarray:
    """Barycentre ``y0`` of the stiffness in every column of cells, shape ``(nx,)``."""
    f = _as_field(E, grid)
    v = f.values
    if np.any(v <= 0):
        raise ValueError("stiffness must be positive")
    return (v * f.grid.y_centers()[:, None]).sum(0) / v.sum(0)


def compute_qoi(E, grid: RectGrid | None = None) -> float:
    """(1/Dx) * integral over D of E (y - y0(x))^2, exact for cell-wise constant E."""
    f = _as_field(E, grid)
    g = f.grid
    y0 = neutral_line(f)
    lo = np.arange(g.ny)[:, None] * g.h - y0[None, :]
    hi = lo + g.h
    moment = (hi**3 - lo**3) / 3  # integral of (y - y0)^2 over each cell's y-range
    return float(g.h * np.sum(f.values * moment) / g.dx)


def qoi_batch(E: np.ndarray, grid: RectGrid) -> np.ndarray:
    """QoI for a stack of fields with shape ``(n, n_cells)``."""
    v = np.asarray(E, dtype=float).reshape(-1, grid.ny, grid.nx)
    y = grid.y_centers()[None, :, None]
    y0 = (v * y).sum(1, keepdims=True) / v.sum(1, keepdims=True)
    lo = np.arange(grid.ny)[None, :, None] * grid.h - y0
    moment = ((lo + grid.h) ** 3 - lo**3) / 3
    return grid.h * np.sum(v * moment, axis=(1, 2)) / grid.dx
