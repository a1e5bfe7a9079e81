"""Rectangular cell grids and cell-centred field realizations.

Every field in the package lives on the cells of a uniform grid of square
cells over ``[0, dx] x [0, dy]``.  Values are stored with shape ``(ny, nx)``
so that a C-order ravel is row-major with x running fastest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RectGrid:
    nx: int
    ny: int
    dx: float = 4.0
    dy: float = 1.0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid needs at least one cell per direction, got {self.nx}x{self.ny}")
        if not np.isclose(self.dx / self.nx, self.dy / self.ny, rtol=1e-12):
            raise ValueError(
                f"cells must be square: {self.dx}/{self.nx} != {self.dy}/{self.ny}"
            )

    @property
    def h(self) -> float:
        return self.dx / self.nx

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    @property
    def area(self) -> float:
        return self.dx * self.dy

    def x_centers(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.h

    def y_centers(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.h

    def cell_centers(self) -> np.ndarray:
        """Cell centres as an ``(n_cells, 2)`` array in row-major (x fastest) order."""
        X, Y = np.meshgrid(self.x_centers(), self.y_centers())
        return np.column_stack([X.ravel(), Y.ravel()])

    def refine(self, factor: int = 2) -> "RectGrid":
        return RectGrid(self.nx * factor, self.ny * factor, self.dx, self.dy)

    def contains(self, other: "RectGrid") -> bool:
        """True when ``other`` is a dyadic coarsening of this grid over the same domain."""
        if (self.dx, self.dy) != (other.dx, other.dy) or self.nx % other.nx:
            return False
        r = self.nx // other.nx
        return self.ny == other.ny * r and r & (r - 1) == 0

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "dx": self.dx, "dy": self.dy}


@dataclass
class Field:
    """Cell-centred scalar field on a :class:`RectGrid`."""

    values: np.ndarray
    grid: RectGrid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)

    def l2_norm(self) -> float:
        return float(np.sqrt(self.grid.cell_area * np.sum(self.values**2)))

    def coarsen(self, factor: int) -> "Field":
        """Local averages over ``factor x factor`` blocks of cells."""
        ny, nx = self.grid.shape
        if nx % factor or ny % factor:
            raise ValueError(f"cannot coarsen {nx}x{ny} by {factor}")
        v = self.values.reshape(ny // factor, factor, nx // factor, factor).mean(axis=(1, 3))
        return Field(v, RectGrid(nx // factor, ny // factor, self.grid.dx, self.grid.dy))

    def prolong(self, factor: int) -> "Field":
        """Piecewise-constant injection onto a grid refined by ``factor``."""
        v = np.kron(self.values, np.ones((factor, factor)))
        return Field(v, self.grid.refine(factor))
