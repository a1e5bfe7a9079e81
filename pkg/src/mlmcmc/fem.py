"""Plane-stress linear elasticity on square bilinear (Q4) elements.

Nodes are numbered with y running fastest, ``node = i * (ny + 1) + j``, and
dofs interleave as ``2 * node + component``.  With the left and right edges
clamped, the free dofs form one contiguous block and the stiffness matrix
is banded with half-bandwidth ``2 * ny + 5``, so solves use a banded
Cholesky factorization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from mlmcmc.grid import Field, RectGrid

GRAVITY = 9.81


class FEError(RuntimeError):
    pass


@dataclass(frozen=True)
class LineLoad:
    """Downward distributed load on the top edge, in N/m, over ``[x0, x1]``."""

    magnitude: float = 1000.0
    x0: float = 4.0 / 3.0
    x1: float = 8.0 / 3.0

    @property
    def total(self) -> float:
        return self.magnitude * (self.x1 - self.x0)


def constitutive_matrix(poisson: float, plane: str = "stress") -> np.ndarray:
    """Elasticity matrix per unit Young's modulus."""
    v = poisson
    if plane == "stress":
        return np.array([[1, v, 0], [v, 1, 0], [0, 0, (1 - v) / 2]]) / (1 - v * v)
    if plane == "strain":
        return np.array([[1 - v, v, 0], [v, 1 - v, 0], [0, 0, (1 - 2 * v) / 2]]) / ((1 + v) * (1 - 2 * v))
    raise ValueError(f"unknown plane assumption {plane!r}")


def element_stiffness(poisson: float, plane: str = "stress") -> np.ndarray:
    """8x8 Q4 stiffness for a square element with E = 1 (independent of element size)."""
    D = constitutive_matrix(poisson, plane)
    g = (1 - 1 / np.sqrt(3)) / 2
    K = np.zeros((8, 8))
    for xi in (g, 1 - g):
        for eta in (g, 1 - g):
            dN = np.array(
                [
                    [-(1 - eta), (1 - eta), eta, -eta],
                    [-(1 - xi), -xi, xi, (1 - xi)],
                ]
            )
            B = np.zeros((3, 8))
            B[0, 0::2] = dN[0]
            B[1, 1::2] = dN[1]
            B[2, 0::2] = dN[1]
            B[2, 1::2] = dN[0]
            K += 0.25 * B.T @ D @ B
    return K


@dataclass(frozen=True)
class Mesh:
    nx: int
    ny: int
    dx: float = 4.0
    dy: float = 1.0

    @classmethod
    def from_grid(cls, grid: RectGrid) -> "Mesh":
        return cls(grid.nx, grid.ny, grid.dx, grid.dy)

    @property
    def grid(self) -> RectGrid:
        return RectGrid(self.nx, self.ny, self.dx, self.dy)

    @property
    def h(self) -> float:
        return self.dx / self.nx

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    def node(self, i, j):
        return np.asarray(i) * (self.ny + 1) + np.asarray(j)

    def node_coords(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.nx + 1), np.arange(self.ny + 1), indexing="ij")
        return np.column_stack([i.ravel() * self.h, j.ravel() * self.h])

    def left_nodes(self):
        return self.node(0, np.arange(self.ny + 1))

    def right_nodes(self):
        return self.node(self.nx, np.arange(self.ny + 1))

    def top_nodes(self):
        return self.node(np.arange(self.nx + 1), self.ny)

    def bottom_nodes(self):
        return self.node(np.arange(self.nx + 1), 0)

    def boundary_nodes(self):
        return np.unique(np.concatenate([self.left_nodes(), self.right_nodes(), self.top_nodes(), self.bottom_nodes()]))

    @property
    def n_obs_nodes(self) -> int:
        return 2 * (self.nx + 1)

    def element_dofs(self) -> np.ndarray:
        """(n_elements, 8) dof indices, elements in row-major (x fastest) cell order."""
        j, i = np.meshgrid(np.arange(self.ny), np.arange(self.nx), indexing="ij")
        i, j = i.ravel(), j.ravel()
        nodes = np.column_stack([self.node(i, j), self.node(i + 1, j), self.node(i + 1, j + 1), self.node(i, j + 1)])
        return np.stack([2 * nodes, 2 * nodes + 1], -1).reshape(len(i), 8)

    @property
    def half_bandwidth(self) -> int:
        return 2 * (self.ny + 2) + 1


@dataclass
class DisplacementField:
    u: np.ndarray  # (n_nodes, 2)
    mesh: Mesh

    def midspan_deflection(self) -> float:
        """Vertical displacement of the node nearest to the domain centre."""
        m = self.mesh
        return float(self.u[m.node(m.nx // 2, m.ny // 2), 1])


def load_vector(mesh: Mesh, load: LineLoad | None, density: float = 0.0, gravity: bool = False) -> np.ndarray:
    """Consistent nodal forces for the top line load and optional self-weight."""
    f = np.zeros(mesh.n_dofs)
    h = mesh.h
    if load is not None and load.magnitude != 0:
        top = mesh.top_nodes()
        for i in range(mesh.nx):
            a, b = max(load.x0, i * h), min(load.x1, (i + 1) * h)
            if b <= a:
                continue
            # integrals of the two linear hat functions over [a, b]
            s, t = (a - i * h) / h, (b - i * h) / h
            right = h * (t * t - s * s) / 2
            left = h * (t - s) - right
            f[2 * top[i] + 1] -= load.magnitude * left
            f[2 * top[i + 1] + 1] -= load.magnitude * right
    if gravity and density:
        w = density * GRAVITY * h * h / 4
        dofs = mesh.element_dofs()[:, 1::2].ravel()
        f -= np.bincount(dofs, minlength=mesh.n_dofs) * w
    return f


def assemble_sparse(mesh: Mesh, youngs, poisson: float, plane: str = "stress") -> sp.csr_matrix:
    E = np.ravel(youngs)
    ke = element_stiffness(poisson, plane)
    dofs = mesh.element_dofs()
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    vals = (E[:, None] * ke.ravel()[None]).ravel()
    return sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_dofs,) * 2).tocsr()


def solve_dirichlet(K, f, fixed: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Solve ``K u = f`` with ``u[fixed] = values`` by eliminating the fixed dofs."""
    n = K.shape[0]
    free = np.setdiff1d(np.arange(n), fixed)
    u = np.zeros(n)
    u[fixed] = values
    K = sp.csr_matrix(K)
    rhs = f[free] - K[free][:, fixed] @ values
    u[free] = spla.spsolve(K[free][:, free].tocsc(), rhs)
    return u


@dataclass
class ElasticityProblem:
    youngs: np.ndarray  # per-element values, row-major cell order
    poisson: float = 0.25
    density: float = 2500.0
    load: LineLoad = field(default_factory=LineLoad)
    include_gravity: bool = True
    plane: str = "stress"

    def __post_init__(self):
        if isinstance(self.youngs, Field):
            self.youngs = self.youngs.values
        self.youngs = np.asarray(self.youngs, dtype=float).ravel()
        if not 0 < self.poisson < 0.5:
            raise ValueError(f"Poisson ratio must lie in (0, 0.5), got {self.poisson}")
        if not np.all(np.isfinite(self.youngs)) or np.any(self.youngs <= 0):
            raise ValueError("Young's modulus must be positive and finite everywhere")


class ForwardSolver:
    """Repeated clamped-beam solves on a fixed mesh for varying element stiffness."""

    def __init__(self, mesh: Mesh, poisson=0.25, load: LineLoad | None = None, density=2500.0,
                 gravity=True, plane="stress"):
        self.mesh = mesh
        self.poisson = poisson
        self.plane = plane
        self.load = LineLoad() if load is None else load
        self.f = load_vector(mesh, self.load, density, gravity)
        self._ke = element_stiffness(poisson, plane)
        nclamp = 2 * (mesh.ny + 1)
        self.free = slice(nclamp, mesh.n_dofs - nclamp)
        self._f_free = self.f[self.free]
        self._setup_band()

    def _setup_band(self):
        m = self.mesh
        u = m.half_bandwidth
        dofs = m.element_dofs()
        a, b = np.triu_indices(8)
        ga, gb = dofs[:, a], dofs[:, b]
        lo, hi = np.minimum(ga, gb), np.maximum(ga, gb)
        self._u = u
        self._flat = ((u + lo - hi) * m.n_dofs + hi).ravel()
        self._kvals = self._ke[a, b]
        self._size = (u + 1) * m.n_dofs

    def banded_stiffness(self, youngs) -> np.ndarray:
        E = np.ravel(youngs)
        w = (E[:, None] * self._kvals[None]).ravel()
        ab = np.bincount(self._flat, weights=w, minlength=self._size)
        return ab.reshape(self._u + 1, self.mesh.n_dofs)

    def solve(self, youngs) -> np.ndarray:
        """Nodal displacements, shape (n_nodes, 2)."""
        ab = self.banded_stiffness(youngs)[:, self.free]
        u = np.zeros(self.mesh.n_dofs)
        try:
            u[self.free] = sla.solveh_banded(ab, self._f_free, check_finite=False)
        except np.linalg.LinAlgError as exc:
            E = np.ravel(youngs)
            raise FEError(
                f"stiffness matrix not positive definite on {self.mesh.nx}x{self.mesh.ny} mesh "
                f"(E range [{E.min():.3e}, {E.max():.3e}])"
            ) from exc
        return u.reshape(-1, 2)

    def observe(self, youngs) -> np.ndarray:
        return observe(self.solve(youngs), self.mesh)


def assemble_and_solve(problem: ElasticityProblem, mesh: Mesh) -> DisplacementField:
    if problem.youngs.size != mesh.nx * mesh.ny:
        raise ValueError(f"need {mesh.nx * mesh.ny} element values, got {problem.youngs.size}")
    solver = ForwardSolver(mesh, problem.poisson, problem.load, problem.density, problem.include_gravity, problem.plane)
    return DisplacementField(solver.solve(problem.youngs), mesh)


def observe(u, mesh: Mesh) -> np.ndarray:
    """(u_x, u_y) pairs at top-edge nodes then bottom-edge nodes, each by increasing x."""
    u = u.u if isinstance(u, DisplacementField) else np.asarray(u).reshape(-1, 2)
    idx = np.concatenate([mesh.top_nodes(), mesh.bottom_nodes()])
    return u[idx].ravel()
