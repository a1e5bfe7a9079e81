"""Local average subdivision (LAS) sampler.

Starting from four unit cells, each refinement splits every parent cell
into four children.  Three children are drawn from their Gaussian law
conditional on the 3x3 parent neighbourhood,

    z = A @ parents + L @ xi,

and the fourth is fixed by requiring the child mean to equal the parent.
All weights and noise factors come from cell-average covariances and
are computed once per distinct neighbourhood shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mlmcmc.covariance import MaternParams, matern_eval
from mlmcmc.grid import Field, RectGrid

# children generated explicitly, as (dx, dy) offsets in child cells; (0, 0) is implied
CHILDREN = ((1, 1), (1, 0), (0, 1))
N_INIT_X = 4


class LASError(RuntimeError):
    pass


def _gauss_points(n, sub=1):
    t, w = np.polynomial.legendre.leggauss(n)
    t = ((np.arange(sub)[:, None] + (t[None, :] + 1) / 2) / sub).ravel()
    w = np.tile(w / 2, sub) / sub
    pts = np.stack(np.meshgrid(t, t, indexing="ij"), -1).reshape(-1, 2)
    return pts, np.outer(w, w).ravel()


def _subdivisions(params, size):
    # composite rule with sub-cells no larger than half a correlation length
    return max(1, int(np.ceil(2 * size / params.lam - 1e-9)))


def cell_average_cov(params: MaternParams, a, b, size_a: float, size_b: float, order: int = 4,
                     sub: int | None = None):
    """Covariance between averages over square cells with lower-left corners ``a`` and ``b``.

    Gauss-Legendre with ``order`` points per dimension on each of ``sub x sub``
    sub-cells; by default sub-cells are at most half a correlation length wide
    because the kernel is not smooth at zero distance.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    pa, wa = _gauss_points(order, sub or _subdivisions(params, size_a))
    pb, wb = _gauss_points(order, sub or _subdivisions(params, size_b))
    xa = a[:, None, :] + size_a * pa[None]
    xb = b[:, None, :] + size_b * pb[None]
    out = np.zeros((len(a), len(b)))
    # chunk over cells of a and quadrature points of a to bound memory
    pstep = max(1, min(len(wa), int(4e6 // (len(b) * len(wb)))))
    step = max(1, int(4e6 // (len(b) * pstep * len(wb))))
    for i in range(0, len(a), step):
        for j in range(0, len(wa), pstep):
            d = xa[i : i + step, None, j : j + pstep, None, :] - xb[None, :, None, :, :]
            r = np.sqrt((d**2).sum(-1))
            out[i : i + step] += np.einsum("abij,i,j->ab", matern_eval(params, r), wa[j : j + pstep], wb)
    return out


def _offsets(p, q, nx, ny):
    return tuple((a, b) for b in (-1, 0, 1) for a in (-1, 0, 1) if 0 <= p + a < nx and 0 <= q + b < ny)


def stage_shape(k: int) -> tuple[int, int]:
    """(nx, ny) of the cell grid after ``k`` refinements."""
    return N_INIT_X * 2**k, 2**k


def n_coefficients(k: int) -> int:
    return 4 ** (k + 1)


@dataclass
class _Stencil:
    weights: np.ndarray  # (3, n_offs)
    chol: np.ndarray  # (3, 3) lower triangular


@dataclass
class LASCoefficients:
    params: MaternParams
    k_max: int
    initial_cov: np.ndarray
    stages: list = field(default_factory=list)  # per k: {offsets: _Stencil}
    unbiased: bool = False
    dx: float = 4.0
    dy: float = 1.0

    def __post_init__(self):
        self.initial_chol = np.linalg.cholesky(self.initial_cov)
        self._plans = [self._plan(k) for k in range(self.k_max)]

    def _plan(self, k):
        """Index arrays for vectorized refinement at stage k, grouped by stencil."""
        nx, ny = stage_shape(k)
        base = n_coefficients(k)
        groups = {}
        for q in range(ny):
            for p in range(nx):
                offs = _offsets(p, q, nx, ny)
                groups.setdefault(offs, []).append((p, q))
        plan = []
        for offs, cells in groups.items():
            p = np.array([c[0] for c in cells])
            q = np.array([c[1] for c in cells])
            nb = np.array([(q + b) * nx + (p + a) for a, b in offs]).T  # (n_par, n_offs)
            order = (ny - 1 - q) * nx + p  # top row first, left to right
            xi_idx = base + 3 * order[:, None] + np.arange(3)
            plan.append((self.stages[k][offs], q * nx + p, nb, xi_idx, p, q))
        return plan

    def resolution(self, k=None):
        k = self.k_max if k is None else k
        nx, ny = stage_shape(k)
        return RectGrid(nx, ny, self.dx, self.dy)

    def sample(self, xi, k_target=None) -> np.ndarray:
        """Cell averages for a batch ``xi`` of shape (..., n_coefficients(k_target))."""
        k_target = self.k_max if k_target is None else k_target
        if k_target > self.k_max:
            raise ValueError(f"k_target {k_target} exceeds precomputed k_max {self.k_max}")
        xi = np.asarray(xi, dtype=float)
        need = n_coefficients(k_target)
        if xi.shape[-1] != need:
            raise ValueError(f"LAS at k={k_target} needs exactly {need} coefficients, got {xi.shape[-1]}")
        lead = xi.shape[:-1]
        xi = xi.reshape(-1, need)
        g = xi[:, :4] @ self.initial_chol.T  # (batch, 4) on a 4x1 grid
        for k in range(k_target):
            nx, ny = stage_shape(k)
            new = np.empty((len(xi), 2 * ny, 2 * nx))
            for st, flat, nb, xi_idx, p, q in self._plans[k]:
                z = np.einsum("bpo,so->bps", g[:, nb], st.weights)
                z += np.einsum("bpt,st->bps", xi[:, xi_idx], st.chol)
                for s, (cx, cy) in enumerate(CHILDREN):
                    new[:, 2 * q + cy, 2 * p + cx] = z[:, :, s]
                new[:, 2 * q, 2 * p] = 4 * g[:, flat] - z.sum(-1)
            g = new.reshape(len(xi), -1)
        return g.reshape(*lead, -1)

    def field_matrix(self, grid: RectGrid, m: int | None = None) -> np.ndarray:
        """Dense linear map from the first ``m`` coefficients to cell averages on ``grid``."""
        k = int(round(np.log2(grid.ny)))
        if stage_shape(k) != (grid.nx, grid.ny):
            raise ValueError(f"grid {grid.nx}x{grid.ny} is not an LAS stage")
        full = n_coefficients(k)
        m = full if m is None else m
        if not 4 <= m <= full:
            raise ValueError(f"m={m} outside [4, {full}]")
        eye = np.zeros((m, full))
        eye[np.arange(m), np.arange(m)] = 1.0
        return self.sample(eye, k).T

    def to_arrays(self) -> dict:
        out = {"initial_cov": self.initial_cov}
        for k, st in enumerate(self.stages):
            for i, (offs, s) in enumerate(sorted(st.items())):
                tag = "_".join(f"{a}{b}" for a, b in offs)
                out[f"k{k}_s{i}_w__{tag}"] = s.weights
                out[f"k{k}_s{i}_c__{tag}"] = s.chol
        return out

    @classmethod
    def from_arrays(cls, params, k_max, arrays, unbiased=False, dx=4.0, dy=1.0):
        stages = [dict() for _ in range(k_max)]
        for key, val in arrays.items():
            if key == "initial_cov" or "_w__" not in key:
                continue
            head, tag = key.split("_w__")
            k = int(head.split("_")[0][1:])
            offs = _parse_tag(tag)
            chol = arrays[key.replace("_w__", "_c__")]
            stages[k][offs] = _Stencil(np.asarray(val).reshape(3, -1), np.asarray(chol).reshape(3, 3))
        return cls(params, k_max, np.asarray(arrays["initial_cov"]).reshape(4, 4), stages, unbiased, dx, dy)


def _parse_tag(tag):
    parts = []
    for t in tag.split("_"):
        # each token is two signed digits, e.g. "-10", "01", "-1-1"
        vals, j = [], 0
        while j < len(t):
            if t[j] == "-":
                vals.append(-int(t[j + 1]))
                j += 2
            else:
                vals.append(int(t[j]))
                j += 1
        parts.append(tuple(vals))
    return tuple(parts)


def _stencil(params, offs, s, unbiased, k):
    par = np.array([[a * s, b * s] for a, b in offs])
    ch = np.array([[cx * s / 2, cy * s / 2] for cx, cy in CHILDREN])
    spp = cell_average_cov(params, par, par, s, s)
    scp = cell_average_cov(params, ch, par, s / 2, s)
    scc = cell_average_cov(params, ch, ch, s / 2, s / 2)
    try:
        if unbiased:
            # ordinary kriging: weights constrained to sum to one
            n = len(offs)
            M = np.zeros((n + 1, n + 1))
            M[:n, :n] = spp
            M[:n, n] = M[n, :n] = 1.0
            rhs = np.vstack([scp.T, np.ones((1, 3))])
            A = np.linalg.solve(M, rhs)[:n].T
            cond = scc - A @ scp.T - scp @ A.T + A @ spp @ A.T
        else:
            A = np.linalg.solve(spp, scp.T).T
            cond = scc - A @ scp.T
        chol = np.linalg.cholesky(0.5 * (cond + cond.T))
    except np.linalg.LinAlgError as exc:
        raise LASError(f"conditional covariance not positive definite at iteration {k}, stencil {offs}") from exc
    return _Stencil(A, chol)


def las_precompute(params: MaternParams, k_max: int, unbiased: bool = False, dx=4.0, dy=1.0) -> LASCoefficients:
    """Weights and noise factors for refinements 0..k_max-1 on the 4:1 beam."""
    if k_max < 0:
        raise ValueError("k_max must be nonnegative")
    if not np.isclose(dx, N_INIT_X * dy):
        raise ValueError("LAS starts from four unit cells and needs a 4:1 domain")
    unit = dy
    init = np.array([[i * unit, 0.0] for i in range(N_INIT_X)])
    cov0 = cell_average_cov(params, init, init, unit, unit)
    stages = []
    for k in range(k_max):
        nx, ny = stage_shape(k)
        s = unit / 2**k
        st = {}
        for q in range(ny):
            for p in range(nx):
                offs = _offsets(p, q, nx, ny)
                if offs not in st:
                    st[offs] = _stencil(params, offs, s, unbiased, k)
        stages.append(st)
    return LASCoefficients(params, k_max, cov0, stages, unbiased, dx, dy)


def las_sample(coeffs: LASCoefficients, xi, k_target: int | None = None) -> Field:
    k_target = coeffs.k_max if k_target is None else k_target
    return Field(coeffs.sample(xi, k_target), coeffs.resolution(k_target))


def las_truncated(coeffs: LASCoefficients, xi, m: int, k_target: int | None = None) -> Field:
    """Finest-stage field using only the first ``m`` coefficients; the rest take conditional means."""
    k_target = coeffs.k_max if k_target is None else k_target
    full = n_coefficients(k_target)
    if m < 4:
        raise ValueError("LAS truncation needs at least the 4 initial coefficients")
    if m > full:
        raise ValueError(f"m={m} exceeds {full} coefficients")
    xi = np.asarray(xi, dtype=float)
    z = np.zeros(full)
    z[:m] = xi[:m]
    return las_sample(coeffs, z, k_target)
