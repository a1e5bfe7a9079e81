"""Meyer-wavelet expansion of a Matérn field through a periodized covariance.

The covariance is cut off smoothly and periodized on a square torus
``[0, 2*gamma)^2`` containing the domain.  Each torus wavelet is filtered by
the square root of the periodized covariance in Fourier space,

    b_m(x) = P^-2 * sum_n sqrt(c_n(C_T)) c_n(w_m) exp(2 pi i n.x / P),

so that sum_m b_m(x) b_m(y) = C_T(x - y).  Meyer wavelets are band-limited,
so every sum over n is finite.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from mlmcmc.covariance import MaternParams, matern_eval
from mlmcmc.grid import Field, RectGrid

log = logging.getLogger(__name__)

ORIENTATIONS = ("horizontal", "vertical", "diagonal")
_FACTORS = {"horizontal": ("phi", "psi"), "vertical": ("psi", "phi"), "diagonal": ("psi", "psi")}
CLAMP_TOL = 1e-4


class WaveletError(RuntimeError):
    pass


@dataclass(frozen=True)
class TorusEmbedding:
    gamma: float
    delta: float

    def __post_init__(self):
        if not self.kappa_cut > self.delta:
            raise ValueError(f"cutoff band is empty: 2*gamma - delta = {self.kappa_cut} <= delta = {self.delta}")

    @property
    def kappa_cut(self) -> float:
        return 2 * self.gamma - self.delta

    @property
    def period(self) -> float:
        return 2 * self.gamma

    @classmethod
    def for_domain(cls, dx: float, dy: float, factor: float = 1.25) -> "TorusEmbedding":
        delta = math.hypot(dx, dy)
        return cls(factor * delta, delta)

    def to_dict(self):
        return {"gamma": self.gamma, "delta": self.delta}


def _zeta(x):
    x = np.asarray(x, dtype=float)
    pos = x > 0
    return np.where(pos, np.exp(-1.0 / np.where(pos, x, 1.0)), 0.0)


def cutoff(emb: TorusEmbedding, r):
    """Smooth radial cutoff: 1 for r <= delta, 0 for r >= 2*gamma - delta."""
    band = emb.kappa_cut - emb.delta
    a = _zeta((emb.kappa_cut - r) / band)
    b = _zeta((r - emb.delta) / band)
    return a / (a + b)


def _nu(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


def meyer_phi_hat(w):
    a = np.abs(w)
    out = np.where(a <= 2 * np.pi / 3, 1.0, 0.0)
    mid = (a > 2 * np.pi / 3) & (a < 4 * np.pi / 3)
    return np.where(mid, np.cos(np.pi / 2 * _nu(3 * a / (2 * np.pi) - 1)), out)


def meyer_psi_hat(w):
    a = np.abs(w)
    lo = (a > 2 * np.pi / 3) & (a <= 4 * np.pi / 3)
    hi = (a > 4 * np.pi / 3) & (a < 8 * np.pi / 3)
    out = np.where(lo, np.sin(np.pi / 2 * _nu(3 * a / (2 * np.pi) - 1)), 0.0)
    out = np.where(hi, np.cos(np.pi / 2 * _nu(3 * a / (4 * np.pi) - 1)), out)
    return out * np.exp(-0.5j * w)


def band_limit(j: int) -> int:
    """Largest |n| with a nonzero Fourier coefficient at scale ``j``."""
    return (2 ** (j + 2) - 1) // 3


def scale_of(m: int) -> int:
    """Scale of the last wavelet needed for ``m`` basis functions (m >= 2); -1 for m == 1."""
    j, count = -1, 1
    while count < m:
        j += 1
        count += 3 * 4**j
    return j


def wavelet_labels(m: int) -> list[tuple[int, tuple[int, int], str]]:
    """(scale, (k1, k2), orientation) per basis index, coarse to fine."""
    labels = [(-1, (0, 0), "scaling")]
    j = 0
    while len(labels) < m:
        for k2 in range(2**j):
            for k1 in range(2**j):
                for o in ORIENTATIONS:
                    labels.append((j, (k1, k2), o))
        j += 1
    return labels[:m]


def periodic_coeffs(kind: str, j: int, n: np.ndarray, period: float) -> np.ndarray:
    """Fourier coefficients (w.r.t. exp(2 pi i n x / P)) of the k=0 periodic factor at scale j."""
    w = 2 * np.pi * n / 2**j
    hat = meyer_phi_hat(w) if kind == "phi" else meyer_psi_hat(w)
    return 2 ** (-j / 2) * np.sqrt(period) * hat


@dataclass
class CovarianceTable:
    coeffs: np.ndarray  # c_n indexed by n mod N, shape (N, N), clamped to >= 0
    period: float
    clamped_mass: float

    @property
    def resolution(self) -> int:
        return self.coeffs.shape[0]

    def sqrt_block(self, nb: int) -> np.ndarray:
        n = np.arange(-nb, nb + 1) % self.resolution
        return np.sqrt(self.coeffs[np.ix_(n, n)])

    def inverse(self) -> np.ndarray:
        """Periodized covariance on the torus lattice, indexed by lattice offset."""
        N = self.resolution
        return np.real(np.fft.ifft2(self.coeffs)) * N * N / self.period**2


def auto_resolution(m_max: int, floor: int = 256) -> int:
    nb = band_limit(max(scale_of(m_max), 0))
    n = floor
    while n <= 2 * nb + 1:
        n *= 2
    return n


def periodized_covariance_coeffs(
    params: MaternParams,
    emb: TorusEmbedding,
    fft_resolution: int = 256,
    kernel=None,
    use_cutoff: bool = True,
    strict: bool = False,
) -> CovarianceTable:
    """Fourier coefficients of the cut-off, periodized covariance on the torus."""
    N = int(fft_resolution)
    if N < 2 or N & (N - 1):
        raise ValueError(f"fft_resolution must be a power of two, got {N}")
    P = emb.period
    kernel = kernel or (lambda r: matern_eval(params, r))
    z = np.arange(N) * P / N
    z = np.where(z >= P / 2, z - P, z)
    Z1, Z2 = np.meshgrid(z, z, indexing="ij")
    S = np.zeros((N, N))
    shifts = (-1, 0, 1) if use_cutoff else (0,)
    for a in shifts:
        for b in shifts:
            r = np.hypot(Z1 + a * P, Z2 + b * P)
            S += kernel(r) * (cutoff(emb, r) if use_cutoff else 1.0)
    c = np.real(np.fft.fft2(S)) * (P / N) ** 2
    neg = c < 0
    mass = float(-c[neg].sum())
    if mass > CLAMP_TOL * c[0, 0]:
        msg = f"clamped negative covariance mass {mass:.3e} exceeds {CLAMP_TOL:g}*c_0"
        if strict:
            raise WaveletError(msg)
        log.warning(msg)
    c[neg] = 0.0
    return CovarianceTable(c, P, mass)


def _scale_block(table, j, k2_rows, xs, ys, kinds=None):
    """Basis values for scale j, translation rows k2_rows; shape (len(k2_rows), 2^j, 3, ny, nx)."""
    P = table.period
    nb = band_limit(j)
    if table.resolution <= 2 * nb + 1:
        raise WaveletError(f"fft_resolution {table.resolution} cannot resolve scale {j} (band {nb})")
    n = np.arange(-nb, nb + 1)
    sq = table.sqrt_block(nb)  # [n1, n2]
    K = 2**j
    shift = np.exp(-2j * np.pi * np.outer(np.arange(K), n) / K)  # [k, n]
    ex = np.exp(2j * np.pi * np.outer(xs, n) / P)  # [x, n]
    ey = np.exp(2j * np.pi * np.outer(ys, n) / P)
    fac = {kind: periodic_coeffs(kind, j, n, P) for kind in ("phi", "psi")}
    rows = np.asarray(k2_rows)
    out = np.empty((len(rows), K, 3, len(ys), len(xs)))
    for o, name in enumerate(ORIENTATIONS):
        fx, fy = _FACTORS[name]
        ax = fac[fx] * shift[:, None, :] * ex[None, :, :]  # [k1, x, n1]
        by = fac[fy] * shift[rows][:, None, :] * ey[None, :, :]  # [k2, y, n2]
        t = ax @ sq  # [k1, x, n2]
        g = np.real(np.einsum("kxb,lyb->lkyx", t, by)) / P**2
        out[:, :, o] = g
    return out


def _basis_columns(table: CovarianceTable, grid: RectGrid, m: int) -> np.ndarray:
    xs, ys = grid.x_centers(), grid.y_centers()
    cols = np.empty((grid.n_cells, m))
    cols[:, 0] = np.sqrt(table.coeffs[0, 0]) / table.period
    pos, j = 1, 0
    while pos < m:
        K = 2**j
        per_row = 3 * K
        rows_needed = min(K, -(-(m - pos) // per_row))
        chunk = max(1, int(2e7 // (per_row * grid.n_cells)))
        for r0 in range(0, rows_needed, chunk):
            rows = range(r0, min(rows_needed, r0 + chunk))
            blk = _scale_block(table, j, rows, xs, ys)
            blk = blk.reshape(-1, grid.n_cells)
            take = min(len(blk), m - pos)
            cols[:, pos : pos + take] = blk[:take].T
            pos += take
        j += 1
    return cols


@dataclass
class WaveletBasis:
    params: MaternParams
    embedding: TorusEmbedding
    grid: RectGrid
    table: CovarianceTable
    basis_fields: np.ndarray  # (n_cells, m_max)

    @property
    def m_max(self) -> int:
        return self.basis_fields.shape[1]

    @property
    def ordering(self):
        return wavelet_labels(self.m_max)

    def evaluate(self, grid: RectGrid, m: int | None = None) -> np.ndarray:
        m = self.m_max if m is None else m
        if grid == self.grid:
            return self.basis_fields[:, :m].copy()
        return _basis_columns(self.table, grid, m)

    def field_matrix(self, grid: RectGrid, m: int) -> np.ndarray:
        if m > self.m_max:
            raise ValueError(f"truncation {m} exceeds basis size {self.m_max}")
        return self.evaluate(grid, m)

    def to_arrays(self) -> dict:
        return {"basis_fields": self.basis_fields, "cov_coeffs": self.table.coeffs}

    @classmethod
    def from_arrays(cls, params, embedding, grid, arrays, clamped_mass=0.0):
        c = np.asarray(arrays["cov_coeffs"])
        n = int(round(math.sqrt(c.size)))
        table = CovarianceTable(c.reshape(n, n), embedding.period, clamped_mass)
        return cls(params, embedding, grid, table, np.asarray(arrays["basis_fields"]).reshape(grid.n_cells, -1))


def wavelet_precompute(
    params: MaternParams,
    embedding: TorusEmbedding | None,
    grid: RectGrid,
    m_max: int,
    fft_resolution: int | str = "auto",
    strict: bool = False,
) -> WaveletBasis:
    if m_max < 1:
        raise ValueError("m_max must be positive")
    embedding = embedding or TorusEmbedding.for_domain(grid.dx, grid.dy)
    if max(grid.dx, grid.dy) > embedding.period:
        raise ValueError("torus does not contain the domain")
    if fft_resolution == "auto":
        fft_resolution = auto_resolution(m_max)
    table = periodized_covariance_coeffs(params, embedding, int(fft_resolution), strict=strict)
    return WaveletBasis(params, embedding, grid, table, _basis_columns(table, grid, m_max))


def wavelet_sample(basis: WaveletBasis, xi, m: int | None = None) -> Field:
    xi = np.asarray(xi, dtype=float)
    m = basis.m_max if m is None else m
    if m > basis.m_max:
        raise ValueError(f"truncation {m} exceeds basis size {basis.m_max}")
    if xi.shape[-1] < m:
        raise ValueError(f"need at least {m} coefficients, got {xi.shape[-1]}")
    return Field(basis.basis_fields[:, :m] @ xi[:m], basis.grid)


def wavelet_synthesize(table: CovarianceTable, xi, grid: RectGrid) -> Field:
    """Evaluate sum_m xi_m b_m on ``grid`` without forming the basis.

    Translation coefficients at each scale and orientation are gathered by a
    2D DFT, so memory stays proportional to the grid size.
    """
    xi = np.asarray(xi, dtype=float)
    m = len(xi)
    P = table.period
    J = max(scale_of(m), 0)
    nb = band_limit(J)
    if table.resolution <= 2 * nb + 1:
        raise WaveletError(f"fft_resolution {table.resolution} cannot resolve scale {J}")
    n = np.arange(-nb, nb + 1)
    spec = np.zeros((len(n), len(n)), dtype=complex)  # [n1, n2]
    pos, j = 1, 0
    while pos < m:
        K = 2**j
        block = np.zeros(3 * K * K)
        take = min(len(block), m - pos)
        block[:take] = xi[pos : pos + take]
        block = block.reshape(K, K, 3)  # [k2, k1, o]
        for o, name in enumerate(ORIENTATIONS):
            fx, fy = _FACTORS[name]
            # sum over k of xi_k exp(-2 pi i n.k / K), periodic in n with period K
            d = np.fft.fft2(block[:, :, o].T)  # [n1 mod K, n2 mod K]
            dn = d[np.ix_(n % K, n % K)]
            spec += dn * np.outer(periodic_coeffs(fx, j, n, P), periodic_coeffs(fy, j, n, P))
        pos += take
        j += 1
    spec *= table.sqrt_block(nb)
    ex = np.exp(2j * np.pi * np.outer(grid.x_centers(), n) / P)
    ey = np.exp(2j * np.pi * np.outer(grid.y_centers(), n) / P)
    vals = np.real(ey @ spec.T @ ex.T) / P**2
    vals += xi[0] * np.sqrt(table.coeffs[0, 0]) / P
    return Field(vals.ravel(), grid)
