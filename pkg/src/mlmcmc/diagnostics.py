"""Chain diagnostics, Monte Carlo error and the truncation-error study."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from mlmcmc.covariance import MaternParams
from mlmcmc.grid import RectGrid
from mlmcmc.kl import kl_precompute, kl_project
from mlmcmc.wavelet import TorusEmbedding, auto_resolution, periodized_covariance_coeffs, wavelet_synthesize

MIN_IAT_LENGTH = 100


def autocorrelation(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = len(x)
    d = x - x.mean()
    f = np.fft.rfft(d, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    return acf / acf[0]


def estimate_iat(series, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's automatic window."""
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n < MIN_IAT_LENGTH:
        raise ValueError(f"IAT needs at least {MIN_IAT_LENGTH} samples, got {n}")
    if np.ptp(x) == 0:
        # degenerate convention: a frozen chain carries one effective sample
        return float(n)
    rho = autocorrelation(x)
    taus = 2.0 * np.cumsum(rho) - 1.0
    ok = np.arange(n) >= c * taus
    w = int(np.argmax(ok)) if ok.any() else n - 1
    return float(taus[w])


@dataclass
class LevelDiagnostics:
    level: int
    var_Y: float
    iat: float
    n_samples: int
    rejection_rate: float
    cost_per_sample: float = 0.0
    mean_Y: float = 0.0

    def to_dict(self):
        return asdict(self)


def level_diagnostics(chains, level: int | None = None) -> LevelDiagnostics:
    """Pool post-burn-in corrections of one level over replica chains."""
    chains = list(chains)
    if not chains:
        raise ValueError("no chains given")
    ys = [c.post_burn() for c in chains]
    pooled = np.concatenate(ys)
    iat = float(np.mean([estimate_iat(y) for y in ys]))
    steps = sum(c.n_steps for c in chains)
    secs = sum(c.seconds for c in chains)
    return LevelDiagnostics(
        chains[0].level if level is None else level,
        float(np.var(pooled, ddof=1)),
        max(iat, 1.0),
        len(pooled),
        float(np.mean([c.rejection_rate for c in chains])),
        secs / steps if steps else 0.0,
        float(pooled.mean()),
    )


def sampling_error(diags, prefactor: bool = False) -> float:
    """eps with eps^2 = sum_l V(Y_l) IAT_l / N_l, optionally times (L + 1)."""
    diags = list(diags)
    if not diags:
        raise ValueError("no levels given")
    e2 = sum(d.var_Y * d.iat / d.n_samples for d in diags)
    if prefactor:
        e2 *= len(diags)
    return math.sqrt(e2)


def rejection_rate_curve(chains_by_level, resolutions=None):
    """Per-level rejection rates and a log-log fit against the coarser level's resolution."""
    rates = np.array([np.mean([1 - np.mean(c.accepted) for c in level]) for level in chains_by_level])
    if len(rates) < 2:
        raise ValueError("need at least two levels")
    slope = float("nan")
    if resolutions is not None and len(rates) > 2:
        r = np.asarray(resolutions, dtype=float)[:-1]
        y = rates[1:]
        if np.all(y > 0):
            slope = float(np.polyfit(np.log(r), np.log(y), 1)[0])
    return rates, slope


class FieldStatistics:
    """Streaming (Welford) pointwise mean and standard deviation of fields."""

    def __init__(self):
        self.n = 0
        self.mean = None
        self.m2 = None

    def push(self, v):
        v = np.asarray(v, dtype=float).ravel()
        if self.mean is None:
            self.mean = np.zeros_like(v)
            self.m2 = np.zeros_like(v)
        self.n += 1
        d = v - self.mean
        self.mean += d / self.n
        self.m2 += d * (v - self.mean)

    def std(self, ddof: int = 0):
        if self.n == 0:
            raise ValueError("no samples")
        return np.sqrt(self.m2 / max(self.n - ddof, 1))


def posterior_field_maps(fields, ddof: int = 0):
    st = FieldStatistics()
    for f in fields:
        st.push(f)
    if st.n == 0:
        raise ValueError("empty chain: no fields to average")
    return st.mean, st.std(ddof)


def fit_slope(m, err, lo, hi) -> float:
    m = np.asarray(m, dtype=float)
    err = np.asarray(err, dtype=float)
    sel = (m >= lo) & (m <= hi) & (err > 0)
    if sel.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(m[sel]), np.log(err[sel]), 1)[0])


@dataclass
class TruncationStudy:
    m: dict = field(default_factory=dict)  # method -> array of m
    error: dict = field(default_factory=dict)  # method -> array of L2 errors
    slopes: dict = field(default_factory=dict)
    reference_norm: float = 0.0
    notes: list = field(default_factory=list)

    def rows(self):
        for method in self.m:
            for m, e in zip(self.m[method], self.error[method]):
                yield method, int(m), float(e)


def _l2(values, grid):
    return float(np.sqrt(grid.cell_area * np.sum(np.asarray(values) ** 2)))


def las_truncation_error(ref: np.ndarray, grid: RectGrid, m: int) -> float:
    """L2 distance between ``ref`` and its LAS m-term local-average approximation.

    Stage k holds 4^(k+1) cells; extra coefficients refine stage-k parents
    in sampling order (top row first, left to right), 3 per parent.
    """
    if m < 4:
        raise ValueError("need m >= 4")
    v = np.asarray(ref, dtype=float).reshape(grid.shape)
    k = int(math.floor(math.log(m, 4) + 1e-12)) - 1
    nx, ny = 4 * 2**k, 2**k
    f = grid.nx // nx
    if f < 1 or grid.nx % nx:
        raise ValueError(f"reference grid too coarse for m={m}")
    avg = v.reshape(ny, f, nx, f).mean((1, 3))
    approx = np.kron(avg, np.ones((f, f)))
    n_ref = (m - 4 ** (k + 1)) // 3
    if n_ref and f >= 2:
        fc = f // 2
        child = v.reshape(2 * ny, fc, 2 * nx, fc).mean((1, 3))
        fine = np.kron(child, np.ones((fc, fc)))
        for idx in range(min(n_ref, nx * ny)):
            q = ny - 1 - idx // nx
            p = idx % nx
            approx[q * f:(q + 1) * f, p * f:(p + 1) * f] = fine[q * f:(q + 1) * f, p * f:(p + 1) * f]
    return _l2(v - approx, grid)


def truncation_study(matern: MaternParams, n_ref: int = 2000, seed: int = 0,
                     kl_m=None, wavelet_m=None, las_m=None,
                     kl_grid: RectGrid | None = None, las_grid: RectGrid | None = None,
                     windows=None) -> TruncationStudy:
    """L2 truncation errors of one wavelet-drawn reference field for each representation.

    The reference is the continuous field sum_{m<=n_ref} xi_m b_m, evaluated at
    the cell centres of ``kl_grid`` (KL and wavelet errors) and of the finer
    ``las_grid`` (local-average errors).
    """
    kl_grid = kl_grid or RectGrid(128, 32)
    las_grid = las_grid or RectGrid(512, 128)
    kl_m = np.unique(np.round(np.geomspace(16, 1024, 19)).astype(int)) if kl_m is None else np.asarray(kl_m)
    wavelet_m = kl_m if wavelet_m is None else np.asarray(wavelet_m)
    las_m = np.unique(np.round(np.geomspace(16, 4096, 25)).astype(int)) if las_m is None else np.asarray(las_m)
    windows = windows or {"kl": (64, 1024), "wavelet": (64, 1024), "las": (64, 4096)}
    emb = TorusEmbedding.for_domain(kl_grid.dx, kl_grid.dy)
    table = periodized_covariance_coeffs(matern, emb, auto_resolution(n_ref))
    xi = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed))).standard_normal(n_ref)
    ref = wavelet_synthesize(table, xi, kl_grid).values.ravel()
    out = TruncationStudy(reference_norm=_l2(ref, kl_grid))

    errs = []
    for m in wavelet_m:
        if m > n_ref:
            out.notes.append(f"wavelet m={m} exceeds reference size {n_ref}; skipped")
            continue
        tail = np.r_[np.zeros(m), xi[m:]]
        errs.append((m, _l2(wavelet_synthesize(table, tail, kl_grid).values, kl_grid)))
    out.m["wavelet"], out.error["wavelet"] = map(np.array, zip(*errs))

    m_kl = int(min(kl_m.max(), kl_grid.n_cells))
    basis = kl_precompute(matern, kl_grid, m_kl)
    coef = kl_project(basis, ref)
    total = out.reference_norm**2
    resid = np.sqrt(np.clip(total - np.cumsum(coef**2), 0, None))
    sel = kl_m[kl_m <= m_kl]
    out.m["kl"], out.error["kl"] = sel, resid[sel - 1]

    ref_las = wavelet_synthesize(table, xi, las_grid).values.ravel()
    errs = []
    for m in las_m:
        try:
            errs.append((m, las_truncation_error(ref_las, las_grid, int(m))))
        except ValueError as exc:
            out.notes.append(f"las m={m}: {exc}; skipped")
    out.m["las"], out.error["las"] = map(np.array, zip(*errs))

    for method, (lo, hi) in windows.items():
        if method in out.m:
            out.slopes[method] = fit_slope(out.m[method], out.error[method], lo, hi)
    return out
