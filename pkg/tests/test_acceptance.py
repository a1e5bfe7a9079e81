"""Acceptance suite: one test per criterion, results summarised at session end.

Run alone with ``pytest tests/test_acceptance.py -v``; the full suite takes
about an hour on one core, dominated by the multilevel desk runs.
"""

import time

import numpy as np
import pytest
from scipy import stats

from mlmcmc import experiment as ex
from mlmcmc.config import ExperimentConfig
from mlmcmc.covariance import MaternParams, matern_eval
from mlmcmc.diagnostics import (
    LevelDiagnostics,
    estimate_iat,
    sampling_error,
    truncation_study,
)
from mlmcmc.fem import ForwardSolver, LineLoad, Mesh, assemble_sparse, load_vector, solve_dirichlet
from mlmcmc.grid import Field, RectGrid
from mlmcmc.kl import kl_precompute
from mlmcmc.las import cell_average_cov, las_precompute, n_coefficients
from mlmcmc.mcmc import LevelSpec, ProposalConfig, mh_run, mlmcmc_run, telescoping_estimate
from mlmcmc.qoi import compute_qoi
from mlmcmc.transform import GammaTransformParams, gaussian_to_gamma
from mlmcmc.wavelet import wavelet_precompute

pytestmark = pytest.mark.slow

METHODS = ("kl", "wavelet", "las")
MATERN = MaternParams(1.0, 0.5, 1.5)


def mean_se(x):
    return np.std(x) * np.sqrt(estimate_iat(x) / len(x))


# ---------------------------------------------------------------- 1


def test_criterion_1_truncation_rates(criterion):
    t0 = time.perf_counter()
    st = truncation_study(MATERN, n_ref=2000, seed=0)
    secs = time.perf_counter() - t0
    target = {"kl": (-0.75, 0.15), "wavelet": (-0.75, 0.15), "las": (-0.5, 0.1)}
    ok = True
    for method, (mid, tol) in target.items():
        s = st.slopes[method]
        good = abs(s - mid) <= tol
        ok &= criterion(1, method, good, f"slope {s:.3f} (target {mid} +- {tol})")
    ok &= criterion(1, "runtime", secs < 900, f"{secs:.0f}s")
    assert ok


# ---------------------------------------------------------------- 2

# fixed point pairs (x, y) in D
PAIRS = [((2.0, 0.5), (2.0, 0.5)), ((0.05, 0.05), (0.05, 0.05)), ((1.0, 0.3), (1.1, 0.3)),
         ((2.5, 0.5), (2.5, 0.75)), ((0.6, 0.6), (1.0, 0.9)), ((3.0, 0.2), (3.5, 0.2)),
         ((1.5, 0.1), (2.5, 0.9)), ((3.95, 0.95), (3.7, 0.7)), ((0.3, 0.5), (1.3, 0.5)),
         ((2.2, 0.4), (2.4, 0.6))]
FINEST = RectGrid(128, 32)
N_FIELD = 10_000


def _cell(grid, x, y):
    return int(y // grid.h) * grid.nx + int(x // grid.h)


def _field_matrix(method):
    cfg = ExperimentConfig()
    m = cfg.hierarchy.truncations[method][-1]
    if method == "kl":
        return kl_precompute(MATERN, FINEST, m).field_matrix(FINEST, m)
    if method == "wavelet":
        return wavelet_precompute(MATERN, None, FINEST, m).field_matrix(FINEST, m)
    return las_precompute(MATERN, 5).field_matrix(FINEST, n_coefficients(5))


@pytest.mark.parametrize("method", METHODS)
def test_criterion_2_field_law(method, criterion):
    B = _field_matrix(method)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(2024)))
    cells = sorted({c for a, b in PAIRS for c in (_cell(FINEST, *a), _cell(FINEST, *b))})
    pos = {c: i for i, c in enumerate(cells)}
    G = np.empty((N_FIELD, len(cells)))
    for s in range(0, N_FIELD, 1000):
        xi = rng.standard_normal((1000, B.shape[1]))
        G[s:s + 1000] = xi @ B[cells].T
    X = FINEST.cell_centers()
    worst, n_bad = 0.0, 0
    for a, b in PAIRS:
        i, j = _cell(FINEST, *a), _cell(FINEST, *b)
        u, v = G[:, pos[i]], G[:, pos[j]]
        prod = (u - u.mean()) * (v - v.mean())
        est = prod.mean() * N_FIELD / (N_FIELD - 1)
        se = prod.std(ddof=1) / np.sqrt(N_FIELD)
        if method == "las":
            target = cell_average_cov(MATERN, X[[i]] - FINEST.h / 2, X[[j]] - FINEST.h / 2, FINEST.h, FINEST.h)[0, 0]
        else:
            target = float(matern_eval(MATERN, np.linalg.norm(X[i] - X[j])))
        z = abs(est - target) / se
        worst = max(worst, z)
        n_bad += z > 3
    ok_cov = criterion(2, f"{method} covariance", n_bad == 0, f"{n_bad}/10 pairs beyond 3 SE, worst {worst:.1f} SE")
    tp = GammaTransformParams.from_median(26.1e9, 10.0)
    E = gaussian_to_gamma(tp, G[:, pos[_cell(FINEST, 2.0, 0.5)]])
    p = stats.kstest(E, stats.gamma(a=tp.kappa, scale=tp.mu).cdf).pvalue
    ok_ks = criterion(2, f"{method} KS", p > 0.01, f"p={p:.3f}")
    assert ok_cov and ok_ks


# ---------------------------------------------------------------- 3


def test_criterion_3_las_conservation(criterion):
    lc = las_precompute(MATERN, 5)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(3)))
    xi = rng.standard_normal((100, n_coefficients(5)))
    worst = 0.0
    for k in range(5):
        coarse = lc.sample(xi[:, :n_coefficients(k)], k)
        fine = lc.sample(xi[:, :n_coefficients(k + 1)], k + 1)
        nx, ny = 4 * 2**k, 2**k
        avg = fine.reshape(100, ny, 2, nx, 2).mean((2, 4)).reshape(100, -1)
        worst = max(worst, float(np.max(np.abs(avg - coarse) / np.maximum(np.abs(coarse).max(), 1.0))))
    eps = np.finfo(float).eps
    ok = criterion(3, "parent averages", worst <= 16 * eps, f"max relative deviation {worst:.1e} ({worst / eps:.1f} eps)")
    assert ok


# ---------------------------------------------------------------- 4


def test_criterion_4_fe(criterion):
    # affine patch test on a uniform mesh
    mesh = Mesh(16, 4)
    K = assemble_sparse(mesh, np.full(64, 26.1e9), 0.25)
    Xn = mesh.node_coords()
    exact = Xn @ np.array([[1e-4, -3e-5], [2e-5, 5e-5]]).T + np.array([1e-5, 2e-5])
    bn = mesh.boundary_nodes()
    fixed = np.stack([2 * bn, 2 * bn + 1], -1).ravel()
    u = solve_dirichlet(K, np.zeros(mesh.n_dofs), fixed, exact.ravel()[fixed])
    rel = np.abs(u - exact.ravel()).max() / np.abs(exact).max()
    ok = criterion(4, "patch", rel <= 1e-10, f"rel err {rel:.1e}")

    load = LineLoad()
    f = load_vector(Mesh(64, 16), load, 2500.0, True)
    total = -(load.total + 2500.0 * 9.81 * 4.0)
    rel = abs(f[1::2].sum() - total) / abs(total)
    ok &= criterion(4, "load total", rel <= 4 * np.finfo(float).eps * 64, f"rel err {rel:.1e}")

    d = []
    for n in (16, 32, 64, 128):
        m = Mesh(n, n // 4)
        uu = ForwardSolver(m).solve(np.full(n * n // 4, 26.1e9))
        d.append(uu[m.node(n // 2, m.ny // 2), 1])
    diffs = np.abs(np.diff(d))
    slopes = np.log2(diffs[:-1] / diffs[1:])
    ok &= criterion(4, "convergence", np.all(slopes >= 1.7), f"slopes {np.round(slopes, 3).tolist()}")

    m = Mesh(64, 16)
    uu = ForwardSolver(m).solve(np.full(64 * 16, 26.1e9))
    uy = uu[:, 1].reshape(m.nx + 1, m.ny + 1)
    ux = uu[:, 0].reshape(m.nx + 1, m.ny + 1)
    asym = max(np.abs(uy - uy[::-1]).max(), np.abs(ux + ux[::-1]).max()) / np.abs(uu).max()
    ok &= criterion(4, "symmetry", asym <= 1e-10, f"rel asym {asym:.1e}")
    assert ok


# ---------------------------------------------------------------- 5


def test_criterion_5_mcmc(criterion):
    d, s2 = 1.3, 0.4
    rec = mh_run(lambda x: (-(x[0] - d) ** 2 / (2 * s2), float(x[0])), ProposalConfig("pcn", 0.5), 100_000,
                 seed=5, dim=1)
    q = rec.qoi
    z = abs(q.mean() - d / (1 + s2)) / mean_se(q)
    ok = criterion(5, "conjugate", z < 3, f"{z:.2f} SE")

    rec = mh_run(lambda x: (0.0, float(x[0])), ProposalConfig("pcn", 0.3), 100_000, seed=6, dim=1)
    q = rec.qoi
    z1 = abs(q.mean()) / mean_se(q)
    z2 = abs(np.mean(q**2) - 1) / mean_se(q**2)
    ok &= criterion(5, "prior moments", z1 < 3 and z2 < 3, f"mean {z1:.2f} SE, second moment {z2:.2f} SE")
    ok &= criterion(5, "flat acceptance", rec.acceptance_rate == 1.0, f"{rec.acceptance_rate}")

    def models():
        return [lambda x: (-(x[0] - 0.8) ** 2, float(x[0]), x),
                lambda x: (-(x[0] - 1) ** 2 - x[1] ** 2, float(x.sum()), x)]

    specs = [LevelSpec(1, 5000, 1, 500), LevelSpec(2, 900, 5, 90)]
    a, b = mlmcmc_run(models(), specs, seed=9), mlmcmc_run(models(), specs, seed=9)
    same = all(np.array_equal(x.qoi, y.qoi) and np.array_equal(x.accepted, y.accepted) for x, y in zip(a, b))
    ok &= criterion(5, "reproducible", same)
    assert ok


# ---------------------------------------------------------------- 6

DESK_SEEDS = (0, 1, 2, 3, 4)
DESK_SCALE = 2.6  # one run per seed; shorter budgets are exact prefixes
SWEEP = np.geomspace(0.26, 2.6, 6)  # one decade; the shortest keeps >= 100 finest-level samples


def desk_config():
    return ExperimentConfig.model_validate({"hierarchy": {"n_levels": 3, "n_coarse": 200_000}})


@pytest.fixture(scope="module")
def desk_runs():
    cfg = desk_config()
    out = {}
    for method in METHODS:
        rep, _ = ex.representation(cfg, method)
        sigma, acc = ex.tune_sigma_f(cfg, method, rep)
        obs, _ = ex.observations(cfg, sigma)
        runs = [ex.run_chains(cfg.model_copy(update={"seed": s}), method, obs, rep, scale=DESK_SCALE,
                              field_stats=False) for s in DESK_SEEDS]
        out[method] = {"sigma": sigma, "acc0": acc, "runs": runs}
    return out


def prefix_diagnostics(cfg, method, runs, scale):
    """Per-level pooled diagnostics of the runs truncated to the chain lengths at ``scale``."""
    specs = ex.level_specs(cfg, method, scale)
    diags, cost = [], 0.0
    for l, spec in enumerate(specs):
        recs = [r[l] for r in runs]
        ys = [r.corrections[spec.burn_in:spec.n_steps] for r in recs]
        pooled = np.concatenate(ys)
        rej = float(np.mean([1 - r.accepted[:spec.n_steps].mean() for r in recs]))
        iat = max(float(np.mean([estimate_iat(y) for y in ys])), 1.0)
        diags.append(LevelDiagnostics(l, float(np.var(pooled, ddof=1)), iat, len(pooled), rej))
        cost += sum(r.seconds / r.n_steps * spec.n_steps for r in recs)
    return diags, cost


def test_criterion_6a_variance_reduction(desk_runs, criterion):
    cfg = desk_config()
    ok = True
    for method in METHODS:
        runs = desk_runs[method]["runs"]
        d = prefix_diagnostics(cfg, method, runs, 1.0)[0]
        per_seed = [prefix_diagnostics(cfg, method, [r], 1.0)[0] for r in runs]
        wins = sum(s[2].var_Y * s[2].iat < s[1].var_Y * s[1].iat for s in per_seed)
        vi = [x.var_Y * x.iat for x in d]
        good = vi[2] < vi[1]
        ok &= criterion(6, f"a {method}", good,
                        f"V*IAT l1={vi[1]:.2e} l2={vi[2]:.2e} (pooled over 5 seeds; {wins}/5 seeds individually)")
    assert ok


def test_criterion_6b_rejection_rates(desk_runs, criterion):
    cfg = desk_config()
    ok = True
    for method in METHODS:
        d = prefix_diagnostics(cfg, method, desk_runs[method]["runs"], 1.0)[0]
        rates = [x.rejection_rate for x in d]
        coupled = all(b <= a for a, b in zip(rates[1:], rates[2:]))
        literal = all(b <= a for a, b in zip(rates, rates[1:]))
        ok &= criterion(6, f"b {method}", coupled,
                        f"rejection {np.round(rates, 3).tolist()} (sigma_F={desk_runs[method]['sigma']:.2e}; "
                        f"levels 0..L {'nonincreasing' if literal else 'not nonincreasing'})")
    assert ok


def test_criterion_6c_error_vs_budget(desk_runs, criterion):
    cfg = desk_config()
    ok = True
    total = 0.0
    for method in METHODS:
        runs = desk_runs[method]["runs"]
        pts = [prefix_diagnostics(cfg, method, runs, s) for s in SWEEP]
        eps = np.array([sampling_error(d) for d, _ in pts])
        cost = np.array([c for _, c in pts])
        slope = float(np.polyfit(np.log(cost), np.log(eps), 1)[0])
        total += sum(sum(r.seconds for r in run) for run in runs)
        ok &= criterion(6, f"c {method}", abs(slope + 0.5) <= 0.1, f"eps-budget slope {slope:.3f}")
    ok &= criterion(6, "runtime", total < 7200, f"chains {total:.0f}s")
    assert ok


# ---------------------------------------------------------------- 7


def test_criterion_7_cross_representation(criterion):
    cfg = ExperimentConfig.model_validate({
        "hierarchy": {"n_levels": 2, "n_coarse": 100_000, "tau": [1, 10], "beta": [0.2, 0.2]},
        "noise": {"sigma_f": 1e-7},
    })
    est = {}
    replicas = range(4)  # pooled, so variance and IAT estimates of the slow fine chains are usable
    for method in METHODS:
        rep, _ = ex.representation(cfg, method)
        obs, _ = ex.observations(cfg)
        runs = [ex.run_chains(cfg, method, obs, rep, replica=r, field_stats=False) for r in replicas]
        diags = prefix_diagnostics(cfg, method, runs, 1.0)[0]
        est[method] = (float(np.mean([telescoping_estimate(r) for r in runs])), sampling_error(diags))
    ok = True
    for i, a in enumerate(METHODS):
        for b in METHODS[i + 1:]:
            gap = abs(est[a][0] - est[b][0])
            tol = 3 * np.hypot(est[a][1], est[b][1])
            ok &= criterion(7, f"{a}-{b}", gap <= tol, f"|dQ|={gap:.3e} vs 3eps={tol:.3e}")
    assert ok


# ---------------------------------------------------------------- 8


def test_criterion_8_qoi_oracles(criterion):
    g = RectGrid(64, 16)
    E0 = 26.1e9
    q = compute_qoi(Field(np.full(g.shape, E0), g))
    rel = abs(q - E0 * g.dy**3 / 12) / (E0 / 12)
    ok = criterion(8, "uniform", rel <= 4 * np.finfo(float).eps * g.n_cells, f"rel err {rel:.1e}")
    E1, E2 = 12e9, 47e9
    v = np.where(g.y_centers()[:, None] < 0.5, E1, E2) * np.ones(g.shape)
    y0 = (E1 * 0.25 + E2 * 0.75) / (E1 + E2)
    cube = lambda a, b: ((b - y0) ** 3 - (a - y0) ** 3) / 3
    exact = E1 * cube(0, 0.5) + E2 * cube(0.5, 1)
    rel = abs(compute_qoi(v, g) - exact) / exact
    ok &= criterion(8, "two-layer", rel <= 1e-10, f"rel err {rel:.1e}")
    assert ok


# ---------------------------------------------------------------- 9


def test_criterion_9_diagnostics(criterion):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(9)))
    iid = estimate_iat(rng.standard_normal(100_000))
    ok = criterion(9, "iid", 0.9 <= iid <= 1.2, f"IAT {iid:.3f}")
    e = rng.standard_normal(200_000)
    x = np.empty_like(e)
    x[0] = e[0] / np.sqrt(1 - 0.81)
    for t in range(1, len(e)):
        x[t] = 0.9 * x[t - 1] + e[t]
    ar = estimate_iat(x)
    ok &= criterion(9, "AR(1)", abs(ar / 19 - 1) <= 0.15, f"IAT {ar:.2f}")
    d = [LevelDiagnostics(0, 2.0, 4.0, 1000, 0.0), LevelDiagnostics(1, 0.5, 8.0, 200, 0.0),
         LevelDiagnostics(2, 0.125, 2.0, 50, 0.0)]
    exact = np.sqrt(2 * 4 / 1000 + 0.5 * 8 / 200 + 0.125 * 2 / 50)
    ok &= criterion(9, "error formula", sampling_error(d) == exact, f"{sampling_error(d)!r} vs {exact!r}")
    assert ok


# ---------------------------------------------------------------- 10


def test_criterion_10_precompute_cost(criterion):
    cfg = ExperimentConfig()
    # best of three repeats per level, so scheduler noise cannot reorder millisecond timings
    t = {m: np.min([ex.precompute_timings(cfg, m) for _ in range(3)], axis=0) for m in METHODS}
    ok = True
    for m in ("kl", "wavelet"):
        mono = bool(np.all(np.diff(t[m]) >= 0))
        ok &= criterion(10, f"{m} monotone", mono, f"{np.round(t[m], 4).tolist()} s")
    r_kl, r_las = t["kl"][-1] / t["kl"][0], t["las"][-1] / t["las"][0]
    ok &= criterion(10, "ratio", r_kl > r_las, f"KL {r_kl:.0f}x vs LAS {r_las:.1f}x")
    assert ok
