"""Experiment orchestration shared by the CLI and the acceptance suite."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from mlmcmc import io
from mlmcmc.config import ExperimentConfig
from mlmcmc.covariance import MaternParams
from mlmcmc.diagnostics import LevelDiagnostics, estimate_iat, level_diagnostics, sampling_error
from mlmcmc.fem import LineLoad, Mesh
from mlmcmc.fields import build_representation, las_stage, level_models
from mlmcmc.grid import RectGrid
from mlmcmc.inverse import GroundTruth, ObservationSet, generate_synthetic_data
from mlmcmc.kl import KLBasis
from mlmcmc.las import LASCoefficients
from mlmcmc.mcmc import LevelSpec, ProposalConfig, mh_run, mlmcmc_run, telescoping_estimate
from mlmcmc.transform import GammaTransformParams
from mlmcmc.wavelet import TorusEmbedding, WaveletBasis

log = logging.getLogger(__name__)


class CacheConflictError(RuntimeError):
    pass


def level_grids(cfg: ExperimentConfig) -> list[RectGrid]:
    h = cfg.hierarchy
    return [RectGrid(h.coarse_nx * 2**l, h.coarse_ny * 2**l, cfg.domain.dx, cfg.domain.dy) for l in range(h.n_levels)]


def data_grid(cfg: ExperimentConfig) -> RectGrid:
    return level_grids(cfg)[-1].refine(cfg.data_refinement)


def matern(cfg) -> MaternParams:
    return MaternParams(cfg.matern.sigma2, cfg.matern.lam, cfg.matern.nu)


def transform(cfg) -> GammaTransformParams:
    t = cfg.transform
    if t.mu is None:
        return GammaTransformParams.from_median(t.median, t.kappa)
    return GammaTransformParams(t.mu, t.kappa)


def solver_kw(cfg) -> dict:
    m = cfg.material
    return {
        "poisson": m.poisson,
        "load": LineLoad(cfg.load.magnitude, cfg.load.x0, cfg.load.x1),
        "density": m.density,
        "gravity": m.gravity,
        "plane": m.plane,
    }


def truncations(cfg, method) -> list[int]:
    return list(cfg.hierarchy.truncations[method][: cfg.hierarchy.n_levels])


def level_specs(cfg, method, scale: float = 1.0) -> list[LevelSpec]:
    """Per-level chain lengths; each level consumes every tau-th state of the one below."""
    h = cfg.hierarchy
    ms = truncations(cfg, method)
    b = h.burn_in_fraction
    specs, prev_steps = [], None
    for l in range(h.n_levels):
        if h.n_samples is not None:
            n = int(h.n_samples[l] * scale)
        elif l == 0:
            n = int(h.n_coarse * scale)
        else:
            n = int(prev_steps // h.tau[l] / (1 + b))
        burn = int(b * n)
        if l > 0 and (n + burn) * h.tau[l] > prev_steps:
            raise ValueError(f"level {l} chain of {n + burn} steps needs more coarse steps than the {prev_steps} available")
        prop = ProposalConfig(h.proposal, h.beta[l])
        specs.append(LevelSpec(ms[l], n, h.tau[l] if l else 1, burn, prop))
        prev_steps = n + burn
    return specs


def truth_field(cfg, grid=None):
    t = cfg.truth
    gt = GroundTruth(t.kind, t.outside, t.inside, tuple(t.region), t.n_coeffs, t.seed)
    return gt.youngs(grid or data_grid(cfg), matern(cfg), transform(cfg))


def observations(cfg, sigma_f: float | None = None) -> tuple[ObservationSet, object]:
    truth = truth_field(cfg)
    sig = cfg.noise.sigma_f if sigma_f is None else sigma_f
    obs = generate_synthetic_data(truth, Mesh.from_grid(data_grid(cfg)), sig, cfg.noise.seed,
                                  Mesh.from_grid(level_grids(cfg)[-1]), **solver_kw(cfg))
    return obs, truth


# ---------------------------------------------------------------- basis cache

def cache_dir(cfg=None, out=None) -> Path:
    env = os.environ.get("MLMCMC_CACHE_DIR")
    if env:
        return Path(env)
    return Path(out or (cfg.output if cfg else "out")) / "cache"


def basis_key(cfg, method, grid, m) -> dict:
    key = {
        "method": method,
        "matern": cfg.matern.model_dump(),
        "domain": cfg.domain.model_dump(),
        "grid": grid.to_dict(),
        "truncation": int(m),
    }
    if method == "wavelet":
        key["wavelet"] = cfg.wavelet.model_dump()
    if method == "las":
        key["las"] = cfg.las.model_dump()
    return key


def key_hash(key: dict) -> str:
    return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]


def _embedding(cfg):
    return TorusEmbedding.for_domain(cfg.domain.dx, cfg.domain.dy, cfg.wavelet.gamma_factor)


def _build(cfg, method, grid, m, strict=False):
    if method == "wavelet":
        from mlmcmc.wavelet import wavelet_precompute

        return wavelet_precompute(matern(cfg), _embedding(cfg), grid, m, cfg.wavelet.fft_resolution, strict)
    return build_representation(method, matern(cfg), grid, m, las_unbiased=cfg.las.unbiased)


def _from_arrays(cfg, method, grid, arrays, meta):
    p = matern(cfg)
    if method == "kl":
        return KLBasis.from_arrays(p, grid, arrays, meta.get("total_variance", 0.0))
    if method == "wavelet":
        return WaveletBasis.from_arrays(p, _embedding(cfg), grid, arrays, meta.get("clamped_mass", 0.0))
    return LASCoefficients.from_arrays(p, las_stage(grid), arrays, cfg.las.unbiased, grid.dx, grid.dy)


def representation(cfg, method, cache: Path | None = None, strict=False, grid=None, m=None):
    """Load the finest-level basis from the cache, computing and storing it on a miss."""
    grid = grid or level_grids(cfg)[-1]
    m = m or truncations(cfg, method)[-1]
    key = basis_key(cfg, method, grid, m)
    if cache is None:
        return _build(cfg, method, grid, m, strict), False
    path = Path(cache) / f"{method}_{key_hash(key)}.bin"
    if path.exists():
        meta = io.read_meta(path)
        if meta.get("key") != key:
            raise CacheConflictError(f"{path} holds a different basis; refusing to overwrite")
        arrays, meta = io.read_bundle(path)
        return _from_arrays(cfg, method, grid, arrays, meta), True
    rep = _build(cfg, method, grid, m, strict)
    meta = {"key": key}
    if method == "kl":
        meta["total_variance"] = rep.total_variance
    if method == "wavelet":
        meta["clamped_mass"] = rep.table.clamped_mass
    io.write_bundle(path, rep.to_arrays(), meta)
    return rep, False


def precompute_timings(cfg, method, strict=False) -> list[float]:
    """Seconds to set up the representation independently at every level."""
    out = []
    for grid, m in zip(level_grids(cfg), truncations(cfg, method)):
        t0 = time.perf_counter()
        rep = _build(cfg, method, grid, m, strict)
        rep.field_matrix(grid, m)
        out.append(time.perf_counter() - t0)
    return out


# ---------------------------------------------------------------- chains

def build_models(cfg, method, obs, rep):
    return level_models(rep, level_grids(cfg), truncations(cfg, method), transform(cfg), obs, solver_kw(cfg),
                        cfg.normalize_likelihood)


def run_chains(cfg, method, obs, rep, replica=0, scale=1.0, field_stats=True):
    models = build_models(cfg, method, obs, rep)
    specs = level_specs(cfg, method, scale)
    return mlmcmc_run(models, specs, seed=cfg.seed, replica=replica, field_stats=field_stats)


def tune_sigma_f(cfg, method, rep=None, target=0.25, pilot_steps=4000, iters=7, bracket=(1e-9, 1e-6)):
    """Bisect log(sigma_F) so the level-0 pCN chain accepts about ``target`` of proposals."""
    rep = rep or representation(cfg, method)[0]
    g0 = level_grids(cfg)[0]
    m0 = truncations(cfg, method)[0]
    lo, hi = np.log(bracket[0]), np.log(bracket[1])
    best = None
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        obs, _ = observations(cfg, float(np.exp(mid)))
        model = level_models(rep, [g0], [m0], transform(cfg), obs, solver_kw(cfg), cfg.normalize_likelihood)[0]
        rec = mh_run(lambda x: model(x)[:2], ProposalConfig(cfg.hierarchy.proposal, cfg.hierarchy.beta[0]),
                     pilot_steps, seed=cfg.seed, x0=np.zeros(m0), level=0, replica=10_000)
        acc = rec.acceptance_rate
        if best is None or abs(acc - target) < abs(best[1] - target):
            best = (float(np.exp(mid)), acc)
        if acc < target:
            lo = mid
        else:
            hi = mid
    return best


def _replica_job(args):
    cfg_json, method, obs_values, sigma_f, replica, cache, scale = args
    cfg = ExperimentConfig.model_validate_json(cfg_json)
    obs, _ = observations(cfg, sigma_f)
    obs.values = np.asarray(obs_values)
    rep, _ = representation(cfg, method, Path(cache) if cache else None)
    return run_chains(cfg, method, obs, rep, replica, scale)


def _merge_stats(records):
    """Pool finest-level streaming moments over replicas (Chan et al. combination)."""
    n_tot, mean, m2 = 0, None, None
    for r in records:
        if r.field_mean is None:
            continue
        n = r.n_steps - r.burn_in
        rm2 = (r.field_std**2) * max(n - 1, 1)
        if mean is None:
            n_tot, mean, m2 = n, r.field_mean.copy(), rm2
            continue
        d = r.field_mean - mean
        tot = n_tot + n
        mean = mean + d * n / tot
        m2 = m2 + rm2 + d * d * n_tot * n / tot
        n_tot = tot
    if mean is None:
        return None, None
    return mean, np.sqrt(m2 / max(n_tot - 1, 1))


def run_experiment(cfg: ExperimentConfig, method: str | None = None, out: Path | None = None,
                   cache: Path | None = None, strict=False, store_coeffs=False, sigma_f=None, scale=1.0):
    """All replicas of one representation; writes chain CSVs, run.json and posterior maps."""
    method = method or cfg.representation
    out = Path(out or cfg.output) / "runs" / method
    out.mkdir(parents=True, exist_ok=True)
    obs, truth = observations(cfg, sigma_f)
    t0 = time.perf_counter()
    rep, hit = representation(cfg, method, cache, strict)
    setup = time.perf_counter() - t0
    jobs = [(cfg.model_dump_json(), method, obs.values, obs.sigma_f, r, str(cache) if cache else None, scale)
            for r in range(cfg.replicas)]
    if cfg.workers > 1 and cfg.replicas > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_replica_job, jobs))
    else:
        results = [run_chains(cfg, method, obs, rep, r, scale) for r in range(cfg.replicas)]
    grids = level_grids(cfg)
    for r, recs in enumerate(results):
        for rec in recs:
            io.write_chain_csv(out / f"chain_L{rec.level}_R{r:02d}.csv", rec)
            if store_coeffs and rec.states is not None and len(rec.states):
                io.write_field(out / f"coeffs_L{rec.level}_R{r:02d}.bin", rec.states,
                               {"level": rec.level, "stride": rec.stride})
    diags = [level_diagnostics([recs[l] for recs in results]) for l in range(len(grids))]
    est = float(np.mean([telescoping_estimate(recs) for recs in results]))
    mean, std = _merge_stats([recs[-1] for recs in results])
    gmeta = {"grid": grids[-1].to_dict(), "method": method}
    if mean is not None:
        io.write_field(out / "post_mean.bin", mean.reshape(grids[-1].shape), gmeta)
        io.write_field(out / "post_std.bin", std.reshape(grids[-1].shape), gmeta)
    specs = level_specs(cfg, method, scale)
    summary = {
        "method": method,
        "config_hash": cfg.content_hash(),
        "sigma_f": obs.sigma_f,
        "replicas": cfg.replicas,
        "estimate": est,
        "epsilon": sampling_error(diags),
        "epsilon_prefactor": sampling_error(diags, prefactor=True),
        "levels": [
            {**d.to_dict(), "nx": g.nx, "ny": g.ny, "m": s.m, "tau": s.tau, "burn_in": s.burn_in,
             "n_steps": s.n_steps, "seconds": float(sum(recs[l].seconds for recs in results))}
            for l, (d, g, s) in enumerate(zip(diags, grids, specs))
        ],
        "setup_seconds": setup,
        "cache_hit": hit,
    }
    (out / "run.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    cfg.save(out / "config.json")
    return summary, results


# ---------------------------------------------------------------- report

def _level_diag_from_csv(run_dir: Path, meta: dict):
    """Rebuild per-level diagnostics from the chain CSVs of one method."""
    levels = meta["levels"]
    out = []
    for l, lv in enumerate(levels):
        files = sorted(run_dir.glob(f"chain_L{l}_R*.csv"))
        ys, iats, rej = [], [], []
        for f in files:
            c = io.read_chain_csv(f)
            q = c["qoi"]
            if l > 0:
                rep = f.name.split("_R")[1]
                coarse = io.read_chain_csv(run_dir / f"chain_L{l - 1}_R{rep}")["qoi"]
                idx = np.arange(1, len(q) + 1) * lv["tau"] - 1
                q = q - coarse[idx]
            y = q[lv["burn_in"]:]
            ys.append(y)
            iats.append(estimate_iat(y))
            rej.append(1 - c["accepted"].mean())
        pooled = np.concatenate(ys)
        out.append(LevelDiagnostics(l, float(np.var(pooled, ddof=1)), max(float(np.mean(iats)), 1.0),
                                    len(pooled), float(np.mean(rej)), lv.get("cost_per_sample", 0.0),
                                    float(pooled.mean())))
    return out


EXIT_NOTHING_TO_REPORT = 3


def report(run_root: Path, out: Path | None = None, figures: bool = True) -> list[Path]:
    """Assemble figure tables from a run directory; returns written paths (empty if nothing)."""
    run_root = Path(run_root)
    out = Path(out or run_root / "report")
    written = []
    runs = sorted(p.parent for p in (run_root / "runs").glob("*/run.json")) if (run_root / "runs").exists() else []
    trunc = run_root / "truncation" / "truncation.csv"
    if not runs and not trunc.exists():
        return []
    out.mkdir(parents=True, exist_ok=True)
    if trunc.exists():
        dst = out / "fig7_truncation.csv"
        dst.write_text(trunc.read_text())
        written.append(dst)
    costs, rates, table2 = [], [], []
    for rd in runs:
        meta = json.loads((rd / "run.json").read_text())
        method = meta["method"]
        diags = _level_diag_from_csv(rd, meta)
        tfile = run_root / "precompute" / f"timings_{method}.json"
        pre = json.loads(tfile.read_text())["seconds"] if tfile.exists() else [float("nan")] * len(diags)
        budget = 0.0
        for l, (d, lv) in enumerate(zip(diags, meta["levels"])):
            costs.append((method, l, float(pre[l]) if l < len(pre) else float("nan"), lv["cost_per_sample"]))
            budget += lv["seconds"]
            table2.append((l, method, d.var_Y, d.iat))
        eps = sampling_error(diags)
        eps_p = sampling_error(diags, prefactor=True)
        for l, (d, lv) in enumerate(zip(diags, meta["levels"])):
            rates.append((method, l, lv["nx"], d.rejection_rate, budget, eps, eps_p))
        for kind in ("mean", "std"):
            src = rd / f"post_{kind}.bin"
            if src.exists():
                arr, info = io.read_field(src)
                written.append(out / f"post_{kind}_{method}.bin")
                io.write_field(written[-1], arr, {k: v for k, v in info.items() if k not in ("sha256", "shape", "dtype")})
    if runs:
        io.write_table(out / "fig10_costs.csv", ("method", "level", "precompute_seconds", "cost_per_sample"), costs)
        io.write_table(out / "fig11_rates_error.csv",
                       ("method", "level", "nx", "rejection_rate", "budget_seconds", "epsilon", "epsilon_prefactor"),
                       rates)
        io.write_table(out / "table2_var_iat.csv", ("level", "method", "var_Y", "iat"), table2)
        written += [out / "fig10_costs.csv", out / "fig11_rates_error.csv", out / "table2_var_iat.csv"]
    if figures:
        from mlmcmc import plotting

        written += plotting.render_report(out)
    return written
