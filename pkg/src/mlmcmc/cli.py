"""Command-line entry point: ``mlmcmc <command> [--config FILE] ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from mlmcmc import experiment as ex
from mlmcmc import io
from mlmcmc.config import ExperimentConfig

log = logging.getLogger("mlmcmc")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "out", None):
        updates["output"] = str(args.out)
    if getattr(args, "store_coeffs", False):
        updates["store_coeffs"] = True
    if updates:
        cfg = cfg.model_copy(update=updates)
    return cfg


def _methods(cfg, args):
    return [args.method] if getattr(args, "method", None) else [cfg.representation]


def cmd_precompute(cfg, args) -> int:
    cache = ex.cache_dir(cfg)
    out = Path(cfg.output) / "precompute"
    out.mkdir(parents=True, exist_ok=True)
    for method in _methods(cfg, args):
        rep, hit = ex.representation(cfg, method, cache, args.strict)
        print(f"{method}: {'cache hit' if hit else 'computed'} ({cache})")
        secs = ex.precompute_timings(cfg, method, args.strict)
        (out / f"timings_{method}.json").write_text(json.dumps({"method": method, "seconds": secs}, indent=2))
        print("level  seconds")
        for l, s in enumerate(secs):
            print(f"{l:5d}  {s:.4f}")
    return EXIT_OK


def cmd_synth_data(cfg, args) -> int:
    obs, truth = ex.observations(cfg)
    out = Path(cfg.output) / "data"
    g = ex.data_grid(cfg)
    meta = {"sigma_f": obs.sigma_f, "seed": obs.seed, "data_mesh": g.to_dict(), "truth": cfg.truth.model_dump()}
    io.write_field(out / "observations.bin", obs.values, meta)
    io.write_field(out / "truth.bin", truth.values, {"grid": g.to_dict(), "kind": cfg.truth.kind})
    print(f"wrote {obs.values.size} observations on {g.nx}x{g.ny} mesh to {out}")
    return EXIT_OK


def cmd_run(cfg, args) -> int:
    sigma = None
    for method in _methods(cfg, args):
        if args.tune_sigma:
            sigma, acc = ex.tune_sigma_f(cfg, method)
            print(f"{method}: tuned sigma_f={sigma:.3e} (level-0 acceptance {acc:.3f})")
        summary, _ = ex.run_experiment(cfg, method, Path(cfg.output), ex.cache_dir(cfg), args.strict,
                                       cfg.store_coeffs, sigma)
        print(f"{method}: estimate={summary['estimate']:.6e}  eps={summary['epsilon']:.3e}")
        for lv in summary["levels"]:
            print(f"  level {lv['level']}: rejection={lv['rejection_rate']:.3f} var_Y={lv['var_Y']:.3e} "
                  f"iat={lv['iat']:.2f} N={lv['n_samples']}")
    return EXIT_OK


def cmd_truncation_study(cfg, args) -> int:
    from mlmcmc.diagnostics import truncation_study

    st = truncation_study(ex.matern(cfg), n_ref=args.n_ref, seed=cfg.seed)
    out = Path(cfg.output) / "truncation"
    io.write_table(out / "truncation.csv", ("method", "m", "error"), list(st.rows()))
    (out / "slopes.json").write_text(json.dumps({"slopes": st.slopes, "notes": st.notes}, indent=2))
    for k, v in st.slopes.items():
        print(f"{k}: slope {v:.3f}")
    return EXIT_OK


def cmd_report(cfg, args) -> int:
    root = Path(args.run_dir or cfg.output)
    written = ex.report(root, Path(args.out) if args.out and args.run_dir else None)
    if not written:
        print(f"nothing to report in {root}", file=sys.stderr)
        return ex.EXIT_NOTHING_TO_REPORT
    for p in written:
        print(p)
    return EXIT_OK


COMMANDS = {
    "precompute": cmd_precompute,
    "synth-data": cmd_synth_data,
    "run": cmd_run,
    "truncation-study": cmd_truncation_study,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mlmcmc", description="Multilevel MCMC for beam stiffness inversion")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment JSON")
    common.add_argument("--seed", type=int, help="override the experiment seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--strict", action="store_true", help="escalate numerical warnings to errors")
    common.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name in ("precompute", "run"):
            sp.add_argument("--method", choices=("kl", "wavelet", "las"), help="override the representation")
        if name == "run":
            sp.add_argument("--store-coeffs", action="store_true", help="keep subsampled coefficient vectors")
            sp.add_argument("--tune-sigma", action="store_true", help="tune sigma_F for 25%% level-0 acceptance")
        if name == "truncation-study":
            sp.add_argument("--n-ref", type=int, default=2000)
        if name == "report":
            sp.add_argument("run_dir", nargs="?", type=Path)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _load_config(args)
    except (OSError, ValueError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](cfg, args)
    except (ValueError, RuntimeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
