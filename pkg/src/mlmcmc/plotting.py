"""PNG figures rendered from the report tables."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from mlmcmc import io  # noqa: E402


def _read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def truncation_figure(table: Path, dst: Path) -> Path:
    rows = _read(table)
    by = defaultdict(list)
    for r in rows:
        by[r["method"]].append((int(r["m"]), float(r["error"])))
    fig, ax = plt.subplots(figsize=(5, 4))
    for method, pts in sorted(by.items()):
        m, e = np.array(pts).T
        ax.loglog(m, e, "o-", ms=3, label=method)
    m = np.geomspace(64, 4096, 10)
    ax.loglog(m, 2 * m**-0.75 * 64**0.75 * 0.5, "k--", lw=0.8, label="m^-0.75")
    ax.loglog(m, m**-0.5 * 8 * 0.5, "k:", lw=0.8, label="m^-0.5")
    ax.set_xlabel("m")
    ax.set_ylabel("L2 truncation error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(dst, dpi=120)
    plt.close(fig)
    return dst


def costs_figure(table: Path, dst: Path) -> Path:
    rows = _read(table)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    by = defaultdict(list)
    for r in rows:
        by[r["method"]].append((int(r["level"]), float(r["precompute_seconds"]), float(r["cost_per_sample"])))
    for method, pts in sorted(by.items()):
        lv, pre, cps = np.array(pts).T
        axes[0].semilogy(lv, pre, "o-", label=method)
        axes[1].semilogy(lv, cps, "o-", label=method)
    axes[0].set_title("initialisation cost [s]")
    axes[1].set_title("cost per sample [s]")
    for ax in axes:
        ax.set_xlabel("level")
        ax.legend()
    fig.tight_layout()
    fig.savefig(dst, dpi=120)
    plt.close(fig)
    return dst


def rates_figure(table: Path, dst: Path) -> Path:
    rows = _read(table)
    fig, ax = plt.subplots(figsize=(5, 4))
    by = defaultdict(list)
    for r in rows:
        if int(r["level"]) > 0:
            by[r["method"]].append((int(r["nx"]), float(r["rejection_rate"])))
    for method, pts in sorted(by.items()):
        nx, rr = np.array(pts).T
        ax.loglog(nx, np.maximum(rr, 1e-6), "o-", label=method)
    ax.set_xlabel("elements in x")
    ax.set_ylabel("rejection rate")
    ax.legend()
    fig.tight_layout()
    fig.savefig(dst, dpi=120)
    plt.close(fig)
    return dst


def field_figure(mean_path: Path, std_path: Path, dst: Path) -> Path:
    mean, info = io.read_field(mean_path)
    g = info.get("grid", {})
    extent = (0, g.get("dx", 4.0), 0, g.get("dy", 1.0))
    fig, axes = plt.subplots(2, 1, figsize=(7, 4))
    im = axes[0].imshow(mean / 1e9, origin="lower", extent=extent, aspect="equal")
    axes[0].set_title("posterior mean E [GPa]")
    fig.colorbar(im, ax=axes[0])
    if std_path.exists():
        std, _ = io.read_field(std_path)
        im = axes[1].imshow(std / 1e9, origin="lower", extent=extent, aspect="equal")
        axes[1].set_title("posterior std E [GPa]")
        fig.colorbar(im, ax=axes[1])
    fig.tight_layout()
    fig.savefig(dst, dpi=120)
    plt.close(fig)
    return dst


def render_report(out: Path) -> list[Path]:
    out = Path(out)
    made = []
    if (out / "fig7_truncation.csv").exists():
        made.append(truncation_figure(out / "fig7_truncation.csv", out / "fig7_truncation.png"))
    if (out / "fig10_costs.csv").exists():
        made.append(costs_figure(out / "fig10_costs.csv", out / "fig10_costs.png"))
    if (out / "fig11_rates_error.csv").exists():
        made.append(rates_figure(out / "fig11_rates_error.csv", out / "fig11_rates_error.png"))
    for mean in sorted(out.glob("post_mean_*.bin")):
        method = mean.stem[len("post_mean_"):]
        made.append(field_figure(mean, out / f"post_std_{method}.bin", out / f"posterior_{method}.png"))
    return made
