"""Report figures: risk curves, risk-difference curves, weight distributions."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from .inference import EstimateReport  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_risk_curves(report: EstimateReport, outdir) -> list[Path]:
    """One panel per estimator: cumulative risk against horizon, with 95% bands."""
    est = report.estimates_frame()
    out = []
    if est.empty:
        return out
    unit = report.metadata.get("time_unit", "interval")
    for estimator, g in est.groupby("estimator", sort=True):
        fig, ax = plt.subplots(figsize=(6, 4))
        for regime, r in g.groupby("regime", sort=True):
            r = r.sort_values("t0")
            line, = ax.step(r["t0"], r["psi_hat"], where="post", label=regime)
            ax.fill_between(r["t0"], r["ci_lo"], r["ci_hi"], step="post", alpha=0.15, color=line.get_color())
        ax.set_xlabel(f"horizon t0 ({unit})")
        ax.set_ylabel("cumulative risk")
        ax.set_title(f"{estimator.upper()} risk under each regime")
        ax.legend(frameon=False)
        out.append(_save(fig, Path(outdir) / f"risk_{estimator}.png"))
    return out


def plot_rd_curves(report: EstimateReport, outdir) -> list[Path]:
    """Risk differences for each regime pair, one figure per estimator."""
    rd = report.rd_frame()
    out = []
    if rd.empty:
        return out
    for estimator, g in rd.groupby("estimator", sort=True):
        pairs = list(g.groupby(["regime1", "regime2"], sort=True))
        ncol = min(3, len(pairs))
        nrow = -(-len(pairs) // ncol)
        fig, axes = plt.subplots(nrow, ncol, figsize=(3.2 * ncol, 2.6 * nrow), squeeze=False, sharey=True)
        for ax, ((r1, r2), p) in zip(axes.flat, pairs):
            p = p.sort_values("t0")
            ax.axhline(0.0, color="grey", lw=0.8)
            ax.plot(p["t0"], p["rd_hat"], marker="o", ms=3)
            ax.fill_between(p["t0"], p["rd_ci_lo"], p["rd_ci_hi"], alpha=0.2)
            ax.set_title(f"{r1} - {r2}", fontsize=9)
        for ax in list(axes.flat)[len(pairs):]:
            ax.axis("off")
        for ax in axes[-1]:
            ax.set_xlabel("horizon t0")
        fig.suptitle(f"{estimator.upper()} risk differences")
        out.append(_save(fig, Path(outdir) / f"rd_{estimator}.png"))
    return out


def plot_weights(report: EstimateReport, outdir) -> list[Path]:
    """Median and 99th percentile of positive weights by interval."""
    if not report.weight_summaries:
        return []
    ws = pd.DataFrame(report.weight_summaries)
    out = []
    for estimator, g in ws.groupby("estimator", sort=True):
        fig, ax = plt.subplots(figsize=(6, 4))
        for regime, r in g.groupby("regime", sort=True):
            r = r.sort_values("k")
            line, = ax.plot(r["k"], r["median"], label=f"{regime} median")
            ax.plot(r["k"], r["p99"], ls="--", color=line.get_color(), label=f"{regime} p99")
        ax.set_yscale("log")
        ax.set_xlabel("interval k")
        ax.set_ylabel("weight among followers")
        ax.set_title(f"{estimator.upper()} weights")
        ax.legend(frameon=False, fontsize=7, ncol=2)
        out.append(_save(fig, Path(outdir) / f"weights_{estimator}.png"))
    return out


def render_report(report: EstimateReport, outdir) -> list[Path]:
    """Write CSV tables and PNG figures for ``report`` into ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = report.write_tables(outdir)
    for fn in (plot_risk_curves, plot_rd_curves, plot_weights):
        paths += fn(report, outdir)
    return paths
