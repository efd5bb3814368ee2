"""PNG renderings of the CSV outputs, drawn with the Agg backend.

Each renderer reads a CSV written by the harness and saves a PNG next to
it. :func:`render_dir` draws every known file present in a directory.
"""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _num(x: str) -> float:
    return float(x)


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def metric_bars(path, metric: str = "KLnorm", scenario: str | None = None) -> Path:
    """Bar chart of one metric per rule (table1.csv or metrics.csv)."""
    path = Path(path)
    rows = read_csv(path)
    if scenario is None:
        scenario = "mean" if any(r.get("scenario") == "mean" for r in rows) else rows[0].get("scenario")
    rows = [r for r in rows if r.get("scenario", scenario) == scenario]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar([r["rule"] for r in rows], [_num(r[metric]) for r in rows], color="tab:blue")
    ax.set_ylabel(metric)
    ax.set_title(f"{metric} by rule ({scenario})")
    return _save(fig, path.with_name(f"{path.stem}_{metric}.png"))


def curves(path, xlabel: str, ylabel: str) -> Path:
    """One line per non-x column (deviation curves)."""
    path = Path(path)
    rows = read_csv(path)
    xcol = list(rows[0])[0]
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [_num(r[xcol]) for r in rows]
    for col in list(rows[0])[1:]:
        ax.plot(xs, [_num(r[col]) for r in rows], label=col)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7, ncol=3)
    return _save(fig, path.with_suffix(".png"))


def payoff_cdf(path, scenario: str = "super") -> Path:
    path = Path(path)
    rows = [r for r in read_csv(path) if r["scenario"] == scenario]
    by_rule = defaultdict(list)
    for r in rows:
        by_rule[r["rule"]].append((_num(r["normalized_payoff"]), _num(r["cdf"])))
    fig, ax = plt.subplots(figsize=(6, 4))
    for rule, pts in by_rule.items():
        ax.step([p[0] for p in pts], [p[1] for p in pts], where="post", label=rule)
    ax.set_xlabel("normalized payoff")
    ax.set_ylabel("c.d.f.")
    ax.legend(fontsize=7, ncol=3)
    return _save(fig, path.with_name(f"{path.stem}_{scenario}.png"))


def density_fit(path, model_cols) -> Path:
    path = Path(path)
    rows = read_csv(path)
    scenarios = list(dict.fromkeys(r["scenario"] for r in rows))
    fig, axes = plt.subplots(1, len(scenarios), figsize=(4 * len(scenarios), 3.2), squeeze=False)
    for ax, s in zip(axes[0], scenarios):
        sub = [r for r in rows if r["scenario"] == s]
        xs = [_num(r["x"]) for r in sub]
        width = (xs[1] - xs[0]) if len(xs) > 1 else 1.0
        ax.bar(xs, [_num(r["empirical"]) for r in sub], width=width, alpha=0.4, label="empirical")
        for col in model_cols:
            ax.plot(xs, [_num(r[col]) for r in sub], label=col)
        ax.set_title(s)
        ax.legend(fontsize=7)
    return _save(fig, path.with_suffix(".png"))


def online_trace(path) -> Path:
    """Efficiency fraction per epoch with the deployed rule's letter above each point."""
    path = Path(path)
    rows = read_csv(path)
    groups = defaultdict(list)
    for r in rows:
        groups[(r.get("scenario", ""), r.get("classes", ""), r.get("metric", ""))].append(r)
    fig, ax = plt.subplots(figsize=(7, 4))
    for key, sub in groups.items():
        xs = [int(r["epoch"]) for r in sub]
        ys = [_num(r["efficiency_fraction"]) for r in sub]
        ax.plot(xs, ys, marker="o", ms=3, label=" ".join(str(k) for k in key if k))
        for x, y, r in zip(xs, ys, sub):
            ax.annotate(r["rule"], (x, y), fontsize=6, ha="center", va="bottom")
    ax.set_xlabel("epoch")
    ax.set_ylabel("efficiency / Small efficiency")
    ax.legend(fontsize=6)
    return _save(fig, path.with_suffix(".png"))


def render_dir(out_dir) -> list[Path]:
    """Render every recognised CSV in ``out_dir``; returns the PNG paths."""
    out = Path(out_dir)
    made = []
    for name in ("table1.csv", "metrics.csv"):
        if (out / name).exists():
            made.append(metric_bars(out / name))
    if (out / "fig1_surplus_gev.csv").exists():
        made.append(density_fit(out / "fig1_surplus_gev.csv", ["gev"]))
    if (out / "fig2_payoff_gpd.csv").exists():
        made.append(density_fit(out / "fig2_payoff_gpd.csv", ["gpd", "exponential"]))
    if (out / "fit_curves.csv").exists():
        made.append(density_fit(out / "fit_curves.csv", ["model"]))
    if (out / "fig3_payoff_cdf.csv").exists():
        made.append(payoff_cdf(out / "fig3_payoff_cdf.csv"))
    for path in sorted(out.glob("fig[4-7]_*.csv")) + sorted(out.glob("deviation_*.csv")):
        made.append(curves(path, "report ratio rho", "normalized profit"))
    for name in ("fig8_online.csv", "online.csv"):
        if (out / name).exists():
            made.append(online_trace(out / name))
    return made


def render_study(out_dir) -> list[Path]:
    return render_dir(out_dir)
