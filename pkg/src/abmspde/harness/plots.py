"""Static SVG figures derived from the CSV reports."""
from __future__ import annotations

import math
import re
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .tables import FormatError, read_table  # noqa: E402

plt.rcParams["svg.hashsalt"] = "abmspde"
COLORS = {"abm": "tab:blue", "spde": "tab:orange"}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _finite(xs, ys, *more):
    keep = [i for i, y in enumerate(ys) if y is not None and not (isinstance(y, float) and math.isnan(y))]
    pick = lambda seq: [seq[i] for i in keep]  # noqa: E731
    return (pick(xs), pick(ys)) + tuple(pick(m) for m in more)


def _nz(seq):
    return [0.0 if v is None or (isinstance(v, float) and math.isnan(v)) else v for v in seq]


def plot_compare(path: Path, out: Path) -> list[Path]:
    _, rows = read_table(path, ("N", "mean_tau_abm", "std_tau_abm", "mean_tau_spde", "std_tau_spde"))
    if not rows:
        raise FormatError(f"{path}: no rows")
    n = [r["N"] for r in rows]
    made = []
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for model in ("abm", "spde"):
        xs, ys, err = _finite(n, [r[f"mean_tau_{model}"] for r in rows], [r[f"std_tau_{model}"] for r in rows])
        if xs:
            ax.errorbar(xs, ys, yerr=_nz(err), marker="o", capsize=3, color=COLORS[model], label=model.upper())
    ax.set(xscale="log", yscale="log", xlabel="N", ylabel="first passage time")
    ax.legend()
    made.append(_save(fig, out / "tau_vs_N.svg"))

    for stat in ("mean", "std"):
        cols = sorted(c for c in rows[0] if re.fullmatch(rf"E_{stat}_type\d+", c))
        if not cols:
            raise FormatError(f"{path}: no E_{stat}_type columns")
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for c in cols:
            xs, ys = _finite(n, [r[c] for r in rows])
            if xs:
                ax.plot(xs, ys, marker="o", label=f"type {c.rsplit('type', 1)[1]}")
        ax.set(xscale="log", xlabel="N", ylabel=f"E^{stat.capitalize()}")
        if ax.lines:
            ax.legend()
        made.append(_save(fig, out / f"E_{stat}_vs_N.svg"))
    return made


def plot_cost(path: Path, out: Path) -> list[Path]:
    _, rows = read_table(path, ("N", "model", "seconds_per_step"))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for model in ("abm", "spde"):
        pts = sorted((r["N"], r["seconds_per_step"]) for r in rows if r["model"] == model)
        if pts:
            ax.loglog(*zip(*pts), marker="o", color=COLORS[model], label=model.upper())
    ax.set(xlabel="N", ylabel="seconds per step")
    ax.legend()
    return [_save(fig, out / "cost_vs_N.svg")]


def plot_densities(files: list[Path], out: Path) -> list[Path]:
    groups = defaultdict(list)
    for f in files:
        m = re.fullmatch(r"density_N(\d+)_(abm|spde)_type(\d+)\.csv", f.name)
        if m:
            groups[int(m.group(1))].append((m.group(2), int(m.group(3)), f))
    made = []
    for n, entries in sorted(groups.items()):
        types = sorted({t for _, t, _ in entries})
        fig, axes = plt.subplots(1, len(types), figsize=(4.5 * len(types), 3.5), squeeze=False)
        for model, t, f in sorted(entries):
            _, rows = read_table(f, ("x", "mean", "std"))
            x = [r["x"] for r in rows]
            mean = [r["mean"] for r in rows]
            std = [r["std"] for r in rows]
            ax = axes[0, types.index(t)]
            ax.plot(x, mean, color=COLORS[model], label=model.upper())
            ax.fill_between(x, [m - s for m, s in zip(mean, std)], [m + s for m, s in zip(mean, std)],
                            color=COLORS[model], alpha=0.25, linewidth=0)
            ax.set(title=f"type {t}", xlabel="x")
        for ax in axes[0]:
            ax.legend()
        made.append(_save(fig, out / f"density_N{n}.svg"))
    return made


def plot_consistency(path: Path, out: Path) -> list[Path]:
    _, rows = read_table(path, ("axis", "level", "type", "x", "mean"))
    by_axis = defaultdict(lambda: defaultdict(list))
    for r in rows:
        by_axis[r["axis"]][(r["level"], r["type"])].append((r["x"], r["mean"]))
    made = []
    for axis, series in by_axis.items():
        types = sorted({t for _, t in series})
        fig, axes = plt.subplots(1, len(types), figsize=(4.5 * len(types), 3.5), squeeze=False)
        for (level, t), pts in sorted(series.items()):
            axes[0, types.index(t)].plot(*zip(*pts), label=f"{axis}={level}")
        for t, ax in zip(types, axes[0]):
            ax.set(title=f"type {t}", xlabel="x")
            ax.legend()
        made.append(_save(fig, out / f"consistency_{axis}.svg"))
    return made


def plot_equilibrium(path: Path, out: Path) -> list[Path]:
    _, rows = read_table(path, ("bin_left", "bin_right", "abm", "boltzmann"))
    mid = [(r["bin_left"] + r["bin_right"]) / 2 for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.step(mid, [r["abm"] for r in rows], where="mid", color=COLORS["abm"], label="ABM histogram")
    ax.plot(mid, [r["boltzmann"] for r in rows], "k--", label="Boltzmann")
    ax.set(xlabel="x", ylabel="probability per bin")
    ax.legend()
    return [_save(fig, out / "equilibrium.svg")]


def render_plots(report_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Render every figure whose source table exists in ``report_dir``."""
    src = Path(report_dir)
    out = Path(out_dir) if out_dir is not None else src / "figures"
    out.mkdir(parents=True, exist_ok=True)
    made = []
    if (src / "compare_report.csv").exists():
        made += plot_compare(src / "compare_report.csv", out)
    if (src / "cost.csv").exists():
        made += plot_cost(src / "cost.csv", out)
    made += plot_densities(sorted(src.glob("density_N*_*_type*.csv")), out)
    if (src / "consistency_mean.csv").exists():
        made += plot_consistency(src / "consistency_mean.csv", out)
    if (src / "equilibrium_hist.csv").exists():
        made += plot_equilibrium(src / "equilibrium_hist.csv", out)
    if not made:
        raise FileNotFoundError(f"no report tables found in {src}")
    return made
