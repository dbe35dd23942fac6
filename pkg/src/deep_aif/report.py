"""SVG figures rendered with matplotlib from the CSVs the CLI writes."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed ids and no date stamp keep the SVG output reproducible
plt.rcParams["svg.hashsalt"] = "deep-aif"
SVG_META = {"Date": None}


def _rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)
    return path


def plot_loss(loss_csv: Path, out: Path) -> Path:
    rows = _rows(loss_csv)
    epochs = [int(r["epoch"]) for r in rows]
    loss = [float(r["loss"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(epochs, loss, lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("free energy per step")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, out)


def plot_branches(branches_csv: Path, traj_csv: Path, out: Path, goal: float = 0.5) -> Path:
    """One panel per branch with every rollout's predicted position."""
    branches = _rows(branches_csv)
    traj: dict[str, dict[int, list[tuple[int, float]]]] = defaultdict(lambda: defaultdict(list))
    for r in _rows(traj_csv):
        traj[r["policy_sequence"]][int(r["rollout"])].append((int(r["t"]), float(r["obs_mean"])))
    n = len(branches)
    cols = max(1, n // 2) if n > 1 else 1
    rows = int(np.ceil(n / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(2.6 * cols, 2.4 * rows), sharex=True, sharey=True,
                             squeeze=False)
    for ax, b in zip(axes.flat, branches):
        label = b["policy_sequence"]
        for series in traj[label].values():
            t, y = zip(*sorted(series))
            ax.plot(t, y, lw=0.4, alpha=0.35, color="tab:blue")
        ax.axhline(goal, color="tab:green", lw=0.8, ls="--")
        mark = " *" if b["selected_flag"] == "1" else ""
        ax.set_title(f"{label}{mark}\nKL={float(b['kl_total']):.1f} H={float(b['entropy_total']):.1f} "
                     f"G={float(b['g_value']):.1f}", fontsize=7)
        ax.tick_params(labelsize=6)
    for ax in list(axes.flat)[n:]:
        ax.set_visible(False)
    fig.supxlabel("step", fontsize=8)
    fig.supylabel("predicted position", fontsize=8)
    fig.tight_layout()
    return _save(fig, out)


def plot_run(run_csv: Path, out: Path, goal: float = 0.5) -> Path:
    rows = _rows(run_csv)
    t = [int(r["t"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(t, [float(r["true_pos"]) for r in rows], lw=1.2, label="true position")
    ax.plot(t, [float(r["obs"]) for r in rows], lw=0, marker=".", ms=2, alpha=0.5, label="observation")
    for r in rows:
        if r["replan_flag"] == "1":
            ax.axvline(int(r["t"]), color="grey", lw=0.5, alpha=0.6)
            ax.annotate(r["action"], (int(r["t"]), ax.get_ylim()[1]), fontsize=7, va="top")
    ax.axhline(goal, color="tab:green", lw=0.8, ls="--")
    ax.set_xlabel("step")
    ax.set_ylabel("position")
    ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    return _save(fig, out)


def render_directory(src: Path, out: Path, goal: float = 0.5) -> list[Path]:
    """Render every figure whose source CSVs are present in ``src``."""
    made = []
    if (src / "loss.csv").is_file():
        made.append(plot_loss(src / "loss.csv", out / "loss.svg"))
    if (src / "branches.csv").is_file() and (src / "trajectories.csv").is_file():
        made.append(plot_branches(src / "branches.csv", src / "trajectories.csv", out / "branches.svg", goal))
    for run in sorted(src.glob("run_*.csv")):
        made.append(plot_run(run, out / f"{run.stem}.svg", goal))
    if not made:
        raise FileNotFoundError(f"nothing to render in {src}: expected loss.csv, branches.csv or run_*.csv")
    return made
