"""Report emission: CSV tables and SVG learning curves from metrics files."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

METHOD_MAIN = "MATTAR"
METHOD_ABLATION = "w/o task rep"


def _mean_ci(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, 0.0
    stderr = float(arr.std(ddof=1) / np.sqrt(arr.size))
    return mean, 1.96 * stderr


def transfer_table(entries: list[dict], out_path: Path) -> Path:
    """Win-rate table with Source/Unseen sections and one column per method."""
    cells: dict[tuple[str, str, str], list[float]] = defaultdict(list)
    order: dict[str, list[str]] = {"source": [], "unseen": []}
    for e in entries:
        if e.get("phase") != "transfer":
            continue
        section = e.get("section", "unseen")
        method = METHOD_ABLATION if e.get("ablation") else METHOD_MAIN
        cells[(section, e["task"], method)].append(e["win_rate"])
        if e["task"] not in order[section]:
            order[section].append(e["task"])
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["section", "task", METHOD_MAIN, f"{METHOD_MAIN} ci95", METHOD_ABLATION, f"{METHOD_ABLATION} ci95", "seeds"])
        for section, label in (("source", "Source Tasks"), ("unseen", "Unseen Tasks")):
            for task in order[section]:
                main = cells.get((section, task, METHOD_MAIN), [])
                abl = cells.get((section, task, METHOD_ABLATION), [])
                m_mean, m_ci = _mean_ci(main) if main else (float("nan"), 0.0)
                a_mean, a_ci = _mean_ci(abl) if abl else (float("nan"), 0.0)
                writer.writerow([label, task, f"{m_mean:.4f}", f"{m_ci:.4f}", f"{a_mean:.4f}", f"{a_ci:.4f}", max(len(main), len(abl))])
    return out_path


def mix_weight_table(entries: list[dict], out_path: Path) -> Path:
    """Mean combination coefficients of each unseen task over the source bank."""
    rows: dict[str, list[list[float]]] = defaultdict(list)
    source_names: list[str] | None = None
    for e in entries:
        if e.get("phase") == "transfer" and not e.get("ablation") and "mix_weights" in e:
            rows[e["task"]].append(e["mix_weights"])
            if source_names is None and "source_tasks" in e:
                source_names = e["source_tasks"]
    if not rows:
        raise ValueError("no adapted transfer entries with mix weights")
    n_src = len(next(iter(rows.values()))[0])
    header = source_names if source_names else [f"source_{k}" for k in range(n_src)]
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unseen_task"] + list(header) + ["row_sum"])
        for task, weight_lists in rows.items():
            mean = np.mean(np.asarray(weight_lists, dtype=np.float64), axis=0)
            writer.writerow([task] + [f"{w:.6f}" for w in mean] + [f"{mean.sum():.6f}"])
    return out_path


def learning_curves(entries: list[dict], out_dir: Path, phases=("train_eval", "finetune_eval")) -> list[Path]:
    """Win rate vs steps per task, mean with a 95% confidence band across seeds."""
    series: dict[tuple[str, str], dict[int, dict[int, float]]] = defaultdict(lambda: defaultdict(dict))
    for e in entries:
        if e.get("phase") in phases and "win_rate" in e:
            series[(e["task"], e["phase"])][e["step"]][e.get("seed", 0)] = e["win_rate"]
    written = []
    for (task, phase), by_step in sorted(series.items()):
        steps = sorted(by_step)
        means, los, his = [], [], []
        for s in steps:
            mean, ci = _mean_ci(list(by_step[s].values()))
            means.append(mean)
            los.append(mean - ci)
            his.append(mean + ci)
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(steps, means, label=f"{task}")
        ax.fill_between(steps, los, his, alpha=0.25)
        ax.set_xlabel("environment steps")
        ax.set_ylabel("win rate")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(f"{task} ({phase})")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = out_dir / f"curve_{phase}_{task}.svg"
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)
    return written


def generate_report(metrics_paths: list[str | Path], out_dir: str | Path) -> dict[str, list[Path]]:
    """Build all report artifacts from one or more metrics files."""
    from .metrics import read_metrics

    if not metrics_paths:
        raise ValueError("no metrics")
    entries: list[dict] = []
    for path in metrics_paths:
        entries.extend(read_metrics(path))
    if not entries:
        raise ValueError("no metrics")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, list[Path]] = {"tables": [], "plots": []}
    if any(e.get("phase") == "transfer" for e in entries):
        written["tables"].append(transfer_table(entries, out_dir / "transfer_table.csv"))
        try:
            written["tables"].append(mix_weight_table(entries, out_dir / "mix_weights.csv"))
        except ValueError:
            pass
    written["plots"] = learning_curves(entries, out_dir)
    return written
