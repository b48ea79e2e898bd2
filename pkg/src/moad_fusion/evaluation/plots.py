"""SVG figures of reports and tables."""

import logging
from pathlib import Path
from typing import Dict, List, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from moad_fusion.models.report import (  # noqa: E402
    AblationTable,
    AnyArtifact,
    EnsembleTable,
    EvalReport,
    RobustnessTable,
)

logger = logging.getLogger(__name__)

# deterministic SVG ids, no date stamp
matplotlib.rcParams["svg.hashsalt"] = "moad-fusion"
_SAVE_KW = {"format": "svg", "bbox_inches": "tight", "metadata": {"Date": None}}


def _save(fig: "plt.Figure", path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    logger.info("Saved plot: %s", path)
    return path


def plot_pr_curves(report: EvalReport, path: Path) -> Path:
    curves = report.pr_curves or {}
    fig, ax = plt.subplots(figsize=(6, 5))
    for name, curve in curves.items():
        ax.plot(curve.recall, curve.precision, linewidth=2, label=name)
    threshold = next(iter(curves.values())).threshold if curves else 0.0
    ax.set_xlabel("Recall", fontsize=12)
    ax.set_ylabel("Precision", fontsize=12)
    ax.set_title(f"{report.scenario_tag} (center distance < {threshold:g} m)", fontsize=12)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.05)
    ax.grid(True, alpha=0.3)
    if curves:
        ax.legend()
    return _save(fig, path)


def plot_drop_bars(table: RobustnessTable, path: Path) -> Path:
    """mAP drop per scenario, one bar group per model/route."""
    scenarios: List[str] = []
    series: Dict[str, Dict[str, float]] = {}
    for row in table.rows:
        if row.relative_drop is None:
            continue
        if row.scenario not in scenarios:
            scenarios.append(row.scenario)
        series.setdefault(f"{row.model_label} / {row.route}", {})[row.scenario] = row.relative_drop

    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(scenarios) + 2), 5))
    width = 0.8 / max(1, len(series))
    for k, (label, drops) in enumerate(series.items()):
        xs = [i + k * width for i, s in enumerate(scenarios) if s in drops]
        ys = [100 * drops[s] for s in scenarios if s in drops]
        ax.bar(xs, ys, width=width, label=label)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(scenarios))])
    ax.set_xticklabels(scenarios, rotation=30, ha="right")
    ax.set_ylabel("mAP drop (%)", fontsize=12)
    ax.set_title("Performance drop against full sensor input", fontsize=12)
    ax.grid(True, alpha=0.3, axis="y")
    if series:
        ax.legend()
    return _save(fig, path)


def _bar_table(
    labels: List[str], values: List[float], errors: List[float], title: str, path: Path
) -> Path:
    fig, ax = plt.subplots(figsize=(max(5, 1.1 * len(labels) + 2), 5))
    bars = ax.bar(range(len(labels)), values, yerr=errors, capsize=4, alpha=0.8, edgecolor="black")
    for bar, value in zip(bars, values):
        ax.text(
            bar.get_x() + bar.get_width() / 2,
            bar.get_height(),
            f"{value:.3f}",
            ha="center",
            va="bottom",
            fontsize=9,
        )
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels)
    ax.set_ylabel("mAP", fontsize=12)
    ax.set_title(title, fontsize=12)
    ax.grid(True, alpha=0.3, axis="y")
    return _save(fig, path)


def plot_ablation_bars(table: AblationTable, path: Path) -> Path:
    return _bar_table(
        [f"({r.tag})" for r in table.rows],
        [r.mean_ap for r in table.rows],
        [r.mean_ap_std for r in table.rows],
        f"Module ablation ({table.split})",
        path,
    )


def plot_ensemble_bars(table: EnsembleTable, path: Path) -> Path:
    return _bar_table(
        [r.strategy for r in table.rows],
        [r.mean_ap for r in table.rows],
        [r.mean_ap_std for r in table.rows],
        f"Ensemble strategies ({table.split})",
        path,
    )


def plot_artifact(artifact: AnyArtifact, out_dir: Union[str, Path], stem: str) -> Path:
    """Figure of any report or table, chosen by its `@type`."""
    out = Path(out_dir)
    if isinstance(artifact, EvalReport):
        return plot_pr_curves(artifact, out / f"{stem}_pr.svg")
    if isinstance(artifact, RobustnessTable):
        return plot_drop_bars(artifact, out / f"{stem}_drop.svg")
    if isinstance(artifact, AblationTable):
        return plot_ablation_bars(artifact, out / f"{stem}_ablation.svg")
    return plot_ensemble_bars(artifact, out / f"{stem}_ensemble.svg")
