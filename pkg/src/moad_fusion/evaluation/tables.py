"""Aligned plain-text renderings of reports and tables."""

from typing import List, Optional, Sequence

from moad_fusion.models.report import AblationTable, EnsembleTable, EvalReport, RobustnessTable


def _pct(value: Optional[float]) -> str:
    return "-" if value is None else f"{100 * value:.1f}%"


def _num(value: Optional[float], digits: int = 4) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def align(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """Columns padded to their widest cell; first column left-aligned, the rest right."""
    widths = [len(h) for h in headers]
    for row in rows:
        widths = [max(w, len(cell)) for w, cell in zip(widths, row)]

    def line(cells: Sequence[str]) -> str:
        parts = [
            cell.ljust(w) if i == 0 else cell.rjust(w)
            for i, (cell, w) in enumerate(zip(cells, widths))
        ]
        return "  ".join(parts).rstrip()

    out = [line(headers), "  ".join("-" * w for w in widths)]
    out.extend(line(row) for row in rows)
    return "\n".join(out)


def format_report(report: EvalReport) -> str:
    thresholds = [f"{t:g}" for t in report.distance_thresholds]
    rows: List[List[str]] = [
        [name] + [_num(report.per_class_ap[name].get(t)) for t in thresholds]
        for name in report.class_names
    ]
    table = align(["class"] + [f"AP@{t}m" for t in thresholds], rows)
    summary = (
        f"{report.scenario_tag}: mAP={report.mean_ap:.4f} mATE={report.mate:.3f}m "
        f"mASE={report.mase:.4f} nds_lite={report.nds_lite:.4f}"
    )
    if report.relative_drop is not None:
        summary += f" drop={_pct(report.relative_drop)} vs {report.reference_tag}"
    return f"{table}\n{summary}"


def format_robustness(table: RobustnessTable) -> str:
    rows = [
        [
            r.model_label,
            r.scenario,
            r.route,
            _num(r.mean_ap),
            _num(r.nds_lite),
            _pct(r.relative_drop),
        ]
        for r in table.rows
    ]
    return align(["model", "scenario", "route", "mAP", "nds_lite", "drop"], rows)


def format_ablation(table: AblationTable) -> str:
    rows = [
        [
            f"({r.tag}) {r.description}",
            "x" if r.moad else "",
            "x" if r.pme else "",
            _num(r.nds_lite),
            _num(r.mean_ap),
            _num(r.mean_ap_std),
        ]
        for r in table.rows
    ]
    return align(["variant", "MOAD", "PME", "nds_lite", "mAP", "std"], rows)


def format_ensemble(table: EnsembleTable) -> str:
    rows = [
        [r.strategy, _num(r.nds_lite), _num(r.mean_ap), _num(r.mean_ap_std)] for r in table.rows
    ]
    return align(["strategy", "nds_lite", "mAP", "std"], rows)
