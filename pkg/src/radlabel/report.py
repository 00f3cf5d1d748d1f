"""Rendering of evaluation results: line-delimited records, a text table, and figures."""
from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from radlabel.metrics import EvalReport  # noqa: E402

CLASS_ORDER = ("positive", "negative", "uncertain")


def _fmt(value: float | None, scale: float = 100.0) -> str:
    return "-" if value is None else f"{value * scale:.1f}"


def eval_records(report: EvalReport) -> list[dict]:
    """Flatten a report into one summary record followed by one record per finding and class."""
    summary = report.to_dict()
    per_finding = summary.pop("per_finding")
    rows = [{"kind": "summary", **summary}]
    for finding, by_class in per_finding.items():
        for cls, score in by_class.items():
            rows.append({"kind": "finding", "finding": finding, "class": cls, **score})
    return rows


def format_table(report: EvalReport) -> str:
    classes = [c for c in CLASS_ORDER if any(c in v for v in report.per_finding.values())]
    width = max(12, *(len(f) for f in report.per_finding))
    header = f"{'finding':<{width}}" + "".join(f"  {c[:3]}F1  sup" for c in classes)
    lines = [f"dataset: {report.dataset_id}   reports: {report.n_reports}", header, "-" * len(header)]
    for finding, by_class in report.per_finding.items():
        cells = "".join(
            f"  {_fmt(by_class[c]['f1']):>5}  {by_class[c]['support']:>3}" for c in classes
        )
        lines.append(f"{finding:<{width}}{cells}")
    lines.append("-" * len(header))
    lines.append(f"(+)F1 {_fmt(report.macro_pos_f1)}   (-)F1 {_fmt(report.macro_neg_f1)}   (w)F1 {_fmt(report.weighted_f1)}")
    lines.append(
        f"invalid outputs {_fmt(report.invalid_rate)}%   mismatches {report.mismatches} ({_fmt(report.mismatch_rate)}%)"
    )
    return "\n".join(lines) + "\n"


def plot_finding_grid(reports: Sequence[EvalReport], path: str | Path, mention: str = "positive") -> Path:
    """Heatmap of per-finding F1 for one mention class, findings by dataset."""
    findings: list[str] = []
    for rep in reports:
        findings += [f for f in rep.per_finding if f not in findings]
    grid = np.full((len(findings), len(reports)), np.nan)
    for j, rep in enumerate(reports):
        for i, f in enumerate(findings):
            score = rep.per_finding.get(f, {}).get(mention, {}).get("f1")
            if score is not None:
                grid[i, j] = score * 100
    fig, ax = plt.subplots(figsize=(1.6 + 1.1 * len(reports), 0.9 + 0.32 * len(findings)))
    im = ax.imshow(np.ma.masked_invalid(grid), cmap="viridis", vmin=0, vmax=100, aspect="auto")
    ax.set_xticks(range(len(reports)), [r.dataset_id for r in reports], rotation=30, ha="right")
    ax.set_yticks(range(len(findings)), findings)
    for (i, j), v in np.ndenumerate(grid):
        if not np.isnan(v):
            ax.text(j, i, f"{v:.0f}", ha="center", va="center", color="white" if v < 60 else "black", fontsize=8)
    fig.colorbar(im, ax=ax, label=f"{mention} F1")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_invalid_rates(rates: Mapping[str, float], path: str | Path) -> Path:
    """Bar chart of the share of invalid outputs per run."""
    fig, ax = plt.subplots(figsize=(max(3.0, 0.8 * len(rates) + 1.5), 3.0))
    names = list(rates)
    values = [rates[n] * 100 for n in names]
    ax.bar(range(len(names)), values, color="tab:red")
    ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
    ax.set_ylabel("invalid outputs (%)")
    ax.set_ylim(0, max(5.0, max(values, default=0) * 1.2))
    for x, v in enumerate(values):
        ax.text(x, v, f"{v:.1f}", ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_eval(report: EvalReport, out_dir: str | Path, figures: bool = True) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"records": out_dir / "eval.jsonl", "table": out_dir / "eval.txt"}
    with paths["records"].open("w", encoding="utf-8") as fh:
        for row in eval_records(report):
            fh.write(json.dumps(row) + "\n")
    paths["table"].write_text(format_table(report), encoding="utf-8")
    if figures:
        paths["finding_grid"] = plot_finding_grid([report], out_dir / "f1_by_finding.png")
        paths["invalid_rate"] = plot_invalid_rates({report.dataset_id: report.invalid_rate}, out_dir / "invalid_rate.png")
    return paths
