"""Result aggregation: summary tables and figures across run directories.

Each run directory is expected to hold the ``summary.json`` written after
a set of training repetitions. The report collates one row per (task,
model) pair with mean and sample standard deviation for AUROC, AUPRC, and
F1, writes it as CSV and as an aligned text table, and renders bar-chart
figures (plus validation-loss curves when per-repetition histories are
present). Single-run rows carry std 0 and are flagged.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = [
    "ReportError",
    "RunSummary",
    "load_run_dir",
    "build_rows",
    "write_report_csv",
    "write_report_text",
    "render_figures",
    "write_report",
]

METRICS = ("auroc", "auprc", "f1")


class ReportError(ValueError):
    """Raised when run directories cannot be aggregated."""


@dataclass
class RunSummary:
    path: Path
    task: str
    mode: str
    provider: Optional[str]
    n: int
    mean: dict[str, float]
    std: dict[str, float]
    std_defined: bool

    @property
    def model_label(self) -> str:
        if self.mode == "multimodal" and self.provider:
            return f"multimodal-{self.provider}"
        return self.mode


def load_run_dir(path: str | Path) -> RunSummary:
    path = Path(path)
    summary_path = path / "summary.json"
    if not summary_path.exists():
        raise ReportError(f"{path}: no summary.json found")
    try:
        raw = json.loads(summary_path.read_text())
        return RunSummary(
            path=path,
            task=raw["task"],
            mode=raw["mode"],
            provider=raw.get("provider"),
            n=int(raw["n"]),
            mean={k: float(v) for k, v in raw["mean"].items()},
            std={k: float(v) for k, v in raw["std"].items()},
            std_defined=bool(raw["std_defined"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ReportError(f"{summary_path}: unreadable summary: {exc}") from None


def build_rows(summaries: Sequence[RunSummary]) -> list[dict]:
    """One row per (task, model label), sorted for stable output."""
    seen: dict[tuple[str, str], RunSummary] = {}
    for summary in summaries:
        key = (summary.task, summary.model_label)
        if key in seen:
            raise ReportError(
                f"duplicate run for task={key[0]!r} model={key[1]!r}: "
                f"{seen[key].path} and {summary.path}"
            )
        seen[key] = summary

    rows = []
    for (task, label), summary in sorted(seen.items()):
        row = {"task": task, "model": label, "n": summary.n,
               "std_defined": summary.std_defined}
        for metric in METRICS:
            row[f"{metric}_mean"] = summary.mean.get(metric)
            row[f"{metric}_std"] = summary.std.get(metric)
        rows.append(row)
    return rows


def write_report_csv(path: str | Path, rows: Sequence[dict]) -> None:
    header = ["task", "model", "n"]
    for metric in METRICS:
        header += [f"{metric}_mean", f"{metric}_std"]
    header.append("std_defined")
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            record = [row["task"], row["model"], row["n"]]
            for metric in METRICS:
                mean = row[f"{metric}_mean"]
                std = row[f"{metric}_std"]
                record.append("" if mean is None else repr(mean))
                record.append("" if std is None else repr(std))
            record.append(int(row["std_defined"]))
            writer.writerow(record)


def _cell(mean: Optional[float], std: Optional[float], flagged: bool) -> str:
    if mean is None:
        return "-"
    text = f"{mean:.4f} ± {0.0 if std is None else std:.4f}"
    return text + ("*" if flagged else "")


def write_report_text(path: str | Path, rows: Sequence[dict]) -> None:
    header = ["task", "model", "n"] + [m.upper() for m in METRICS]
    table = [header]
    any_flag = False
    for row in rows:
        flagged = not row["std_defined"]
        any_flag = any_flag or flagged
        table.append(
            [row["task"], row["model"], str(row["n"])]
            + [_cell(row[f"{m}_mean"], row[f"{m}_std"], flagged) for m in METRICS]
        )
    widths = [max(len(line[i]) for line in table) for i in range(len(header))]
    lines = []
    for line_index, line in enumerate(table):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(line)).rstrip())
        if line_index == 0:
            lines.append("  ".join("-" * w for w in widths))
    if any_flag:
        lines.append("")
        lines.append("* single run: std undefined, reported as 0")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def _metric_figure(rows: Sequence[dict], metric: str, out_path: Path) -> None:
    tasks = sorted({row["task"] for row in rows})
    models = sorted({row["model"] for row in rows})
    by_key = {(row["task"], row["model"]): row for row in rows}

    fig, ax = plt.subplots(figsize=(1.8 + 1.6 * len(tasks), 3.6))
    width = 0.8 / max(len(models), 1)
    for j, model in enumerate(models):
        xs, means, errs = [], [], []
        for i, task in enumerate(tasks):
            row = by_key.get((task, model))
            if row is None or row[f"{metric}_mean"] is None:
                continue
            xs.append(i + (j - (len(models) - 1) / 2.0) * width)
            means.append(row[f"{metric}_mean"])
            errs.append(row[f"{metric}_std"] or 0.0)
        if xs:
            ax.bar(xs, means, width=width * 0.92, yerr=errs, capsize=3, label=model)
    ax.set_xticks(range(len(tasks)))
    ax.set_xticklabels(tasks)
    ax.set_ylabel(metric.upper())
    ax.set_ylim(0.0, 1.0)
    ax.legend(fontsize=8)
    ax.set_title(f"{metric.upper()} by task (mean ± std)")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120, metadata={"Software": "drugfusion"})
    plt.close(fig)


def _history_rows(run_dir: Path) -> list[tuple[int, float]]:
    """(epoch, val_loss) pairs from the first repetition's history, if any."""
    candidates = sorted(run_dir.glob("rep_*/history.csv")) + [run_dir / "history.csv"]
    for candidate in candidates:
        if candidate.exists():
            with candidate.open(newline="") as handle:
                reader = csv.DictReader(handle)
                return [(int(r["epoch"]), float(r["val_loss"])) for r in reader]
    return []


def _curves_figure(summaries: Sequence[RunSummary], out_path: Path) -> bool:
    curves = []
    for summary in summaries:
        history = _history_rows(summary.path)
        if history:
            curves.append((f"{summary.task}/{summary.model_label}", history))
    if not curves:
        return False
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    for label, history in curves:
        ax.plot([e for e, _ in history], [v for _, v in history], label=label, linewidth=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation loss")
    ax.set_title("validation loss (first repetition per run)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120, metadata={"Software": "drugfusion"})
    plt.close(fig)
    return True


def render_figures(summaries: Sequence[RunSummary], rows: Sequence[dict],
                   fig_dir: str | Path) -> list[Path]:
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for metric in METRICS:
        if all(row[f"{metric}_mean"] is None for row in rows):
            continue
        out_path = fig_dir / f"metric_{metric}.png"
        _metric_figure(rows, metric, out_path)
        written.append(out_path)
    curve_path = fig_dir / "val_loss.png"
    if _curves_figure(summaries, curve_path):
        written.append(curve_path)
    return written


def write_report(run_dirs: Sequence[str | Path], out_dir: str | Path) -> dict[str, object]:
    """Aggregate run directories into report.csv, report.txt, and figures."""
    if not run_dirs:
        raise ReportError("no run directories given")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summaries = [load_run_dir(p) for p in run_dirs]
    rows = build_rows(summaries)

    csv_path = out_dir / "report.csv"
    text_path = out_dir / "report.txt"
    write_report_csv(csv_path, rows)
    write_report_text(text_path, rows)
    figures = render_figures(summaries, rows, out_dir / "figures")
    return {"csv": csv_path, "text": text_path, "figures": figures, "rows": rows}
