"""Report rendering: delimited records, an aligned text table, and figures.

Everything here is a pure function of the ExperimentReport contents, so two
runs with the same seeds produce byte-identical files. Floats are written
with repr (shortest round-trip form) in the CSV and with fixed precision in
the table; figures are rendered on the Agg backend with no embedded
timestamps.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .pipeline import ExperimentReport  # noqa: E402

CSV_FIELDS = ("scenario", "seed", "accuracy", "cross_entropy",
              "imputer_mse", "basis_fingerprint", "eval_fingerprint")


def _encode_mse(mse: dict[str, float]) -> str:
    return ";".join(f"{k}={v!r}" for k, v in sorted(mse.items()))


def decode_mse(text: str) -> dict[str, float]:
    if not text:
        return {}
    out = {}
    for part in text.split(";"):
        key, _, val = part.partition("=")
        out[key] = float(val)
    return out


def render_csv(report: ExperimentReport, manifest_ref: str | None = None) -> str:
    """One row per (scenario, seed) record; optional manifest back-reference."""
    buf = io.StringIO()
    if manifest_ref is not None:
        buf.write(f"# manifest={manifest_ref}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in report.records:
        writer.writerow([r.scenario, r.seed, repr(r.accuracy), repr(r.cross_entropy),
                         _encode_mse(r.imputer_mse), r.basis_fingerprint,
                         r.eval_fingerprint])
    return buf.getvalue()


def render_table(report: ExperimentReport) -> str:
    """Aligned plain-text summary, one line per scenario in first-run order."""
    agg = report.aggregate()
    header = ("scenario", "n", "accuracy", "cross_entropy")
    rows = [header]
    for name, s in agg.items():
        rows.append((name, str(s.n_seeds),
                     f"{s.mean_accuracy:.4f} +/- {s.std_accuracy:.4f}",
                     f"{s.mean_cross_entropy:.4f} +/- {s.std_cross_entropy:.4f}"))
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _bar_figure(names, means, stds, ylabel, title):
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    xs = np.arange(len(names))
    ax.bar(xs, means, yerr=stds, capsize=4, color="#4878a8")
    ax.set_xticks(xs)
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    return fig


def render_figures(report: ExperimentReport, out_dir, stem: str) -> list[Path]:
    """Accuracy and cross-entropy bar charts next to the delimited output."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    agg = report.aggregate()
    names = list(agg)
    paths = []
    for metric, ylabel in (("accuracy", "accuracy"),
                           ("cross_entropy", "cross-entropy")):
        means = [getattr(agg[n], f"mean_{metric}") for n in names]
        stds = [getattr(agg[n], f"std_{metric}") for n in names]
        fig = _bar_figure(names, means, stds, ylabel, stem)
        path = out_dir / f"{stem}_{metric}.png"
        fig.savefig(path, dpi=120, metadata={"Software": None})
        plt.close(fig)
        paths.append(path)
    return paths


def write_report(report: ExperimentReport, out_dir, stem: str,
                 manifest_ref: str | None = None) -> dict[str, Path]:
    """CSV records, aligned table, and figures under stable file names."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    csv_path.write_text(render_csv(report, manifest_ref=manifest_ref))
    table_path = out_dir / f"{stem}.txt"
    table_path.write_text(render_table(report))
    figures = render_figures(report, out_dir, stem)
    out = {"csv": csv_path, "table": table_path}
    for p in figures:
        out[p.stem.removeprefix(f"{stem}_")] = p
    return out
