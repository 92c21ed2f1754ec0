"""Plain-text, TSV, and figure renderings of a weave report."""

from __future__ import annotations

from pathlib import Path

from .weaver import WeaveReport


def format_plain(report: WeaveReport) -> str:
    lines = [
        f"chunks run: {report.chunks_run}   cached: {report.chunks_cached}"
        f"   errors: {len(report.errors)}"
    ]
    for rec in report.records:
        lines.append(
            f"  line {rec.line:>4}  {rec.label:<24} {rec.action:<7} {rec.seconds:8.3f}s  {rec.status}"
        )
    for lineno, code, message in report.errors:
        lines.append(f"  error at line {lineno}: [{code}] {message}")
    return "\n".join(lines) + "\n"


def format_tsv(report: WeaveReport) -> str:
    rows = ["line\tlabel\taction\tseconds\tstatus"]
    for rec in report.records:
        rows.append(f"{rec.line}\t{rec.label}\t{rec.action}\t{rec.seconds:.6f}\t{rec.status}")
    return "\n".join(rows) + "\n"


def save_timing_figure(report: WeaveReport, path: str | Path) -> Path:
    """Render per-chunk wall times as a horizontal bar chart image.

    Run chunks are drawn in blue, cached ones in grey; the file format
    follows the path's extension (png, pdf, svg, ...).
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    records = report.records
    height = max(1.8, 0.45 * len(records) + 1.2)
    fig, ax = plt.subplots(figsize=(7.0, height))
    if records:
        labels = [f"{rec.label} (l.{rec.line})" for rec in records]
        seconds = [rec.seconds for rec in records]
        colors = ["#4878d0" if rec.action == "run" else "#b8b8b8" for rec in records]
        positions = range(len(records))
        ax.barh(positions, seconds, color=colors)
        ax.set_yticks(list(positions), labels=labels, fontsize=8)
        ax.invert_yaxis()
    else:
        ax.text(0.5, 0.5, "no chunks", ha="center", va="center", transform=ax.transAxes)
    ax.set_xlabel("wall time [s]")
    ax.set_title(f"{report.chunks_run} run / {report.chunks_cached} cached")
    fig.tight_layout()
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out)
    plt.close(fig)
    return out
