"""Report rendering: plain text, TSV, and the timing figure."""

from __future__ import annotations

from chunkd.report import format_plain, format_tsv, save_timing_figure
from chunkd.weaver import ChunkRecord, WeaveReport


def _sample_report() -> WeaveReport:
    return WeaveReport(
        chunks_run=2,
        chunks_cached=1,
        errors=[(9, "TIMEOUT", "engine too slow")],
        records=[
            ChunkRecord(3, "initprog", "run", 0.412, "ok"),
            ChunkRecord(5, "table2", "cached", 0.0, "ok"),
            ChunkRecord(9, "fig4", "run", 2.001, "TIMEOUT"),
        ],
    )


def test_format_plain_mentions_everything():
    text = format_plain(_sample_report())
    assert "chunks run: 2" in text
    assert "cached: 1" in text
    assert "initprog" in text and "table2" in text
    assert "error at line 9: [TIMEOUT]" in text


def test_format_tsv_one_row_per_chunk():
    text = format_tsv(_sample_report())
    rows = text.strip().split("\n")
    assert rows[0] == "line\tlabel\taction\tseconds\tstatus"
    assert len(rows) == 4
    assert rows[1].split("\t") == ["3", "initprog", "run", "0.412000", "ok"]


def test_format_empty_report():
    empty = WeaveReport()
    assert "chunks run: 0" in format_plain(empty)
    assert format_tsv(empty).strip() == "line\tlabel\taction\tseconds\tstatus"


def test_save_timing_figure_writes_file(tmp_path):
    out = save_timing_figure(_sample_report(), tmp_path / "timing.png")
    assert out.exists() and out.stat().st_size > 0


def test_save_timing_figure_empty_report(tmp_path):
    out = save_timing_figure(WeaveReport(), tmp_path / "empty.pdf")
    assert out.exists() and out.stat().st_size > 0
