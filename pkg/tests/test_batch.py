"""Fresh-interpreter chunk execution."""

from __future__ import annotations

import pytest

from chunkd.batch import build_batch_command, run_batch
from chunkd.errors import EmptyCommand, SpawnFailure
from conftest import mock_batch_command


def test_build_batch_command_splits_and_appends_source():
    command = build_batch_command("Rscript --save --restore", "a.R", "tmp/o")
    assert command.program == "Rscript"
    assert command.args == ("--save", "--restore", "a.R")
    assert str(command.output_path) == "tmp/o"


def test_build_batch_command_single_word():
    command = build_batch_command("sh", "s.sh", "tmp/o")
    assert command.program == "sh"
    assert command.args == ("s.sh",)


def test_build_batch_command_rejects_empty():
    with pytest.raises(EmptyCommand):
        build_batch_command("", "a.R", "tmp/o")
    with pytest.raises(EmptyCommand):
        build_batch_command("   ", "a.R", "tmp/o")


def _write_script(tmp_path, name, text):
    script = tmp_path / name
    script.write_text(text, encoding="utf-8")
    return script


def test_run_batch_redirects_output(tmp_path):
    script = _write_script(tmp_path, "s.mock", "print forty-two\n")
    out = tmp_path / "tmp" / "o"
    result = run_batch(build_batch_command(mock_batch_command(), script, out))
    assert result.ok and result.status == 0
    assert out.read_bytes() == b"forty-two\n"
    assert result.byte_count == 10


def test_run_batch_empty_output(tmp_path):
    script = _write_script(tmp_path, "quiet.mock", "set x 1\n")
    out = tmp_path / "o"
    result = run_batch(build_batch_command(mock_batch_command(), script, out))
    assert result.status == 0
    assert out.read_bytes() == b""
    assert result.byte_count == 0


def test_run_batch_nonzero_exit_keeps_output(tmp_path):
    script = _write_script(tmp_path, "dies.mock", "print partial\ncrash\n")
    out = tmp_path / "o"
    result = run_batch(build_batch_command(mock_batch_command(), script, out))
    assert result.status == 1
    assert not result.ok
    assert out.read_bytes() == b"partial\n"


def test_run_batch_merges_stderr(tmp_path):
    script = _write_script(tmp_path, "warns.mock", "print out\nstderr warned\n")
    out = tmp_path / "o"
    run_batch(build_batch_command(mock_batch_command(), script, out))
    assert out.read_bytes() == b"out\nwarned\n"


def test_run_batch_missing_program(tmp_path):
    out = tmp_path / "o"
    with pytest.raises(SpawnFailure):
        run_batch(build_batch_command("/nonexistent/engine", "x", out))
    assert not out.exists()


def test_run_batch_deterministic(tmp_path):
    script = _write_script(tmp_path, "pure.mock", "print alpha\nprint beta\n")
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    run_batch(build_batch_command(mock_batch_command(), script, out1))
    run_batch(build_batch_command(mock_batch_command(), script, out2))
    assert out1.read_bytes() == out2.read_bytes()


def test_state_does_not_survive_between_batch_runs(tmp_path):
    first = _write_script(tmp_path, "one.mock", "set x 41\n")
    second = _write_script(tmp_path, "two.mock", "get x\n")
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    run_batch(build_batch_command(mock_batch_command(), first, out1))
    run_batch(build_batch_command(mock_batch_command(), second, out2))
    assert out2.read_bytes() == b"undefined: x\n"
