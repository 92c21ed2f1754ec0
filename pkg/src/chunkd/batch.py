"""Batch execution: a fresh interpreter per chunk, output redirected to a file."""

from __future__ import annotations

import subprocess
from dataclasses import dataclass
from pathlib import Path

from .errors import EmptyCommand, SpawnFailure


@dataclass(frozen=True)
class BatchCommand:
    program: str
    args: tuple[str, ...]
    output_path: Path
    workdir: Path | None = None


@dataclass(frozen=True)
class RunResult:
    status: int
    byte_count: int

    @property
    def ok(self) -> bool:
        return self.status == 0


def build_batch_command(
    command_text: str,
    source: str | Path,
    output_path: str | Path,
    workdir: str | Path | None = None,
) -> BatchCommand:
    """Split a command like ``Rscript --save --restore`` and append the source file.

    The text is split on whitespace only; no shell quoting or globbing is
    applied, so document content cannot smuggle shell syntax into the spawn.
    An empty command means "use the session server instead" and is rejected.
    """
    parts = command_text.split()
    if not parts:
        raise EmptyCommand("empty batch command; route the chunk to the session server instead")
    return BatchCommand(
        program=parts[0],
        args=(*parts[1:], str(source)),
        output_path=Path(output_path),
        workdir=Path(workdir) if workdir is not None else None,
    )


def run_batch(command: BatchCommand) -> RunResult:
    """Spawn the program with stdout and stderr redirected into the output file.

    Blocks until exit. A nonzero status is recorded, not raised: whatever the
    engine printed before failing stays in the file for diagnosis.
    """
    out_path = command.output_path
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "wb") as sink:
        try:
            proc = subprocess.run(
                [command.program, *command.args],
                stdin=subprocess.DEVNULL,
                stdout=sink,
                stderr=subprocess.STDOUT,
                cwd=command.workdir,
            )
        except FileNotFoundError as exc:
            out_path.unlink(missing_ok=True)  # nothing ran, keep no empty artifact
            raise SpawnFailure(f"batch program not found: {command.program!r}") from exc
    return RunResult(status=proc.returncode, byte_count=out_path.stat().st_size)
