"""Scripted mock interpreter used by the test suite and the demo documents.

It speaks a tiny line-oriented language so server-mode semantics
(statefulness, sentinel detection, timeouts, crashes) can be exercised
without a real statistical engine:

    set NAME VALUE    store VALUE under NAME
    get NAME          print the stored value, or ``undefined: NAME``
    print TEXT        print TEXT verbatim (``print(TEXT)`` is also accepted)
    echo TEXT         alias for print; usually the sentinel command
    source PATH       execute commands read from PATH
    sleep SECONDS     block without producing output
    stderr TEXT       write TEXT to standard error
    crash             exit immediately with status 1

Run ``python -m chunkd.mockrepl`` for a persistent stdin/stdout session, or
pass a script path for one-shot batch execution. ``--record FILE`` appends
every raw input line to FILE (used by serialization tests), ``--banner`` and
``--prompt`` simulate startup noise and prompt echo.
"""

from __future__ import annotations

import argparse
import sys
import time


class CrashRequested(Exception):
    """Raised internally when a script asks the engine to die."""


def _stdout_write(text: str) -> None:
    sys.stdout.write(text)
    sys.stdout.flush()


def _stderr_write(text: str) -> None:
    sys.stderr.write(text)
    sys.stderr.flush()


class MockEngine:
    """One interpreter state: a flat name/value namespace."""

    def __init__(self, write=None, write_err=None):
        self.env: dict[str, str] = {}
        self._write = write if write is not None else _stdout_write
        self._write_err = write_err if write_err is not None else _stderr_write

    def run_line(self, line: str) -> None:
        stripped = line.strip()
        if not stripped:
            return
        if stripped == "crash":
            raise CrashRequested()
        if stripped.startswith("print(") and stripped.endswith(")"):
            self._write(stripped[len("print("):-1] + "\n")
            return
        head, _, arg = stripped.partition(" ")
        if head in ("print", "echo"):
            self._write(arg + "\n")
        elif head == "set":
            name, _, value = arg.partition(" ")
            self.env[name] = value
        elif head == "get":
            if arg in self.env:
                self._write(self.env[arg] + "\n")
            else:
                self._write(f"undefined: {arg}\n")
        elif head == "sleep":
            time.sleep(float(arg))
        elif head == "source":
            with open(arg, encoding="utf-8") as handle:
                for file_line in handle:
                    self.run_line(file_line)
        elif head == "stderr":
            self._write_err(arg + "\n")
        else:
            self._write(f"? {stripped}\n")


def run_script(text: str) -> str:
    """Execute a script offline and return its merged output.

    This is the oracle path: the same command semantics as a live session,
    with stdout and stderr captured in write order into one stream.
    """
    pieces: list[str] = []
    engine = MockEngine(write=pieces.append, write_err=pieces.append)
    try:
        for line in text.splitlines():
            engine.run_line(line)
    except CrashRequested:
        pass
    return "".join(pieces)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mockrepl", description=__doc__.splitlines()[0])
    parser.add_argument("script", nargs="?", help="run this file in batch mode and exit")
    parser.add_argument("--banner", help="print this line once at startup")
    parser.add_argument("--prompt", help="print this line before handling each input line")
    parser.add_argument("--record", help="append every raw input line to this file")
    args = parser.parse_args(argv)

    engine = MockEngine()
    if args.banner:
        _stdout_write(args.banner + "\n")

    if args.script:
        try:
            with open(args.script, encoding="utf-8") as handle:
                for line in handle:
                    engine.run_line(line)
        except CrashRequested:
            return 1
        return 0

    record = open(args.record, "a", encoding="utf-8") if args.record else None
    try:
        while True:
            line = sys.stdin.readline()
            if not line:
                return 0
            if record:
                record.write(line if line.endswith("\n") else line + "\n")
                record.flush()
            if args.prompt:
                _stdout_write(args.prompt + "\n")
            try:
                engine.run_line(line)
            except CrashRequested:
                return 1
    finally:
        if record:
            record.close()


if __name__ == "__main__":
    sys.exit(main())
