"""Run/cache decision logic, the output counter, and the tmp/ naming rules.

All chunk outputs live under ``tmp/`` next to the document being woven.
The directory is created on demand and never cleaned automatically: it IS
the cache that a cache-mode pass reads from.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path, PurePosixPath

from .errors import MissingCache, UnsafeName

TMP_DIR = "tmp"
COUNTER_STEM = "codeOutput"


class RunMode(enum.Enum):
    RUN = "run"
    CACHE = "cache"


@dataclass
class ExecutionPolicy:
    """Global run/cache switch plus the per-pass output counter.

    The counter names the outputs of chunks that omit an explicit name
    (codeOutput0, codeOutput1, ...) and is consumed sequentially within one
    document pass; ``last_counter_name`` lets an empty include reference the
    chunk that most recently consumed it.
    """

    global_mode: RunMode = RunMode.RUN
    counter: int = 0
    last_counter_name: "OutputName | None" = None


@dataclass(frozen=True)
class OutputName:
    """A chunk output file under tmp/, author-named or counter-assigned."""

    path: PurePosixPath
    origin: str  # "explicit" | "counter"

    def resolve(self, base_dir: str | Path) -> Path:
        return Path(base_dir) / self.path


def decide_execution(global_mode: RunMode, chunk_override: str | None) -> RunMode:
    """Apply the per-chunk override rule.

    A missing or empty override defers to the global mode; ``run`` forces
    execution; ``cache`` or anything else uses cached results.
    """
    if chunk_override is None or chunk_override == "":
        return global_mode
    if chunk_override == "run":
        return RunMode.RUN
    return RunMode.CACHE


def resolve_output_name(explicit: str, policy: ExecutionPolicy) -> OutputName:
    """Map an output-name argument to a file under tmp/.

    A non-empty name is used as-is; an empty one consumes the policy counter.
    Names that could escape tmp/ are rejected.
    """
    if explicit:
        if (
            "/" in explicit
            or "\\" in explicit
            or ".." in explicit
            or explicit in (".", "~")
        ):
            raise UnsafeName(
                f"output name {explicit!r} must be a bare file name inside {TMP_DIR}/"
            )
        return OutputName(PurePosixPath(TMP_DIR) / explicit, origin="explicit")
    name = OutputName(
        PurePosixPath(TMP_DIR) / f"{COUNTER_STEM}{policy.counter}", origin="counter"
    )
    policy.counter += 1
    policy.last_counter_name = name
    return name


def fetch_cached(name: OutputName, base_dir: str | Path, lineno: int | None = None) -> bytes:
    """Return the saved bytes for a chunk output, or fail loudly.

    A missing file is a hard error rather than silent empty output: quietly
    fabricating document content would be worse than stopping.
    """
    target = name.resolve(base_dir)
    if not target.is_file():
        where = f" (directive at line {lineno})" if lineno is not None else ""
        raise MissingCache(
            f"no cached output {name.path}{where}; run the chunk before using cache mode"
        )
    return target.read_bytes()
