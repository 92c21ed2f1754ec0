"""Full document pass: run or fetch every chunk and splice rendered output.

Directives are processed strictly in document order, since server-mode
state makes order semantic. Run-style directives dispatch to the batch
executor when an explicit program or batch override is present and to the
session daemon otherwise; include/inline/show directives splice rendered
fragments into the surrounding text.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath

from .backends import BackendSpec, Registry
from .batch import build_batch_command, run_batch
from .cache import ExecutionPolicy, OutputName, RunMode, decide_execution, fetch_cached, resolve_output_name
from .directives import (
    FileBlock,
    IncludeOutput,
    Inline,
    RunExt,
    ShortInline,
    ShortRun,
    ShowCode,
    Text,
    extract_inline_code,
    scan_document,
    slice_lines,
)
from .errors import (
    ChunkdError,
    ConnectRefused,
    EmptyCommand,
    FileExists,
    InlineMultiline,
    MissingCache,
    NotServerCapable,
    QuoteNotAllowed,
    RangeOutOfBounds,
    ResponseTimeout,
    SpawnFailure,
    UnknownBackend,
    UnsafeName,
    WeaveError,
)
from .protocol import RunRequest, send_run

OUTPUT_MODES = ("vbox", "tex", "inline")

# Normative vbox form: a breakable verbatim environment inside a framed box,
# byte-stable so golden-file comparisons work across passes.
VBOX_BEGIN = "\\begin{tcolorbox}[breakable]\n\\begin{Verbatim}[breaklines=true]\n"
VBOX_END = "\\end{Verbatim}\n\\end{tcolorbox}\n"


@dataclass(frozen=True)
class OutputArtifact:
    """Bytes produced by a chunk plus the embedding mode they splice with."""

    data: bytes
    mode: str  # vbox | tex | inline


@dataclass(frozen=True)
class ChunkRecord:
    line: int
    label: str
    action: str  # "run" | "cached"
    seconds: float
    status: str  # "ok" or an error code


@dataclass
class WeaveReport:
    chunks_run: int = 0
    chunks_cached: int = 0
    errors: list[tuple[int, str, str]] = field(default_factory=list)  # (line, code, message)
    records: list[ChunkRecord] = field(default_factory=list)


def render_output(artifact: OutputArtifact) -> str:
    """Turn chunk output bytes into the tex fragment for its embedding mode.

    tex output is spliced raw (it already is LaTeX); inline output loses its
    trailing line breaks and must be a single line; vbox output is wrapped in
    the normative verbatim box.
    """
    text = artifact.data.decode("utf-8", errors="replace")
    if artifact.mode == "tex":
        return text
    if artifact.mode == "inline":
        trimmed = text.rstrip("\r\n")
        if "\n" in trimmed or "\r" in trimmed:
            raise InlineMultiline(
                "inline output spans multiple lines; embed it with vbox or tex instead"
            )
        return trimmed
    if artifact.mode == "vbox":
        body = text if (not text or text.endswith("\n")) else text + "\n"
        return VBOX_BEGIN + body + VBOX_END
    raise ValueError(f"unknown output mode {artifact.mode!r}")


def render_code_listing(language: str, code: str, highlight: bool = True) -> str:
    """Wrap source code in a listing environment, preserving the body exactly.

    highlight=True emits a minted environment tagged with the language;
    highlight=False emits a plain fvextra Verbatim environment.
    """
    body = code if (not code or code.endswith("\n")) else code + "\n"
    if highlight:
        return "\\begin{minted}{" + language + "}\n" + body + "\\end{minted}\n"
    return "\\begin{Verbatim}\n" + body + "\\end{Verbatim}\n"


class _ChunkError(Exception):
    """Internal: a chunk failed with a machine-readable code."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


_ERROR_CODES = [
    (MissingCache, "MISSING_CACHE"),
    (FileExists, "FILE_EXISTS"),
    (InlineMultiline, "INLINE_MULTILINE"),
    (QuoteNotAllowed, "QUOTE_NOT_ALLOWED"),
    (UnsafeName, "UNSAFE_NAME"),
    (RangeOutOfBounds, "RANGE"),
    (UnknownBackend, "UNKNOWN_BACKEND"),
    (NotServerCapable, "NOT_SERVER_CAPABLE"),
    (SpawnFailure, "SPAWN_FAILURE"),
    (ConnectRefused, "CONNECT_REFUSED"),
    (ResponseTimeout, "TIMEOUT"),
    (EmptyCommand, "EMPTY_COMMAND"),
]


def _code_for(exc: Exception) -> str:
    for klass, code in _ERROR_CODES:
        if isinstance(exc, klass):
            return code
    if isinstance(exc, OSError):
        return "IO"
    return "ERROR"


class _DocumentPass:
    def __init__(
        self,
        document_path: Path,
        registry: Registry,
        policy: ExecutionPolicy,
        keep_going: bool,
        highlight: bool,
        autostart: bool,
        config_path: str | None,
    ):
        self.doc_path = document_path
        self.docdir = document_path.resolve().parent
        self.registry = registry
        self.policy = policy
        self.keep_going = keep_going
        self.highlight = highlight
        self.autostart = autostart
        self.config_path = config_path
        self.report = WeaveReport()
        self.parts: list[str] = []

    def run(self) -> str:
        text = self.doc_path.read_text(encoding="utf-8")
        for item in scan_document(text):
            if isinstance(item, Text):
                self.parts.append(item.body)
            else:
                self._dispatch(item)
        return "".join(self.parts)

    def _dispatch(self, item) -> None:
        try:
            fragment = self._handle(item)
        except _ChunkError as exc:
            code, message = exc.code, exc.message
        except (ChunkdError, OSError) as exc:
            code, message = _code_for(exc), str(exc)
        else:
            self.parts.append(fragment)
            return
        self.report.errors.append((item.line, code, message))
        if not self.keep_going:
            raise WeaveError(item.line, code, message, report=self.report)
        self.parts.append("")

    def _handle(self, item) -> str:
        if isinstance(item, FileBlock):
            return self._do_fileblock(item)
        if isinstance(item, ShowCode):
            return self._do_showcode(item)
        if isinstance(item, IncludeOutput):
            return self._do_include(item)
        if isinstance(item, (RunExt, ShortRun)):
            return self._do_run_chunk(item)
        if isinstance(item, (Inline, ShortInline)):
            return self._do_inline(item)
        raise _ChunkError("INTERNAL", f"unhandled directive {type(item).__name__}")

    # -- non-executable directives ----------------------------------------

    def _do_fileblock(self, item: FileBlock) -> str:
        rel = PurePosixPath(item.path)
        if rel.is_absolute() or ".." in rel.parts:
            raise _ChunkError(
                "UNSAFE_PATH",
                f"file block target {item.path!r} escapes the document directory",
            )
        target = self.docdir / rel
        if target.exists() and not item.overwrite:
            raise FileExists(f"{item.path} exists; add [overwrite] to replace it")
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(item.body, encoding="utf-8")
        return item.raw  # the block stays in the woven document, like in plain LaTeX

    def _do_showcode(self, item: ShowCode) -> str:
        text = self._resolve_source(item.source).read_text(encoding="utf-8")
        sliced = slice_lines(text, item.first, item.last)
        return render_code_listing(item.language, sliced, highlight=self.highlight)

    def _do_include(self, item: IncludeOutput) -> str:
        name = self._output_ref(item.output, item.line)
        data = fetch_cached(name, self.docdir, lineno=item.line)
        return render_output(OutputArtifact(data, item.mode))

    # -- executable directives ----------------------------------------------

    def _do_run_chunk(self, item: RunExt | ShortRun) -> str:
        mode = decide_execution(self.policy.global_mode, item.override)
        out_name = resolve_output_name(item.output.strip(), self.policy)
        label = out_name.path.name
        if mode is RunMode.CACHE:
            fetch_cached(out_name, self.docdir, lineno=item.line)  # presence is the contract
            self._record_cached(item.line, label)
            return ""
        source = self._resolve_source(item.source)
        if isinstance(item, RunExt):
            runner = lambda: self._run_batch_chunk(item.program, source, out_name)
        else:
            spec = self.registry.resolve(item.backend)
            if item.batch_override:
                runner = lambda: self._run_batch_chunk(item.batch_override, source, out_name)
            elif spec.server_capable:
                runner = lambda: self._run_server_chunk(spec, "file", str(source), out_name)
            else:
                runner = lambda: self._run_batch_chunk(spec.batch_command_text(), source, out_name)
        self._timed_run(item.line, label, runner)
        return ""

    def _do_inline(self, item: Inline | ShortInline) -> str:
        inline_code = extract_inline_code(item.code_arg)
        out_name = resolve_output_name("", self.policy)
        label = out_name.path.name
        if self.policy.global_mode is RunMode.CACHE:
            data = fetch_cached(out_name, self.docdir, lineno=item.line)
            self._record_cached(item.line, label)
        else:
            spec, batch_override = self._inline_target(item)

            def runner():
                if batch_override:
                    source = self._materialize_inline(inline_code.code, out_name)
                    self._run_batch_chunk(batch_override, source, out_name)
                elif spec is not None and spec.server_capable:
                    if inline_code.direct:
                        self._run_server_chunk(spec, "inline", inline_code.code, out_name)
                    else:
                        source = self._materialize_inline(inline_code.code, out_name)
                        self._run_server_chunk(spec, "file", str(source), out_name)
                elif spec is not None:
                    source = self._materialize_inline(inline_code.code, out_name)
                    self._run_batch_chunk(spec.batch_command_text(), source, out_name)
                else:  # unregistered program text: treat it as a batch command
                    source = self._materialize_inline(inline_code.code, out_name)
                    self._run_batch_chunk(item.program, source, out_name)

            self._timed_run(item.line, label, runner)
            data = out_name.resolve(self.docdir).read_bytes()
        return render_output(OutputArtifact(data, item.mode))

    def _inline_target(self, item: Inline | ShortInline) -> tuple[BackendSpec | None, str | None]:
        if isinstance(item, ShortInline):
            return self.registry.resolve(item.backend), item.batch_override
        try:
            return self.registry.resolve(item.program), None
        except UnknownBackend:
            return None, None

    # -- execution plumbing ---------------------------------------------------

    def _timed_run(self, line: int, label: str, runner) -> None:
        self.report.chunks_run += 1
        started = time.perf_counter()
        try:
            runner()
        except (_ChunkError, ChunkdError, OSError) as exc:
            code = exc.code if isinstance(exc, _ChunkError) else _code_for(exc)
            self.report.records.append(
                ChunkRecord(line, label, "run", time.perf_counter() - started, code)
            )
            raise
        self.report.records.append(
            ChunkRecord(line, label, "run", time.perf_counter() - started, "ok")
        )

    def _record_cached(self, line: int, label: str) -> None:
        self.report.chunks_cached += 1
        self.report.records.append(ChunkRecord(line, label, "cached", 0.0, "ok"))

    def _run_batch_chunk(self, command_text: str, source: Path, out_name: OutputName) -> None:
        if not source.exists():
            raise _ChunkError("IO", f"source file {source} not found")
        command = build_batch_command(
            command_text, source, out_name.resolve(self.docdir), workdir=self.docdir
        )
        result = run_batch(command)
        if result.status != 0:
            raise _ChunkError(
                "EXITSTATUS",
                f"batch command exited with status {result.status} "
                f"(its output is kept in {out_name.path})",
            )

    def _run_server_chunk(
        self, spec: BackendSpec, source_kind: str, payload: str, out_name: OutputName
    ) -> None:
        request = RunRequest(
            "RUN",
            source_kind=source_kind,
            output_path=str(out_name.resolve(self.docdir)),
            payload=payload.encode("utf-8"),
        )
        address = ("127.0.0.1", spec.port)
        timeout = spec.timeout_s + 10.0
        try:
            response = send_run(address, request, timeout_s=timeout)
        except ConnectRefused:
            if not self.autostart:
                raise
            from .cli import ensure_daemon  # deferred: cli imports this module

            ensure_daemon(spec, config_path=self.config_path, workdir=self.docdir)
            response = send_run(address, request, timeout_s=timeout)
        if not response.ok:
            raise _ChunkError(response.code or "ERR", response.message or "chunk failed")

    # -- shared helpers ------------------------------------------------------

    def _resolve_source(self, source: str) -> Path:
        path = Path(source)
        return path if path.is_absolute() else self.docdir / path

    def _materialize_inline(self, code: str, out_name: OutputName) -> Path:
        target = out_name.resolve(self.docdir).with_suffix(".src")
        target.parent.mkdir(parents=True, exist_ok=True)
        body = code if code.endswith("\n") else code + "\n"
        target.write_text(body, encoding="utf-8")
        return target

    def _output_ref(self, explicit: str, line: int) -> OutputName:
        if explicit.strip():
            return resolve_output_name(explicit.strip(), self.policy)
        last = self.policy.last_counter_name
        if last is None:
            raise MissingCache(
                f"empty output name at line {line} but no counter-named chunk ran before it"
            )
        return last


def weave(
    document_path: str | Path,
    registry: Registry,
    policy: ExecutionPolicy | None = None,
    keep_going: bool = False,
    highlight: bool = True,
    autostart: bool = True,
    config_path: str | None = None,
    output_path: str | Path | None = None,
    write_output: bool = True,
) -> tuple[str, WeaveReport]:
    """Process every directive in document order and write the woven document.

    Text passes through untouched; chunk outputs land under tmp/ next to the
    document; the woven tex goes to ``<stem>.woven.tex`` unless overridden.
    The first chunk error aborts with WeaveError (which carries the partial
    report) unless keep_going is set, in which case errors are collected.
    """
    doc = Path(document_path)
    document_pass = _DocumentPass(
        doc,
        registry,
        policy if policy is not None else ExecutionPolicy(),
        keep_going=keep_going,
        highlight=highlight,
        autostart=autostart,
        config_path=config_path,
    )
    woven = document_pass.run()
    if write_output:
        target = Path(output_path) if output_path else doc.with_suffix(".woven.tex")
        target.write_text(woven, encoding="utf-8")
    return woven, document_pass.report
