"""Scanner for chunk directives embedded in tex documents.

This works at the macro-argument level (balanced braces), not by TeX
expansion: the directive forms are recognized wherever they appear outside
comments and verbatim-like regions, and everything else passes through as
opaque text. Concatenating the scanned items' text reproduces the input
byte for byte, which is what makes source-to-source weaving safe.
"""

from __future__ import annotations

import re
from bisect import bisect_right
from dataclasses import dataclass

from .errors import (
    MalformedDirective,
    QuoteNotAllowed,
    RangeOutOfBounds,
    UnbalancedBraces,
    UnknownOptional,
)

# Short-command names and the backends they bind. The matlab pair shows up
# in both capitalizations in the wild, so accept both.
SHORT_RUN = {"runR": "R", "runJulia": "julia", "runMatLab": "matlab", "runMatlab": "matlab"}
SHORT_INLINE = {"inlnR": "R", "inlnJulia": "julia", "inlnMatLab": "matlab", "inlnMatlab": "matlab"}

OUTPUT_MODES = ("vbox", "tex", "inline")
INLINE_MODES = ("inline", "vbox")

_VERBATIM_ENVS = {"verbatim", "verbatim*", "Verbatim", "Verbatim*", "BVerbatim", "minted"}
_FILE_ENVS = {"filecontents", "filecontents*"}

_SPECIAL = re.compile(r"[%\\]")
_CONTROL_WORD = re.compile(r"\\([A-Za-z]+)")


@dataclass(frozen=True)
class Text:
    body: str


@dataclass(frozen=True)
class RunExt:
    """\\runExtCode{program}{source}{output}[override]"""

    program: str
    source: str
    output: str
    override: str | None
    line: int
    raw: str


@dataclass(frozen=True)
class ShowCode:
    """\\showCode{language}{source}[first][last]"""

    language: str
    source: str
    first: int | None
    last: int | None
    line: int
    raw: str


@dataclass(frozen=True)
class IncludeOutput:
    """\\includeOutput{output}[mode]"""

    output: str
    mode: str
    line: int
    raw: str


@dataclass(frozen=True)
class Inline:
    """\\inln{program}{code}[mode]"""

    program: str
    code_arg: str
    mode: str
    line: int
    raw: str


@dataclass(frozen=True)
class ShortRun:
    """\\runR[batch]{source}{output}[override] and the julia/matlab variants"""

    backend: str
    batch_override: str | None
    source: str
    output: str
    override: str | None
    line: int
    raw: str


@dataclass(frozen=True)
class ShortInline:
    """\\inlnR[batch]{code}[mode] and the julia/matlab variants"""

    backend: str
    batch_override: str | None
    code_arg: str
    mode: str
    line: int
    raw: str


@dataclass(frozen=True)
class FileBlock:
    """A filecontents(*) environment: materialize body at path before later chunks run."""

    path: str
    body: str
    overwrite: bool
    line: int
    raw: str


Directive = RunExt | ShowCode | IncludeOutput | Inline | ShortRun | ShortInline | FileBlock
DocumentItem = Text | Directive

EXECUTABLE_DIRECTIVES = (RunExt, ShortRun, Inline, ShortInline)


@dataclass(frozen=True)
class InlineCode:
    """Code from an inline directive: run directly or via a materialized temp file."""

    code: str
    direct: bool


def extract_inline_code(code_arg: str) -> InlineCode:
    """Classify an inline code argument per the triple-backtick rule.

    Fenced code runs directly through the session pipe; anything else is
    written to a file under tmp/ and sourced. Double quotes are rejected
    outright so the argument stays quotable everywhere it travels.
    """
    if '"' in code_arg:
        raise QuoteNotAllowed('inline code may not contain the " character')
    if code_arg.startswith("```") and code_arg.endswith("```") and len(code_arg) >= 6:
        return InlineCode(code_arg[3:-3], direct=True)
    return InlineCode(code_arg, direct=False)


def slice_lines(source_text: str, first: int | None, last: int | None) -> str:
    """Inclusive 1-based line range; missing bounds default to the whole file."""
    if first is None and last is None:
        return source_text
    lines = source_text.splitlines(keepends=True)
    count = len(lines)
    lo = 1 if first is None else first
    hi = count if last is None else last
    if lo < 1 or hi > count or lo > hi:
        raise RangeOutOfBounds(
            f"line range {lo}..{hi} is outside the file's 1..{count}"
        )
    return "".join(lines[lo - 1:hi])


def scan_document(text: str) -> list[DocumentItem]:
    """Split a document into passthrough text and parsed directives, in order."""
    return _Scanner(text).scan()


def reassemble(items: list[DocumentItem]) -> str:
    """Concatenate items back into the original document bytes."""
    return "".join(item.body if isinstance(item, Text) else item.raw for item in items)


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.items: list[DocumentItem] = []
        self._line_starts = [0] + [m.end() for m in re.finditer("\n", text)]

    def lineno(self, pos: int) -> int:
        return bisect_right(self._line_starts, pos)

    def scan(self) -> list[DocumentItem]:
        text = self.text
        size = len(text)
        pos = 0
        text_start = 0
        while pos < size:
            match = _SPECIAL.search(text, pos)
            if match is None:
                break
            at = match.start()
            if text[at] == "%":
                newline = text.find("\n", at)
                pos = size if newline == -1 else newline + 1
                continue
            word_match = _CONTROL_WORD.match(text, at)
            if word_match is None:
                pos = min(at + 2, size)  # escaped symbol such as \% or \\
                continue
            word = word_match.group(1)
            after = word_match.end()
            if word == "verb":
                pos = self._skip_verb(at, after)
                continue
            if word == "begin":
                env, env_end = self._env_name(after)
                if env is None:
                    pos = after
                    continue
                if env in _VERBATIM_ENVS:
                    pos = self._skip_verbatim_env(env, env_end, at)
                    continue
                if env in _FILE_ENVS:
                    directive, end = self._parse_fileblock(env, env_end, at)
                    self._flush(text_start, at)
                    self.items.append(directive)
                    pos = text_start = end
                    continue
                pos = env_end
                continue
            handler = _PARSERS.get(word)
            if handler is None:
                pos = after
                continue
            parsed = handler(self, word, at, after)
            if parsed is None:  # bare mention without arguments: plain text
                pos = after
                continue
            directive, end = parsed
            self._flush(text_start, at)
            self.items.append(directive)
            pos = text_start = end
        self._flush(text_start, size)
        return self.items

    def _flush(self, start: int, end: int) -> None:
        if end > start:
            self.items.append(Text(self.text[start:end]))

    # -- low-level pieces --------------------------------------------------

    def _at(self, pos: int, char: str) -> bool:
        return pos < len(self.text) and self.text[pos] == char

    def _brace_group(self, pos: int, lineno: int) -> tuple[str, int]:
        text = self.text
        depth = 0
        i = pos
        while i < len(text):
            char = text[i]
            if char == "\\":
                i += 2  # escaped character inside an argument
                continue
            if char == "{":
                depth += 1
            elif char == "}":
                depth -= 1
                if depth == 0:
                    return text[pos + 1:i], i + 1
            i += 1
        raise UnbalancedBraces(lineno, "unbalanced braces in argument")

    def _bracket_group(self, pos: int, lineno: int) -> tuple[str, int]:
        text = self.text
        depth = 0
        i = pos + 1
        while i < len(text):
            char = text[i]
            if char == "\\":
                i += 2
                continue
            if char == "{":
                depth += 1
            elif char == "}":
                depth -= 1
                if depth < 0:
                    raise UnbalancedBraces(lineno, "unbalanced braces in optional argument")
            elif char == "]" and depth == 0:
                return text[pos + 1:i], i + 1
            i += 1
        raise UnknownOptional(lineno, "unterminated optional argument")

    def _require_brace(self, pos: int, lineno: int, word: str, which: int) -> tuple[str, int]:
        if not self._at(pos, "{"):
            raise MalformedDirective(lineno, f"\\{word} is missing argument {which}")
        return self._brace_group(pos, lineno)

    def _maybe_bracket(self, pos: int, lineno: int) -> tuple[str | None, int]:
        if not self._at(pos, "["):
            return None, pos
        return self._bracket_group(pos, lineno)

    def _reject_extra_optional(self, pos: int, lineno: int, word: str) -> None:
        if self._at(pos, "["):
            raise UnknownOptional(lineno, f"\\{word} has too many optional arguments")

    def _skip_verb(self, start: int, after: int) -> int:
        text = self.text
        i = after
        if i < len(text) and text[i] == "*":
            i += 1
        if i >= len(text):
            raise UnbalancedBraces(self.lineno(start), "\\verb at end of input")
        delim = text[i]
        end = text.find(delim, i + 1)
        if end == -1:
            raise UnbalancedBraces(self.lineno(start), "unterminated \\verb")
        return end + 1

    def _env_name(self, after: int) -> tuple[str | None, int]:
        text = self.text
        i = after
        while i < len(text) and text[i] in " \t":
            i += 1
        if not self._at(i, "{"):
            return None, after
        name, end = self._brace_group(i, self.lineno(after))
        return name.strip(), end

    def _skip_verbatim_env(self, env: str, env_end: int, start: int) -> int:
        marker = "\\end{" + env + "}"
        idx = self.text.find(marker, env_end)
        if idx == -1:
            raise UnbalancedBraces(self.lineno(start), f"missing \\end{{{env}}}")
        return idx + len(marker)

    # -- directive parsers ---------------------------------------------------

    def _parse_fileblock(self, env: str, env_end: int, start: int) -> tuple[FileBlock, int]:
        lineno = self.lineno(start)
        i = env_end
        overwrite = False
        if self._at(i, "["):
            options, i = self._bracket_group(i, lineno)
            names = {part.strip() for part in options.split(",")}
            overwrite = bool(names & {"overwrite", "force"})
        if not self._at(i, "{"):
            raise MalformedDirective(lineno, f"{env} needs a {{file}} argument")
        path, i = self._brace_group(i, lineno)
        marker = "\\end{" + env + "}"
        end_idx = self.text.find(marker, i)
        if end_idx == -1:
            raise UnbalancedBraces(lineno, f"missing \\end{{{env}}}")
        body = self.text[i:end_idx]
        if body.startswith("\r\n"):
            body = body[2:]
        elif body.startswith("\n"):
            body = body[1:]
        end = end_idx + len(marker)
        return (
            FileBlock(
                path=path.strip(),
                body=body,
                overwrite=overwrite,
                line=lineno,
                raw=self.text[start:end],
            ),
            end,
        )

    def _parse_run_ext(self, word: str, start: int, after: int):
        lineno = self.lineno(start)
        if not self._at(after, "{"):
            return None
        program, i = self._brace_group(after, lineno)
        source, i = self._require_brace(i, lineno, word, 2)
        output, i = self._require_brace(i, lineno, word, 3)
        override, i = self._maybe_bracket(i, lineno)
        self._reject_extra_optional(i, lineno, word)
        return (
            RunExt(
                program=program.strip(),
                source=source.strip(),
                output=output,
                override=None if override is None else override.strip(),
                line=lineno,
                raw=self.text[start:i],
            ),
            i,
        )

    def _parse_show_code(self, word: str, start: int, after: int):
        lineno = self.lineno(start)
        if not self._at(after, "{"):
            return None
        language, i = self._brace_group(after, lineno)
        source, i = self._require_brace(i, lineno, word, 2)
        first_text, i = self._maybe_bracket(i, lineno)
        last_text, i = self._maybe_bracket(i, lineno)
        self._reject_extra_optional(i, lineno, word)
        return (
            ShowCode(
                language=language.strip(),
                source=source.strip(),
                first=self._line_number(first_text, lineno),
                last=self._line_number(last_text, lineno),
                line=lineno,
                raw=self.text[start:i],
            ),
            i,
        )

    def _parse_include_output(self, word: str, start: int, after: int):
        lineno = self.lineno(start)
        if not self._at(after, "{"):
            return None
        output, i = self._brace_group(after, lineno)
        mode_text, i = self._maybe_bracket(i, lineno)
        self._reject_extra_optional(i, lineno, word)
        return (
            IncludeOutput(
                output=output,
                mode=self._mode(mode_text, OUTPUT_MODES, "vbox", lineno),
                line=lineno,
                raw=self.text[start:i],
            ),
            i,
        )

    def _parse_inline(self, word: str, start: int, after: int):
        lineno = self.lineno(start)
        if not self._at(after, "{"):
            return None
        program, i = self._brace_group(after, lineno)
        code_arg, i = self._require_brace(i, lineno, word, 2)
        mode_text, i = self._maybe_bracket(i, lineno)
        self._reject_extra_optional(i, lineno, word)
        return (
            Inline(
                program=program.strip(),
                code_arg=code_arg,
                mode=self._mode(mode_text, INLINE_MODES, "inline", lineno),
                line=lineno,
                raw=self.text[start:i],
            ),
            i,
        )

    def _parse_short_run(self, word: str, start: int, after: int):
        lineno = self.lineno(start)
        batch_override = None
        i = after
        if self._at(i, "["):
            batch_override, i = self._bracket_group(i, lineno)
        if not self._at(i, "{"):
            if batch_override is None:
                return None  # bare mention in prose
            raise MalformedDirective(lineno, f"\\{word} is missing its source argument")
        source, i = self._brace_group(i, lineno)
        output, i = self._require_brace(i, lineno, word, 2)
        override, i = self._maybe_bracket(i, lineno)
        self._reject_extra_optional(i, lineno, word)
        if batch_override is not None and not batch_override.strip():
            batch_override = None
        return (
            ShortRun(
                backend=SHORT_RUN[word],
                batch_override=batch_override.strip() if batch_override else None,
                source=source.strip(),
                output=output,
                override=None if override is None else override.strip(),
                line=lineno,
                raw=self.text[start:i],
            ),
            i,
        )

    def _parse_short_inline(self, word: str, start: int, after: int):
        lineno = self.lineno(start)
        batch_override = None
        i = after
        if self._at(i, "["):
            batch_override, i = self._bracket_group(i, lineno)
        if not self._at(i, "{"):
            if batch_override is None:
                return None
            raise MalformedDirective(lineno, f"\\{word} is missing its code argument")
        code_arg, i = self._brace_group(i, lineno)
        mode_text, i = self._maybe_bracket(i, lineno)
        self._reject_extra_optional(i, lineno, word)
        if batch_override is not None and not batch_override.strip():
            batch_override = None
        return (
            ShortInline(
                backend=SHORT_INLINE[word],
                batch_override=batch_override.strip() if batch_override else None,
                code_arg=code_arg,
                mode=self._mode(mode_text, INLINE_MODES, "inline", lineno),
                line=lineno,
                raw=self.text[start:i],
            ),
            i,
        )

    @staticmethod
    def _line_number(text: str | None, lineno: int) -> int | None:
        if text is None or not text.strip():
            return None
        try:
            return int(text.strip())
        except ValueError:
            raise UnknownOptional(lineno, f"line number {text.strip()!r} is not an integer") from None

    @staticmethod
    def _mode(text: str | None, allowed: tuple[str, ...], default: str, lineno: int) -> str:
        if text is None or not text.strip():
            return default
        value = text.strip()
        if value not in allowed:
            raise UnknownOptional(
                lineno, f"unknown output mode {value!r} (expected one of {', '.join(allowed)})"
            )
        return value


_PARSERS = {
    "runExtCode": _Scanner._parse_run_ext,
    "showCode": _Scanner._parse_show_code,
    "includeOutput": _Scanner._parse_include_output,
    "inln": _Scanner._parse_inline,
}
_PARSERS.update({word: _Scanner._parse_short_run for word in SHORT_RUN})
_PARSERS.update({word: _Scanner._parse_short_inline for word in SHORT_INLINE})
