"""Framing and the client side of the chunk-daemon wire protocol.

One request, one response, one connection; no pipelining. Headers are
UTF-8 lines, the payload is length-prefixed raw bytes, and the response is
a single line. The exact format is part of the public contract and is
documented verbatim in the README.
"""

from __future__ import annotations

import io
import socket
from dataclasses import dataclass

from .errors import (
    ConnectRefused,
    LengthMismatch,
    MalformedHeader,
    ResponseTimeout,
    UnknownVerb,
)

MAGIC = "CHUNKD/1"
VERBS = ("RUN", "PING", "SHUTDOWN")
SOURCE_KINDS = ("inline", "file")

_MAX_HEADER_LINE = 8192


@dataclass(frozen=True)
class RunRequest:
    """One framed request: RUN carries code or a file path plus an output target."""

    verb: str
    source_kind: str | None = None
    output_path: str | None = None
    payload: bytes = b""

    def validate(self) -> None:
        if self.verb not in VERBS:
            raise UnknownVerb(f"unknown verb {self.verb!r}")
        if self.verb == "RUN":
            if self.source_kind not in SOURCE_KINDS:
                raise MalformedHeader(
                    f"RUN needs source inline|file, got {self.source_kind!r}"
                )
            if not self.output_path:
                raise MalformedHeader("RUN needs a non-empty output path")
            if "\n" in self.output_path or "\r" in self.output_path:
                raise MalformedHeader("output path must not contain line breaks")
        elif self.source_kind is not None or self.output_path is not None or self.payload:
            raise MalformedHeader(f"{self.verb} carries no source, output, or payload")


@dataclass(frozen=True)
class RunResponse:
    status: str  # "OK" | "ERR"
    byte_count: int = 0  # OK only
    code: str = ""  # ERR only
    message: str = ""  # ERR only

    @property
    def ok(self) -> bool:
        return self.status == "OK"


def encode_request(request: RunRequest) -> bytes:
    request.validate()
    lines = [f"{MAGIC} {request.verb}"]
    if request.verb == "RUN":
        lines.append(f"source: {request.source_kind}")
        lines.append(f"output: {request.output_path}")
    lines.append(f"length: {len(request.payload)}")
    header = "\n".join(lines) + "\n\n"
    return header.encode("utf-8") + request.payload


def read_request(stream) -> RunRequest:
    """Decode one request from a binary file-like object."""
    first = _read_header_line(stream)
    if first is None:
        raise MalformedHeader("empty request")
    parts = first.split(" ")
    if len(parts) != 2 or parts[0] != MAGIC:
        raise MalformedHeader(f"bad request line {first!r}")
    verb = parts[1]
    if verb not in VERBS:
        raise UnknownVerb(f"unknown verb {verb!r}")
    fields: dict[str, str] = {}
    while True:
        line = _read_header_line(stream)
        if line is None:
            raise MalformedHeader("header ended before the blank separator line")
        if line == "":
            break
        key, sep, value = line.partition(": ")
        if not sep or key not in ("source", "output", "length"):
            raise MalformedHeader(f"bad header line {line!r}")
        if key in fields:
            raise MalformedHeader(f"duplicate header {key!r}")
        fields[key] = value
    if "length" not in fields:
        raise MalformedHeader("missing length header")
    try:
        length = int(fields["length"])
        if length < 0:
            raise ValueError
    except ValueError:
        raise MalformedHeader(f"bad length {fields['length']!r}") from None
    payload = _read_exact(stream, length)
    request = RunRequest(
        verb=verb,
        source_kind=fields.get("source"),
        output_path=fields.get("output"),
        payload=payload,
    )
    request.validate()
    return request


def decode_request(data: bytes) -> RunRequest:
    stream = io.BytesIO(data)
    request = read_request(stream)
    if stream.read(1):
        raise MalformedHeader("trailing bytes after the declared payload")
    return request


def encode_response(response: RunResponse) -> bytes:
    if response.status == "OK":
        return f"OK {response.byte_count}\n".encode("utf-8")
    code = response.code or "ERR"
    message = " ".join(response.message.split())  # keep the response single-line
    line = f"ERR {code} {message}".rstrip()
    return (line + "\n").encode("utf-8")


def decode_response(data: bytes) -> RunResponse:
    line = data.decode("utf-8", errors="replace").rstrip("\r\n")
    parts = line.split(" ", 2)
    if parts[0] == "OK" and len(parts) >= 2 and parts[1].isdigit():
        return RunResponse("OK", byte_count=int(parts[1]))
    if parts[0] == "ERR" and len(parts) >= 2:
        return RunResponse("ERR", code=parts[1], message=parts[2] if len(parts) > 2 else "")
    raise MalformedHeader(f"bad response line {line!r}")


def send_run(address: tuple[str, int], request: RunRequest, timeout_s: float = 30.0) -> RunResponse:
    """Send one request and block until the daemon's response arrives.

    The blocking read is what makes a document pass deterministic: control
    returns to the caller only once the output file has been written (or the
    chunk has failed).
    """
    host, port = address
    try:
        sock = socket.create_connection(address, timeout=timeout_s)
    except ConnectionRefusedError as exc:
        raise ConnectRefused(f"no daemon listening on {host}:{port}") from exc
    except socket.timeout as exc:
        raise ResponseTimeout(f"connect to {host}:{port} timed out") from exc
    except OSError as exc:
        raise ConnectRefused(f"cannot reach {host}:{port}: {exc}") from exc
    with sock:
        sock.settimeout(timeout_s)
        try:
            sock.sendall(encode_request(request))
            data = _recv_line(sock)
        except socket.timeout as exc:
            raise ResponseTimeout(
                f"no response from {host}:{port} within {timeout_s:g}s"
            ) from exc
    return decode_response(data)


def ping(address: tuple[str, int], timeout_s: float = 5.0) -> RunResponse:
    return send_run(address, RunRequest("PING"), timeout_s=timeout_s)


def _read_header_line(stream) -> str | None:
    buf = bytearray()
    while True:
        byte = stream.read(1)
        if not byte:
            if not buf:
                return None
            raise MalformedHeader("connection closed inside a header line")
        if byte == b"\n":
            try:
                return buf.decode("utf-8")
            except UnicodeDecodeError:
                raise MalformedHeader("header line is not valid UTF-8") from None
        buf += byte
        if len(buf) > _MAX_HEADER_LINE:
            raise MalformedHeader("header line too long")


def _read_exact(stream, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise LengthMismatch(f"declared {n} payload bytes, received {n - remaining}")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _recv_line(sock: socket.socket) -> bytes:
    buf = bytearray()
    while not buf.endswith(b"\n"):
        chunk = sock.recv(4096)
        if not chunk:
            break
        buf += chunk
    if not buf:
        raise MalformedHeader("connection closed without a response")
    return bytes(buf)
