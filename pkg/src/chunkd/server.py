"""Persistent interpreter sessions and the TCP daemon that serves them.

Each served backend owns one long-lived engine subprocess with merged
stdout/stderr. Completion of a code payload is detected by a per-request
sentinel token that the engine itself is asked to print; execution against
one engine is strictly serialized, while distinct backends run in parallel.
"""

from __future__ import annotations

import errno
import os
import queue
import re
import secrets
import socket
import subprocess
import sys
import threading
import time
from pathlib import Path

from .backends import BackendSpec, Registry
from .errors import (
    AddressInUse,
    ChunkdError,
    EngineDied,
    ExecTimeout,
    NotServerCapable,
    SessionDead,
    SpawnFailure,
    StartupTimeout,
)
from .protocol import RunRequest, RunResponse, encode_response, read_request

_READ_CHUNK = 65536
_HEADER_TIMEOUT_S = 30.0


class Session:
    """One live interpreter subprocess plus its serialization lock.

    States: starting -> ready <-> busy, and dead once the engine has exited.
    At most one payload executes at any instant; concurrent callers queue on
    the internal lock.
    """

    def __init__(self, spec: BackendSpec, listener: socket.socket, workdir: Path | None = None):
        self.spec = spec
        self.listener = listener
        self.workdir = workdir
        self.state = "starting"
        self.started_at = time.time()
        self.process: subprocess.Popen | None = None
        self._lock = threading.Lock()
        self._chunks: queue.Queue = queue.Queue()
        self._residual = b""
        self._spawn()

    # -- engine lifecycle ------------------------------------------------

    def _spawn(self) -> None:
        try:
            self.process = subprocess.Popen(
                [self.spec.executable, *(self.spec.repl_args or ())],
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.STDOUT,
                bufsize=0,
                cwd=self.workdir,
            )
        except FileNotFoundError as exc:
            raise SpawnFailure(
                f"backend {self.spec.name!r}: executable {self.spec.executable!r} not found"
            ) from exc
        except OSError as exc:
            raise SpawnFailure(f"backend {self.spec.name!r}: {exc}") from exc
        self._chunks = queue.Queue()
        self._residual = b""
        reader = threading.Thread(
            target=self._pump,
            args=(self.process.stdout, self._chunks),
            name=f"chunkd-read-{self.spec.name}",
            daemon=True,
        )
        reader.start()

    @staticmethod
    def _pump(stream, sink: queue.Queue) -> None:
        # Dedicated reader: drains the merged output pipe so the engine can
        # never block on a full pipe, and signals EOF with None.
        while True:
            data = stream.read(_READ_CHUNK)
            if not data:
                sink.put(None)
                return
            sink.put(data)

    def drain_startup(self) -> None:
        """Consume whatever the engine prints at startup, deterministically.

        One sentinel round-trip with an empty payload: everything the banner
        produced is read and discarded before the session is handed out.
        """
        try:
            self.execute("")
        except ExecTimeout as exc:
            raise StartupTimeout(
                f"backend {self.spec.name!r} did not answer its first sentinel "
                f"within {self.spec.timeout_s:g}s"
            ) from exc
        except EngineDied as exc:
            raise SpawnFailure(f"backend {self.spec.name!r} exited during startup") from exc

    def _mark_dead(self, kill: bool) -> None:
        self.state = "dead"
        proc = self.process
        if proc is None:
            return
        if kill and proc.poll() is None:
            proc.kill()
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            pass

    def _shutdown_engine(self) -> None:
        proc = self.process
        if proc is not None and proc.poll() is None:
            try:
                proc.stdin.close()  # EOF first: most engines exit cleanly
            except OSError:
                pass
            try:
                proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                proc.kill()
                try:
                    proc.wait(timeout=5)
                except subprocess.TimeoutExpired:
                    pass
        self.state = "dead"

    def close(self) -> None:
        """Terminate the engine and release the listener."""
        with self._lock:
            self._shutdown_engine()
        try:
            self.listener.close()
        except OSError:
            pass

    # -- execution ---------------------------------------------------------

    def execute(self, code: str, timeout_s: float | None = None) -> bytes:
        """Run one code payload and return the bytes it printed.

        Writes the code, a line break, then the rendered sentinel command to
        the engine's stdin, and reads the merged output stream until the
        engine prints the token back. A timeout kills the engine: a REPL
        stuck mid-computation cannot be reused safely.
        """
        limit = timeout_s if timeout_s is not None else self.spec.timeout_s
        with self._lock:
            if self.state == "dead":
                raise SessionDead(
                    f"backend {self.spec.name!r}: session is dead; restart it first"
                )
            self.state = "busy"
            try:
                return self._exchange(code, limit)
            finally:
                if self.state != "dead":
                    self.state = "ready"

    def _exchange(self, code: str, timeout_s: float) -> bytes:
        token = secrets.token_hex(16)
        while token in code:  # vanishing odds, but the contract is absolute
            token = secrets.token_hex(16)
        wire = f"{code}\n{self.spec.render_sentinel(token)}\n".encode("utf-8")
        try:
            self.process.stdin.write(wire)
            self.process.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self._mark_dead(kill=False)
            raise EngineDied(
                f"backend {self.spec.name!r}: engine closed its input pipe"
            ) from exc

        token_bytes = token.encode("ascii")
        buf = bytearray(self._residual)
        self._residual = b""
        deadline = time.monotonic() + timeout_s
        while True:
            hit = buf.find(token_bytes)
            if hit != -1:
                newline = buf.find(b"\n", hit + len(token_bytes))
                if newline != -1:
                    self._residual = bytes(buf[newline + 1:])
                    return self._strip_prompts(bytes(buf[:hit]))
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self._mark_dead(kill=True)
                raise ExecTimeout(
                    f"backend {self.spec.name!r}: no sentinel within {timeout_s:g}s; engine killed"
                )
            try:
                data = self._chunks.get(timeout=remaining)
            except queue.Empty:
                self._mark_dead(kill=True)
                raise ExecTimeout(
                    f"backend {self.spec.name!r}: no sentinel within {timeout_s:g}s; engine killed"
                ) from None
            if data is None:
                self._mark_dead(kill=False)
                raise EngineDied(
                    f"backend {self.spec.name!r}: engine exited before finishing "
                    f"(exit status {self.process.poll()})"
                )
            buf += data

    def _strip_prompts(self, data: bytes) -> bytes:
        if not self.spec.prompt_pattern:
            return data
        pattern = re.compile(self.spec.prompt_pattern)
        kept = []
        for line in data.splitlines(keepends=True):
            body = line.rstrip(b"\r\n").decode("utf-8", errors="replace")
            if pattern.fullmatch(body):
                continue
            kept.append(line)
        return b"".join(kept)


def start_session(spec: BackendSpec, workdir: str | Path | None = None) -> Session:
    """Spawn the engine, bind its TCP listener, and drain the startup banner."""
    if not spec.server_capable:
        raise NotServerCapable(
            f"backend {spec.name!r} has no port/repl configuration; use batch mode"
        )
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        listener.bind(("127.0.0.1", spec.port))
        listener.listen()
    except OSError as exc:
        listener.close()
        if exc.errno == errno.EADDRINUSE:
            raise AddressInUse(
                f"port {spec.port} is already in use (another daemon serving {spec.name!r}?)"
            ) from exc
        raise
    try:
        session = Session(spec, listener, workdir=Path(workdir) if workdir else None)
    except Exception:
        listener.close()
        raise
    try:
        session.drain_startup()
    except Exception:
        session.close()
        raise
    return session


def restart_session(session: Session) -> Session:
    """Replace a dead engine with a fresh one behind the same listener."""
    with session._lock:
        session._shutdown_engine()
        session.state = "starting"
        session._spawn()
    session.drain_startup()
    return session


def execute_in_repl(session: Session, code: str) -> bytes:
    """Run code in the live session and return everything it printed."""
    return session.execute(code)


def handle_request(session: Session, request: RunRequest, workdir: str | Path | None = None) -> RunResponse:
    """Execute one RUN request and write its output file atomically.

    For source=file the engine itself reads the file (via the backend's
    file-run template); for source=inline the payload is the code. On engine
    errors no output file is written.
    """
    if request.verb != "RUN":
        return RunResponse("ERR", code="BAD_REQUEST", message=f"cannot handle verb {request.verb}")
    try:
        payload = request.payload.decode("utf-8")
    except UnicodeDecodeError:
        return RunResponse("ERR", code="BAD_REQUEST", message="payload is not valid UTF-8")
    if request.source_kind == "file":
        code = session.spec.render_file_run(payload)
    else:
        code = payload
    try:
        output = session.execute(code)
    except SessionDead as exc:
        return RunResponse("ERR", code="SESSION_DEAD", message=str(exc))
    except EngineDied as exc:
        return RunResponse("ERR", code="ENGINE_DIED", message=str(exc))
    except ExecTimeout as exc:
        return RunResponse("ERR", code="TIMEOUT", message=str(exc))
    target = Path(request.output_path)
    if not target.is_absolute() and workdir is not None:
        target = Path(workdir) / target
    try:
        _write_atomic(target, output)
    except OSError as exc:
        return RunResponse("ERR", code="IO", message=f"cannot write {request.output_path}: {exc}")
    return RunResponse("OK", byte_count=len(output))


def _write_atomic(target: Path, data: bytes) -> None:
    target.parent.mkdir(parents=True, exist_ok=True)
    scratch = target.with_name(f".{target.name}.{os.getpid()}.{secrets.token_hex(4)}.part")
    scratch.write_bytes(data)
    os.replace(scratch, target)


class _BackendServer:
    """Accept loop for one backend's port; execution serializes on the session lock."""

    def __init__(self, session: Session, daemon: "Daemon"):
        self.session = session
        self.daemon = daemon
        self.done = threading.Event()
        self._accept_thread = threading.Thread(
            target=self._accept_loop,
            name=f"chunkd-accept-{session.spec.name}",
            daemon=True,
        )

    def start(self) -> None:
        self._accept_thread.start()

    def stop(self) -> None:
        if self.done.is_set():
            return
        self.done.set()
        self.session.close()
        self.daemon._remove_pid(self.session.spec.port)

    def _accept_loop(self) -> None:
        listener = self.session.listener
        while True:
            try:
                conn, _addr = listener.accept()
            except OSError:
                return  # listener closed: shutting down
            threading.Thread(
                target=self._serve_connection, args=(conn,), daemon=True
            ).start()

    def _serve_connection(self, conn: socket.socket) -> None:
        with conn:
            conn.settimeout(_HEADER_TIMEOUT_S)
            stream = conn.makefile("rb")
            try:
                request = read_request(stream)
            except ChunkdError as exc:
                self._respond(conn, RunResponse("ERR", code="MALFORMED", message=str(exc)))
                return
            except OSError:
                return
            if request.verb == "PING":
                self._respond(conn, RunResponse("OK", byte_count=0))
                return
            if request.verb == "SHUTDOWN":
                self._respond(conn, RunResponse("OK", byte_count=0))
                self.stop()
                return
            conn.settimeout(None)  # execution may legitimately take up to the engine timeout
            response = handle_request(self.session, request, workdir=self.daemon.workdir)
            self._respond(conn, response)

    @staticmethod
    def _respond(conn: socket.socket, response: RunResponse) -> None:
        try:
            conn.sendall(encode_response(response))
        except OSError:
            pass  # client went away; any output file is already written


class Daemon:
    """One session plus one listener per served backend."""

    def __init__(
        self,
        registry: Registry,
        names: list[str],
        workdir: str | Path | None = None,
        pid_dir: str | Path | None = None,
    ):
        self.registry = registry
        self.names = list(names)
        self.workdir = Path(workdir) if workdir else None
        self.pid_dir = Path(pid_dir) if pid_dir else None
        self.servers: dict[str, _BackendServer] = {}
        self.failures: dict[str, Exception] = {}

    def start(self) -> None:
        """Start every requested backend; per-backend failures are reported and skipped."""
        for name in self.names:
            try:
                spec = self.registry.resolve(name)
                session = start_session(spec, workdir=self.workdir)
            except ChunkdError as exc:
                self.failures[name] = exc
                print(f"chunkd: cannot serve {name!r}: {exc}", file=sys.stderr)
                continue
            server = _BackendServer(session, self)
            self.servers[name] = server
            self._write_pid(spec.port)
            server.start()

    def wait(self) -> None:
        """Block until every served backend has been shut down."""
        while not all(server.done.is_set() for server in self.servers.values()):
            time.sleep(0.1)

    def close(self) -> None:
        for server in self.servers.values():
            server.stop()

    def address_of(self, name: str) -> tuple[str, int]:
        return ("127.0.0.1", self.registry.resolve(name).port)

    def _write_pid(self, port: int) -> None:
        if self.pid_dir is None:
            return
        self.pid_dir.mkdir(parents=True, exist_ok=True)
        (self.pid_dir / f"chunkd.{port}.pid").write_text(f"{os.getpid()}\n", encoding="utf-8")

    def _remove_pid(self, port: int) -> None:
        if self.pid_dir is None:
            return
        try:
            (self.pid_dir / f"chunkd.{port}.pid").unlink()
        except OSError:
            pass


def serve(
    registry: Registry,
    names: list[str],
    workdir: str | Path | None = None,
    pid_dir: str | Path | None = None,
) -> None:
    """Run the daemon until every served backend receives SHUTDOWN."""
    daemon = Daemon(registry, names, workdir=workdir, pid_dir=pid_dir)
    daemon.start()
    try:
        daemon.wait()
    finally:
        daemon.close()
