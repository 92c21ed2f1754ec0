"""Shared fixtures: mock interpreter backends and running daemons."""

from __future__ import annotations

import contextlib
import socket
import sys

import pytest

from chunkd.backends import BackendSpec, Registry, parse_config
from chunkd.server import Daemon, start_session

MOCK_SENTINEL = "echo {token}"
MOCK_FILE_RUN = "source {path}"


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def mock_repl_args(record=None, banner=None, prompt=None) -> tuple[str, ...]:
    args = ["-u", "-m", "chunkd.mockrepl"]
    if record is not None:
        args += ["--record", str(record)]
    if banner is not None:
        args += ["--banner", banner]
    if prompt is not None:
        args += ["--prompt", prompt]
    return tuple(args)


def mock_batch_command() -> str:
    """Batch command text that runs the mock engine on a script file."""
    return f"{sys.executable} -m chunkd.mockrepl"


def mock_backend_spec(
    port=None,
    name="mock",
    record=None,
    banner=None,
    prompt=None,
    prompt_pattern=None,
    timeout_s=10.0,
) -> BackendSpec:
    return BackendSpec(
        name=name,
        executable=sys.executable,
        batch_args=("-m", "chunkd.mockrepl"),
        repl_args=mock_repl_args(record=record, banner=banner, prompt=prompt),
        port=port if port is not None else free_port(),
        sentinel_template=MOCK_SENTINEL,
        file_run_template=MOCK_FILE_RUN,
        timeout_s=timeout_s,
        prompt_pattern=prompt_pattern,
    )


def mock_config_text(backends: dict[str, dict]) -> str:
    """Config-file text that rebinds registry names to mock engines."""
    lines = []
    for name, opts in backends.items():
        port = opts.get("port") or free_port()
        lines.append(f"backend {name}")
        lines.append(f"  executable={sys.executable}")
        lines.append(f"  repl_args={' '.join(mock_repl_args(record=opts.get('record')))}")
        lines.append("  batch_args=-m chunkd.mockrepl")
        lines.append(f"  port={port}")
        lines.append(f"  sentinel_template={MOCK_SENTINEL}")
        lines.append(f"  file_run_template={MOCK_FILE_RUN}")
        lines.append(f"  timeout_s={opts.get('timeout_s', 10)}")
    return "\n".join(lines) + "\n"


def mock_registry(backends: dict[str, dict]) -> Registry:
    return parse_config(mock_config_text(backends))


@contextlib.contextmanager
def running_daemon(registry: Registry, names: list[str], workdir=None):
    daemon = Daemon(registry, names, workdir=workdir)
    daemon.start()
    try:
        assert set(daemon.servers) == set(names), f"failed to start: {daemon.failures}"
        yield daemon
    finally:
        daemon.close()


@pytest.fixture
def mock_session():
    """Factory for live mock sessions; everything started gets closed."""
    sessions = []

    def make(**kwargs):
        spec = kwargs.pop("spec", None) or mock_backend_spec(**kwargs)
        session = start_session(spec)
        sessions.append(session)
        return session

    yield make
    for session in sessions:
        session.close()
