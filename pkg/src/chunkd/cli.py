"""Command-line entry point: the daemon, the per-chunk client, and the weaver.

``exec`` is what a shell-escape macro calls once per chunk: it prints
nothing on success so the TeX log stays clean, and reports problems on
stderr only. Exit codes: 0 success, 1 chunk/engine errors, 2 usage errors.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import subprocess
import sys
import time
from pathlib import Path

from . import __version__
from .backends import BackendSpec, Registry, default_registry, load_config
from .cache import ExecutionPolicy, RunMode, fetch_cached, resolve_output_name
from .batch import build_batch_command, run_batch
from .directives import extract_inline_code, slice_lines
from .errors import ChunkdError, ConnectRefused, WeaveError
from .protocol import RunRequest, ping, send_run
from .report import format_plain, format_tsv, save_timing_figure
from .server import Daemon
from .weaver import OutputArtifact, render_code_listing, render_output, weave

_AUTOSTART_WINDOW_S = 10.0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chunkd",
        description=(
            "Run code chunks referenced from tex documents through persistent "
            "interpreter sessions or batch execution, cache the outputs under "
            "tmp/, and weave them back into the text."
        ),
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="backend config file (default: $CHUNKD_CONFIG)")

    p = sub.add_parser("serve", parents=[common], help="run the session daemon for the named backends")
    p.add_argument("backends", nargs="*", help="backend names to serve (e.g. R julia)")
    p.add_argument("--foreground", action="store_true", help="stay attached instead of detaching")

    p = sub.add_parser("stop", parents=[common], help="send SHUTDOWN to running backend daemons")
    p.add_argument("backends", nargs="*", help="backends to stop (default: all server-capable)")

    p = sub.add_parser("exec", parents=[common], help="execute one chunk and write tmp/<out>")
    p.add_argument("--backend", help="registry backend name")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--file", help="source file for the engine to run")
    source.add_argument("--code", help="inline code to run")
    p.add_argument("--out", required=True, help="output name under tmp/")
    p.add_argument("--mode", choices=("run", "cache"), default="run")
    p.add_argument("--batch", metavar="CMD", help="run via this batch command instead of the server")

    p = sub.add_parser("inline", parents=[common], help="run a short snippet and print the rendered fragment")
    p.add_argument("--backend", required=True)
    code = p.add_mutually_exclusive_group(required=True)
    code.add_argument("--code", help="the snippet itself")
    code.add_argument("--code-file", help="file holding the snippet (avoids shell quoting entirely)")
    p.add_argument("--render", choices=("inline", "vbox"), default="inline")
    p.add_argument("--batch", metavar="CMD", help="run via this batch command instead of the server")

    p = sub.add_parser("show", parents=[common], help="print a source listing fragment")
    p.add_argument("--lang", required=True)
    p.add_argument("--file", required=True)
    p.add_argument("--first", type=int)
    p.add_argument("--last", type=int)
    p.add_argument("--no-highlight", action="store_true", help="emit a plain Verbatim environment")

    p = sub.add_parser("weave", parents=[common], help="process a whole document")
    p.add_argument("document")
    p.add_argument("--mode", choices=("run", "cache"), default="run")
    p.add_argument("--keep-going", action="store_true", help="collect chunk errors instead of aborting")
    p.add_argument("--report", choices=("plain", "tsv"), default="plain")
    p.add_argument("--report-file", help="write the report here instead of stdout")
    p.add_argument("--timing-figure", help="render per-chunk wall times to this image file")
    p.add_argument("--out", help="woven output path (default: <doc>.woven.tex)")
    p.add_argument("--no-highlight", action="store_true")
    p.add_argument("--no-autostart", action="store_true", help="never spawn a daemon on demand")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args, parser)
    except ChunkdError as exc:
        print(f"chunkd: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"chunkd: {exc}", file=sys.stderr)
        return 1


def _dispatch(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    config_path = args.config or os.environ.get("CHUNKD_CONFIG")
    registry = load_config(config_path) if config_path else default_registry()
    handler = {
        "serve": _cmd_serve,
        "stop": _cmd_stop,
        "exec": _cmd_exec,
        "inline": _cmd_inline,
        "show": _cmd_show,
        "weave": _cmd_weave,
    }[args.command]
    return handler(args, registry, config_path, parser)


# -- daemon control -------------------------------------------------------


def _cmd_serve(args, registry: Registry, config_path, parser) -> int:
    if not args.backends:
        return 0
    if not args.foreground:
        _spawn_detached_daemon(args.backends, config_path)
        return 0
    daemon = Daemon(registry, args.backends, workdir=Path.cwd(), pid_dir=Path("tmp"))
    daemon.start()
    if not daemon.servers:
        return 1 if daemon.failures else 0
    try:
        daemon.wait()
    except KeyboardInterrupt:
        pass
    finally:
        daemon.close()
    return 0


def _cmd_stop(args, registry: Registry, config_path, parser) -> int:
    names = args.backends or registry.server_names()
    status = 0
    for name in names:
        spec = registry.resolve(name)
        if not spec.server_capable:
            print(f"chunkd: backend {name!r} is batch-only, nothing to stop", file=sys.stderr)
            status = 1
            continue
        try:
            send_run(("127.0.0.1", spec.port), RunRequest("SHUTDOWN"), timeout_s=5.0)
        except ConnectRefused:
            pass  # already down
    return status


def _spawn_detached_daemon(names: list[str], config_path: str | None) -> None:
    argv = [sys.executable, "-m", "chunkd", "serve", *names, "--foreground"]
    if config_path:
        argv += ["--config", str(config_path)]
    subprocess.Popen(
        argv,
        stdin=subprocess.DEVNULL,
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
        start_new_session=True,
    )


def ensure_daemon(
    spec: BackendSpec,
    config_path: str | None = None,
    workdir: str | Path | None = None,
) -> None:
    """Make sure a daemon answers on the backend's port, auto-starting one if not.

    Mirrors the compile-time behavior of checking for a running server and
    starting it on demand; retries with exponential backoff for up to 10s.
    """
    address = ("127.0.0.1", spec.port)
    try:
        ping(address, timeout_s=2.0)
        return
    except ChunkdError:
        pass
    argv = [sys.executable, "-m", "chunkd", "serve", spec.name, "--foreground"]
    if config_path:
        argv += ["--config", str(config_path)]
    subprocess.Popen(
        argv,
        cwd=workdir,
        stdin=subprocess.DEVNULL,
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
        start_new_session=True,
    )
    deadline = time.monotonic() + _AUTOSTART_WINDOW_S
    delay = 0.05
    while True:
        try:
            ping(address, timeout_s=2.0)
            return
        except ChunkdError:
            if time.monotonic() >= deadline:
                raise ConnectRefused(
                    f"no daemon for backend {spec.name!r} on port {spec.port}, "
                    f"and auto-start did not come up within {_AUTOSTART_WINDOW_S:g}s"
                ) from None
            time.sleep(delay)
            delay = min(delay * 2, 1.0)


# -- per-chunk client -------------------------------------------------------


def _cmd_exec(args, registry: Registry, config_path, parser) -> int:
    workdir = Path.cwd()
    out_name = resolve_output_name(args.out, ExecutionPolicy())
    out_abs = out_name.resolve(workdir)

    if args.mode == "cache":
        fetch_cached(out_name, workdir)  # raises MissingCache when absent
        return 0

    if args.batch:
        source = _exec_source(args, workdir, out_name)
        return _run_batch_cli(args.batch, source, out_abs, workdir, out_name)

    if not args.backend:
        parser.error("exec needs --backend (or an explicit --batch command)")  # exits 2

    spec = registry.resolve(args.backend)
    if spec.server_capable:
        ensure_daemon(spec, config_path=config_path, workdir=workdir)
        if args.file:
            request = RunRequest(
                "RUN", "file", str(out_abs), str(Path(args.file).resolve()).encode("utf-8")
            )
        else:
            request = RunRequest("RUN", "inline", str(out_abs), args.code.encode("utf-8"))
        response = send_run(("127.0.0.1", spec.port), request, timeout_s=spec.timeout_s + 10.0)
        if not response.ok:
            print(f"chunkd: {response.code}: {response.message}", file=sys.stderr)
            return 1
        return 0

    # Batch-only backend: fall back to its configured batch command.
    source = _exec_source(args, workdir, out_name)
    return _run_batch_cli(spec.batch_command_text(), source, out_abs, workdir, out_name)


def _exec_source(args, workdir: Path, out_name) -> Path:
    if args.file:
        return Path(args.file)
    target = out_name.resolve(workdir).with_suffix(".src")
    target.parent.mkdir(parents=True, exist_ok=True)
    code = args.code if args.code.endswith("\n") else args.code + "\n"
    target.write_text(code, encoding="utf-8")
    return target


def _run_batch_cli(command_text: str, source: Path, out_abs: Path, workdir: Path, out_name) -> int:
    result = run_batch(build_batch_command(command_text, source, out_abs, workdir=workdir))
    if result.status != 0:
        print(
            f"chunkd: batch command exited with status {result.status}; "
            f"output kept in {out_name.path}",
            file=sys.stderr,
        )
        return 1
    return 0


def _cmd_inline(args, registry: Registry, config_path, parser) -> int:
    spec = registry.resolve(args.backend)
    raw_code = args.code if args.code is not None else Path(args.code_file).read_text(encoding="utf-8").rstrip("\n")
    inline_code = extract_inline_code(raw_code)
    digest = hashlib.sha1(f"{args.backend}\n{raw_code}".encode("utf-8")).hexdigest()[:12]
    out_name = resolve_output_name(f"inln-{digest}", ExecutionPolicy())
    workdir = Path.cwd()
    out_abs = out_name.resolve(workdir)

    if args.batch:
        source = _materialize_snippet(inline_code.code, out_abs)
        status = _run_batch_cli(args.batch, source, out_abs, workdir, out_name)
        if status != 0:
            return status
    elif spec.server_capable:
        ensure_daemon(spec, config_path=config_path, workdir=workdir)
        if inline_code.direct:
            request = RunRequest("RUN", "inline", str(out_abs), inline_code.code.encode("utf-8"))
        else:
            source = _materialize_snippet(inline_code.code, out_abs)
            request = RunRequest("RUN", "file", str(out_abs), str(source).encode("utf-8"))
        response = send_run(("127.0.0.1", spec.port), request, timeout_s=spec.timeout_s + 10.0)
        if not response.ok:
            print(f"chunkd: {response.code}: {response.message}", file=sys.stderr)
            return 1
    else:
        source = _materialize_snippet(inline_code.code, out_abs)
        status = _run_batch_cli(spec.batch_command_text(), source, out_abs, workdir, out_name)
        if status != 0:
            return status

    fragment = render_output(OutputArtifact(out_abs.read_bytes(), args.render))
    sys.stdout.write(fragment)
    return 0


def _materialize_snippet(code: str, out_abs: Path) -> Path:
    source = out_abs.with_suffix(".src")
    source.parent.mkdir(parents=True, exist_ok=True)
    source.write_text(code if code.endswith("\n") else code + "\n", encoding="utf-8")
    return source


def _cmd_show(args, registry: Registry, config_path, parser) -> int:
    text = Path(args.file).read_text(encoding="utf-8")
    fragment = render_code_listing(
        args.lang,
        slice_lines(text, args.first, args.last),
        highlight=not args.no_highlight,
    )
    sys.stdout.write(fragment)
    return 0


# -- whole-document pass ------------------------------------------------------


def _cmd_weave(args, registry: Registry, config_path, parser) -> int:
    policy = ExecutionPolicy(
        global_mode=RunMode.RUN if args.mode == "run" else RunMode.CACHE
    )
    try:
        _woven, report = weave(
            args.document,
            registry,
            policy,
            keep_going=args.keep_going,
            highlight=not args.no_highlight,
            autostart=not args.no_autostart,
            config_path=config_path,
            output_path=args.out,
        )
    except WeaveError as exc:
        print(f"chunkd: {exc}", file=sys.stderr)
        if exc.report is not None:
            _emit_report(exc.report, args)
        return 1
    _emit_report(report, args)
    return 1 if report.errors else 0


def _emit_report(report, args) -> None:
    text = format_tsv(report) if args.report == "tsv" else format_plain(report)
    if args.report_file:
        Path(args.report_file).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.timing_figure:
        save_timing_figure(report, args.timing_figure)


if __name__ == "__main__":
    sys.exit(main())
