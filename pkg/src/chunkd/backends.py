"""Backend definitions: how to launch and talk to each interpreter.

A registry maps backend names (R, julia, matlab, sh, ...) to their launch
arguments, TCP port, and the per-engine command templates used to detect
completion and to source a file. Defaults can be overlaid from a plain-text
config file; the format is documented in the README.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import DuplicatePort, MalformedConfig, NotServerCapable, UnknownBackend

TOKEN_PLACEHOLDER = "{token}"
PATH_PLACEHOLDER = "{path}"

DEFAULT_TIMEOUT_S = 30.0


@dataclass(frozen=True)
class BackendSpec:
    """Launch and connection parameters for one interpreter backend.

    ``sentinel_template`` must print its ``{token}`` placeholder followed by
    a line break when executed by the engine; ``file_run_template`` must make
    the engine execute the file substituted for ``{path}``. Backends without
    a port/repl configuration are batch-only.
    """

    name: str
    executable: str
    batch_args: tuple[str, ...] = ()
    repl_args: tuple[str, ...] | None = None
    port: int | None = None
    sentinel_template: str | None = None
    file_run_template: str | None = None
    timeout_s: float = DEFAULT_TIMEOUT_S
    prompt_pattern: str | None = None

    def __post_init__(self):
        if not self.name:
            raise ValueError("backend name must be non-empty")
        if not self.executable:
            raise ValueError(f"backend {self.name!r}: executable must be non-empty")
        if self.port is not None and not 1 <= self.port <= 65535:
            raise ValueError(f"backend {self.name!r}: port {self.port} out of range 1-65535")
        if self.timeout_s <= 0:
            raise ValueError(f"backend {self.name!r}: timeout_s must be positive")
        if self.server_capable:
            for label, template, placeholder in (
                ("sentinel_template", self.sentinel_template, TOKEN_PLACEHOLDER),
                ("file_run_template", self.file_run_template, PATH_PLACEHOLDER),
            ):
                if template is None or template.count(placeholder) != 1:
                    raise ValueError(
                        f"backend {self.name!r}: {label} must contain the placeholder "
                        f"{placeholder} exactly once"
                    )

    @property
    def server_capable(self) -> bool:
        return self.port is not None and self.repl_args is not None

    def render_sentinel(self, token: str) -> str:
        if self.sentinel_template is None:
            raise NotServerCapable(f"backend {self.name!r} has no sentinel template")
        return self.sentinel_template.replace(TOKEN_PLACEHOLDER, token)

    def render_file_run(self, path: str) -> str:
        if self.file_run_template is None:
            raise NotServerCapable(f"backend {self.name!r} has no file-run template")
        return self.file_run_template.replace(PATH_PLACEHOLDER, path)

    def batch_command_text(self) -> str:
        """The whitespace-joined command used when this backend runs in batch mode."""
        return " ".join((self.executable, *self.batch_args))


@dataclass(frozen=True)
class Registry:
    """Immutable name -> BackendSpec map; safe to share across threads."""

    backends: dict[str, BackendSpec]

    def __post_init__(self):
        by_port: dict[int, str] = {}
        for name, spec in self.backends.items():
            if name != spec.name:
                raise ValueError(f"registry key {name!r} does not match spec name {spec.name!r}")
            if spec.port is None:
                continue
            if spec.port in by_port:
                raise DuplicatePort(
                    f"backends {by_port[spec.port]!r} and {name!r} both claim port {spec.port}"
                )
            by_port[spec.port] = name

    def resolve(self, name: str) -> BackendSpec:
        try:
            return self.backends[name]
        except KeyError:
            known = ", ".join(sorted(self.backends))
            raise UnknownBackend(f"no backend named {name!r} (known: {known})") from None

    def names(self) -> list[str]:
        return sorted(self.backends)

    def server_names(self) -> list[str]:
        return sorted(n for n, s in self.backends.items() if s.server_capable)


def default_registry() -> Registry:
    """The bundled backends: R, julia, matlab on their usual ports, plus batch-only sh.

    The interactive launch flags are sensible defaults for piped stdin and can
    be overridden per site via the config file.
    """
    specs = [
        BackendSpec(
            name="R",
            executable="R",
            batch_args=("--vanilla",),
            repl_args=("--vanilla", "--no-echo"),
            port=65432,
            sentinel_template='cat("{token}\\n")',
            file_run_template='source("{path}")',
        ),
        BackendSpec(
            name="julia",
            executable="julia",
            batch_args=(),
            repl_args=("-q", "-i"),
            port=65431,
            sentinel_template='println("{token}")',
            file_run_template='include("{path}")',
        ),
        BackendSpec(
            name="matlab",
            executable="matlab",
            batch_args=("-batch",),
            repl_args=("-nodesktop", "-nosplash"),
            port=65430,
            sentinel_template="disp('{token}')",
            file_run_template="run('{path}')",
        ),
        # Generic shell backend used in batch mode only; server operations on
        # it fail loudly instead of guessing a REPL configuration.
        BackendSpec(name="sh", executable="sh"),
    ]
    return Registry({spec.name: spec for spec in specs})


def resolve_backend(registry: Registry, name: str) -> BackendSpec:
    return registry.resolve(name)


_CONFIG_KEYS = (
    "executable",
    "port",
    "batch_args",
    "repl_args",
    "sentinel_template",
    "file_run_template",
    "timeout_s",
    "prompt_pattern",
)


def parse_config(text: str, base: Registry | None = None) -> Registry:
    """Overlay config text onto a base registry (the defaults unless given).

    A ``backend <name>`` section starts at column zero; its indented
    ``key=value`` lines override the same-named default entry field by
    field. Unknown names start from a blank entry and must at least set
    ``executable``.
    """
    base = base if base is not None else default_registry()
    sections: list[tuple[str, int, dict[str, tuple[str, int]]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if raw[:1] not in (" ", "\t"):
            parts = stripped.split()
            if len(parts) != 2 or parts[0] != "backend":
                raise MalformedConfig(lineno, f"expected 'backend <name>', got {stripped!r}")
            sections.append((parts[1], lineno, {}))
            continue
        if not sections:
            raise MalformedConfig(lineno, "field line before any 'backend' header")
        key, sep, value = stripped.partition("=")
        key = key.strip()
        if not sep:
            raise MalformedConfig(lineno, f"expected 'key=value', got {stripped!r}")
        if key not in _CONFIG_KEYS:
            raise MalformedConfig(lineno, f"unknown key {key!r}")
        sections[-1][2][key] = (value.strip(), lineno)

    merged = dict(base.backends)
    for name, header_line, fields in sections:
        merged[name] = _build_spec(name, header_line, fields, merged.get(name))
    try:
        return Registry(merged)
    except ValueError as exc:
        raise MalformedConfig(0, str(exc)) from None


def _build_spec(
    name: str,
    header_line: int,
    fields: dict[str, tuple[str, int]],
    base: BackendSpec | None,
) -> BackendSpec:
    kwargs = {
        "name": name,
        "executable": base.executable if base else "",
        "batch_args": base.batch_args if base else (),
        "repl_args": base.repl_args if base else None,
        "port": base.port if base else None,
        "sentinel_template": base.sentinel_template if base else None,
        "file_run_template": base.file_run_template if base else None,
        "timeout_s": base.timeout_s if base else DEFAULT_TIMEOUT_S,
        "prompt_pattern": base.prompt_pattern if base else None,
    }
    for key, (value, lineno) in fields.items():
        if key == "port":
            if value == "":
                kwargs["port"] = None
            else:
                try:
                    kwargs["port"] = int(value)
                except ValueError:
                    raise MalformedConfig(lineno, f"port must be an integer, got {value!r}") from None
        elif key in ("batch_args", "repl_args"):
            kwargs[key] = tuple(value.split())
        elif key == "timeout_s":
            try:
                kwargs["timeout_s"] = float(value)
            except ValueError:
                raise MalformedConfig(lineno, f"timeout_s must be a number, got {value!r}") from None
        else:
            kwargs[key] = value if value else None
    if not kwargs["executable"]:
        raise MalformedConfig(header_line, f"backend {name!r} does not define an executable")
    try:
        return BackendSpec(**kwargs)
    except ValueError as exc:
        raise MalformedConfig(header_line, str(exc)) from None


def load_config(path: str | Path) -> Registry:
    """Read a config file and overlay it onto the default registry."""
    return parse_config(Path(path).read_text(encoding="utf-8"))
