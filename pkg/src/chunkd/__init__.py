"""chunkd: execute code chunks referenced from LaTeX documents.

Chunks run either through a persistent per-language REPL session daemon
reachable over TCP, or by fresh batch invocation of an interpreter; their
outputs are cached under tmp/ and woven back into the document in vbox,
tex, or inline form.
"""

__version__ = "0.1.0"

from .backends import (
    BackendSpec,
    Registry,
    default_registry,
    load_config,
    parse_config,
    resolve_backend,
)
from .batch import BatchCommand, RunResult, build_batch_command, run_batch
from .cache import (
    ExecutionPolicy,
    OutputName,
    RunMode,
    decide_execution,
    fetch_cached,
    resolve_output_name,
)
from .directives import (
    FileBlock,
    IncludeOutput,
    Inline,
    InlineCode,
    RunExt,
    ShortInline,
    ShortRun,
    ShowCode,
    Text,
    extract_inline_code,
    reassemble,
    scan_document,
    slice_lines,
)
from .errors import ChunkdError
from .protocol import (
    RunRequest,
    RunResponse,
    decode_request,
    decode_response,
    encode_request,
    encode_response,
    ping,
    send_run,
)
from .server import (
    Daemon,
    Session,
    execute_in_repl,
    handle_request,
    restart_session,
    serve,
    start_session,
)
from .weaver import (
    ChunkRecord,
    OutputArtifact,
    WeaveReport,
    render_code_listing,
    render_output,
    weave,
)

__all__ = [
    "__version__",
    "BackendSpec",
    "Registry",
    "default_registry",
    "load_config",
    "parse_config",
    "resolve_backend",
    "BatchCommand",
    "RunResult",
    "build_batch_command",
    "run_batch",
    "ExecutionPolicy",
    "OutputName",
    "RunMode",
    "decide_execution",
    "fetch_cached",
    "resolve_output_name",
    "FileBlock",
    "IncludeOutput",
    "Inline",
    "InlineCode",
    "RunExt",
    "ShortInline",
    "ShortRun",
    "ShowCode",
    "Text",
    "extract_inline_code",
    "reassemble",
    "scan_document",
    "slice_lines",
    "ChunkdError",
    "RunRequest",
    "RunResponse",
    "decode_request",
    "decode_response",
    "encode_request",
    "encode_response",
    "ping",
    "send_run",
    "Daemon",
    "Session",
    "execute_in_repl",
    "handle_request",
    "restart_session",
    "serve",
    "start_session",
    "ChunkRecord",
    "OutputArtifact",
    "WeaveReport",
    "render_code_listing",
    "render_output",
    "weave",
]
