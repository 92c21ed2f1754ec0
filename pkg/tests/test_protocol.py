"""Wire framing round-trips and the blocking client."""

from __future__ import annotations

import socket
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chunkd.errors import (
    ConnectRefused,
    LengthMismatch,
    MalformedHeader,
    ResponseTimeout,
    UnknownVerb,
)
from chunkd.protocol import (
    RunRequest,
    RunResponse,
    decode_request,
    decode_response,
    encode_request,
    encode_response,
    send_run,
)
from conftest import free_port


def test_run_request_roundtrip():
    request = RunRequest("RUN", "inline", "tmp/a", b"1+1")
    encoded = encode_request(request)
    assert encoded.startswith(b"CHUNKD/1 RUN\nsource: inline\noutput: tmp/a\nlength: 3\n\n")
    assert decode_request(encoded) == request


def test_ping_and_shutdown_roundtrip():
    for verb in ("PING", "SHUTDOWN"):
        request = RunRequest(verb)
        assert decode_request(encode_request(request)) == request


def test_encode_validates_run_fields():
    with pytest.raises(MalformedHeader):
        encode_request(RunRequest("RUN", "inline", "", b"x"))
    with pytest.raises(MalformedHeader):
        encode_request(RunRequest("RUN", "nowhere", "tmp/a", b"x"))
    with pytest.raises(MalformedHeader):
        encode_request(RunRequest("RUN", "inline", "tmp/a\nb", b"x"))
    with pytest.raises(UnknownVerb):
        encode_request(RunRequest("EXEC", "inline", "tmp/a", b"x"))
    with pytest.raises(MalformedHeader):
        encode_request(RunRequest("PING", payload=b"x"))


def test_decode_length_mismatch():
    encoded = encode_request(RunRequest("RUN", "inline", "tmp/a", b"0123456789"))
    with pytest.raises(LengthMismatch):
        decode_request(encoded[:-6])  # declared 10 bytes, 4 arrive


def test_decode_rejects_garbage():
    with pytest.raises(MalformedHeader):
        decode_request(b"HELLO WORLD\n\n")
    with pytest.raises(UnknownVerb):
        decode_request(b"CHUNKD/1 FROB\nlength: 0\n\n")
    with pytest.raises(MalformedHeader):
        decode_request(b"CHUNKD/1 PING\nlength: 0\nlength: 0\n\n")
    with pytest.raises(MalformedHeader):
        decode_request(b"CHUNKD/1 PING\nlength: zero\n\n")
    with pytest.raises(MalformedHeader):
        decode_request(encode_request(RunRequest("PING")) + b"extra")
    with pytest.raises(MalformedHeader):
        decode_request(b"CHUNKD/1 RUN\nsource: inline\noutput: tmp/a\nlength: 0")


def test_response_roundtrip():
    assert decode_response(encode_response(RunResponse("OK", byte_count=17))) == RunResponse(
        "OK", byte_count=17
    )
    err = decode_response(encode_response(RunResponse("ERR", code="TIMEOUT", message="too slow")))
    assert (err.status, err.code, err.message) == ("ERR", "TIMEOUT", "too slow")


def test_response_message_forced_single_line():
    encoded = encode_response(RunResponse("ERR", code="IO", message="disk\nfull"))
    assert encoded.count(b"\n") == 1
    assert decode_response(encoded).message == "disk full"


def test_decode_response_rejects_garbage():
    with pytest.raises(MalformedHeader):
        decode_response(b"MAYBE\n")
    with pytest.raises(MalformedHeader):
        decode_response(b"OK nothing\n")


_paths = st.text(
    alphabet=st.characters(blacklist_characters="\n\r", blacklist_categories=("Cs",)),
    min_size=1,
    max_size=40,
)
_payloads = st.one_of(
    st.binary(max_size=200),
    st.text(max_size=200).map(lambda s: s.encode("utf-8")),
    st.sampled_from(
        [
            b"length: 99\n\nCHUNKD/1 RUN\n",  # header keywords inside the payload
            "print('ümläut 中文')\n".encode("utf-8"),
            b"line one\nline two\n\nline four",
        ]
    ),
)


@st.composite
def _requests(draw):
    verb = draw(st.sampled_from(("RUN", "PING", "SHUTDOWN")))
    if verb != "RUN":
        return RunRequest(verb)
    return RunRequest(
        "RUN",
        source_kind=draw(st.sampled_from(("inline", "file"))),
        output_path=draw(_paths),
        payload=draw(_payloads),
    )


@settings(max_examples=300, deadline=None)
@given(_requests())
def test_roundtrip_property(request):
    assert decode_request(encode_request(request)) == request


def test_send_run_connect_refused():
    port = free_port()  # bound briefly and released: nothing listens now
    with pytest.raises(ConnectRefused):
        send_run(("127.0.0.1", port), RunRequest("PING"), timeout_s=2.0)


def test_send_run_response_timeout():
    # a listener that accepts but never answers
    listener = socket.socket()
    listener.bind(("127.0.0.1", 0))
    listener.listen()
    port = listener.getsockname()[1]
    conns = []
    thread = threading.Thread(target=lambda: conns.append(listener.accept()), daemon=True)
    thread.start()
    try:
        with pytest.raises(ResponseTimeout):
            send_run(("127.0.0.1", port), RunRequest("PING"), timeout_s=0.5)
    finally:
        listener.close()
        for conn, _ in conns:
            conn.close()
