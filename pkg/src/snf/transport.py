"""Progressive delivery of a packed stream over TCP.

Every message is a u64 little-endian length followed by that many bytes.
Message 0 is the stream header, message ``k`` the chunk of stage ``k``.
"""
from __future__ import annotations

import logging
import socket
import struct
import time
from dataclasses import dataclass, field

from snf.codec import DecodeError, StreamDecoder, StreamHeader, split_messages

log = logging.getLogger(__name__)

_LEN = struct.Struct("<Q")


def send_message(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(_LEN.pack(len(payload)) + payload)


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        part = sock.recv(n - len(buf))
        if not part:
            return None
        buf += part
    return bytes(buf)


def recv_message(sock: socket.socket) -> bytes | None:
    """Next framed message, or None when the peer closed before it was complete."""
    head = _recv_exact(sock, _LEN.size)
    if head is None:
        return None
    (length,) = _LEN.unpack(head)
    return _recv_exact(sock, length)


def listen(port: int, host: str = "127.0.0.1") -> socket.socket:
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, port))
    srv.listen(1)
    return srv


def serve_bytes(srv: socket.socket, data: bytes, stop_after: int | None = None,
                delay: float = 0.0) -> int:
    """Accept one client on a listening socket and stream ``data`` to it.

    ``stop_after`` ends the connection after that many chunks (simulating a
    dropped link).  Returns the number of chunks sent.
    """
    messages = split_messages(data)
    conn, addr = srv.accept()
    log.info("client %s connected", addr)
    sent = 0
    with conn:
        send_message(conn, messages[0])
        for chunk in messages[1:]:
            if stop_after is not None and sent >= stop_after:
                break
            if delay:
                time.sleep(delay)
            send_message(conn, chunk)
            sent += 1
    return sent


def serve(stream_path, port: int, host: str = "127.0.0.1", stop_after: int | None = None,
          delay: float = 0.0, ready=None) -> int:
    """Serve one client from a ``.snf`` file, then return.

    ``ready`` (optional callable) receives the bound port once listening.
    """
    with open(stream_path, "rb") as fh:
        data = fh.read()
    with listen(port, host) as srv:
        if ready is not None:
            ready(srv.getsockname()[1])
        return serve_bytes(srv, data, stop_after, delay)


@dataclass
class FetchResult:
    header: StreamHeader | None = None
    nets: list = field(default_factory=list)
    raw: bytes = b""
    truncated: bool = False
    notice: str = ""


def fetch(host: str, port: int, k_max: int | None = None, on_chunk=None,
          timeout: float = 30.0, on_header=None) -> FetchResult:
    """Receive a stream; after each chunk decode the stage and call ``on_chunk(stage, net)``.

    ``on_header(header)`` runs once the stream header has been parsed.

    A connection lost mid-stream ends the fetch with every fully received
    stage intact and ``truncated`` set.
    """
    result = FetchResult()
    raw = bytearray()
    with socket.create_connection((host, port), timeout=timeout) as sock:
        head = recv_message(sock)
        if head is None:
            result.truncated = True
            result.notice = "connection closed before the header arrived"
            return result
        result.header, _ = StreamHeader.decode(head)
        raw += head
        if on_header is not None:
            on_header(result.header)
        dec = StreamDecoder(result.header)
        limit = result.header.num_stages if k_max is None else min(k_max, result.header.num_stages)
        while dec.stages_decoded < limit:
            msg = recv_message(sock)
            if msg is None:
                result.truncated = True
                result.notice = (f"connection lost after {dec.stages_decoded} of "
                                 f"{result.header.num_stages} stages")
                break
            try:
                dec.feed(msg)
            except DecodeError as exc:
                result.truncated = True
                result.notice = f"stage {exc.chunk} rejected: {exc}"
                break
            raw += msg
            net = dec.net.copy()
            result.nets.append(net)
            if on_chunk is not None:
                on_chunk(dec.stages_decoded, net)
    result.raw = bytes(raw)
    if result.truncated:
        log.warning(result.notice)
    return result
