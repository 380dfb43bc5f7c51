"""Wire encoding and transport endpoints.

Every message is one frame: a 4-byte big-endian length prefix followed by a
UTF-8 JSON object with sorted keys and no whitespace. Mandatory fields are
"type", "session" and "seq"; big integers travel as lowercase hex strings
(no leading zeros, "0" for zero). Canonical encoding plus seeded randomness
is what makes seeded runs produce byte-identical transcripts.

Two endpoint flavors carry frames: an in-process loopback pair whose
semantics (and bytes) match the socket path exactly, and a thin blocking
socket wrapper. Either side of an endpoint may attach a recorder to capture
raw frames for transcript tests. See wire.md for byte-level examples.
"""

from __future__ import annotations

import json
import socket
import struct
from collections import deque
from typing import Callable, Optional

from .errors import ProtocolError

MAX_FRAME_BYTES = 64 * 1024 * 1024

MSG_SETUP_KEYS = "SETUP_KEYS"
MSG_CM_CONTRIB = "CM_CONTRIB"
MSG_INIT_STRIP_REQ = "INIT_STRIP_REQ"
MSG_INIT_STRIP_RESP = "INIT_STRIP_RESP"
MSG_PV_UPLOAD = "PV_UPLOAD"
MSG_LOC_UPLOAD = "LOC_UPLOAD"
MSG_M2A_ROUND1 = "M2A_ROUND1"
MSG_M2A_ROUND2 = "M2A_ROUND2"
MSG_RL_RESPONSE = "RL_RESPONSE"
MSG_CM_DELTA = "CM_DELTA"
MSG_ABORT = "ABORT"

MESSAGE_TYPES = frozenset({
    MSG_SETUP_KEYS,
    MSG_CM_CONTRIB,
    MSG_INIT_STRIP_REQ,
    MSG_INIT_STRIP_RESP,
    MSG_PV_UPLOAD,
    MSG_LOC_UPLOAD,
    MSG_M2A_ROUND1,
    MSG_M2A_ROUND2,
    MSG_RL_RESPONSE,
    MSG_CM_DELTA,
    MSG_ABORT,
})

Recorder = Callable[[str, bytes], None]


def encode_message(mtype: str, session: str, seq: int, body: dict) -> bytes:
    """Canonical JSON payload for one message (no frame prefix)."""
    if mtype not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown message type {mtype!r}")
    obj = dict(body)
    for key in ("type", "session", "seq"):
        if key in obj:
            raise ProtocolError(f"body must not carry the envelope field {key!r}")
    obj.update(type=mtype, session=session, seq=seq)
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode_payload(payload: bytes) -> dict:
    """Parse and validate one frame payload."""
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed frame payload: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError("frame payload is not a JSON object")
    mtype = obj.get("type")
    if mtype not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown message type {mtype!r}")
    if not isinstance(obj.get("session"), str):
        raise ProtocolError("missing or non-string session id")
    seq = obj.get("seq")
    if not isinstance(seq, int) or seq < 0:
        raise ProtocolError("missing or invalid seq")
    return obj


def frame(payload: bytes) -> bytes:
    if len(payload) > MAX_FRAME_BYTES:
        raise ProtocolError("frame too large")
    return struct.pack(">I", len(payload)) + payload


def unframe(data: bytes) -> bytes:
    if len(data) < 4:
        raise ProtocolError("truncated frame")
    (length,) = struct.unpack(">I", data[:4])
    if length != len(data) - 4:
        raise ProtocolError("frame length prefix disagrees with payload size")
    return data[4:]


class Endpoint:
    """One side of a bidirectional framed channel."""

    label = "?"

    def send_payload(self, payload: bytes) -> None:
        raise NotImplementedError

    def recv_payload(self) -> bytes:
        """Next payload; raises EOFError when the peer is gone."""
        raise NotImplementedError

    def close(self) -> None:
        pass

    # convenience wrappers
    def send_msg(self, mtype: str, session: str, seq: int, body: dict) -> None:
        self.send_payload(encode_message(mtype, session, seq, body))

    def recv_msg(self) -> dict:
        return decode_payload(self.recv_payload())


class LoopbackEndpoint(Endpoint):
    """In-process endpoint. Frames cross immediately and synchronously.

    If the peer has a reactor attached (server roles), sending pumps the
    peer's queue in the caller's thread; otherwise frames wait in the peer's
    queue until it calls recv_payload (client style). Recorders see the full
    framed bytes in global order, which is deterministic because everything
    runs on one thread.
    """

    def __init__(self, label: str = "?"):
        self.label = label
        self.queue: deque[bytes] = deque()
        self.peer: Optional[LoopbackEndpoint] = None
        self.reactor: Optional[Callable[[Endpoint, bytes], None]] = None
        self.recorder: Optional[Recorder] = None
        self.closed = False
        self._pumping = False

    def attach_reactor(self, reactor: Callable[[Endpoint, bytes], None]) -> None:
        self.reactor = reactor

    def send_payload(self, payload: bytes) -> None:
        if self.closed or self.peer is None or self.peer.closed:
            raise EOFError(f"loopback peer of {self.label} is closed")
        raw = frame(payload)
        if self.recorder:
            self.recorder(self.label, raw)
        self.peer.queue.append(unframe(raw))
        self.peer._pump()

    def _pump(self) -> None:
        if self.reactor is None or self._pumping:
            return
        self._pumping = True
        try:
            while self.queue:
                self.reactor(self, self.queue.popleft())
        finally:
            self._pumping = False

    def recv_payload(self) -> bytes:
        if self.queue:
            return self.queue.popleft()
        if self.closed or self.peer is None or self.peer.closed:
            raise EOFError(f"loopback peer of {self.label} is closed")
        raise ProtocolError(f"{self.label}: no pending frame (protocol deadlock)")

    def close(self) -> None:
        self.closed = True


def loopback_pair(label_a: str, label_b: str) -> tuple[LoopbackEndpoint, LoopbackEndpoint]:
    a, b = LoopbackEndpoint(label_a), LoopbackEndpoint(label_b)
    a.peer, b.peer = b, a
    return a, b


class SocketEndpoint(Endpoint):
    """Blocking framed channel over a connected TCP socket."""

    def __init__(self, sock: socket.socket, label: str = "?", recorder: Recorder | None = None):
        self.sock = sock
        self.label = label
        self.recorder = recorder

    def send_payload(self, payload: bytes) -> None:
        raw = frame(payload)
        if self.recorder:
            self.recorder(self.label, raw)
        try:
            self.sock.sendall(raw)
        except OSError as exc:
            raise EOFError(f"{self.label}: send failed: {exc}") from exc

    def _recv_exact(self, count: int) -> bytes:
        chunks = []
        while count:
            try:
                chunk = self.sock.recv(count)
            except OSError as exc:
                raise EOFError(f"{self.label}: recv failed: {exc}") from exc
            if not chunk:
                raise EOFError(f"{self.label}: connection closed")
            chunks.append(chunk)
            count -= len(chunk)
        return b"".join(chunks)

    def recv_payload(self) -> bytes:
        (length,) = struct.unpack(">I", self._recv_exact(4))
        if length > MAX_FRAME_BYTES:
            raise ProtocolError("frame too large")
        payload = self._recv_exact(length)
        if self.recorder:
            self.recorder(f"{self.label}<-", struct.pack(">I", length) + payload)
        return payload

    def finish_write(self) -> None:
        """Half-close, then wait for the peer to drain and close.

        Used by fire-and-forget client commands: seeing EOF back means the
        server consumed everything we sent.
        """
        try:
            self.sock.shutdown(socket.SHUT_WR)
            while True:
                if not self.sock.recv(4096):
                    break
        except OSError:
            pass

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def dial(addr: str, label: str = "?", recorder: Recorder | None = None) -> SocketEndpoint:
    host, port = parse_addr(addr)
    return SocketEndpoint(socket.create_connection((host, port)), label, recorder)


def parse_addr(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ProtocolError(f"address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)
