"""Binary framing and JSON payloads for the control/worker protocol.

Frame layout: a 4-byte big-endian unsigned length covering the type byte plus
the payload, then the type byte, then the payload (UTF-8 JSON). See
``docs/wire.md`` for the full table with hex examples.
"""

from __future__ import annotations

import json
import socket
import struct
import threading
from dataclasses import dataclass
from enum import IntEnum
from typing import Any, BinaryIO, Iterable

from .model import Network
from .traversal import PathFormatError, RealityPath, dumps_canonical, path_from_doc, path_to_doc

PROTOCOL_VERSION = 1
MAX_PAYLOAD = (1 << 31) - 2
_LEN = struct.Struct(">I")


class WireError(Exception):
    pass


class TruncatedFrame(WireError):
    pass


class UnknownMessageType(WireError):
    pass


class OversizePayload(WireError):
    pass


class PayloadError(WireError):
    """Payload does not parse or does not match its message type's schema."""


class ModelMismatch(PayloadError):
    pass


class MessageType(IntEnum):
    HELLO = 0x01
    SCENARIO = 0x02
    REQUEST_WORK = 0x03
    WORK = 0x04
    REPORT_PATHS = 0x05
    REPORT_ACK = 0x06
    CANCEL = 0x07
    CANCEL_DONE = 0x08
    METRICS_REQUEST = 0x09
    METRICS = 0x0A
    ERROR = 0x0B


@dataclass(frozen=True)
class WireMessage:
    msg_type: MessageType
    payload: bytes = b""

    @classmethod
    def of(cls, msg_type: MessageType, body: Any = None) -> WireMessage:
        """Build a message from a JSON-able body (``None`` means an empty payload)."""
        if body is None:
            return cls(msg_type, b"")
        if isinstance(body, (bytes, bytearray)):
            return cls(msg_type, bytes(body))
        return cls(msg_type, json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8"))

    def body(self) -> Any:
        if not self.payload:
            return None
        try:
            return json.loads(self.payload)
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise PayloadError(f"{self.msg_type.name}: payload is not JSON: {exc}") from None


def check_payload_size(n: int) -> None:
    if n > MAX_PAYLOAD:
        raise OversizePayload(f"payload of {n} bytes exceeds {MAX_PAYLOAD}")


def encode_frame(msg: WireMessage) -> bytes:
    check_payload_size(len(msg.payload))
    return _LEN.pack(1 + len(msg.payload)) + bytes((int(msg.msg_type),)) + msg.payload


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise TruncatedFrame(f"stream ended with {remaining} of {n} bytes outstanding")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def decode_frame(stream: BinaryIO) -> WireMessage:
    """Read one frame from a file-like ``stream``; blocks until it is complete."""
    (length,) = _LEN.unpack(_read_exact(stream, 4))
    if length == 0:
        raise WireError("frame length 0 (no type byte)")
    check_payload_size(length - 1)
    code = _read_exact(stream, 1)[0]
    try:
        msg_type = MessageType(code)
    except ValueError:
        raise UnknownMessageType(f"unknown message type 0x{code:02X}") from None
    return WireMessage(msg_type, _read_exact(stream, length - 1))


def serialize_paths(paths: Iterable[RealityPath]) -> bytes:
    return dumps_canonical([path_to_doc(p) for p in paths])


def deserialize_paths(payload: bytes, net: Network | None = None) -> list[RealityPath]:
    try:
        docs = json.loads(payload)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PayloadError(f"path payload is not JSON: {exc}") from None
    if not isinstance(docs, list):
        raise PayloadError("path payload must be a JSON array")
    out = []
    for doc in docs:
        try:
            out.append(path_from_doc(doc, net))
        except PathFormatError as exc:
            if "model mismatch" in str(exc):
                raise ModelMismatch(str(exc)) from None
            raise PayloadError(str(exc)) from None
    return out


class Channel:
    """One framed socket: a single reader and a lock-serialized writer."""

    def __init__(self, sock: socket.socket) -> None:
        self.sock = sock
        self._rfile = sock.makefile("rb")
        self._wlock = threading.Lock()
        self.sent = 0
        self.received = 0

    def send(self, msg_type: MessageType, body: Any = None) -> None:
        frame = encode_frame(WireMessage.of(msg_type, body))
        with self._wlock:
            self.sock.sendall(frame)
            self.sent += 1

    def recv(self) -> WireMessage:
        msg = decode_frame(self._rfile)
        self.received += 1
        return msg

    def expect(self, *types: MessageType) -> WireMessage:
        msg = self.recv()
        if msg.msg_type not in types:
            if msg.msg_type is MessageType.ERROR:
                raise WireError(f"peer error: {msg.body()}")
            raise WireError(f"expected {[t.name for t in types]}, got {msg.msg_type.name}")
        return msg

    def close(self) -> None:
        # shut the socket down first so a reader blocked in recv wakes up
        # before the buffered file (whose lock it holds) is closed
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        try:
            self._rfile.close()
        except (OSError, ValueError):
            pass
