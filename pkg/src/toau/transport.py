"""Length-prefixed framing and the JSON response document shared by client and server."""

from __future__ import annotations

import json
import socket
import struct
from dataclasses import dataclass, field

from .errors import InvalidInputError, MalformedResponseError

PREFIX = struct.Struct(">I")
MAX_QUESTION_BYTES = 64 * 1024
MAX_RESPONSE_BYTES = 16 * 1024 * 1024
TIMING_KEYS = ("decode_ms", "reconstruct_ms", "reason_ms", "total_ms")


class PeerClosed(ConnectionError):
    """The peer closed the stream; ``partial`` says whether it did so mid-frame."""

    def __init__(self, partial: bool):
        super().__init__("connection closed mid-frame" if partial else "connection closed")
        self.partial = partial


def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise PeerClosed(partial=bool(buf))
        buf += chunk
    return bytes(buf)


def frame(data: bytes) -> bytes:
    return PREFIX.pack(len(data)) + data


def send_frame(sock: socket.socket, data: bytes) -> None:
    sock.sendall(frame(data))


def recv_frame(sock: socket.socket, limit: int) -> bytes:
    (n,) = PREFIX.unpack(recv_exact(sock, PREFIX.size))
    if n > limit:
        raise ValueError(f"frame of {n} bytes exceeds limit {limit}")
    return recv_exact(sock, n)


def parse_address(addr: str, default_host: str = "127.0.0.1") -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep:
        raise InvalidInputError(f"address {addr!r} is not host:port")
    try:
        p = int(port)
    except ValueError:
        raise InvalidInputError(f"bad port in {addr!r}") from None
    if not 0 <= p <= 65535:
        raise InvalidInputError(f"port {p} out of range")
    return (host.strip("[]") or default_host), p


@dataclass
class UnderstandingResponse:
    status: str
    answer: str = ""
    label: str = ""
    confidence: float | None = None
    timings: dict[str, float] = field(default_factory=lambda: dict.fromkeys(TIMING_KEYS, 0.0))
    error_code: str | None = None
    message: str = ""
    motion_tokens: int | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @classmethod
    def error(cls, code: str, message: str = "", timings: dict | None = None) -> "UnderstandingResponse":
        r = cls("error", error_code=code, message=message)
        if timings:
            r.timings.update(timings)
        return r

    def to_dict(self) -> dict:
        d = {"status": self.status, "answer": self.answer, "label": self.label,
             "timings": {k: float(self.timings.get(k, 0.0)) for k in TIMING_KEYS}}
        if self.ok:
            d["confidence"] = float(self.confidence)
            d["motion_tokens"] = self.motion_tokens
        else:
            d["error_code"] = self.error_code
            d["message"] = self.message
        return d

    def to_json(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")

    @classmethod
    def from_json(cls, data: bytes) -> "UnderstandingResponse":
        """Parse and validate a response document; raise MalformedResponseError otherwise."""
        try:
            d = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedResponseError(f"response is not UTF-8 JSON: {exc}") from None
        if not isinstance(d, dict) or not isinstance(d.get("status"), str):
            raise MalformedResponseError("response lacks a string status")
        t = d.get("timings")
        if not isinstance(t, dict) or any(not isinstance(t.get(k), (int, float)) or t[k] < 0
                                          for k in TIMING_KEYS):
            raise MalformedResponseError("response timings missing or negative")
        if d["status"] == "ok":
            c = d.get("confidence")
            if not isinstance(c, (int, float)) or not 0.0 <= c <= 1.0:
                raise MalformedResponseError("ok response needs confidence in [0, 1]")
            if not isinstance(d.get("label"), str) or not isinstance(d.get("answer"), str):
                raise MalformedResponseError("ok response needs label and answer strings")
            return cls("ok", d["answer"], d["label"], float(c), dict(t),
                       motion_tokens=d.get("motion_tokens"))
        if "confidence" in d:
            raise MalformedResponseError("error response must not carry confidence")
        code = d.get("error_code")
        if not isinstance(code, str):
            raise MalformedResponseError("error response needs an error_code")
        return cls(d["status"], d.get("answer", ""), d.get("label", ""), None, dict(t),
                   code, str(d.get("message", "")))
