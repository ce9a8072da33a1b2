"""Edge side: joints in, one packet out, then a request/response exchange with the cloud."""

from __future__ import annotations

import os
import socket
import time
from dataclasses import dataclass

from .codec import Codebook, encode, quantize
from .errors import (
    ConnectFailure,
    InvalidInputError,
    MalformedResponseError,
    RequestTimeout,
    ServerReportedError,
    StageError,
)
from .motion import JointSequence, canonicalize, extract_features
from .skeleton import Skeleton, default_skeleton
from .transport import (
    MAX_RESPONSE_BYTES,
    PeerClosed,
    UnderstandingResponse,
    frame,
    parse_address,
    recv_frame,
)
from .wire import MotionPacket, parse_packet, serialize_packet

ENV_ADDR = "TOAU_SERVER_ADDR"
DEFAULT_QUESTION = "What is the person doing?"


@dataclass(frozen=True)
class EdgeTimings:
    canonicalize_ms: float
    features_ms: float
    quantize_ms: float
    serialize_ms: float
    total_ms: float

    def as_dict(self) -> dict[str, float]:
        return dict(self.__dict__)


def _ms(t0: int, t1: int) -> float:
    return (t1 - t0) / 1e6


def edge_pipeline(seq: JointSequence, cb: Codebook,
                  skeleton: Skeleton | None = None) -> tuple[MotionPacket, EdgeTimings]:
    """canonicalize -> features -> encode + quantize -> serialize, timing each stage."""
    sk = skeleton or default_skeleton()
    stage = "canonicalize"
    try:
        t0 = time.perf_counter_ns()
        canon = canonicalize(seq, sk)
        t1 = time.perf_counter_ns()
        stage = "features"
        feat = extract_features(canon, sk)
        t2 = time.perf_counter_ns()
        stage = "quantize"
        tokens = quantize(encode(feat, cb.downsample_factor), cb, feat.frames)
        t3 = time.perf_counter_ns()
        stage = "serialize"
        packet = parse_packet(serialize_packet(tokens, seq.fps))
        t4 = time.perf_counter_ns()
    except Exception as exc:
        raise StageError(stage, exc) from exc
    return packet, EdgeTimings(_ms(t0, t1), _ms(t1, t2), _ms(t2, t3), _ms(t3, t4), _ms(t0, t4))


@dataclass(frozen=True)
class ClientConfig:
    server_address: str = ""
    codebook_path: str = ""
    question: str = DEFAULT_QUESTION
    timeout_ms: int = 5000
    retries: int = 2

    def __post_init__(self):
        if not self.server_address:
            object.__setattr__(self, "server_address", os.environ.get(ENV_ADDR, ""))
        if not self.server_address:
            raise InvalidInputError(f"no server address given and {ENV_ADDR} is unset")
        parse_address(self.server_address)
        if self.timeout_ms <= 0:
            raise InvalidInputError("timeout_ms must be positive")
        if self.retries < 0:
            raise InvalidInputError("retries must be >= 0")


def _exchange(raw: bytes, question: bytes, cfg: ClientConfig) -> bytes:
    host, port = parse_address(cfg.server_address)
    timeout = cfg.timeout_ms / 1000.0
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except socket.timeout as exc:
        raise RequestTimeout(f"connect to {cfg.server_address} timed out") from exc
    except OSError as exc:
        raise ConnectFailure(f"cannot connect to {cfg.server_address}: {exc}") from exc
    with sock:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            try:
                sock.sendall(frame(raw) + frame(question))
            except (BrokenPipeError, ConnectionResetError):
                # the server may refuse early (e.g. packet-too-large) and close;
                # its reply can still be waiting in our receive buffer
                pass
            return recv_frame(sock, MAX_RESPONSE_BYTES)
        except socket.timeout as exc:
            raise RequestTimeout(f"no response within {cfg.timeout_ms} ms") from exc
        except PeerClosed as exc:
            raise MalformedResponseError(f"server closed the connection: {exc}") from exc
        except ValueError as exc:
            raise MalformedResponseError(str(exc)) from exc
        except OSError as exc:
            raise ConnectFailure(f"connection to {cfg.server_address} failed: {exc}") from exc


def send_motion(packet: MotionPacket | bytes, cfg: ClientConfig) -> UnderstandingResponse:
    """Send one packet and its question; retry connect failures and timeouts on fresh connections.

    The packet bytes go out unchanged, as the first frame; the UTF-8 question is the second.
    """
    raw = packet.raw if isinstance(packet, MotionPacket) else bytes(packet)
    question = cfg.question.encode("utf-8")
    last: Exception | None = None
    for _ in range(cfg.retries + 1):
        try:
            body = _exchange(raw, question, cfg)
            break
        except (ConnectFailure, RequestTimeout) as exc:
            last = exc
    else:
        raise last
    resp = UnderstandingResponse.from_json(body)
    if not resp.ok:
        raise ServerReportedError(resp.error_code, resp.message)
    return resp
