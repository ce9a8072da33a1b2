"""Cloud side: validate packets, reconstruct features, ask the backend, reply with timings."""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
import time
from collections import Counter
from dataclasses import dataclass

from .backend import UnderstandingBackend, load_gallery
from .codec import Codebook, decode, dequantize, load_codebook
from .errors import CodebookMismatchError, InvalidInputError, ProtocolError
from .motion import recover_joints
from .transport import (
    MAX_QUESTION_BYTES,
    PREFIX,
    PeerClosed,
    UnderstandingResponse,
    parse_address,
    recv_exact,
    send_frame,
)
from .wire import CRC_SIZE, HEADER_SIZE, MotionPacket, parse_packet, peek_payload_len

log = logging.getLogger(__name__)

DEFAULT_QUESTION = "What is the person doing?"
IDLE_POLL_S = 0.2
REQUEST_READ_TIMEOUT_S = 30.0


@dataclass(frozen=True)
class ServerConfig:
    listen_address: str = "127.0.0.1:7878"
    codebook_path: str = ""
    gallery_path: str = ""
    max_concurrent_connections: int = 64
    max_packet_bytes: int = 1 << 20
    recover_joints: bool = False
    k: int = 1

    def __post_init__(self):
        parse_address(self.listen_address)
        if self.max_concurrent_connections <= 0 or self.max_packet_bytes <= 0:
            raise InvalidInputError("server limits must be positive")
        if self.max_packet_bytes < HEADER_SIZE + CRC_SIZE:
            raise InvalidInputError("max_packet_bytes smaller than an empty packet")


def _ms(t0: int, t1: int) -> float:
    return (t1 - t0) / 1e6


def cloud_pipeline(packet: MotionPacket, cb: Codebook, backend: UnderstandingBackend,
                   question: str = DEFAULT_QUESTION, recover: bool = False) -> UnderstandingResponse:
    """digest check -> unpack -> dequantize -> decode [-> recover joints] -> backend."""
    t0 = time.perf_counter_ns()
    if packet.codebook_digest != cb.digest or packet.K != cb.size or packet.l != cb.downsample_factor:
        raise CodebookMismatchError(
            f"packet codebook {packet.codebook_digest:#018x} (K={packet.K}, l={packet.l}) "
            f"!= server codebook {cb.digest:#018x} (K={cb.size}, l={cb.downsample_factor})")
    latents = dequantize(packet.tokens(), cb)
    t1 = time.perf_counter_ns()
    x_hat = decode(latents, packet.frame_count, packet.fps or 20)
    if recover:
        recover_joints(x_hat)
    t2 = time.perf_counter_ns()
    result = backend.answer(x_hat, question)
    if result.motion_tokens != x_hat.frames:
        raise AssertionError("motion placeholders do not match reconstructed rows")
    t3 = time.perf_counter_ns()
    timings = {"decode_ms": _ms(t0, t1), "reconstruct_ms": _ms(t1, t2),
               "reason_ms": _ms(t2, t3), "total_ms": _ms(t0, t3)}
    return UnderstandingResponse("ok", result.answer, result.label, result.confidence,
                                 timings, motion_tokens=result.motion_tokens)


def error_code_for(exc: Exception) -> str:
    if isinstance(exc, CodebookMismatchError):
        return "codebook-mismatch"
    if isinstance(exc, ProtocolError):
        return exc.code
    return "internal-error"


def handle_request(raw: bytes, question: str, cb: Codebook, backend: UnderstandingBackend,
                   recover: bool = False) -> UnderstandingResponse:
    """Full per-request path from packet bytes; every failure becomes an error response."""
    t0 = time.perf_counter_ns()
    try:
        packet = parse_packet(raw)
        t1 = time.perf_counter_ns()
        resp = cloud_pipeline(packet, cb, backend, question, recover)
    except Exception as exc:
        code = error_code_for(exc)
        if code == "internal-error":
            log.exception("request failed")
        return UnderstandingResponse.error(code, str(exc), {"total_ms": _ms(t0, time.perf_counter_ns())})
    resp.timings["decode_ms"] += _ms(t0, t1)
    resp.timings["total_ms"] = _ms(t0, time.perf_counter_ns())
    return resp


class Metrics:
    """Request counters; the only mutable state shared between handlers."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts: Counter[str] = Counter()

    def record(self, status: str) -> None:
        with self._lock:
            self._counts["requests"] += 1
            self._counts[status] += 1

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self._counts)


class _Handler(socketserver.BaseRequestHandler):
    server: "MotionServer"

    def handle(self):
        sock: socket.socket = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            while self._one_request(sock):
                pass
        except (PeerClosed, socket.timeout, ConnectionError):
            pass

    def _wait_for_prefix(self, sock: socket.socket) -> bytes | None:
        """Block until the next request begins; None on clean EOF or shutdown."""
        sock.settimeout(IDLE_POLL_S)
        while True:
            if self.server.draining.is_set():
                return None
            try:
                first = sock.recv(1)
            except socket.timeout:
                continue
            if not first:
                return None
            sock.settimeout(REQUEST_READ_TIMEOUT_S)
            return first + recv_exact(sock, PREFIX.size - 1)

    def _reply(self, sock: socket.socket, resp: UnderstandingResponse) -> None:
        self.server.metrics.record(resp.status if resp.ok else resp.error_code)
        send_frame(sock, resp.to_json())

    def _one_request(self, sock: socket.socket) -> bool:
        limit = self.server.cfg.max_packet_bytes
        prefix = self._wait_for_prefix(sock)
        if prefix is None:
            return False
        (n,) = PREFIX.unpack(prefix)
        if n > limit:
            self._reply(sock, UnderstandingResponse.error(
                "packet-too-large", f"frame of {n} bytes exceeds {limit}"))
            return False
        if n >= HEADER_SIZE:
            head = recv_exact(sock, HEADER_SIZE)
            plen = peek_payload_len(head)
            if HEADER_SIZE + plen + CRC_SIZE > limit:
                self._reply(sock, UnderstandingResponse.error(
                    "packet-too-large", f"payload_len {plen} exceeds {limit}"))
                return False
            raw = head + recv_exact(sock, n - HEADER_SIZE)
        else:
            raw = recv_exact(sock, n)
        (qn,) = PREFIX.unpack(recv_exact(sock, PREFIX.size))
        if qn > MAX_QUESTION_BYTES:
            self._reply(sock, UnderstandingResponse.error(
                "question-too-large", f"question of {qn} bytes exceeds {MAX_QUESTION_BYTES}"))
            return False
        qbytes = recv_exact(sock, qn)
        try:
            question = qbytes.decode("utf-8")
        except UnicodeDecodeError:
            self._reply(sock, UnderstandingResponse.error("bad-question", "question is not UTF-8"))
            return True
        s = self.server
        self._reply(sock, handle_request(raw, question or DEFAULT_QUESTION, s.codebook,
                                         s.backend, s.cfg.recover_joints))
        return True


class MotionServer(socketserver.ThreadingTCPServer):
    """Threaded server with a connection cap and graceful drain on stop()."""

    allow_reuse_address = True
    daemon_threads = False
    block_on_close = True
    request_queue_size = 128

    def __init__(self, cfg: ServerConfig, codebook: Codebook, backend: UnderstandingBackend):
        self.cfg = cfg
        self.codebook = codebook
        self.backend = backend
        self.metrics = Metrics()
        self.draining = threading.Event()
        self._slots = threading.BoundedSemaphore(cfg.max_concurrent_connections)
        self._thread: threading.Thread | None = None
        super().__init__(parse_address(cfg.listen_address), _Handler)

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def process_request(self, request, client_address):
        # Connections beyond the cap wait in the accept backlog.
        while not self._slots.acquire(timeout=IDLE_POLL_S):
            if self.draining.is_set():
                self.shutdown_request(request)
                return
        try:
            super().process_request(request, client_address)
        except Exception:
            self._slots.release()
            raise

    def process_request_thread(self, request, client_address):
        try:
            super().process_request_thread(request, client_address)
        finally:
            self._slots.release()

    def start(self) -> "MotionServer":
        self._thread = threading.Thread(target=self.serve_forever, kwargs={"poll_interval": 0.05},
                                        name="toau-accept", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        """Stop accepting, let in-flight requests finish, then close."""
        self.draining.set()
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self._thread is not None:
            self.stop()
        else:
            self.server_close()


def build_server(cfg: ServerConfig) -> MotionServer:
    cb = load_codebook(cfg.codebook_path)
    backend = UnderstandingBackend(load_gallery(cfg.gallery_path), k=cfg.k)
    return MotionServer(cfg, cb, backend)


def serve(cfg: ServerConfig, ready=None) -> None:
    """Run until SIGINT/SIGTERM, then drain in-flight requests."""
    import signal

    server = build_server(cfg)
    stop = threading.Event()

    def _on_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGINT, _on_signal)
    signal.signal(signal.SIGTERM, _on_signal)
    server.start()
    log.info("listening on %s", server.address)
    if ready is not None:
        ready(server)
    try:
        while not stop.wait(0.5):
            pass
    finally:
        server.stop()
        log.info("stopped; %s", server.metrics.snapshot())
