"""Bit-exact packet format for codebook index streams.

Header (34 bytes, big-endian)::

    0  magic "TOAU"      4s
    4  version           B   (1)
    5  flags             B   (0)
    6  K                 H
    8  l                 B
    9  reserved          B   (0)
    10 frame_count       I
    14 index_count       I
    18 fps               H
    20 reserved          H   (0)
    22 codebook_digest   Q
    30 payload_len       I

followed by the payload (indices packed MSB-first at ceil(log2 K) bits each,
final byte zero-padded) and a CRC-32 (IEEE) over everything before it.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .codec import MAX_K, MAX_L, MIN_K, TokenIndexSequence, bits_per_index, window_count
from .errors import (
    BadMagicError,
    ChecksumMismatchError,
    EncodingError,
    IndexCountError,
    IndexRangeError,
    InvalidInputError,
    MalformedPayloadError,
    PayloadLengthError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)

MAGIC = b"TOAU"
VERSION = 1
HEADER = struct.Struct(">4sBBHBBIIHHQI")
HEADER_SIZE = HEADER.size
CRC_SIZE = 4
_U32 = 0xFFFFFFFF


def payload_size(index_count: int, K: int) -> int:
    return -(-index_count * bits_per_index(K) // 8)


def pack_indices(indices, K: int) -> bytes:
    """Concatenate fixed-width big-endian bit fields, zero-padding the last byte."""
    width = bits_per_index(K)
    idx = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices, dtype=np.int64)
    if idx.size == 0:
        return b""
    if idx.min() < 0 or idx.max() >= K:
        raise IndexRangeError(f"indices must lie in [0, {K})")
    shifts = np.arange(width - 1, -1, -1, dtype=np.int64)
    bits = ((idx[:, None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(bits.ravel()).tobytes()


def unpack_indices(data: bytes, count: int, K: int) -> list[int]:
    width = bits_per_index(K)
    if count < 0:
        raise InvalidInputError("count must be nonnegative")
    need = -(-count * width // 8)
    if len(data) != need:
        raise TruncatedPayloadError(f"expected {need} payload bytes for {count} indices, got {len(data)}")
    if count == 0:
        return []
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    used = count * width
    if bits[used:].any():
        raise MalformedPayloadError("nonzero padding bits")
    fields = bits[:used].reshape(count, width).astype(np.int64)
    values = fields @ (1 << np.arange(width - 1, -1, -1, dtype=np.int64))
    if values.max() >= K:
        raise MalformedPayloadError(f"decoded index >= K={K}")
    return values.tolist()


@dataclass(frozen=True)
class MotionPacket:
    version: int
    K: int
    l: int
    frame_count: int
    index_count: int
    fps: int
    codebook_digest: int
    payload: bytes
    checksum: int
    raw: bytes

    @property
    def size(self) -> int:
        return len(self.raw)

    def indices(self) -> list[int]:
        return unpack_indices(self.payload, self.index_count, self.K)

    def tokens(self) -> TokenIndexSequence:
        return TokenIndexSequence(tuple(self.indices()), self.frame_count, self.l,
                                  self.codebook_digest, self.K)


def serialize_packet(tokens: TokenIndexSequence, fps: int) -> bytes:
    K = tokens.codebook_size
    n = len(tokens.indices)
    if not MIN_K <= K <= MAX_K:
        raise EncodingError(f"K={K} does not fit the u16 field")
    if not 1 <= tokens.downsample_factor <= MAX_L:
        raise EncodingError("downsample factor does not fit the u8 field")
    if not 0 <= tokens.source_frame_count <= _U32 or n > _U32:
        raise EncodingError("frame or index count does not fit u32")
    if not 0 <= fps <= 0xFFFF:
        raise EncodingError("fps does not fit u16")
    if not 0 <= tokens.codebook_digest < (1 << 64):
        raise EncodingError("digest does not fit u64")
    payload = pack_indices(tokens.indices, K)
    if len(payload) > _U32:
        raise EncodingError("payload too large")
    head = HEADER.pack(MAGIC, VERSION, 0, K, tokens.downsample_factor, 0,
                       tokens.source_frame_count, n, fps, 0, tokens.codebook_digest, len(payload))
    body = head + payload
    return body + struct.pack(">I", zlib.crc32(body))


def peek_payload_len(header: bytes) -> int:
    """payload_len from a (possibly partial) header, for early size limits."""
    if len(header) < HEADER_SIZE:
        raise TruncatedPayloadError("short header")
    return struct.unpack_from(">I", header, 30)[0]


def parse_packet(data: bytes) -> MotionPacket:
    """Validate and decode one packet.

    The checksum is verified first so that any corruption, including in the
    magic or version bytes, surfaces as ChecksumMismatchError.
    """
    data = bytes(data)
    if len(data) < HEADER_SIZE + CRC_SIZE:
        raise TruncatedPayloadError(f"packet of {len(data)} bytes is shorter than header + CRC")
    body, trailer = data[:-CRC_SIZE], data[-CRC_SIZE:]
    checksum = struct.unpack(">I", trailer)[0]
    if zlib.crc32(body) != checksum:
        raise ChecksumMismatchError("CRC-32 mismatch")
    (magic, version, flags, K, l, _r1, frames, count, fps, _r2,
     digest, plen) = HEADER.unpack_from(body)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    if flags != 0 or _r1 != 0 or _r2 != 0:
        raise MalformedPayloadError("reserved header fields must be zero")
    if K < MIN_K or l < 1:
        raise MalformedPayloadError(f"invalid K={K} or l={l}")
    if plen != len(body) - HEADER_SIZE:
        raise PayloadLengthError(f"payload_len {plen} but {len(body) - HEADER_SIZE} bytes present")
    if count != window_count(frames, l):
        raise IndexCountError(f"index_count {count} != ceil({frames} / {l})")
    if plen != payload_size(count, K):
        raise PayloadLengthError(f"payload_len {plen} inconsistent with {count} indices at K={K}")
    payload = body[HEADER_SIZE:]
    unpack_indices(payload, count, K)
    return MotionPacket(version, K, l, frames, count, fps, digest, payload, checksum, data)
