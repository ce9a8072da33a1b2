import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import crc32_bitwise, pack_bits_str

from toau.codec import TokenIndexSequence, window_count
from toau.errors import (
    BadMagicError,
    ChecksumMismatchError,
    EncodingError,
    IndexCountError,
    IndexRangeError,
    MalformedPayloadError,
    PayloadLengthError,
    ProtocolError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from toau.wire import (
    HEADER,
    HEADER_SIZE,
    pack_indices,
    parse_packet,
    payload_size,
    peek_payload_len,
    serialize_packet,
    unpack_indices,
)


def tokens(F=136, l=4, K=512, digest=0x0123456789ABCDEF, seed=0):
    r = np.random.default_rng(seed)
    n = window_count(F, l)
    return TokenIndexSequence(tuple(r.integers(0, K, size=n).tolist()), F, l, digest, K)


def reseal(body: bytes) -> bytes:
    """Recompute the CRC so that header checks past the checksum can be reached."""
    return body + struct.pack(">I", crc32_bitwise(body))


# -- packing -----------------------------------------------------------------------

def test_pack_examples():
    assert pack_indices([1, 0, 1, 1], 2) == bytes([0xB0])
    assert pack_indices([3, 1, 4], 8) == bytes([0x66, 0x00])
    assert pack_indices([], 512) == b""


def test_nonzero_padding_is_malformed():
    with pytest.raises(MalformedPayloadError):
        unpack_indices(bytes([0xB1]), 4, 2)


def test_unpack_length_and_range_errors():
    with pytest.raises(TruncatedPayloadError):
        unpack_indices(bytes([0x66]), 3, 8)
    # K=5 uses 3-bit fields, so the value 7 fits the field but not the alphabet
    with pytest.raises(MalformedPayloadError):
        unpack_indices(pack_bits_str([7], 8), 1, 5)
    with pytest.raises(IndexRangeError):
        pack_indices([5], 5)


@given(st.integers(2, 65535).flatmap(
    lambda K: st.tuples(st.just(K), st.lists(st.integers(0, K - 1), max_size=60))))
@settings(max_examples=300, deadline=None)
def test_pack_matches_string_oracle_and_roundtrips(case):
    K, idx = case
    packed = pack_indices(idx, K)
    assert packed == pack_bits_str(idx, K)
    assert len(packed) == payload_size(len(idx), K)
    assert unpack_indices(packed, len(idx), K) == idx


# -- packets -------------------------------------------------------------------------

def test_table_scale_packet_size():
    raw = serialize_packet(tokens(), 20)
    assert len(raw) == 34 + 39 + 4 == 77
    p = parse_packet(raw)
    assert (p.index_count, len(p.payload), p.frame_count, p.K, p.l, p.fps) == (34, 39, 136, 512, 4, 20)


def test_header_layout_is_big_endian():
    t = tokens()
    raw = serialize_packet(t, 20)
    fields = HEADER.unpack_from(raw)
    assert fields == (b"TOAU", 1, 0, 512, 4, 0, 136, 34, 20, 0, 0x0123456789ABCDEF, 39)
    assert raw[6:8] == b"\x02\x00"
    assert raw[22:30] == bytes.fromhex("0123456789abcdef")
    assert raw[-4:] == struct.pack(">I", crc32_bitwise(raw[:-4]))
    assert peek_payload_len(raw[:HEADER_SIZE]) == 39


@given(st.integers(1, 400), st.integers(1, 8), st.integers(2, 65535), st.integers(0, 2**64 - 1),
       st.integers(0, 1000))
@settings(max_examples=100, deadline=None)
def test_serialize_parse_roundtrip(F, l, K, digest, fps):
    t = tokens(F, l, K, digest, seed=F)
    p = parse_packet(serialize_packet(t, fps))
    assert p.tokens() == t
    assert p.fps == fps


def test_empty_index_stream_roundtrips():
    t = TokenIndexSequence((), 0, 4, 7, 16)
    p = parse_packet(serialize_packet(t, 20))
    assert p.index_count == 0 and p.payload == b""


def test_encoding_limits():
    with pytest.raises(EncodingError):
        serialize_packet(tokens(8, 4, 16), 70000)
    big = TokenIndexSequence((0,), 1, 4, 0, 65536)
    with pytest.raises(EncodingError):
        serialize_packet(big, 20)


def test_bit_flip_in_magic_is_caught_by_crc():
    raw = bytearray(serialize_packet(tokens(), 20))
    raw[0] ^= 1
    with pytest.raises(ChecksumMismatchError):
        parse_packet(bytes(raw))


def test_header_errors_after_valid_crc():
    body = bytearray(serialize_packet(tokens(), 20)[:-4])
    cases = [
        (0, b"XOAU"[0], BadMagicError),
        (4, 2, UnsupportedVersionError),
        (5, 1, MalformedPayloadError),
    ]
    for offset, value, err in cases:
        b = bytearray(body)
        b[offset] = value
        with pytest.raises(err):
            parse_packet(reseal(bytes(b)))
    b = bytearray(body)
    struct.pack_into(">I", b, 14, 33)
    with pytest.raises(IndexCountError):
        parse_packet(reseal(bytes(b)))
    b = bytearray(body)
    struct.pack_into(">I", b, 30, 40)
    with pytest.raises(PayloadLengthError):
        parse_packet(reseal(bytes(b)))


def test_truncated_packets():
    raw = serialize_packet(tokens(), 20)
    with pytest.raises(TruncatedPayloadError):
        parse_packet(raw[:20])
    with pytest.raises(ProtocolError):
        parse_packet(raw[:-1])


def test_every_single_bit_flip_rejected():
    raw = serialize_packet(tokens(40, 4, 37, seed=5), 20)
    for bit in range(len(raw) * 8):
        b = bytearray(raw)
        b[bit // 8] ^= 0x80 >> (bit % 8)
        with pytest.raises(ProtocolError):
            parse_packet(bytes(b))
