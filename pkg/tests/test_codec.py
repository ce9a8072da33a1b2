import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import argmin_scan, fnv1a_64_ref

from toau.codec import (
    Codebook,
    LatentSequence,
    TokenIndexSequence,
    bits_per_index,
    codebook_from_bytes,
    codebook_to_bytes,
    decode,
    dequantize,
    distortion,
    encode,
    fnv1a_64,
    load_codebook,
    nearest_codewords,
    payload_bits,
    quantize,
    save_codebook,
    train_codebook,
    window_count,
)
from toau.errors import (
    CodebookMismatchError,
    FileFormatError,
    IndexRangeError,
    InvalidInputError,
    ShapeMismatchError,
    TrainingError,
)
from toau.motion import CONTACT, FEATURE_DIM, KinematicFeatureSequence


def features(F, seed=0):
    r = np.random.default_rng(seed)
    X = r.normal(size=(F, FEATURE_DIM))
    X[:, CONTACT] = r.integers(0, 2, size=(F, 4))
    return KinematicFeatureSequence(X)


# -- arithmetic ---------------------------------------------------------------

@pytest.mark.parametrize("data,expected", [
    (b"", 0xCBF29CE484222325),
    (b"a", 0xAF63DC4C8601EC8C),
    (b"foobar", 0x85944171F73967E8),
])
def test_fnv1a_published_vectors(data, expected):
    assert fnv1a_64(data) == expected


@given(st.binary(max_size=200))
def test_fnv1a_matches_reference(data):
    assert fnv1a_64(data) == fnv1a_64_ref(data)


@pytest.mark.parametrize("K,bits", [(2, 1), (3, 2), (4, 2), (5, 3), (8, 3), (512, 9), (513, 10), (65535, 16)])
def test_bits_per_index(K, bits):
    assert bits_per_index(K) == bits


def test_payload_bits_examples():
    assert payload_bits(34, 512) == 306
    assert payload_bits(0, 512) == 0
    assert window_count(136, 4) == 34
    assert window_count(137, 4) == 35
    with pytest.raises(InvalidInputError):
        bits_per_index(1)


# -- transform -----------------------------------------------------------------

@pytest.mark.parametrize("F,l", [(1, 4), (2, 4), (8, 4), (9, 4), (136, 4), (7, 1), (5, 3)])
def test_encode_decode_is_exact_inverse(F, l):
    feat = features(F, seed=F)
    lat = encode(feat, l)
    assert lat.values.shape == (window_count(F, l), FEATURE_DIM * l)
    back = decode(lat, F)
    assert np.array_equal(back.values, feat.values)


def test_encode_pads_with_last_frame():
    feat = features(5)
    lat = encode(feat, 4).values.reshape(-1, FEATURE_DIM)
    assert np.array_equal(lat[5:], np.repeat(feat.values[-1:], 3, axis=0))


def test_decode_checks_shapes():
    lat = encode(features(8), 4)
    with pytest.raises(ShapeMismatchError):
        decode(lat, 12)
    with pytest.raises(ShapeMismatchError):
        decode(LatentSequence(np.zeros((2, 10)), 4), 8)


# -- codebook --------------------------------------------------------------------

def test_codebook_validation():
    with pytest.raises(InvalidInputError):
        Codebook(np.zeros((1, 3)))
    with pytest.raises(InvalidInputError):
        Codebook(np.array([[1.0, 2.0], [1.0, 2.0]]))
    with pytest.raises(InvalidInputError):
        Codebook(np.array([[1.0, np.nan], [0.0, 0.0]]))
    cb = Codebook(np.array([[1.0, 2.0], [3.0, 4.0]]), 1)
    with pytest.raises(CodebookMismatchError):
        Codebook(cb.entries, 1, digest=cb.digest ^ 1)
    assert cb.entries.dtype == np.float32
    assert cb.digest == fnv1a_64_ref(cb.entries.astype("<f4").tobytes())


def test_train_is_deterministic_and_distinct(rng):
    X = rng.normal(size=(400, 6))
    a = train_codebook(X, 16, seed=3)
    b = train_codebook(X, 16, seed=3)
    assert a.entries.tobytes() == b.entries.tobytes()
    assert np.unique(a.entries, axis=0).shape[0] == 16


def test_train_needs_enough_distinct_vectors():
    X = np.repeat(np.eye(3), 10, axis=0)
    with pytest.raises(TrainingError):
        train_codebook(X, 4)
    assert train_codebook(X, 3).size == 3


def test_train_recovers_well_separated_clusters(rng):
    centres = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]])
    X = np.concatenate([c + 0.01 * rng.normal(size=(50, 2)) for c in centres])
    cb = train_codebook(X, 4, seed=0)
    got = sorted(map(tuple, np.round(cb.entries.astype(float))))
    assert got == sorted(map(tuple, centres))


def test_train_mixed_downsample_factors_rejected():
    with pytest.raises(TrainingError):
        train_codebook([encode(features(8), 4), encode(features(8), 2)], 2)


# -- quantization ------------------------------------------------------------------

def test_quantizer_matches_brute_force_with_ties(rng):
    for trial in range(200):
        K = int(rng.integers(2, 65))
        d = int(rng.integers(1, 9))
        # small integer grids make exact ties common
        C = np.unique(rng.integers(-3, 4, size=(K, d)).astype(np.float64), axis=0)
        if C.shape[0] < 2:
            continue
        Z = rng.integers(-3, 4, size=(5, d)).astype(np.float64) + rng.choice([0.0, 0.5], size=(5, d))
        got = nearest_codewords(Z, C)
        assert got.tolist() == [argmin_scan(z, C) for z in Z]


def test_quantize_constant_input_collapses_to_one_codeword(codebooks):
    X = np.zeros((40, FEATURE_DIM))
    X[:, 3] = 0.9
    X[:, CONTACT] = 1.0
    for cb in codebooks.values():
        tokens = quantize(encode(KinematicFeatureSequence(X), 4), cb, 40)
        assert len(set(tokens.indices)) == 1
        z = encode(KinematicFeatureSequence(X), 4).values[0]
        assert tokens.indices[0] == argmin_scan(z, cb.entries.astype(np.float64))


def test_dequantize_checks_digest(codebooks):
    feat = features(16)
    tokens = quantize(encode(feat, 4), codebooks[8], 16)
    with pytest.raises(CodebookMismatchError):
        dequantize(tokens, codebooks[512])
    lat = dequantize(tokens, codebooks[8])
    assert np.array_equal(lat.values, codebooks[8].entries[list(tokens.indices)].astype(np.float64))


def test_token_sequence_validation():
    with pytest.raises(InvalidInputError):
        TokenIndexSequence((0, 1), 12, 4, 0, 8)
    with pytest.raises(IndexRangeError):
        TokenIndexSequence((0, 8, 1), 12, 4, 0, 8)


def test_distortion_per_slice():
    a = features(10, 1)
    assert distortion(a, a) == {k: 0.0 for k in distortion(a, a)}
    Y = np.array(a.values)
    Y[:, 3] += 2.0
    d = distortion(a, KinematicFeatureSequence(Y))
    assert d["root"] == pytest.approx(1.0)
    assert d["total"] == pytest.approx(4.0 / FEATURE_DIM)


def test_rate_distortion_ordering(corpus_clips, codebooks):
    def mean_distortion(cb):
        vals = []
        for c in corpus_clips:
            tok = quantize(encode(c.features, 4), cb, c.features.frames)
            x_hat = decode(dequantize(tok, cb), c.features.frames)
            vals.append(distortion(c.features, x_hat)["total"])
        return np.mean(vals)

    assert mean_distortion(codebooks[512]) <= mean_distortion(codebooks[8])


# -- storage -------------------------------------------------------------------------

def test_tcb_roundtrip_and_layout(tmp_path, codebooks):
    cb = codebooks[8]
    save_codebook(tmp_path / "c.tcb", cb)
    back = load_codebook(tmp_path / "c.tcb")
    assert back.entries.tobytes() == cb.entries.tobytes()
    assert (back.digest, back.downsample_factor) == (cb.digest, 4)
    raw = codebook_to_bytes(cb)
    assert raw[:4] == b"TCB1"
    assert int.from_bytes(raw[4:8], "little") == 8
    assert int.from_bytes(raw[8:12], "little") == 4 * FEATURE_DIM
    assert raw[12] == 4 and raw[13:16] == b"\0\0\0"
    assert int.from_bytes(raw[16:24], "little") == cb.digest
    assert len(raw) == 24 + 8 * 4 * FEATURE_DIM * 4


def test_tcb_corruption_detected(codebooks):
    raw = bytearray(codebook_to_bytes(codebooks[8]))
    raw[100] ^= 0x40
    with pytest.raises(CodebookMismatchError):
        codebook_from_bytes(bytes(raw))
    with pytest.raises(FileFormatError):
        codebook_from_bytes(b"NOPE" + bytes(raw[4:]))
    with pytest.raises(FileFormatError):
        codebook_from_bytes(bytes(raw[:-1]))


@given(st.integers(2, 40), st.integers(1, 6), st.integers(0, 2**16))
@settings(max_examples=40, deadline=None)
def test_quantize_dequantize_is_idempotent_on_codewords(K, d, seed):
    r = np.random.default_rng(seed)
    cb = Codebook(r.normal(size=(K, d)), 1)
    idx = r.integers(0, K, size=7)
    lat = LatentSequence(cb.entries[idx].astype(np.float64), 1)
    tok = quantize(lat, cb)
    assert list(tok.indices) == idx.tolist()
