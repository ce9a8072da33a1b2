import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import mlp_row

from toau.backend import (
    END,
    MOTION,
    START,
    Gallery,
    MotionProjector,
    VocabEmbedding,
    assemble_embeddings,
    build_prompt_layout,
    classify_knn,
    load_projector,
    project_motion,
    projector_from_bytes,
    projector_to_bytes,
    resample,
    save_projector,
    tokenize,
    vote,
)
from toau.errors import FileFormatError, InvalidInputError, ShapeMismatchError
from toau.motion import CONTACT, FEATURE_DIM, KinematicFeatureSequence


def feat(F, seed=0, scale=1.0):
    r = np.random.default_rng(seed)
    X = r.normal(size=(F, FEATURE_DIM)) * scale
    X[:, CONTACT] = 1.0
    return KinematicFeatureSequence(X)


@pytest.fixture(scope="module")
def small_proj():
    return MotionProjector.from_seed(7, hidden_dim=16, embed_dim=12, bias_scale=0.1)


@pytest.fixture(scope="module")
def vocab():
    return VocabEmbedding(12, seed=1)


# -- projector ---------------------------------------------------------------------

def test_default_projector_shape_and_dtype():
    p = MotionProjector.from_seed(0)
    assert p.w1.shape == (263, 512) and p.w2.shape == (512, 1024)
    assert p.w1.dtype == np.float32
    assert np.all(p.b1 == 0) and np.all(p.b2 == 0)
    assert np.std(p.w1) == pytest.approx(1 / np.sqrt(263), rel=0.05)


def test_zero_input_zero_bias_gives_zero():
    out = project_motion(np.zeros((3, FEATURE_DIM)), MotionProjector.from_seed(1, 8, 5))
    assert out.shape == (3, 5) and np.all(out == 0)


def test_projector_matches_hand_rolled_rows():
    proj = MotionProjector.from_seed(3, bias_scale=0.1)
    X = feat(2, 2).values
    out = project_motion(X, proj)
    w1, b1, w2, b2 = (a.astype(float).tolist() for a in (proj.w1, proj.b1, proj.w2, proj.b2))
    for i in range(2):
        ref = mlp_row(X[i].astype(np.float32).astype(float).tolist(), w1, b1, w2, b2)
        assert np.max(np.abs(out[i] - np.array(ref))) <= 1e-6


@given(st.integers(1, 40))
@settings(max_examples=15, deadline=None)
def test_projector_row_count(F):
    out = project_motion(feat(F, F), MotionProjector.from_seed(0, 8, 4))
    assert out.shape == (F, 4)


def test_projector_deterministic_and_dimension_checked(small_proj):
    again = MotionProjector.from_seed(7, hidden_dim=16, embed_dim=12, bias_scale=0.1)
    assert again.w1.tobytes() == small_proj.w1.tobytes()
    assert again.b2.tobytes() == small_proj.b2.tobytes()
    with pytest.raises(ShapeMismatchError):
        project_motion(np.zeros((2, 262)), small_proj)


def test_projector_file_roundtrip(tmp_path, small_proj):
    save_projector(tmp_path / "p.mpw", small_proj)
    back = load_projector(tmp_path / "p.mpw")
    for name in ("w1", "b1", "w2", "b2"):
        assert getattr(back, name).tobytes() == getattr(small_proj, name).tobytes()
    raw = projector_to_bytes(small_proj)
    assert raw[:4] == b"MPW1"
    assert [int.from_bytes(raw[i:i + 4], "little") for i in (4, 8, 12)] == [263, 16, 12]
    with pytest.raises(FileFormatError):
        projector_from_bytes(raw[:-4])
    with pytest.raises(FileFormatError):
        projector_from_bytes(b"MPW2" + raw[4:])


# -- layout and embeddings ---------------------------------------------------------------

def test_tokenizer_splits_words_and_punctuation():
    assert tokenize("What's he doing?") == ["What", "'", "s", "he", "doing", "?"]


def test_layout_example():
    lay = build_prompt_layout(4, "what action")
    assert list(lay.tokens) == [START, MOTION, MOTION, MOTION, MOTION, END, "what", "action"]
    assert lay.answer_count == 0
    assert list(lay.motion_positions) == [1, 2, 3, 4]
    train = build_prompt_layout(2, "what action", "a wave")
    assert list(train.tokens[-2:]) == ["a", "wave"] and train.answer_count == 2
    with pytest.raises(InvalidInputError):
        build_prompt_layout(0, "x")


def test_vocab_vectors_are_unit_and_stable(vocab):
    a = vocab("wave")
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-6)
    assert vocab("wave").tobytes() == VocabEmbedding(12, seed=1)("wave").tobytes()
    assert not np.array_equal(vocab("wave"), vocab("walk"))


def test_assembly_rows_and_substitution(vocab):
    lay = build_prompt_layout(4, "what action")
    E = np.arange(48, dtype=np.float32).reshape(4, 12)
    S = assemble_embeddings(lay, E, vocab)
    assert S.shape == (8, 12)
    assert S[1:5].tobytes() == E.tobytes()
    for i in (0, 5, 6, 7):
        assert S[i].tobytes() == vocab(lay.tokens[i]).tobytes()
    with pytest.raises(ShapeMismatchError):
        assemble_embeddings(lay, E[:3], vocab)


@given(st.integers(1, 12), st.integers(0, 2**16))
@settings(max_examples=30, deadline=None)
def test_permuting_motion_rows_permutes_only_those_rows(F, seed):
    vocab = VocabEmbedding(12, seed=1)
    r = np.random.default_rng(seed)
    lay = build_prompt_layout(F, "which way, left or right?")
    E = r.normal(size=(F, 12)).astype(np.float32)
    perm = r.permutation(F)
    A = assemble_embeddings(lay, E, vocab)
    B = assemble_embeddings(lay, E[perm], vocab)
    assert B[1:F + 1].tobytes() == A[1:F + 1][perm].tobytes()
    fixed = np.r_[0, np.arange(F + 1, A.shape[0])]
    assert B[fixed].tobytes() == A[fixed].tobytes()


# -- kNN -----------------------------------------------------------------------------

def test_resample_endpoints_and_linearity():
    X = np.arange(10, dtype=float)[:, None] * np.ones((1, 3))
    R = resample(X, 64)
    assert R.shape == (64, 3)
    assert R[0, 0] == 0 and R[-1, 0] == 9
    assert np.allclose(np.diff(R[:, 0]), 9 / 63)
    assert np.array_equal(resample(X[:1], 64), np.zeros((64, 3)))


def test_self_match():
    g = Gallery()
    for i, lab in enumerate(["a", "b", "c"]):
        g.add(feat(20 + i, i), lab)
    assert classify_knn(feat(21, 1), g, 1) == ("b", 1.0)


def test_vote_tie_rules():
    # two labels with one vote each: the smaller mean distance wins
    assert vote(["x", "y"], np.array([2.0, 1.0]), 2) == ("y", 0.5)
    # equal counts and distances: lexicographic order decides
    assert vote(["b", "a"], np.array([1.0, 1.0]), 2) == ("a", 0.5)
    assert vote(["a", "b", "b"], np.array([0.1, 0.5, 0.6]), 3) == ("b", 2 / 3)


def test_knn_errors():
    with pytest.raises(InvalidInputError):
        classify_knn(feat(5), Gallery(), 1)
    g = Gallery()
    g.add(feat(5), "a")
    with pytest.raises(InvalidInputError):
        classify_knn(feat(5), g, 0)


def test_two_well_separated_classes_loo():
    from toau.backend import leave_one_out_accuracy

    feats = [feat(30, s, 0.1).values + (5.0 if s % 2 else -5.0) for s in range(12)]
    for f in feats:
        f[:, CONTACT] = 1.0
    labels = ["hi" if s % 2 else "lo" for s in range(12)]
    assert leave_one_out_accuracy(feats, labels, 1) == 1.0
    assert leave_one_out_accuracy(feats, labels, 3) == 1.0


def test_backend_answers_every_class(backend, corpus_clips):
    for c in corpus_clips:
        if c.split == "test":
            out = backend.answer(c.features, "What is the person doing?")
            assert out.label == c.label
            assert out.motion_tokens == c.features.frames
            assert out.prompt_rows == 1 + c.features.frames + 1 + 6
            assert 0.0 < out.confidence <= 1.0
