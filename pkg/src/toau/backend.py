"""Cloud-side reasoning stand-in.

A seeded two-layer MLP projects reconstructed feature rows to embedding rows,
one per frame. The prompt is laid out as ``<start>, <motion> x F, <end>,
question tokens [, answer tokens]`` and the placeholder rows are overwritten
with the projected motion. The label itself comes from a nearest-neighbour
vote against a labelled gallery.
"""

from __future__ import annotations

import json
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .codec import fnv1a_64
from .errors import FileFormatError, InvalidInputError, ShapeMismatchError
from .motion import FEATURE_DIM, KinematicFeatureSequence, canonicalize, extract_features
from .motion_io import read_hml, read_j3d
from .skeleton import Skeleton, default_skeleton

START = "<start>"
END = "<end>"
MOTION = "<motion>"
HIDDEN_DIM = 512
EMBED_DIM = 1024
RESAMPLE_LENGTH = 64
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


# -- projector -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MotionProjector:
    w1: np.ndarray   # 263 x h
    b1: np.ndarray
    w2: np.ndarray   # h x d_e
    b2: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            a = np.array(getattr(self, name), dtype=np.float32)
            if not np.all(np.isfinite(a)):
                raise InvalidInputError(f"non-finite projector weights in {name}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        h = self.w1.shape[1]
        if self.w1.shape != (FEATURE_DIM, h) or self.b1.shape != (h,):
            raise InvalidInputError("layer 1 must be 263 x h with an h bias")
        if self.w2.shape[0] != h or self.b2.shape != (self.w2.shape[1],):
            raise InvalidInputError("layer 2 must be h x d_e with a d_e bias")
        # float64 copies used for accumulation
        object.__setattr__(self, "_w1_64", self.w1.astype(np.float64))
        object.__setattr__(self, "_w2_64", self.w2.astype(np.float64))

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.w2.shape[1]

    @classmethod
    def from_seed(cls, seed: int = 0, hidden_dim: int = HIDDEN_DIM,
                  embed_dim: int = EMBED_DIM, bias_scale: float = 0.0) -> "MotionProjector":
        """Gaussian weights with std 1/sqrt(fan_in); biases N(0, bias_scale)."""
        rng = np.random.default_rng(seed)
        w1 = rng.normal(0.0, 1.0 / np.sqrt(FEATURE_DIM), (FEATURE_DIM, hidden_dim))
        b1 = rng.normal(0.0, 1.0, hidden_dim) * bias_scale
        w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), (hidden_dim, embed_dim))
        b2 = rng.normal(0.0, 1.0, embed_dim) * bias_scale
        return cls(w1, b1, w2, b2, seed)


def project_motion(feat: KinematicFeatureSequence | np.ndarray, proj: MotionProjector) -> np.ndarray:
    """Row-wise relu(x W1 + b1) W2 + b2 on float32 inputs, accumulated in float64.

    Returns float32 (F x d_e).
    """
    X = feat.values if isinstance(feat, KinematicFeatureSequence) else np.asarray(feat)
    if X.ndim != 2 or X.shape[1] != proj.w1.shape[0]:
        raise ShapeMismatchError(f"expected rows of width {proj.w1.shape[0]}, got {X.shape}")
    x = X.astype(np.float32).astype(np.float64)
    hidden = np.maximum(x @ proj._w1_64 + proj.b1, 0.0)
    return (hidden @ proj._w2_64 + proj.b2).astype(np.float32)


_MPW = struct.Struct("<4sIII")


def projector_to_bytes(proj: MotionProjector) -> bytes:
    head = _MPW.pack(b"MPW1", FEATURE_DIM, proj.hidden_dim, proj.embed_dim)
    return head + b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes()
                           for a in (proj.w1, proj.b1, proj.w2, proj.b2))


def projector_from_bytes(data: bytes) -> MotionProjector:
    if len(data) < _MPW.size:
        raise FileFormatError("projector file shorter than header")
    magic, n_in, h, d_e = _MPW.unpack_from(data)
    if magic != b"MPW1":
        raise FileFormatError(f"bad projector magic {magic!r}")
    if n_in != FEATURE_DIM:
        raise FileFormatError(f"projector input width {n_in}, expected {FEATURE_DIM}")
    sizes = [n_in * h, h, h * d_e, d_e]
    if len(data) != _MPW.size + 4 * sum(sizes):
        raise FileFormatError("projector file size does not match header")
    flat = np.frombuffer(data, dtype="<f4", offset=_MPW.size)
    parts = np.split(flat, np.cumsum(sizes)[:-1])
    return MotionProjector(parts[0].reshape(n_in, h), parts[1], parts[2].reshape(h, d_e), parts[3])


def save_projector(path: str | Path, proj: MotionProjector) -> None:
    Path(path).write_bytes(projector_to_bytes(proj))


def load_projector(path: str | Path) -> MotionProjector:
    return projector_from_bytes(Path(path).read_bytes())


# -- prompt layout and embeddings ------------------------------------------

def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


@dataclass(frozen=True)
class TokenLayout:
    tokens: tuple[str, ...]
    motion_count: int
    question_count: int
    answer_count: int = 0

    @property
    def motion_positions(self) -> range:
        return range(1, 1 + self.motion_count)


def build_prompt_layout(frame_count: int, question: str, answer: str | None = None) -> TokenLayout:
    if frame_count < 1:
        raise InvalidInputError("frame_count must be >= 1")
    q = tokenize(question)
    a = tokenize(answer) if answer is not None else []
    tokens = (START, *([MOTION] * frame_count), END, *q, *a)
    return TokenLayout(tokens, frame_count, len(q), len(a))


class VocabEmbedding:
    """Deterministic unit vectors per token, seeded from a 64-bit token hash."""

    def __init__(self, dim: int = EMBED_DIM, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._lookup = lru_cache(maxsize=4096)(self._make)

    def _make(self, token: str) -> np.ndarray:
        key = fnv1a_64(token.encode("utf-8")) ^ (self.seed & 0xFFFFFFFFFFFFFFFF)
        v = np.random.default_rng(key).standard_normal(self.dim).astype(np.float32)
        v /= np.linalg.norm(v)
        v.setflags(write=False)
        return v

    def __call__(self, token: str) -> np.ndarray:
        return self._lookup(token)


def assemble_embeddings(layout: TokenLayout, motion: np.ndarray, vocab: VocabEmbedding) -> np.ndarray:
    """Embedding matrix for the layout with placeholder rows replaced by ``motion`` rows."""
    motion = np.asarray(motion)
    if motion.ndim != 2 or motion.shape[0] != layout.motion_count:
        raise ShapeMismatchError(
            f"{layout.motion_count} placeholders but {motion.shape[0] if motion.ndim else 0} motion rows")
    if motion.shape[1] != vocab.dim:
        raise ShapeMismatchError(f"motion width {motion.shape[1]} != embedding dim {vocab.dim}")
    out = np.empty((len(layout.tokens), vocab.dim), dtype=np.float32)
    out[0] = vocab(START)
    out[layout.motion_positions.start:layout.motion_positions.stop] = motion
    for i in range(1 + layout.motion_count, len(layout.tokens)):
        out[i] = vocab(layout.tokens[i])
    return out


# -- nearest-neighbour reasoner --------------------------------------------

def resample(values: np.ndarray, length: int = RESAMPLE_LENGTH) -> np.ndarray:
    """Uniform linear-interpolation resampling along the time axis."""
    F = values.shape[0]
    if F == 1:
        return np.repeat(values, length, axis=0)
    pos = np.linspace(0.0, F - 1, length)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, F - 1)
    w = (pos - i0)[:, None]
    return values[i0] * (1.0 - w) + values[i1] * w


@dataclass(frozen=True)
class GalleryEntry:
    label: str
    caption: str
    resampled: np.ndarray
    source: str = ""


@dataclass
class Gallery:
    entries: list[GalleryEntry] = field(default_factory=list)

    def add(self, feat: KinematicFeatureSequence, label: str, caption: str = "", source: str = ""):
        r = resample(feat.values)
        r.setflags(write=False)
        self.entries.append(GalleryEntry(label, caption, r, source))

    def __len__(self) -> int:
        return len(self.entries)

    def caption_for(self, label: str) -> str:
        for e in self.entries:
            if e.label == label and e.caption:
                return e.caption
        return label

    @property
    def stacked(self) -> np.ndarray:
        return np.stack([e.resampled for e in self.entries])


def load_gallery(path: str | Path, skeleton: Skeleton | None = None) -> Gallery:
    """Read gallery.json; .j3d clips are canonicalized and featurized on load."""
    path = Path(path)
    sk = skeleton or default_skeleton()
    gal = Gallery()
    for item in json.loads(path.read_text()):
        clip = path.parent / item["path"]
        if clip.suffix == ".hml":
            feat = read_hml(clip)
        elif clip.suffix == ".j3d":
            feat = extract_features(canonicalize(read_j3d(clip), sk), sk)
        else:
            raise FileFormatError(f"unsupported gallery file {clip}")
        gal.add(feat, item["label"], item.get("caption", ""), str(item["path"]))
    return gal


def knn_distances(query: np.ndarray, stacked: np.ndarray) -> np.ndarray:
    """Mean per-frame Euclidean distance between resampled sequences."""
    return np.linalg.norm(stacked - query[None], axis=-1).mean(axis=-1)


def vote(labels: list[str], dists: np.ndarray, k: int) -> tuple[str, float]:
    """Majority label among the k nearest; ties by smaller mean distance, then name."""
    order = np.argsort(dists, kind="stable")[:k]
    counts = Counter(labels[i] for i in order)
    mean_d = {lab: float(np.mean([dists[i] for i in order if labels[i] == lab])) for lab in counts}
    best = min(counts, key=lambda lab: (-counts[lab], mean_d[lab], lab))
    return best, counts[best] / len(order)


def classify_knn(feat: KinematicFeatureSequence | np.ndarray, gallery: Gallery, k: int = 1) -> tuple[str, float]:
    if len(gallery) == 0:
        raise InvalidInputError("empty gallery")
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    X = feat.values if isinstance(feat, KinematicFeatureSequence) else np.asarray(feat)
    dists = knn_distances(resample(X), gallery.stacked)
    return vote([e.label for e in gallery.entries], dists, k)


def loo_verdicts(features: list[np.ndarray], labels: list[str], k: int = 1) -> list[bool]:
    """Per sequence: does its kNN label among all the others match its own?"""
    if len(features) < 2:
        raise InvalidInputError("need at least two sequences")
    R = np.stack([resample(np.asarray(f)) for f in features])
    out = []
    for i in range(len(R)):
        keep = np.arange(len(R)) != i
        lab, _ = vote([labels[j] for j in np.flatnonzero(keep)], knn_distances(R[i], R[keep]), k)
        out.append(lab == labels[i])
    return out


def leave_one_out_accuracy(features: list[np.ndarray], labels: list[str], k: int = 1) -> float:
    v = loo_verdicts(features, labels, k)
    return sum(v) / len(v)


# -- backend facade --------------------------------------------------------

@dataclass(frozen=True)
class Understanding:
    label: str
    confidence: float
    answer: str
    motion_tokens: int
    prompt_rows: int


class UnderstandingBackend:
    """Projector + prompt assembly + kNN vote. Immutable after construction."""

    def __init__(self, gallery: Gallery, projector: MotionProjector | None = None,
                 vocab: VocabEmbedding | None = None, k: int = 1):
        if len(gallery) == 0:
            raise InvalidInputError("empty gallery")
        self.gallery = gallery
        self.projector = projector or MotionProjector.from_seed(0)
        self.vocab = vocab or VocabEmbedding(self.projector.embed_dim)
        self.k = k
        self._stacked = gallery.stacked
        self._labels = [e.label for e in gallery.entries]

    def answer(self, feat: KinematicFeatureSequence, question: str) -> Understanding:
        layout = build_prompt_layout(feat.frames, question)
        motion = project_motion(feat, self.projector)
        s_in = assemble_embeddings(layout, motion, self.vocab)
        if layout.motion_count != feat.frames:
            raise AssertionError("placeholder count differs from reconstructed frame count")
        dists = knn_distances(resample(feat.values), self._stacked)
        label, conf = vote(self._labels, dists, self.k)
        text = f"{self.gallery.caption_for(label)}."
        return Understanding(label, conf, text[0].upper() + text[1:], layout.motion_count, s_in.shape[0])
