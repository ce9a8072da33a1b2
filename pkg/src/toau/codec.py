"""Windowed latent transform, k-means codebook and nearest-neighbour quantizer.

The encoder stacks ``l`` consecutive feature rows into one latent vector of
width ``263 * l`` (the final window repeats its last row); decoding unstacks
and truncates. Quantization maps each latent to the index of the closest
codeword, lowest index on ties.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (
    CodebookMismatchError,
    FileFormatError,
    IndexRangeError,
    InvalidInputError,
    ShapeMismatchError,
    TrainingError,
)
from .motion import CONTACT, FEATURE_DIM, FEATURE_SLICES, KinematicFeatureSequence

MIN_K = 2
MAX_K = 65535
MAX_L = 255
DEFAULT_ITERATIONS = 50

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def bits_per_index(K: int) -> int:
    """ceil(log2 K) computed exactly on integers."""
    if K < MIN_K:
        raise InvalidInputError(f"K must be >= {MIN_K}")
    return (K - 1).bit_length()


def payload_bits(F_prime: int, K: int) -> int:
    if F_prime < 0:
        raise InvalidInputError("index count must be nonnegative")
    return F_prime * bits_per_index(K)


def window_count(F: int, l: int) -> int:
    return -(-F // l)


@dataclass(frozen=True, eq=False)
class LatentSequence:
    values: np.ndarray
    downsample_factor: int

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1:
            raise InvalidInputError(f"latents must be a nonempty 2-D array, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("non-finite latent values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class Codebook:
    """K x d float32 codewords. The digest is FNV-1a over the little-endian entry bytes."""

    entries: np.ndarray
    downsample_factor: int = 4
    digest: int | None = None

    def __post_init__(self):
        e = np.array(self.entries, dtype="<f4")
        if e.ndim != 2:
            raise InvalidInputError("codebook entries must be 2-D")
        K = e.shape[0]
        if not MIN_K <= K <= MAX_K:
            raise InvalidInputError(f"K={K} outside [{MIN_K}, {MAX_K}]")
        if not 1 <= self.downsample_factor <= MAX_L:
            raise InvalidInputError(f"downsample factor {self.downsample_factor} outside [1, {MAX_L}]")
        if not np.all(np.isfinite(e)):
            raise InvalidInputError("non-finite codebook entries")
        if np.unique(e, axis=0).shape[0] != K:
            raise InvalidInputError("codebook rows must be pairwise distinct")
        e.setflags(write=False)
        digest = fnv1a_64(e.tobytes())
        if self.digest is not None and self.digest != digest:
            raise CodebookMismatchError(f"stored digest {self.digest:#018x} != computed {digest:#018x}")
        object.__setattr__(self, "entries", e)
        object.__setattr__(self, "digest", digest)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class TokenIndexSequence:
    indices: tuple[int, ...]
    source_frame_count: int
    downsample_factor: int
    codebook_digest: int
    codebook_size: int

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        if self.downsample_factor < 1:
            raise InvalidInputError("downsample factor must be >= 1")
        if len(self.indices) != window_count(self.source_frame_count, self.downsample_factor):
            raise InvalidInputError("index count must equal ceil(F / l)")
        if any(not 0 <= i < self.codebook_size for i in self.indices):
            raise IndexRangeError(f"indices must lie in [0, {self.codebook_size})")


# -- transform -------------------------------------------------------------

def encode(feat: KinematicFeatureSequence, l: int) -> LatentSequence:
    if l < 1:
        raise InvalidInputError("downsample factor must be >= 1")
    X = feat.values
    F = X.shape[0]
    n = window_count(F, l)
    padded = np.concatenate([X, np.repeat(X[-1:], n * l - F, axis=0)], axis=0)
    return LatentSequence(padded.reshape(n, l * FEATURE_DIM), l)


def decode(lat: LatentSequence, F: int, fps: int = 20) -> KinematicFeatureSequence:
    """Unstack latents into feature rows and keep the first F.

    Foot-contact channels are snapped to {0, 1} at 0.5 so that decoded
    codewords remain valid feature rows; unquantized input is unaffected.
    """
    l = lat.downsample_factor
    if F < 1:
        raise InvalidInputError("frame count must be >= 1")
    if lat.dim != l * FEATURE_DIM:
        raise ShapeMismatchError(f"latent dim {lat.dim} != {l} x {FEATURE_DIM}")
    if lat.length != window_count(F, l):
        raise ShapeMismatchError(f"{lat.length} latents cannot cover {F} frames at l={l}")
    X = lat.values.reshape(-1, FEATURE_DIM)[:F].copy()
    X[:, CONTACT] = (X[:, CONTACT] >= 0.5).astype(np.float64)
    return KinematicFeatureSequence(X, fps)


# -- codebook training -----------------------------------------------------

def _sq_dists(X: np.ndarray, C: np.ndarray, x2: np.ndarray) -> np.ndarray:
    d = x2[:, None] - 2.0 * (X @ C.T) + np.sum(C * C, axis=1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(X: np.ndarray, K: int, rng: np.random.Generator, x2: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.maximum(x2 - 2.0 * X @ X[chosen[0]] + x2[chosen[0]], 0.0)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0.0:
            raise TrainingError("ran out of distinct vectors during seeding")
        nxt = int(rng.choice(n, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.maximum(x2 - 2.0 * X @ X[nxt] + x2[nxt], 0.0))
    return X[chosen].copy()


def _reseed(C: np.ndarray, slots: np.ndarray, X: np.ndarray, own_d2: np.ndarray) -> None:
    """Move each slot onto the point farthest from its own centroid."""
    order = np.argsort(-own_d2, kind="stable")
    taken = 0
    for k in slots:
        C[k] = X[order[taken]]
        own_d2[order[taken]] = 0.0
        taken += 1


def train_codebook(latents: Iterable[LatentSequence] | np.ndarray, K: int,
                   iterations: int = DEFAULT_ITERATIONS, seed: int = 0,
                   downsample_factor: int | None = None) -> Codebook:
    """Lloyd's k-means with k-means++ seeding.

    Empty clusters, and clusters whose centroid collides with another after
    float32 rounding, are moved onto the training vector farthest from its
    assigned centroid. Output depends only on (inputs, K, iterations, seed).
    """
    if isinstance(latents, np.ndarray):
        X = np.asarray(latents, dtype=np.float64)
        l = downsample_factor or 1
    else:
        seqs = list(latents)
        if not seqs:
            raise TrainingError("no training latents")
        ls = {s.downsample_factor for s in seqs}
        if len(ls) != 1:
            raise TrainingError("latents mix downsample factors")
        l = ls.pop()
        X = np.concatenate([s.values for s in seqs], axis=0)
    if not MIN_K <= K <= MAX_K:
        raise TrainingError(f"K={K} outside [{MIN_K}, {MAX_K}]")
    if iterations < 0:
        raise TrainingError("iterations must be nonnegative")
    # distinctness is judged at storage precision
    X = X.astype("<f4").astype(np.float64)
    if X.shape[0] < K or np.unique(X, axis=0).shape[0] < K:
        raise TrainingError(f"need at least {K} distinct latent vectors")

    rng = np.random.default_rng(seed)
    x2 = np.sum(X * X, axis=1)
    C = _kmeans_pp(X, K, rng, x2)
    assign = None
    for _ in range(iterations):
        d = _sq_dists(X, C, x2)
        new_assign = np.argmin(d, axis=1)
        own = d[np.arange(X.shape[0]), new_assign]
        counts = np.bincount(new_assign, minlength=K)
        onehot = np.zeros((K, X.shape[0]))
        onehot[new_assign, np.arange(X.shape[0])] = 1.0
        sums = onehot @ X
        nonempty = counts > 0
        C[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if empty.size:
            _reseed(C, empty, X, own)
        elif assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign

    C32 = C.astype("<f4")
    while True:
        _, first = np.unique(C32, axis=0, return_index=True)
        dup = np.setdiff1d(np.arange(K), first)
        if dup.size == 0:
            break
        d = _sq_dists(X, C32.astype(np.float64), x2)
        own = d.min(axis=1)
        _reseed(C32, dup, X.astype("<f4"), own)
    return Codebook(C32, l)


# -- quantization ----------------------------------------------------------

def nearest_codewords(Z: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """argmin_k ||z - c_k||_2 per row, lowest index on ties.

    A matrix-product expansion screens candidates; every codeword whose
    screened distance is within the expansion's rounding bound of the row
    minimum is then re-ranked with explicit differences, so the result equals
    a brute-force scan.
    """
    Z = np.asarray(Z, dtype=np.float64)
    C = np.asarray(entries, dtype=np.float64)
    z2 = np.einsum("ij,ij->i", Z, Z)
    c2 = np.einsum("ij,ij->i", C, C)
    approx = z2[:, None] - 2.0 * (Z @ C.T) + c2[None, :]
    slack = 1e-9 * (z2[:, None] + c2[None, :]) * (C.shape[1] + 2) + 1e-300
    lo = np.min(approx, axis=1, keepdims=True)
    cand = approx <= lo + 2.0 * slack.max(axis=1, keepdims=True)
    out = np.empty(Z.shape[0], dtype=np.int64)
    for i in range(Z.shape[0]):
        ks = np.flatnonzero(cand[i])
        if ks.size == 1:
            out[i] = ks[0]
        else:
            exact = np.sum((Z[i][None, :] - C[ks]) ** 2, axis=1)
            out[i] = ks[np.argmin(exact)]
    return out


def quantize(lat: LatentSequence, cb: Codebook, source_frame_count: int | None = None) -> TokenIndexSequence:
    if lat.dim != cb.dim:
        raise ShapeMismatchError(f"latent dim {lat.dim} != codebook dim {cb.dim}")
    l = lat.downsample_factor
    F = lat.length * l if source_frame_count is None else source_frame_count
    idx = nearest_codewords(lat.values, cb.entries)
    return TokenIndexSequence(tuple(idx.tolist()), F, l, cb.digest, cb.size)


def dequantize(tokens: TokenIndexSequence, cb: Codebook) -> LatentSequence:
    if tokens.codebook_digest != cb.digest:
        raise CodebookMismatchError(
            f"tokens were produced with codebook {tokens.codebook_digest:#018x}, have {cb.digest:#018x}")
    idx = np.asarray(tokens.indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= cb.size):
        raise IndexRangeError(f"index outside [0, {cb.size})")
    return LatentSequence(cb.entries[idx].astype(np.float64), tokens.downsample_factor)


# -- distortion ------------------------------------------------------------

def distortion(a: KinematicFeatureSequence, b: KinematicFeatureSequence) -> dict[str, float]:
    """Mean squared error overall ("total") and per feature slice."""
    if a.values.shape != b.values.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.values.shape} vs {b.values.shape}")
    sq = (a.values - b.values) ** 2
    out = {"total": float(sq.mean())}
    for name, sl in FEATURE_SLICES.items():
        out[name] = float(sq[:, sl].mean())
    return out


# -- storage ---------------------------------------------------------------

_TCB = struct.Struct("<4sIIB3xQ")
TCB_MAGIC = b"TCB1"


def codebook_to_bytes(cb: Codebook) -> bytes:
    return _TCB.pack(TCB_MAGIC, cb.size, cb.dim, cb.downsample_factor, cb.digest) + cb.entries.tobytes()


def codebook_from_bytes(data: bytes) -> Codebook:
    if len(data) < _TCB.size:
        raise FileFormatError("codebook file shorter than header")
    magic, K, d, l, digest = _TCB.unpack_from(data)
    if magic != TCB_MAGIC:
        raise FileFormatError(f"bad codebook magic {magic!r}")
    if data[13:16] != b"\0\0\0":
        raise FileFormatError("reserved codebook header bytes must be zero")
    body = data[_TCB.size:]
    if len(body) != 4 * K * d:
        raise FileFormatError(f"expected {4 * K * d} entry bytes, found {len(body)}")
    if fnv1a_64(body) != digest:
        raise CodebookMismatchError("codebook digest does not match entry block")
    entries = np.frombuffer(body, dtype="<f4").reshape(K, d)
    return Codebook(entries, l, digest)


def save_codebook(path: str | Path, cb: Codebook) -> None:
    Path(path).write_bytes(codebook_to_bytes(cb))


def load_codebook(path: str | Path) -> Codebook:
    return codebook_from_bytes(Path(path).read_bytes())
