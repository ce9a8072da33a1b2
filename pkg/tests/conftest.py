from __future__ import annotations

import numpy as np
import pytest

from toau.backend import UnderstandingBackend, load_gallery
from toau.bench import load_manifest
from toau.codec import encode, train_codebook
from toau.skeleton import default_skeleton
from toau.synth import build_corpus


@pytest.fixture(scope="session")
def skeleton():
    return default_skeleton()


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    build_corpus(d, per_class=20, seed=1)
    return d


@pytest.fixture(scope="session")
def corpus_clips(corpus_dir):
    return load_manifest(corpus_dir / "manifest.json")


@pytest.fixture(scope="session")
def train_latents(corpus_clips):
    return [encode(c.features, 4) for c in corpus_clips if c.split == "train"]


@pytest.fixture(scope="session")
def codebooks(train_latents):
    """K=8 and K=512 codebooks trained on the corpus train split."""
    return {K: train_codebook(train_latents, K, seed=0) for K in (8, 512)}


@pytest.fixture(scope="session")
def backend(corpus_dir):
    return UnderstandingBackend(load_gallery(corpus_dir / "gallery.json"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
