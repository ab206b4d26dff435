"""Shared fixtures: tiny synthetic corpora and trained models reused across
test modules so the expensive training runs happen once per session."""

import numpy as np
import pytest

from nasalgan import audio, corpus, detector


@pytest.fixture(scope="session")
def tiny_corpus_dir(tmp_path_factory):
    """Small four-class synthetic corpus on disk (8 tokens per class)."""
    out = tmp_path_factory.mktemp("tiny_corpus")
    corpus.synthesize_corpus({c: 8 for c in corpus.CLASS_NAMES}, out, seed=11)
    return out


@pytest.fixture(scope="session")
def frame_sets():
    """(train_frames, heldout_frames, heldout_tokens) from fresh synthetic
    tokens: 40 per class train, 10 per class held out."""
    config = detector.DetectorConfig()
    train, held, held_tokens = [], [], []
    for ci, cls in enumerate(corpus.CLASS_NAMES):
        for i in range(50):
            clip, spans = audio.make_synthetic_token(cls, seed=1000 * ci + i)
            frames = detector.frames_from_token(clip, spans, config)
            if i < 40:
                train += frames
            else:
                held += frames
                held_tokens.append((cls, clip))
    return train, held, held_tokens


@pytest.fixture(scope="session")
def small_detector(frame_sets):
    """A four-way detector good enough to label synthetic tokens."""
    train, held, _ = frame_sets
    config = detector.DetectorConfig(epochs=4, seed=3)
    model, accs = detector.train_detector("four_way", train, config, held)
    return model, accs


def rel_err(a, b):
    denom = max(abs(a), abs(b), 1e-12)
    return abs(a - b) / denom


@pytest.fixture
def rng():
    return np.random.default_rng(0)
