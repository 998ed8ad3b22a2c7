import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from debcse.corpus_store import corpus_from_lines
from debcse.synth import wiki_like_corpus


@pytest.fixture(scope="session")
def small_corpus():
    lines = [
        "the cat sat on the mat",
        "a dog ran through the park",
        "the cat chased a small dog",
        "birds fly over the quiet lake",
        "a small boat crossed the lake",
        "the dog slept near the boat",
        "children played in the park",
        "the quiet cat watched the birds",
    ]
    return corpus_from_lines(lines, min_tokens=3, max_tokens=64)


@pytest.fixture(scope="session")
def desk_corpus():
    """The 5k-sentence topical corpus used by the heavier acceptance checks."""
    lines, topic_ids = wiki_like_corpus(n_sentences=5000, n_topics=50, seed=13)
    return corpus_from_lines(lines, min_tokens=3, max_tokens=64), topic_ids
