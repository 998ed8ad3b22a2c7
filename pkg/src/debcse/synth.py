"""Deterministic synthetic corpora for desk-scale runs and tests.

Sentences are built from generated topic vocabularies plus a fixed pool of
real function words. Same-topic sentences share most of their content words,
which gives an untrained mean-pool encoder a usable cosine geometry; tokens
within a sentence never repeat, so type-based lexical overlap of an
identical pair is exactly 1.
"""

from __future__ import annotations

import numpy as np

FUNCTION_WORDS = [
    "the", "a", "an", "of", "and", "to", "in", "on", "for", "with",
    "by", "at", "from", "as", "that", "this", "its", "was", "is", "are",
    "has", "had", "into", "over", "after", "before", "between", "under",
    "near", "through", "while", "during", "also", "most", "some", "many",
    "each", "both", "such", "other",
]

_CONSONANTS = "bcdfghjklmnprstvwz"
_VOWELS = "aeiou"


def generated_words(count: int, seed: int) -> list[str]:
    """Pronounceable pseudo-words, unique and deterministic for a seed."""
    rng = np.random.default_rng([seed, 97])
    words: list[str] = []
    seen = set(FUNCTION_WORDS)
    while len(words) < count:
        syllables = rng.integers(2, 4)
        word = "".join(
            _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
            for _ in range(syllables)
        )
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def _sentence(rng: np.random.Generator, topic_vocab: list[str],
              n_topic: int, n_function: int) -> str:
    content = rng.choice(len(topic_vocab), size=n_topic, replace=False)
    func = rng.choice(len(FUNCTION_WORDS), size=n_function, replace=False)
    tokens = [topic_vocab[i] for i in content] + [FUNCTION_WORDS[i] for i in func]
    rng.shuffle(tokens)
    return " ".join(tokens)


def template_corpus(n_templates: int = 20, per_template: int = 10, seed: int = 0,
                    vocab_per_template: int = 16,
                    content_words: tuple[int, int] = (5, 7)):
    """Paraphrase clusters with synonym structure: per_template sentences per
    template, each drawing a small random subset of the template's vocabulary.

    Two paraphrases of one template overlap only partially, so a fresh
    mean-pool encoder does NOT already align them; whatever alignment a
    trained encoder shows on held-out same-template pairs had to be learned
    from co-occurrence. Returns (lines, template_ids).
    """
    words = generated_words(n_templates * vocab_per_template, seed)
    rng = np.random.default_rng([seed, 11])
    lines: list[str] = []
    template_ids: list[int] = []
    for t in range(n_templates):
        vocab = words[t * vocab_per_template:(t + 1) * vocab_per_template]
        for _ in range(per_template):
            n_topic = int(rng.integers(content_words[0], content_words[1] + 1))
            n_function = int(rng.integers(1, 3))
            lines.append(_sentence(rng, vocab, n_topic, n_function))
            template_ids.append(t)
    return lines, template_ids


def wiki_like_corpus(n_sentences: int = 5000, n_topics: int = 50, seed: int = 0,
                     vocab_per_topic: int = 18):
    """A flat topical corpus: each sentence samples words from one topic.

    Cross-topic sentences share only the occasional function word, so random
    pairs have low lexical overlap while same-topic pairs overlap heavily.
    """
    words = generated_words(n_topics * vocab_per_topic, seed)
    rng = np.random.default_rng([seed, 23])
    lines: list[str] = []
    topic_ids: list[int] = []
    for _ in range(n_sentences):
        t = int(rng.integers(n_topics))
        vocab = words[t * vocab_per_topic:(t + 1) * vocab_per_topic]
        n_topic = int(rng.integers(7, 13))
        n_function = int(rng.integers(2, 4))
        lines.append(_sentence(rng, vocab, n_topic, n_function))
        topic_ids.append(t)
    return lines, topic_ids


def synthetic_sts(lines: list[str], group_ids: list[int], n_pairs: int, seed: int = 0):
    """Gold-scored pairs over an existing grouped corpus.

    Same-group pairs get high golds, cross-group pairs low golds, with seeded
    jitter so ranks are informative. Returns (gold, sentence_a, sentence_b)
    tuples ready for the tab-separated evaluation format.
    """
    rng = np.random.default_rng([seed, 41])
    by_group: dict[int, list[int]] = {}
    for idx, g in enumerate(group_ids):
        by_group.setdefault(g, []).append(idx)
    groups = [g for g, members in by_group.items() if len(members) >= 2]
    if len(groups) < 2:
        raise ValueError("need at least two groups with two members each")
    rows = []
    for _ in range(n_pairs):
        if rng.random() < 0.5:
            g = groups[int(rng.integers(len(groups)))]
            i, j = rng.choice(by_group[g], size=2, replace=False)
            gold = float(np.clip(4.2 + rng.normal(0.0, 0.35), 0.0, 5.0))
        else:
            g1, g2 = rng.choice(len(groups), size=2, replace=False)
            i = rng.choice(by_group[groups[g1]])
            j = rng.choice(by_group[groups[g2]])
            gold = float(np.clip(0.8 + rng.normal(0.0, 0.35), 0.0, 5.0))
        rows.append((gold, lines[int(i)], lines[int(j)]))
    return rows


def write_sts_file(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for gold, a, b in rows:
            fh.write(f"{gold!r}\t{a}\t{b}\n")


def write_corpus_file(path, lines) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
