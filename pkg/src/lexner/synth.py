"""Synthetic desk-scale corpus where entity type is carried by suffix words.

Entities are prefix word + suffix word (4 characters). The 20 suffix words
come in reversed pairs ("ab"/"ba") assigned to different types, so an
order-insensitive character model cannot separate the types while the
lexicon pathway (each suffix word has its own embedding) can. Context
characters use a disjoint alphabet and single-character segmentation, so
span boundaries are learnable by any configuration.
"""
from __future__ import annotations

import numpy as np

from .corpus import Sentence, derive_soft_word_labels

WORD_ALPHABET = "abcdefghijklmnopqrst"
CONTEXT_ALPHABET = "uvwxyz"
TYPES = ("PER", "ORG", "LOC")


def build_wordlists(rng: np.random.Generator):
    """20 prefix words, 20 type-bearing suffix words, and their type map."""
    letters = list(WORD_ALPHABET)
    pairs = []
    seen = set()
    while len(pairs) < 10:
        x, y = rng.choice(letters, size=2, replace=False)
        if frozenset((x, y)) not in seen:
            seen.add(frozenset((x, y)))
            pairs.append((x, y))
    suffixes, suffix_type = [], {}
    for i, (x, y) in enumerate(pairs):
        for word, t in ((x + y, TYPES[i % 3]), (y + x, TYPES[(i + 1) % 3])):
            suffixes.append(word)
            suffix_type[word] = t
    prefixes = []
    taken = set(suffixes)
    while len(prefixes) < 20:
        w = "".join(rng.choice(letters, size=2))
        if w not in taken:
            taken.add(w)
            prefixes.append(w)
    return prefixes, suffixes, suffix_type


def build_lexicon_words(rng: np.random.Generator, prefixes, suffixes,
                        size: int = 500) -> list[str]:
    words = list(prefixes) + list(suffixes)
    taken = set(words)
    alphabet = list(WORD_ALPHABET + CONTEXT_ALPHABET)
    while len(words) < size:
        w = "".join(rng.choice(alphabet, size=int(rng.integers(2, 4))))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def _context(rng, lo, hi):
    return [str(c) for c in rng.choice(list(CONTEXT_ALPHABET),
                                       size=int(rng.integers(lo, hi + 1)))]


def make_sentence(rng: np.random.Generator, prefixes, suffixes,
                  suffix_type) -> Sentence:
    words: list[str] = []
    entity_at: list[tuple[int, str]] = []  # (word index, type)

    def add_entity():
        w = str(rng.choice(prefixes)) + str(rng.choice(suffixes))
        entity_at.append((len(words), suffix_type[w[2:]]))
        words.append(w)

    words.extend(_context(rng, 2, 6))
    add_entity()
    words.extend(_context(rng, 2, 5))
    if rng.random() < 0.5:
        add_entity()
        words.extend(_context(rng, 1, 3))

    chars = list("".join(words))
    segs = derive_soft_word_labels(words)
    pos = []
    entity_words = {idx for idx, _ in entity_at}
    for i, w in enumerate(words):
        pos.extend(["NN" if i in entity_words else "X"] * len(w))
    offsets, total = [], 0
    for w in words:
        offsets.append(total)
        total += len(w)
    entities = {(offsets[idx], offsets[idx] + len(words[idx]) - 1, t)
                for idx, t in entity_at}
    return Sentence(chars, segs, pos, entities)


def make_corpus(seed: int, n_train: int = 200, n_dev: int = 60,
                lexicon_size: int = 500):
    """Returns (train sentences, dev sentences, lexicon words)."""
    rng = np.random.default_rng(seed)
    prefixes, suffixes, suffix_type = build_wordlists(rng)
    lex_words = build_lexicon_words(rng, prefixes, suffixes, lexicon_size)
    train = [make_sentence(rng, prefixes, suffixes, suffix_type)
             for _ in range(n_train)]
    dev = [make_sentence(rng, prefixes, suffixes, suffix_type)
           for _ in range(n_dev)]
    return train, dev, lex_words
