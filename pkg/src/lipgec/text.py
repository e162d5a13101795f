"""Text normalization and the whitespace word-level tokenizer.

One normalizer is shared by corpus construction and WER scoring so the
two never disagree about word boundaries.
"""

from __future__ import annotations

import re

import numpy as np

_NON_WORD = re.compile(r"[^a-z0-9\s]")

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)


def normalize_text(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    return " ".join(_NON_WORD.sub(" ", text.lower()).split())


def normalize_words(text: str) -> tuple[str, ...]:
    return tuple(normalize_text(text).split())


class Tokenizer:
    """Whitespace word-level tokenizer with PAD/BOS/EOS/UNK specials.

    Tokenization splits on whitespace only (no casefolding), so template
    text like "Best-hypothesis:" round-trips exactly. Out-of-vocabulary
    words map to UNK.
    """

    def __init__(self, vocab: list[str]):
        if list(vocab[: len(SPECIALS)]) != list(SPECIALS):
            vocab = list(SPECIALS) + [w for w in vocab if w not in SPECIALS]
        self.vocab = list(vocab)
        self._ids = {w: i for i, w in enumerate(self.vocab)}
        if len(self._ids) != len(self.vocab):
            raise ValueError("duplicate words in vocabulary")

    @classmethod
    def from_texts(cls, texts) -> "Tokenizer":
        words = sorted({w for t in texts for w in t.split()})
        return cls(list(SPECIALS) + words)

    def __len__(self) -> int:
        return len(self.vocab)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    @property
    def unk_id(self) -> int:
        return 3

    def tokenize(self, text: str) -> np.ndarray:
        unk = self.unk_id
        return np.array([self._ids.get(w, unk) for w in text.split()], dtype=np.int64)

    def detokenize(self, ids) -> str:
        special = set(range(len(SPECIALS)))
        return " ".join(self.vocab[int(i)] for i in ids if int(i) not in special)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.vocab))

    @classmethod
    def load(cls, path) -> "Tokenizer":
        with open(path, encoding="utf-8") as fh:
            return cls(fh.read().split("\n"))
