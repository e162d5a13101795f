"""Bundled synthetic toy corpus: a 50-word language with confusable
noun pairs, tone-sequence audio, and ROI clips whose pixel statistics
encode which pair member was spoken.

Sentences follow "name verb det noun [adverb]". Nouns from VISUAL_PAIRS
are acoustically confusable with their partner (both members are
grammatical, so text alone cannot disambiguate) but carry a visual
signature: member 0 lights up the left third of the ROI frames, member
1 the right third. Clean nouns are confusable with verbs instead, which
breaks the sentence pattern and is therefore recoverable from text.
"""

from __future__ import annotations

import numpy as np

from ..audio import AudioClip

NAMES = ("ann", "ben", "kim", "lee", "sam", "tom", "ava", "max")
VERBS = ("sees", "wants", "holds", "finds", "likes", "takes", "brings", "shows")
DETS = ("the", "a")
VISUAL_PAIRS = (
    ("bat", "pat"),
    ("ban", "pan"),
    ("bay", "pay"),
    ("bark", "park"),
    ("beach", "peach"),
    ("bill", "pill"),
)
CLEAN_NOUNS = (
    "tree", "door", "lamp", "rock", "fish", "cake", "book",
    "ring", "car", "leaf", "shoe", "kite", "drum", "bell",
)
ADVERBS = ("now", "today", "again", "soon", "twice", "daily")

_PAIR_WORDS = tuple(w for pair in VISUAL_PAIRS for w in pair)
TOY_VOCAB = NAMES + VERBS + DETS + _PAIR_WORDS + CLEAN_NOUNS + ADVERBS
assert len(TOY_VOCAB) == 50 and len(set(TOY_VOCAB)) == 50

PAIR_MEMBER = {
    word: (pi, mi) for pi, pair in enumerate(VISUAL_PAIRS) for mi, word in enumerate(pair)
}

# Which word the acoustic frontend tends to confuse each word with.
CONFUSION_MAP: dict[str, tuple[str, ...]] = {}
for _pair in VISUAL_PAIRS:
    CONFUSION_MAP[_pair[0]] = (_pair[1],)
    CONFUSION_MAP[_pair[1]] = (_pair[0],)
for _i, _noun in enumerate(CLEAN_NOUNS):
    CONFUSION_MAP[_noun] = (VERBS[_i % len(VERBS)],)
for _word in NAMES + VERBS + DETS + ADVERBS:
    CONFUSION_MAP[_word] = ()


def text_determined(transcript, best_tokens) -> bool:
    """True when the correction is recoverable from text alone: either
    the 1-best is already right, or the corrupted word is not a
    visual-pair noun (pair members are both grammatical, so a flipped
    pair noun can only be resolved from the lip signature)."""
    if tuple(best_tokens) == tuple(transcript):
        return True
    return not any(w in PAIR_MEMBER for w in transcript)


def sample_utterance(rng: np.random.Generator, pair_noun_rate: float = 0.55,
                     adverb_rate: float = 0.3) -> dict:
    """Draw one sentence; the noun slot carries the corruption target."""
    words = [
        NAMES[rng.integers(len(NAMES))],
        VERBS[rng.integers(len(VERBS))],
        DETS[rng.integers(len(DETS))],
    ]
    if rng.uniform() < pair_noun_rate:
        pair = VISUAL_PAIRS[rng.integers(len(VISUAL_PAIRS))]
        noun = pair[rng.integers(2)]
        kind = "pair"
    else:
        noun = CLEAN_NOUNS[rng.integers(len(CLEAN_NOUNS))]
        kind = "clean"
    words.append(noun)
    if rng.uniform() < adverb_rate:
        words.append(ADVERBS[rng.integers(len(ADVERBS))])
    return {"words": tuple(words), "key_word": noun, "key_kind": kind}


_WORD_INDEX = {w: i for i, w in enumerate(TOY_VOCAB)}


def clean_audio_for(words, sample_rate_hz: int = 16000, seed: int = 0) -> AudioClip:
    """Tone-sequence stand-in for clean speech: one short two-harmonic
    tone per word, pitched by vocabulary index, with small seeded jitter."""
    rng = np.random.default_rng(seed)
    sr = sample_rate_hz
    gap = np.zeros(int(0.04 * sr))
    chunks = []
    for word in words:
        f0 = 220.0 + 40.0 * _WORD_INDEX[word] + rng.uniform(-3.0, 3.0)
        n = int(0.18 * sr)
        t = np.arange(n) / sr
        env = np.hanning(n)
        tone = np.sin(2 * np.pi * f0 * t) + 0.3 * np.sin(4 * np.pi * f0 * t)
        chunks.append(0.25 * env * tone)
        chunks.append(gap)
    return AudioClip(np.concatenate(chunks[:-1]), sr)


def rois_for(words, key_word: str, n_frames: int = 8, size: int = 88, seed: int = 0) -> np.ndarray:
    """Synthesize mouth-ROI frames in [0, 1].

    Pair nouns animate a bright mouth-like bar whose brightness
    oscillates slowly (member 0, half a cycle over the clip) or fast
    (member 1, ~2.5 cycles). A temporal signature survives both the
    per-sequence normalization and the encoder's spatial pooling, which
    a static spatial pattern would not. The members also sit in
    different thirds of the frame for good measure. Non-pair sentences
    get background texture only.
    """
    rng = np.random.default_rng(seed)
    frames = 0.45 + 0.04 * rng.standard_normal((n_frames, size, size))
    member = PAIR_MEMBER.get(key_word)
    if member is not None:
        third = max(1, size // 3)
        lo = 0 if member[1] == 0 else size - third
        t = np.arange(n_frames) / max(1, n_frames)
        cycles = 0.5 if member[1] == 0 else 2.5
        wave = 0.62 + 0.3 * np.sin(2 * np.pi * cycles * t + 0.4)
        bar = wave[:, None, None] + 0.02 * rng.standard_normal((n_frames, size, third))
        frames[:, :, lo : lo + third] = bar
    return np.clip(frames, 0.0, 1.0)
