"""CTC lattices, prefix beam search N-best decoding, and the exhaustive
enumeration oracle.

The decoder operates on framewise log-probability lattices whose last
column is the blank. Scores are the log of the total probability summed
over every frame path that collapses to the sequence; with a beam wide
enough to never prune, prefix beam search computes this sum exactly,
which is what makes the exhaustive oracle comparison meaningful.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

NEG_INF = -np.inf

# Tolerance for "rows are normalized" and "scores are log-probs".
_ROW_NORM_TOL = 1e-6
_SCORE_TOL = 1e-9


@dataclass(eq=False)
class EmissionLattice:
    """F x (|V|+1) log-probabilities; column order is vocab + [blank]."""

    log_probs: np.ndarray
    vocab: tuple[str, ...]

    def __post_init__(self):
        self.log_probs = np.asarray(self.log_probs, dtype=np.float64)
        self.vocab = tuple(self.vocab)
        if self.log_probs.ndim != 2 or self.log_probs.shape[0] < 1:
            raise ValueError("lattice must be a 2-D array with at least one frame")
        if len(self.vocab) < 1:
            raise ValueError("vocabulary must be non-empty")
        if self.log_probs.shape[1] != len(self.vocab) + 1:
            raise ValueError(
                f"lattice has {self.log_probs.shape[1]} columns but vocab size "
                f"{len(self.vocab)} needs {len(self.vocab) + 1} (last = blank)"
            )
        rows = _logsumexp_rows(self.log_probs)
        if np.max(np.abs(rows)) > _ROW_NORM_TOL:
            raise ValueError("every lattice row must log-sum-exp to 0")

    @property
    def n_frames(self) -> int:
        return self.log_probs.shape[0]

    @property
    def blank_index(self) -> int:
        return len(self.vocab)


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[str, ...]
    score: float
    rank: int

    def __post_init__(self):
        if self.score > _SCORE_TOL:
            raise ValueError(f"hypothesis score must be a log-probability, got {self.score}")

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass
class HypothesisList:
    """Distinct hypotheses sorted by descending score.

    `requested` records the n_plus_1 asked of the decoder; when the
    search space holds fewer distinct sequences the list is returned
    short and `complete` is False.
    """

    hypotheses: list[Hypothesis] = field(default_factory=list)
    requested: int = 0

    def __post_init__(self):
        seen = set()
        prev_key = None
        for rank, hyp in enumerate(self.hypotheses):
            if hyp.rank != rank:
                raise ValueError("hypothesis ranks must be 0-based and consecutive")
            if hyp.tokens in seen:
                raise ValueError(f"duplicate hypothesis {hyp.tokens!r}")
            seen.add(hyp.tokens)
            key = (-hyp.score, hyp.tokens)
            if prev_key is not None and key < prev_key:
                raise ValueError("hypotheses must be sorted by descending score")
            prev_key = key

    @property
    def complete(self) -> bool:
        return len(self.hypotheses) >= self.requested

    @property
    def best(self) -> Hypothesis:
        return self.hypotheses[0]

    @property
    def others(self) -> list[Hypothesis]:
        return self.hypotheses[1:]

    def __len__(self) -> int:
        return len(self.hypotheses)

    def __iter__(self):
        return iter(self.hypotheses)

    def to_dict(self) -> dict:
        return {
            "requested": self.requested,
            "items": [
                {"tokens": list(h.tokens), "score": h.score, "rank": h.rank}
                for h in self.hypotheses
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HypothesisList":
        hyps = [
            Hypothesis(tuple(item["tokens"]), float(item["score"]), int(item["rank"]))
            for item in d["items"]
        ]
        return cls(hyps, int(d["requested"]))


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = np.max(a, axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=1, keepdims=True)))[:, 0]


def collapse_ctc(path) -> tuple[str, ...]:
    """Collapse a framewise path: merge adjacent repeats, drop blanks.

    Blanks are represented by None.
    """
    out = []
    prev = object()
    for el in path:
        if el != prev:
            if el is not None:
                out.append(el)
            prev = el
    return tuple(out)


def _collapse_indices(path: tuple[int, ...], blank: int) -> tuple[int, ...]:
    out = []
    prev = -1
    for el in path:
        if el != prev:
            if el != blank:
                out.append(el)
            prev = el
    return tuple(out)


def synth_lattice(
    transcript,
    vocab,
    confusion_strength: float,
    frames_per_token: int,
    seed: int,
    confusion_map: dict | None = None,
    blank_mass: float = 0.02,
    floor: float = 1e-4,
) -> EmissionLattice:
    """Deterministic emission lattice whose greedy path collapses to the
    transcript when confusion_strength is 0.

    Stands in for an acoustic model: each transcript token gets
    `frames_per_token` content frames (preceded by a blank separator
    frame after the first token), and `confusion_strength` moves
    probability mass from the true token to a confusable token drawn via
    the seed. Every token keeps at least `floor` mass per frame so the
    search space stays diverse.
    """
    if not 0.0 <= confusion_strength < 1.0:
        raise ValueError("confusion_strength must be in [0, 1)")
    if frames_per_token < 1:
        raise ValueError("frames_per_token must be >= 1")
    vocab = tuple(vocab)
    index = {w: i for i, w in enumerate(vocab)}
    for word in transcript:
        if word not in index:
            raise ValueError(f"transcript token {word!r} not in vocabulary")

    rng = np.random.default_rng(seed)
    v = len(vocab)
    blank = v
    rows = []

    def normalized_row(masses: np.ndarray) -> np.ndarray:
        p = masses + floor
        return np.log(p / p.sum())

    def blank_row() -> np.ndarray:
        masses = np.zeros(v + 1)
        masses[blank] = 1.0
        return normalized_row(masses)

    for pos, word in enumerate(transcript):
        if pos > 0:
            rows.append(blank_row())
        ti = index[word]
        confusers = None
        if confusion_map is not None:
            confusers = [index[c] for c in confusion_map.get(word, ()) if c in index]
        elif v > 1:
            confusers = [i for i in range(v) if i != ti]
        masses = np.zeros(v + 1)
        if confusion_strength > 0.0 and confusers:
            ci = int(rng.choice(confusers)) if len(confusers) > 1 else confusers[0]
            u = rng.uniform(0.5, 1.0)
            conf_mass = confusion_strength * u
            masses[ci] = conf_mass
            masses[blank] = blank_mass
            masses[ti] = max(1.0 - conf_mass - blank_mass, 0.0)
        else:
            masses[ti] = 1.0 - blank_mass
            masses[blank] = blank_mass
        for _ in range(frames_per_token):
            rows.append(normalized_row(masses))

    if not rows:
        raise ValueError("transcript must be non-empty")
    return EmissionLattice(np.stack(rows), vocab)


def greedy_decode(lattice: EmissionLattice) -> tuple[str, ...]:
    """Best-path decode: per-frame argmax, then CTC collapse."""
    path = tuple(int(i) for i in np.argmax(lattice.log_probs, axis=1))
    return tuple(lattice.vocab[i] for i in _collapse_indices(path, lattice.blank_index))


def _finalize_nbest(
    scored: dict[tuple[int, ...], float],
    lattice: EmissionLattice,
    n_plus_1: int,
    length_normalize: bool,
) -> HypothesisList:
    if length_normalize:
        scored = {p: s / max(1, len(p)) for p, s in scored.items()}
    # Clamp the ~1 ulp positive overshoot from log-sum accumulation
    # before sorting so the ranking and the stored scores agree; ties
    # break lexicographically on the token strings, not vocab indices.
    items = [
        (tuple(lattice.vocab[i] for i in prefix), min(score, 0.0))
        for prefix, score in scored.items()
    ]
    items.sort(key=lambda kv: (-kv[1], kv[0]))
    hyps = [Hypothesis(tokens, score, rank) for rank, (tokens, score) in enumerate(items[:n_plus_1])]
    return HypothesisList(hyps, requested=n_plus_1)


def ctc_prefix_beam_nbest(
    lattice: EmissionLattice,
    beam_width: int,
    n_plus_1: int,
    length_normalize: bool = False,
) -> HypothesisList:
    """Prefix beam search over a CTC lattice, returning the top n_plus_1
    distinct collapsed sequences by summed path probability.

    Per prefix the search tracks the log-probabilities of ending in
    blank vs non-blank; with beam_width at least the number of live
    prefixes no pruning happens and the scores are exact sums over all
    paths. Ties in the final ranking break lexicographically.
    """
    if n_plus_1 < 2:
        raise ValueError("n_plus_1 must be >= 2")
    if beam_width < n_plus_1:
        raise ValueError(f"beam_width {beam_width} must be >= n_plus_1 {n_plus_1}")

    blank = lattice.blank_index
    v = len(lattice.vocab)
    lp = lattice.log_probs

    # prefix -> [log P(ending in blank), log P(ending in non-blank)]
    beam: dict[tuple[int, ...], list[float]] = {(): [0.0, NEG_INF]}
    for t in range(lattice.n_frames):
        row = lp[t]
        nxt: dict[tuple[int, ...], list[float]] = {}

        def slot(prefix):
            s = nxt.get(prefix)
            if s is None:
                s = [NEG_INF, NEG_INF]
                nxt[prefix] = s
            return s

        for prefix, (pb, pnb) in beam.items():
            p_tot = np.logaddexp(pb, pnb)
            if p_tot == NEG_INF:  # unreachable prefix, nothing to propagate
                continue
            s = slot(prefix)
            s[0] = np.logaddexp(s[0], p_tot + row[blank])
            last = prefix[-1] if prefix else -1
            if last >= 0 and pnb > NEG_INF:
                s[1] = np.logaddexp(s[1], pnb + row[last])
            for c in range(v):
                if c == last:
                    # A repeated token needs an intervening blank, so
                    # only blank-terminated mass extends the prefix.
                    if pb > NEG_INF:
                        ext = slot(prefix + (c,))
                        ext[1] = np.logaddexp(ext[1], pb + row[c])
                else:
                    ext = slot(prefix + (c,))
                    ext[1] = np.logaddexp(ext[1], p_tot + row[c])

        if len(nxt) > beam_width:
            ranked = sorted(
                nxt.items(), key=lambda kv: (-np.logaddexp(kv[1][0], kv[1][1]), kv[0])
            )
            nxt = dict(ranked[:beam_width])
        beam = nxt

    scored = {
        p: float(np.logaddexp(pb, pnb))
        for p, (pb, pnb) in beam.items()
        if np.isfinite(np.logaddexp(pb, pnb))
    }
    return _finalize_nbest(scored, lattice, n_plus_1, length_normalize)


def exhaustive_nbest(
    lattice: EmissionLattice, n_plus_1: int, max_paths: int = 10**6
) -> HypothesisList:
    """Test oracle: enumerate every frame path, sum probabilities per
    collapsed sequence, return the top n_plus_1."""
    n_paths = (len(lattice.vocab) + 1) ** lattice.n_frames
    if n_paths > max_paths:
        raise ValueError(
            f"search space has {n_paths} paths, above the {max_paths} cap "
            "for exhaustive enumeration"
        )
    lp = lattice.log_probs
    blank = lattice.blank_index
    totals: dict[tuple[int, ...], float] = {}
    for path in itertools.product(range(blank + 1), repeat=lattice.n_frames):
        logp = 0.0
        for t, c in enumerate(path):
            logp += lp[t, c]
        key = _collapse_indices(path, blank)
        totals[key] = totals.get(key, 0.0) + float(np.exp(logp))
    scored = {k: float(np.log(p)) for k, p in totals.items()}
    return _finalize_nbest(scored, lattice, n_plus_1, length_normalize=False)
