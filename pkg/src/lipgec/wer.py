"""Word Error Rate via minimal-edit alignment.

Unit costs for substitution, deletion and insertion; ties between
operations of equal cost are resolved preferring substitution, then
insertion, then deletion, so the (S, D, I) decomposition is
deterministic even when several alignments share the minimal distance.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class WerCounts:
    substitutions: int
    deletions: int
    insertions: int
    ref_words: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.ref_words


def wer_counts(reference, hypothesis) -> WerCounts:
    """Align hypothesis to reference and count word edits.

    Parameters
    ----------
    reference, hypothesis : sequence of str
        Word sequences. The reference must be non-empty.
    """
    ref = list(reference)
    hyp = list(hypothesis)
    if not ref:
        raise ValueError("WER is undefined for an empty reference")

    n, m = len(ref), len(hyp)
    # dp[i][j] = (cost, S, D, I) aligning ref[:i] with hyp[:j]
    dp = [[(0, 0, 0, 0)] * (m + 1) for _ in range(n + 1)]
    for j in range(1, m + 1):
        dp[0][j] = (j, 0, 0, j)
    for i in range(1, n + 1):
        dp[i][0] = (i, 0, i, 0)
    for i in range(1, n + 1):
        row = dp[i]
        prev = dp[i - 1]
        ri = ref[i - 1]
        for j in range(1, m + 1):
            c, s, d, ins = prev[j - 1]
            if ri != hyp[j - 1]:
                c, s = c + 1, s + 1
            best = (c, s, d, ins)
            c_ins = row[j - 1][0] + 1
            if c_ins < best[0]:
                pc, ps, pd, pi = row[j - 1]
                best = (c_ins, ps, pd, pi + 1)
            c_del = prev[j][0] + 1
            if c_del < best[0]:
                pc, ps, pd, pi = prev[j]
                best = (c_del, ps, pd + 1, pi)
            row[j] = best

    cost, s, d, ins = dp[n][m]
    return WerCounts(substitutions=s, deletions=d, insertions=ins, ref_words=n)


def corpus_wer(counts) -> float:
    """Corpus-level WER: total errors over total reference words."""
    counts = list(counts)
    total_ref = sum(c.ref_words for c in counts)
    if total_ref == 0:
        raise ValueError("corpus WER needs at least one reference word")
    return sum(c.errors for c in counts) / total_ref
