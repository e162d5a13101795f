"""Independent oracles used by the self-test suites.

Each oracle deliberately re-derives a result from the definition rather
than sharing code with the implementation it checks: WER via top-down
recursion instead of the iterative table, convolution via the summation
formula, gradients via central finite differences.
"""

from __future__ import annotations

import numpy as np

from .wer import WerCounts


def wer_oracle(reference, hypothesis) -> WerCounts:
    """Memoized top-down edit alignment with the same tie preference
    (substitution, then insertion, then deletion) as `wer_counts`."""
    ref = tuple(reference)
    hyp = tuple(hypothesis)
    if not ref:
        raise ValueError("empty reference")
    memo: dict[tuple[int, int], tuple[int, int, int, int]] = {}

    def solve(i: int, j: int) -> tuple[int, int, int, int]:
        if i == 0:
            return (j, 0, 0, j)
        if j == 0:
            return (i, 0, i, 0)
        key = (i, j)
        if key in memo:
            return memo[key]
        c, s, d, ins = solve(i - 1, j - 1)
        if ref[i - 1] != hyp[j - 1]:
            c, s = c + 1, s + 1
        best = (c, s, d, ins)
        c2, s2, d2, i2 = solve(i, j - 1)
        if c2 + 1 < best[0]:
            best = (c2 + 1, s2, d2, i2 + 1)
        c3, s3, d3, i3 = solve(i - 1, j)
        if c3 + 1 < best[0]:
            best = (c3 + 1, s3, d3 + 1, i3)
        memo[key] = best
        return best

    c, s, d, ins = solve(len(ref), len(hyp))
    return WerCounts(s, d, ins, len(ref))


def edit_distance_exponential(reference, hypothesis) -> int:
    """Plain exponential recursion over all alignments; validates the
    memoized oracle on small inputs. Returns the minimal distance only."""
    ref = tuple(reference)
    hyp = tuple(hypothesis)

    def solve(i: int, j: int) -> int:
        if i == 0:
            return j
        if j == 0:
            return i
        diag = solve(i - 1, j - 1) + (0 if ref[i - 1] == hyp[j - 1] else 1)
        ins = solve(i, j - 1) + 1
        dele = solve(i - 1, j) + 1
        return min(diag, ins, dele)

    return solve(len(ref), len(hyp))


def convolve_naive(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Direct double-loop linear convolution, full length n + m - 1."""
    n, m = len(x), len(h)
    y = np.zeros(n + m - 1)
    for i in range(n):
        for k in range(m):
            y[i + k] += x[i] * h[k]
    return y


def fd_gradient(f, x: np.ndarray, eps: float = 1e-5, indices=None) -> np.ndarray:
    """Central finite differences of a scalar function at x.

    `f` must treat x as read-only input; x is perturbed in place per
    element and restored. With `indices`, only those flat positions are
    evaluated (the rest stay zero). The default step balances roundoff
    against truncation for losses of order 1 in double precision.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = f(x)
        flat[i] = orig - eps
        f_minus = f(x)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - b| / max(|a|, |b|, floor), elementwise then maximized."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
