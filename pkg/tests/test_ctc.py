"""CTC collapse, synthetic lattices, and beam search vs the exhaustive
enumeration oracle."""

import numpy as np
import pytest

from lipgec.ctc import (
    EmissionLattice,
    Hypothesis,
    HypothesisList,
    collapse_ctc,
    ctc_prefix_beam_nbest,
    exhaustive_nbest,
    greedy_decode,
    synth_lattice,
)
from tests.conftest import make_random_lattice


class TestCollapse:
    def test_merge_then_drop(self):
        assert collapse_ctc(["a", None, "a", "a", "b"]) == ("a", "a", "b")

    def test_all_blank(self):
        assert collapse_ctc([None, None]) == ()

    def test_matches_two_pass_oracle(self, rng):
        vocab = ["a", "b", None]
        for _ in range(500):
            path = [vocab[i] for i in rng.integers(0, 3, size=rng.integers(0, 12))]
            # independent oracle: dedupe runs, then filter blanks
            runs = [path[i] for i in range(len(path)) if i == 0 or path[i] != path[i - 1]]
            assert collapse_ctc(path) == tuple(t for t in runs if t is not None)


class TestLatticeValidation:
    def test_rows_must_normalize(self):
        bad = np.log(np.array([[0.5, 0.2, 0.2]]))
        with pytest.raises(ValueError, match="log-sum-exp"):
            EmissionLattice(bad, ("a", "b"))

    def test_column_count(self):
        rows = np.log(np.full((2, 3), 1 / 3))
        with pytest.raises(ValueError, match="columns"):
            EmissionLattice(rows, ("a", "b", "c"))


class TestSynthLattice:
    VOCAB = ("cat", "dog", "bird", "fish")

    def test_zero_confusion_greedy_decodes_transcript(self):
        lat = synth_lattice(("cat", "dog", "cat"), self.VOCAB, 0.0, 2, seed=1)
        assert greedy_decode(lat) == ("cat", "dog", "cat")

    def test_repeated_words_survive_collapse(self):
        lat = synth_lattice(("dog", "dog"), self.VOCAB, 0.0, 3, seed=2)
        assert greedy_decode(lat) == ("dog", "dog")

    def test_rows_normalized(self):
        lat = synth_lattice(("cat", "fish"), self.VOCAB, 0.5, 2, seed=3)
        sums = np.log(np.sum(np.exp(lat.log_probs), axis=1))
        assert np.max(np.abs(sums)) < 1e-6

    def test_deterministic(self):
        a = synth_lattice(("bird", "cat"), self.VOCAB, 0.7, 2, seed=9)
        b = synth_lattice(("bird", "cat"), self.VOCAB, 0.7, 2, seed=9)
        assert np.array_equal(a.log_probs, b.log_probs)

    def test_out_of_vocab_rejected(self):
        with pytest.raises(ValueError, match="not in vocabulary"):
            synth_lattice(("wolf",), self.VOCAB, 0.0, 2, seed=0)

    def test_confusion_map_restricts_targets(self):
        lat = synth_lattice(
            ("cat",), self.VOCAB, 0.9, 1, seed=4, confusion_map={"cat": ("dog",)}
        )
        probs = np.exp(lat.log_probs[0])
        # mass on bird/fish stays at floor level
        assert probs[2] < 1e-3 and probs[3] < 1e-3


class TestTwoFrameExample:
    """Single-token vocab, P(a)=0.6 / P(blank)=0.4 per frame.

    Paths: aa, a-, -a collapse to "a" (0.36+0.24+0.24=0.84); -- is the
    empty sequence (0.16).
    """

    def lattice(self):
        return EmissionLattice(np.log(np.array([[0.6, 0.4], [0.6, 0.4]])), ("a",))

    def test_exhaustive(self):
        top = exhaustive_nbest(self.lattice(), 2)
        assert [h.tokens for h in top] == [("a",), ()]
        assert np.exp(top.hypotheses[0].score) == pytest.approx(0.84, abs=1e-12)
        assert np.exp(top.hypotheses[1].score) == pytest.approx(0.16, abs=1e-12)

    def test_beam_matches(self):
        top = ctc_prefix_beam_nbest(self.lattice(), 8, 2)
        assert [h.tokens for h in top] == [("a",), ()]
        assert np.exp(top.hypotheses[0].score) == pytest.approx(0.84, rel=1e-12)
        assert np.exp(top.hypotheses[1].score) == pytest.approx(0.16, rel=1e-12)


class TestBeamVsExhaustive:
    def test_random_lattices_exact(self, rng):
        for _ in range(60):
            f = int(rng.integers(1, 5))
            v = int(rng.integers(1, 4))
            lat = make_random_lattice(rng, f, v)
            width = (v + 1) ** f
            n = int(rng.integers(2, 6))
            got = ctc_prefix_beam_nbest(lat, max(width, n), n)
            want = exhaustive_nbest(lat, n)
            assert [h.tokens for h in got] == [h.tokens for h in want]
            for g, w in zip(got, want):
                assert g.score == pytest.approx(w.score, rel=1e-9, abs=1e-12)

    def test_single_frame_ranking_is_token_ranking(self, rng):
        lat = make_random_lattice(rng, 1, 3)
        got = ctc_prefix_beam_nbest(lat, 8, 4)
        probs = np.exp(lat.log_probs[0])
        order = np.argsort(-probs)
        expect = []
        for idx in order[:4]:
            expect.append(() if idx == 3 else (lat.vocab[idx],))
        assert [h.tokens for h in got] == expect

    def test_total_probability_sums_to_one(self, rng):
        for _ in range(10):
            lat = make_random_lattice(rng, int(rng.integers(1, 5)), 2)
            all_of_them = exhaustive_nbest(lat, 10**6)
            total = sum(np.exp(h.score) for h in all_of_them)
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_short_search_space_flagged(self):
        lat = EmissionLattice(np.log(np.array([[0.7, 0.3]])), ("a",))
        got = ctc_prefix_beam_nbest(lat, 10, 5)
        assert len(got) == 2 and not got.complete
        ex = exhaustive_nbest(lat, 5)
        assert len(ex) == 2 and not ex.complete

    def test_scores_nonincreasing(self, rng):
        for _ in range(20):
            lat = make_random_lattice(rng, int(rng.integers(2, 5)), 3)
            got = ctc_prefix_beam_nbest(lat, 64, 5)
            scores = [h.score for h in got]
            assert scores == sorted(scores, reverse=True)

    def test_exhaustive_refuses_huge_space(self):
        lat = make_random_lattice(np.random.default_rng(0), 7, 7)
        with pytest.raises(ValueError, match="paths"):
            exhaustive_nbest(lat, 3, max_paths=10**4)

    def test_beam_width_precondition(self):
        lat = make_random_lattice(np.random.default_rng(0), 2, 2)
        with pytest.raises(ValueError):
            ctc_prefix_beam_nbest(lat, 2, 3)


class TestHypothesisListInvariants:
    def test_duplicates_rejected(self):
        h0 = Hypothesis(("a",), -0.1, 0)
        h1 = Hypothesis(("a",), -0.2, 1)
        with pytest.raises(ValueError, match="duplicate"):
            HypothesisList([h0, h1], 2)

    def test_sort_order_enforced(self):
        h0 = Hypothesis(("a",), -0.5, 0)
        h1 = Hypothesis(("b",), -0.2, 1)
        with pytest.raises(ValueError, match="sorted"):
            HypothesisList([h0, h1], 2)

    def test_positive_score_rejected(self):
        with pytest.raises(ValueError):
            Hypothesis(("a",), 0.5, 0)

    def test_roundtrip_dict(self, rng):
        lat = make_random_lattice(rng, 3, 2)
        lst = ctc_prefix_beam_nbest(lat, 27, 4)
        again = HypothesisList.from_dict(lst.to_dict())
        assert again == lst
