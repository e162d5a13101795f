"""Normalizer, tokenizer, record construction, the instruction template
(byte-for-byte against the frozen golden file), and manifest round trips."""

from pathlib import Path

import numpy as np
import pytest

from lipgec.corpus import (
    InstructionSample,
    LipHypRecord,
    assign_split,
    build_record,
    read_manifest,
    record_id,
    render_instruction,
    write_manifest,
)
from lipgec.ctc import Hypothesis, HypothesisList
from lipgec.errors import DataError
from lipgec.text import Tokenizer, normalize_text

GOLDEN = Path(__file__).parent / "fixtures" / "golden_instruction.txt"


class TestNormalize:
    def test_lowercase_and_punctuation(self):
        assert normalize_text("You ARE, very kind!") == "you are very kind"

    def test_whitespace_collapse(self):
        assert normalize_text("  a\t b \n c ") == "a b c"


class TestTokenizer:
    def test_roundtrip(self):
        tok = Tokenizer.from_texts(["you are very kind"])
        ids = tok.tokenize("you are very kind")
        assert len(ids) == 4
        assert tok.detokenize(ids) == "you are very kind"

    def test_oov_maps_to_unk(self):
        tok = Tokenizer.from_texts(["a b"])
        assert list(tok.tokenize("a z b")) == [4, tok.unk_id, 5]

    def test_empty_string(self):
        tok = Tokenizer.from_texts(["a"])
        assert tok.tokenize("").size == 0

    def test_save_load(self, tmp_path):
        tok = Tokenizer.from_texts(["Best-hypothesis: you"])
        tok.save(tmp_path / "v.txt")
        again = Tokenizer.load(tmp_path / "v.txt")
        assert again.vocab == tok.vocab


def _hyps(*seqs, scores=None):
    scores = scores or [-0.1 * (i + 1) for i in range(len(seqs))]
    hyps = [Hypothesis(tuple(s.split()), scores[i], i) for i, s in enumerate(seqs)]
    return HypothesisList(hyps, requested=len(seqs))


def _touch(tmp_path, name):
    p = tmp_path / name
    p.write_bytes(b"x")
    return p


class TestBuildRecord:
    def test_roundtrip_through_manifest(self, tmp_path):
        rec = build_record(
            ("you", "are", "very", "kind"),
            _hyps("you a very kind day", "you are very kind day"),
            _touch(tmp_path, "a.wav"),
            _touch(tmp_path, "a.roi"),
            {"spec": {"seed": 7}},
            "train",
        )
        path = tmp_path / "m.jsonl"
        write_manifest([rec], path)
        back = read_manifest(path)
        assert back == [rec]

    def test_single_hypothesis_rejected(self, tmp_path):
        one = HypothesisList([Hypothesis(("a",), -0.5, 0)], requested=1)
        with pytest.raises(ValueError, match="at least 2"):
            build_record(("a",), one, _touch(tmp_path, "x.wav"), _touch(tmp_path, "x.roi"),
                         {"seed": 1}, "train")

    def test_id_is_content_hash(self, tmp_path):
        kwargs = dict(
            transcript=("hello", "there"),
            hypotheses=_hyps("hello there", "hello here"),
            audio_ref=_touch(tmp_path, "y.wav"),
            roi_ref=_touch(tmp_path, "y.roi"),
            corruption={"spec": {"seed": 3}},
            split="test",
        )
        assert build_record(**kwargs).id == build_record(**kwargs).id

    def test_missing_ref_rejected(self, tmp_path):
        with pytest.raises(DataError, match="roi_ref"):
            build_record(("a",), _hyps("a", "b"), _touch(tmp_path, "z.wav"),
                         tmp_path / "missing.roi", {"seed": 1}, "train")

    def test_duplicate_ids_rejected_at_write(self, tmp_path):
        rec = build_record(("a", "b"), _hyps("a b", "a"), _touch(tmp_path, "w.wav"),
                           _touch(tmp_path, "w.roi"), {"spec": {"seed": 5}}, "train")
        with pytest.raises(DataError, match="duplicate"):
            write_manifest([rec, rec], tmp_path / "dup.jsonl")


class TestTemplate:
    def record(self, tmp_path):
        return build_record(
            ("you", "are", "very", "kind"),
            _hyps("you a very kind day", "you are very kind day", "you have very kind day"),
            _touch(tmp_path, "t.wav"),
            _touch(tmp_path, "t.roi"),
            {"spec": {"seed": 11}},
            "train",
        )

    def test_matches_golden_bytes(self, tmp_path):
        sample = render_instruction(self.record(tmp_path))
        assert sample.full_text.encode("utf-8") == GOLDEN.read_bytes()

    def test_prompt_ends_with_response_marker(self, tmp_path):
        sample = render_instruction(self.record(tmp_path))
        assert sample.prompt.endswith("Response: ")
        assert sample.response == "you are very kind"

    def test_single_other_has_no_comma(self, tmp_path):
        rec = build_record(
            ("a", "b"), _hyps("a b c", "a b"), _touch(tmp_path, "s.wav"),
            _touch(tmp_path, "s.roi"), {"spec": {"seed": 2}}, "train",
        )
        line = [l for l in render_instruction(rec).prompt.splitlines() if l.startswith("Other")]
        assert line == ["Other-hypotheses: a b"]

    def test_distinct_lists_render_distinct_prompts(self, tmp_path):
        a = render_instruction(self.record(tmp_path)).prompt
        rec_b = build_record(
            ("you", "are", "very", "kind"),
            _hyps("you a very kind day", "you is very kind day", "you have very kind day"),
            _touch(tmp_path, "u.wav"), _touch(tmp_path, "u.roi"),
            {"spec": {"seed": 11}}, "train",
        )
        assert render_instruction(rec_b).prompt != a


class TestManifest:
    def test_empty_corpus(self, tmp_path):
        path = tmp_path / "e.jsonl"
        write_manifest([], path)
        assert read_manifest(path) == []

    def test_random_records_roundtrip(self, tmp_path, rng):
        audio = _touch(tmp_path, "r.wav")
        roi = _touch(tmp_path, "r.roi")
        words = ["red", "green", "blue", "gold", "gray"]
        records = []
        for i in range(100):
            n = int(rng.integers(1, 5))
            transcript = tuple(str(rng.choice(words)) for _ in range(n))
            h0 = " ".join(str(rng.choice(words)) for _ in range(n))
            h1 = h0 + " extra"
            rec = build_record(
                transcript, _hyps(h0, h1, scores=[-0.1, -0.2 - i]),
                audio, roi, {"spec": {"seed": i}}, "train" if i % 3 else "test",
            )
            records.append(rec)
        # content hashes may collide only for identical content
        unique = {r.id: r for r in records}
        path = tmp_path / "r.jsonl"
        write_manifest(list(unique.values()), path)
        assert read_manifest(path) == list(unique.values())

    def test_out_of_order_keys_still_parse(self, tmp_path):
        audio = _touch(tmp_path, "o.wav")
        roi = _touch(tmp_path, "o.roi")
        rec = build_record(("a", "b"), _hyps("a b", "b"), audio, roi,
                           {"spec": {"seed": 9}}, "test")
        path = tmp_path / "o.jsonl"
        write_manifest([rec], path)
        import json

        d = json.loads(path.read_text())
        shuffled = {k: d[k] for k in reversed(list(d))}
        path.write_text(json.dumps(shuffled) + "\n")
        assert read_manifest(path) == [rec]

    def test_malformed_line_reports_lineno(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "x"}\nnot json\n')
        with pytest.raises(DataError, match="bad.jsonl:1"):
            read_manifest(path)
        path.write_text("")
        assert read_manifest(path) == []


class TestSplit:
    def test_deterministic_and_ratioed(self):
        ids = [record_id((f"w{i}",), _hyps(f"w{i}", "x"), i) for i in range(2000)]
        first = [assign_split(i, 0.9) for i in ids]
        second = [assign_split(i, 0.9) for i in ids]
        assert first == second
        frac = sum(s == "train" for s in first) / len(first)
        assert 0.85 < frac < 0.95

    def test_extreme_ratios(self):
        assert assign_split("deadbeef", 1.0) == "train"
        assert assign_split("deadbeef", 0.0) == "test"
