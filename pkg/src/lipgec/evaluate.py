"""System comparison on the test split: 1-best baseline, LM rescoring,
text-only generative correction, and lip-conditioned correction.

Corpus WER is aggregated as total errors over total reference words.
Generated corrections run through the same text normalizer as the
corpus builder before scoring.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import LipHypRecord, render_instruction
from .ctc import Hypothesis
from .errors import DataError
from .lipenc import encode, preprocess_rois, read_rois
from .model import Model
from .text import Tokenizer, normalize_text
from .wer import WerCounts, corpus_wer, wer_counts

SYSTEMS = ("onebest", "lm_rescore", "ger", "lipger")
_ALIASES = {"lm": "lm_rescore"}


def canonical_systems(names) -> tuple[str, ...]:
    out = []
    for name in names:
        name = _ALIASES.get(name.strip(), name.strip())
        if name not in SYSTEMS:
            raise ValueError(f"unknown system {name!r}; choose from {SYSTEMS}")
        if name not in out:
            out.append(name)
    if not out:
        raise ValueError("at least one system is required")
    return tuple(out)


@dataclass
class SystemResult:
    name: str
    counts: list[WerCounts] = field(default_factory=list)
    n_skipped: int = 0

    @property
    def n_evaluated(self) -> int:
        return len(self.counts)

    @property
    def wer(self) -> float:
        return corpus_wer(self.counts)

    def totals(self) -> dict:
        return {
            "substitutions": sum(c.substitutions for c in self.counts),
            "deletions": sum(c.deletions for c in self.counts),
            "insertions": sum(c.insertions for c in self.counts),
            "ref_words": sum(c.ref_words for c in self.counts),
        }


@dataclass
class EvalReport:
    systems: dict[str, SystemResult]
    records: list[dict]
    config_echo: dict

    def to_json_dict(self) -> dict:
        return {
            "config": self.config_echo,
            "systems": {
                name: {
                    "wer": res.wer,
                    "counts": res.totals(),
                    "n_evaluated": res.n_evaluated,
                    "n_skipped": res.n_skipped,
                }
                for name, res in self.systems.items()
            },
            "records": self.records,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    def to_text_table(self) -> str:
        rows = [("system", "wer", "S", "D", "I", "ref", "eval", "skip")]
        for name, res in self.systems.items():
            t = res.totals()
            rows.append(
                (
                    name,
                    f"{res.wer:.4f}",
                    str(t["substitutions"]),
                    str(t["deletions"]),
                    str(t["insertions"]),
                    str(t["ref_words"]),
                    str(res.n_evaluated),
                    str(res.n_skipped),
                )
            )
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = []
        for i, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines)


def mean_lm_logprob(model: Model, tokenizer: Tokenizer, tokens) -> float:
    """Per-token mean log-probability of a word sequence under the base LM.

    An empty sequence scores as log P(EOS | BOS): the probability the
    model assigns to producing nothing at all.
    """
    ids = [tokenizer.bos_id] + [int(i) for i in tokenizer.tokenize(" ".join(tokens))]
    logits = model.base_forward(np.asarray(ids, dtype=np.int64))
    logp = logits - _logsumexp(logits)
    if len(ids) == 1:
        return float(logp[0, tokenizer.eos_id])
    targets = np.asarray(ids[1:], dtype=np.int64)
    return float(np.mean(logp[np.arange(len(targets)), targets]))


def _logsumexp(a: np.ndarray) -> np.ndarray:
    m = np.max(a, axis=-1, keepdims=True)
    return m + np.log(np.sum(np.exp(a - m), axis=-1, keepdims=True))


def lm_rescore_choose(record: LipHypRecord, model: Model, tokenizer: Tokenizer) -> Hypothesis:
    """Pick the hypothesis with the best unweighted mean of the per-token
    LM score and the per-token acoustic score; ties go to the lower rank."""
    best = None
    best_key = None
    for hyp in record.hypotheses:
        lm = mean_lm_logprob(model, tokenizer, hyp.tokens)
        asr = hyp.score / max(1, len(hyp.tokens))
        combined = 0.5 * (lm + asr)
        key = (-combined, hyp.rank)
        if best_key is None or key < best_key:
            best, best_key = hyp, key
    return best


def _generation_bucket_eval(model, tokenizer, prompts, e_feats, max_len):
    """Greedy-decode prompts grouped by token length."""
    buckets: dict[int, list[int]] = {}
    id_lists = []
    for i, prompt in enumerate(prompts):
        ids = np.concatenate([[tokenizer.bos_id], tokenizer.tokenize(prompt)]).astype(np.int64)
        id_lists.append(ids)
        buckets.setdefault(ids.size, []).append(i)
    outputs: list[str] = [""] * len(prompts)
    for size in sorted(buckets):
        idxs = buckets[size]
        stackd = np.stack([id_lists[i] for i in idxs])
        feats = None if e_feats is None else [e_feats[i] for i in idxs]
        outs = model.generate_batch(stackd, feats, max_len)
        for i, out in zip(idxs, outs):
            outputs[i] = tokenizer.detokenize(out)
    return outputs


def evaluate_systems(
    records: list[LipHypRecord],
    systems,
    model: Model | None = None,
    tokenizer: Tokenizer | None = None,
    roi_target_hw: tuple[int, int] | None = None,
    max_gen_len: int = 24,
    config_echo: dict | None = None,
    split: str = "test",
    ref_base=None,
) -> EvalReport:
    """Run the requested systems over the test split of `records`."""
    systems = canonical_systems(systems)
    needs_model = [s for s in systems if s != "onebest"]
    if needs_model and (model is None or tokenizer is None):
        raise ValueError(f"systems {needs_model} need a model checkpoint and tokenizer")

    test = [r for r in records if r.split == split]
    if not test:
        raise DataError(f"no records in split {split!r}")

    results = {name: SystemResult(name) for name in systems}
    per_record: list[dict] = [{"id": r.id, "reference": " ".join(r.transcript)} for r in test]

    def score(name: str, idx: int, text: str) -> None:
        ref = test[idx].transcript
        hyp_words = tuple(normalize_text(text).split())
        counts = wer_counts(ref, hyp_words)
        results[name].counts.append(counts)
        per_record[idx][name] = {"text": " ".join(hyp_words), "errors": counts.errors}

    if "onebest" in systems:
        for i, rec in enumerate(test):
            score("onebest", i, rec.hypotheses.best.text)

    if "lm_rescore" in systems:
        for i, rec in enumerate(test):
            choice = lm_rescore_choose(rec, model, tokenizer)
            score("lm_rescore", i, choice.text)

    if "ger" in systems:
        prompts = [render_instruction(r).prompt for r in test]
        outs = _generation_bucket_eval(model, tokenizer, prompts, None, max_gen_len)
        for i, text in enumerate(outs):
            score("ger", i, text)

    if "lipger" in systems:
        target_hw = roi_target_hw or (88, 88)
        keep: list[int] = []
        feats: list[np.ndarray] = []
        from pathlib import Path

        for i, rec in enumerate(test):
            roi_path = Path(ref_base) / rec.roi_ref if ref_base is not None else rec.roi_ref
            try:
                frames = read_rois(roi_path)
            except DataError:
                results["lipger"].n_skipped += 1
                per_record[i]["lipger"] = {"skipped": "missing ROI"}
                continue
            rois = preprocess_rois(frames, target_hw)
            feats.append(encode(rois, model.params, model.lip_config))
            keep.append(i)
        prompts = [render_instruction(test[i]).prompt for i in keep]
        outs = _generation_bucket_eval(model, tokenizer, prompts, feats, max_gen_len)
        for i, text in zip(keep, outs):
            score("lipger", i, text)

    return EvalReport(systems=results, records=per_record, config_echo=config_echo or {})
