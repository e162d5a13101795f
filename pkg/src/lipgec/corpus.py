"""Hypothesis/transcription records, the instruction template, and the
JSON-lines manifest.

A record pairs an N+1-best hypothesis list with its ground-truth
transcript plus references to the paired audio and mouth-ROI files;
`render_instruction` turns a record into the byte-exact prompt/response
pair the language model is trained on.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .ctc import Hypothesis, HypothesisList
from .errors import DataError
from .text import normalize_text

SPLITS = ("train", "test")

INSTRUCTION_HEADER = (
    "Below is the best-hypotheses transcribed from a speech recognition system. "
    "Please try to revise it using the words that are only included in the "
    "other-hypothesis, and write the response for the true transcription."
)

# Record fields in manifest order. The reader is order-insensitive.
_RECORD_KEYS = ("id", "transcript", "hypotheses", "audio_ref", "roi_ref", "corruption", "split")


@dataclass(eq=True)
class LipHypRecord:
    id: str
    transcript: tuple[str, ...]
    hypotheses: HypothesisList
    audio_ref: str
    roi_ref: str
    corruption: dict
    split: str

    def __post_init__(self):
        self.transcript = tuple(self.transcript)
        if not self.transcript:
            raise ValueError("record transcript must be non-empty")
        if len(self.hypotheses) < 2:
            raise ValueError("record needs at least 2 hypotheses (the 1-best plus others)")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")


@dataclass(frozen=True)
class InstructionSample:
    prompt: str
    response: str
    record_id: str

    @property
    def full_text(self) -> str:
        return self.prompt + self.response


def record_id(transcript, hypotheses: HypothesisList, seed) -> str:
    """Stable content hash over transcript, hypothesis list and seed."""
    payload = json.dumps(
        [
            list(transcript),
            [[list(h.tokens), h.score] for h in hypotheses],
            seed,
        ],
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def build_record(
    transcript,
    hypotheses: HypothesisList,
    audio_ref,
    roi_ref,
    corruption: dict,
    split: str,
    base_dir=None,
) -> LipHypRecord:
    """Assemble a record; the id is a content hash so identical inputs
    collide deliberately (the corpus is deduplicated on it).

    References may be stored relative to `base_dir` (the output root);
    they must resolve at build time either way.
    """
    transcript = tuple(normalize_text(" ".join(transcript)).split())
    if not transcript:
        raise ValueError("transcript is empty after normalization")
    for label, ref in (("audio_ref", audio_ref), ("roi_ref", roi_ref)):
        resolved = Path(base_dir) / ref if base_dir is not None else Path(ref)
        if not resolved.exists():
            raise DataError(f"{label} does not resolve: {resolved}")
    seed = corruption.get("spec", {}).get("seed", corruption.get("seed"))
    rid = record_id(transcript, hypotheses, seed)
    return LipHypRecord(
        id=rid,
        transcript=transcript,
        hypotheses=hypotheses,
        audio_ref=str(audio_ref),
        roi_ref=str(roi_ref),
        corruption=corruption,
        split=split,
    )


def assign_split(rid: str, train_fraction: float) -> str:
    """Deterministic train/test assignment from the record id hash."""
    bucket = int(hashlib.sha256(f"split:{rid}".encode()).hexdigest()[:8], 16) % 10**6
    return "train" if bucket < train_fraction * 10**6 else "test"


def render_instruction(record: LipHypRecord) -> InstructionSample:
    """Render the fixed instruction template for one record.

    The prompt ends with "Response: "; the training target is the
    space-joined transcript appended right after it.
    """
    best = record.hypotheses.best.text
    others = ", ".join(h.text for h in record.hypotheses.others)
    prompt = (
        f"{INSTRUCTION_HEADER}\n"
        "\n"
        f"Best-hypothesis: {best}\n"
        "\n"
        f"Other-hypotheses: {others}\n"
        "\n"
        "Response: "
    )
    return InstructionSample(prompt=prompt, response=" ".join(record.transcript), record_id=record.id)


def _record_to_dict(record: LipHypRecord) -> dict:
    return {
        "id": record.id,
        "transcript": list(record.transcript),
        "hypotheses": record.hypotheses.to_dict(),
        "audio_ref": record.audio_ref,
        "roi_ref": record.roi_ref,
        "corruption": record.corruption,
        "split": record.split,
    }


def _record_from_dict(d: dict) -> LipHypRecord:
    missing = [k for k in _RECORD_KEYS if k not in d]
    if missing:
        raise DataError(f"record is missing keys: {missing}")
    return LipHypRecord(
        id=d["id"],
        transcript=tuple(d["transcript"]),
        hypotheses=HypothesisList.from_dict(d["hypotheses"]),
        audio_ref=d["audio_ref"],
        roi_ref=d["roi_ref"],
        corruption=d["corruption"],
        split=d["split"],
    )


def write_manifest(records, path) -> None:
    """One JSON record per line, UTF-8, keys in fixed order.

    Duplicate ids are rejected: the corpus must be deduplicated.
    """
    seen: set[str] = set()
    lines = []
    for record in records:
        if record.id in seen:
            raise DataError(f"duplicate record id {record.id}")
        seen.add(record.id)
        lines.append(json.dumps(_record_to_dict(record), ensure_ascii=False))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_manifest(path) -> list[LipHypRecord]:
    records = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            records.append(_record_from_dict(d))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, DataError) as exc:
            raise DataError(f"{path}:{lineno}: malformed manifest line: {exc}") from exc
    return records
