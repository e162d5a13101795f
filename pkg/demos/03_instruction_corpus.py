"""Turning hypothesis lists into instruction samples: the fixed prompt
template, record hashing, and the JSON-lines manifest round trip.

Run:  python3 demos/03_instruction_corpus.py
"""

import tempfile
from pathlib import Path

from lipgec.corpus import (
    assign_split,
    build_record,
    read_manifest,
    render_instruction,
    write_manifest,
)
from lipgec.ctc import Hypothesis, HypothesisList

workdir = Path(tempfile.mkdtemp(prefix="lipgec-demo-"))
(workdir / "utt.wav").write_bytes(b"\x00")
(workdir / "utt.roi").write_bytes(b"\x00")

hyps = HypothesisList(
    [
        Hypothesis(("you", "a", "very", "kind", "day"), -0.21, 0),
        Hypothesis(("you", "are", "very", "kind", "day"), -1.37, 1),
        Hypothesis(("you", "have", "very", "kind", "day"), -2.02, 2),
    ],
    requested=3,
)
record = build_record(
    transcript=("you", "are", "very", "kind"),
    hypotheses=hyps,
    audio_ref=workdir / "utt.wav",
    roi_ref=workdir / "utt.roi",
    corruption={"spec": {"seed": 7}},
    split=assign_split("demo", 0.9),
)
print(f"record id (content hash): {record.id}")

sample = render_instruction(record)
print("\n-- rendered instruction --------------------------------------")
print(sample.prompt + sample.response)

manifest = workdir / "corpus.jsonl"
write_manifest([record], manifest)
back = read_manifest(manifest)
print("\nmanifest round trip intact:", back == [record])
print("manifest line:")
print(" ", manifest.read_text().strip()[:120], "...")
