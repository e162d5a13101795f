"""The whole chain on a small bundled corpus: simulate noisy speech,
decode N-best lists, build the instruction corpus, pretrain the base
LM, fine-tune the visual adapters, and compare systems by WER.

This trims the desk recipe so it finishes in about two minutes; expect
ger to beat the 1-best and lipger to beat both, but with modest margins
at this size (configs/desk.ini is the properly sized run).

Run:  python3 demos/05_full_pipeline.py
"""

import json
import tempfile
from pathlib import Path

from lipgec import pipeline
from lipgec.config import PipelineConfig

out = Path(tempfile.mkdtemp(prefix="lipgec-chain-"))
cfg = PipelineConfig.load(
    Path(__file__).parent.parent / "configs" / "desk.ini",
    overrides=[
        f"pipeline.out_dir={out}",
        "corpus.n_utterances=140",
        "audio.sample_rate_hz=8000",
        "pretrain.max_steps=500",
        "train.max_steps=600",
    ],
)
print(f"working under {out}\n")

pipeline.stage_simulate(cfg)
pipeline.stage_decode(cfg)
pipeline.stage_build(cfg)
pipeline.stage_pretrain(cfg)
pipeline.stage_train(cfg)
pipeline.stage_eval(cfg)

report = json.loads((out / "reports" / "eval_report.json").read_text())
print("\n-- corrections on held-out records ----------------------------")
shown = 0
for rec in report["records"]:
    if "lipger" in rec and "onebest" in rec:
        if rec["onebest"]["errors"] > 0 and shown < 5:
            print(f"  reference: {rec['reference']}")
            print(f"    1-best : {rec['onebest']['text']}")
            print(f"    ger    : {rec.get('ger', {}).get('text', '-')}")
            print(f"    lipger : {rec['lipger']['text']}")
            shown += 1
print("\n(second runs of each stage are no-ops; pass --force to redo)")
