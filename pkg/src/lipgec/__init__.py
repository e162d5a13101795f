"""lipgec: lip-motion-conditioned generative error correction for noisy
ASR, end to end at desk scale.

The pieces: noisy-speech simulation (`audio`), CTC prefix beam search
N-best decoding (`ctc`), instruction-corpus construction (`corpus`),
a mouth-ROI encoder (`lipenc`), a decoder LM with gated per-layer
visual adapters (`model`), deterministic fine-tuning (`train`), and WER
system comparison (`evaluate`), orchestrated by `pipeline`/`cli`.
"""

from .audio import (
    AudioClip,
    CorruptionSpec,
    ImpulseResponse,
    NoisePools,
    convolve_ir,
    make_synthetic_ir,
    measure_power,
    mix_at_snr,
    read_wav,
    simulate_noisy,
    write_wav,
)
from .corpus import (
    InstructionSample,
    LipHypRecord,
    assign_split,
    build_record,
    read_manifest,
    render_instruction,
    write_manifest,
)
from .ctc import (
    EmissionLattice,
    Hypothesis,
    HypothesisList,
    collapse_ctc,
    ctc_prefix_beam_nbest,
    exhaustive_nbest,
    greedy_decode,
    synth_lattice,
)
from .evaluate import EvalReport, evaluate_systems, lm_rescore_choose
from .lipenc import (
    LipEncoderConfig,
    RoiSequence,
    encode,
    preprocess_rois,
    read_rois,
    resample_temporal,
)
from .model import Model, ModelConfig, ce_loss
from .text import Tokenizer, normalize_text
from .train import TrainConfig, TrainLog, TrainSample, build_train_sample, train
from .wer import WerCounts, corpus_wer, wer_counts

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
