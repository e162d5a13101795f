from .toy import (  # noqa: F401
    ADVERBS,
    CLEAN_NOUNS,
    CONFUSION_MAP,
    DETS,
    NAMES,
    PAIR_MEMBER,
    TOY_VOCAB,
    VERBS,
    VISUAL_PAIRS,
    clean_audio_for,
    rois_for,
    sample_utterance,
)
