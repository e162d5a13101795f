"""Pipeline configuration: one INI-style file with sections, strict
schema validation (unknown keys rejected), and a stable content hash
that artifacts carry so stale inputs are caught.

Values left out fall back to the defaults below; command-line flags
override file values via "section.key=value" pairs.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from pathlib import Path

from .errors import UsageError
from .lipenc import LipEncoderConfig
from .model import ModelConfig
from .train import TrainConfig


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _pairs(s: str) -> tuple[tuple[int, int], ...]:
    """Parse "32:2,32:1" into ((32, 2), (32, 1))."""
    out = []
    for part in s.split(","):
        a, b = part.strip().split(":")
        out.append((int(a), int(b)))
    return tuple(out)


def _triple(s: str) -> tuple[int, int, int]:
    a, b, c = (int(x) for x in s.split(","))
    return (a, b, c)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "pipeline": {
        "seed": (int, 0),
        "out_dir": (str, "runs/toy"),
    },
    "corpus": {
        "n_utterances": (int, 260),
        "split_ratio": (float, 0.9),
        "nbest": (int, 5),
        "roi_frames": (int, 8),
        "roi_size": (int, 88),
        "pair_noun_rate": (float, 0.55),
        "adverb_rate": (float, 0.3),
    },
    "audio": {
        "sample_rate_hz": (int, 16000),
        "snr_low_db": (float, 0.0),
        "snr_high_db": (float, 40.0),
        "interferer_snr_low_db": (float, 0.0),
        "interferer_snr_high_db": (float, 40.0),
        "allow_resample": (_bool, False),
        "n_irs": (int, 3),
        "ir_rt60_low_s": (float, 0.08),
        "ir_rt60_high_s": (float, 0.3),
        "ir_duration_s": (float, 0.2),
    },
    "decode": {
        "beam_width": (int, 8),
        "nbest": (int, 5),
        "frames_per_token": (int, 2),
        "confusion_low": (float, 0.3),
        "confusion_high": (float, 0.95),
        "store_lattices": (_bool, False),
    },
    "model": {
        "dim": (int, 64),
        "n_layers": (int, 2),
        "n_heads": (int, 4),
        "ffn_mult": (int, 4),
        "max_seq_len": (int, 160),
        "prompt_len": (int, 15),
        "venc_layers": (int, 4),
        "lip_v": (int, 16),
        "lip_dim": (int, 64),
    },
    "lip": {
        "stem_channels": (int, 16),
        "stem_kernel": (_triple, (3, 5, 5)),
        "blocks": (_pairs, ((32, 2), (32, 1))),
        "tcn": (_pairs, ((64, 1), (64, 2))),
    },
    "pretrain": {
        "learning_rate": (float, 2e-2),
        "weight_decay": (float, 0.0),
        "batch_size": (int, 16),
        "epochs": (int, 80),
        "momentum": (float, 0.9),
        "clip_norm": (float, 1.0),
        "max_steps": (int, 800),
        "early_stop_loss": (float, 0.05),
        # The base LM sees only records whose correction is decidable
        # from text, standing in for a generic pretrained LM that never
        # saw the visual task.
        "text_only_records": (_bool, True),
    },
    "train": {
        "learning_rate": (float, 5e-3),
        "weight_decay": (float, 0.02),
        "batch_size": (int, 32),
        "epochs": (int, 2),
        "momentum": (float, 0.9),
        "clip_norm": (float, 1.0),
        "max_steps": (int, 0),
        "early_stop_loss": (float, 0.0),
    },
    "eval": {
        "systems": (str, "onebest,lm,ger,lipger"),
        "max_gen_len": (int, 16),
    },
}


class PipelineConfig:
    def __init__(self, values: dict[str, dict[str, object]]):
        self.values = values

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def get(self, section: str, key: str):
        return self.values[section][key]

    @classmethod
    def load(cls, path=None, overrides=()) -> "PipelineConfig":
        values = {sec: {k: default for k, (_, default) in keys.items()} for sec, keys in SCHEMA.items()}
        if path is not None:
            parser = configparser.ConfigParser(interpolation=None)
            try:
                with open(path, encoding="utf-8") as fh:
                    parser.read_file(fh)
            except FileNotFoundError:
                raise UsageError(f"config file not found: {path}")
            except configparser.Error as exc:
                raise UsageError(f"cannot parse config {path}: {exc}")
            for section in parser.sections():
                if section not in SCHEMA:
                    raise UsageError(f"unknown config section [{section}]")
                for key, raw in parser.items(section):
                    _apply(values, section, key, raw)
        for item in overrides:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise UsageError(f"override must look like section.key=value, got {item!r}")
            target, raw = item.split("=", 1)
            section, key = target.split(".", 1)
            _apply(values, section.strip(), key.strip(), raw.strip())
        return cls(values)

    # The output directory is a location, not an experiment setting:
    # excluding it keeps artifacts bit-identical across output roots.
    _HASH_EXCLUDED = ("pipeline.out_dir",)

    def to_flat_dict(self) -> dict:
        out = {}
        for section in sorted(self.values):
            for key in sorted(self.values[section]):
                flat = f"{section}.{key}"
                if flat in self._HASH_EXCLUDED:
                    continue
                value = self.values[section][key]
                if isinstance(value, tuple):
                    value = json.loads(json.dumps(value))
                out[flat] = value
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_flat_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def dump(self) -> str:
        buf = io.StringIO()
        for section in self.values:
            buf.write(f"[{section}]\n")
            for key, value in self.values[section].items():
                if isinstance(value, tuple):
                    if value and isinstance(value[0], tuple):
                        value = ",".join(f"{a}:{b}" for a, b in value)
                    else:
                        value = ",".join(str(v) for v in value)
                buf.write(f"{key} = {value}\n")
            buf.write("\n")
        return buf.getvalue()

    # -- typed views ----------------------------------------------------

    def model_config(self, vocab_size: int) -> ModelConfig:
        m = self.values["model"]
        return ModelConfig(
            vocab_size=vocab_size,
            dim=m["dim"],
            n_layers=m["n_layers"],
            n_heads=m["n_heads"],
            ffn_mult=m["ffn_mult"],
            max_seq_len=m["max_seq_len"],
            prompt_len=m["prompt_len"],
            venc_layers=m["venc_layers"],
        )

    def lip_encoder_config(self) -> LipEncoderConfig:
        lp = self.values["lip"]
        m = self.values["model"]
        return LipEncoderConfig(
            stem_channels=lp["stem_channels"],
            stem_kernel=lp["stem_kernel"],
            blocks=lp["blocks"],
            tcn=tuple(lp["tcn"][:-1]) + ((m["lip_dim"], lp["tcn"][-1][1]),),
            v_steps=m["lip_v"],
            c_lip=m["lip_dim"],
        )

    def train_config(self, section: str, seed: int | None = None) -> TrainConfig:
        t = self.values[section]
        return TrainConfig(
            learning_rate=t["learning_rate"],
            weight_decay=t["weight_decay"],
            batch_size=t["batch_size"],
            epochs=t["epochs"],
            seed=self.values["pipeline"]["seed"] if seed is None else seed,
            clip_norm=t["clip_norm"],
            momentum=t["momentum"],
            max_steps=t["max_steps"] or None,
            early_stop_loss=t["early_stop_loss"] or None,
        )


def _apply(values: dict, section: str, key: str, raw: str) -> None:
    if section not in SCHEMA:
        raise UsageError(f"unknown config section [{section}]")
    if key not in SCHEMA[section]:
        raise UsageError(f"unknown config key {section}.{key}")
    parse = SCHEMA[section][key][0]
    try:
        values[section][key] = parse(raw)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad value for {section}.{key}: {raw!r} ({exc})")
