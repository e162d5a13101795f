"""Versioned binary checkpoint container.

Layout (all little-endian): magic "LGER", u32 format version, u32
tensor count, then per tensor: u32 name length, UTF-8 name, u8 dtype
code, u32 ndim, u64 dims, raw array bytes. Model/encoder configs ride
along as a JSON blob stored in the "meta.json" u8 tensor; the tokenizer
vocabulary is written next to the checkpoint as a UTF-8 word list.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .lipenc import LipEncoderConfig
from .model import Model, ModelConfig

MAGIC = b"LGER"
VERSION = 1

_DTYPES = {0: "<f8", 1: "<i8", 2: "|u1"}
_CODES = {np.dtype(np.float64): 0, np.dtype(np.int64): 1, np.dtype(np.uint8): 2}


def save_tensors(tensors: dict, path) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        # np.ascontiguousarray would promote 0-d scalars (the gates) to 1-d
        arr = np.asarray(arr.data if hasattr(arr, "requires_grad") else arr, order="C")
        code = _CODES.get(arr.dtype)
        if code is None:
            raise ValueError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        nbytes = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nbytes)))
        parts.append(nbytes)
        parts.append(struct.pack("<BI", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.astype(_DTYPES[code]).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_tensors(path) -> dict:
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(raw):
            raise DataError(f"{path}: truncated checkpoint at byte {pos}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise DataError(f"{path}: not a LGER checkpoint")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise DataError(
            f"{path}: checkpoint format version {version}, this build reads version {VERSION}"
        )
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        code, ndim = struct.unpack("<BI", take(5))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        dtype = np.dtype(_DTYPES.get(code))
        if code not in _DTYPES:
            raise DataError(f"{path}: unknown dtype code {code} for tensor {name!r}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        tensors[name] = np.frombuffer(take(nbytes), dtype=dtype).reshape(shape).copy()
    if pos != len(raw):
        raise DataError(f"{path}: {len(raw) - pos} trailing bytes after last tensor")
    return tensors


def save_model(model: Model, path, vocab: list[str] | None = None, extra_meta: dict | None = None) -> None:
    meta = {
        "config": model.config.__dict__,
        "lip_config": {
            "stem_channels": model.lip_config.stem_channels,
            "stem_kernel": list(model.lip_config.stem_kernel),
            "blocks": [list(b) for b in model.lip_config.blocks],
            "tcn": [list(t) for t in model.lip_config.tcn],
            "v_steps": model.lip_config.v_steps,
            "c_lip": model.lip_config.c_lip,
        },
    }
    if extra_meta:
        meta.update(extra_meta)
    tensors = dict(model.params)
    tensors["meta.json"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    save_tensors(tensors, path)
    if vocab is not None:
        Path(str(path) + ".vocab").write_text("\n".join(vocab), encoding="utf-8")


def load_model(path) -> tuple[Model, dict]:
    """Rebuild a model from a checkpoint; returns (model, meta)."""
    tensors = load_tensors(path)
    meta_arr = tensors.pop("meta.json", None)
    if meta_arr is None:
        raise DataError(f"{path}: checkpoint has no meta.json tensor")
    meta = json.loads(bytes(meta_arr.tobytes()).decode("utf-8"))
    config = ModelConfig(**meta["config"])
    lc = meta["lip_config"]
    lip_config = LipEncoderConfig(
        stem_channels=lc["stem_channels"],
        stem_kernel=tuple(lc["stem_kernel"]),
        blocks=tuple(tuple(b) for b in lc["blocks"]),
        tcn=tuple(tuple(t) for t in lc["tcn"]),
        v_steps=lc["v_steps"],
        c_lip=lc["c_lip"],
    )
    model = Model.init(config, lip_config, seed=0)
    try:
        model.load_data(tensors)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return model, meta


def load_vocab(path) -> list[str]:
    vpath = Path(str(path) + ".vocab")
    if not vpath.exists():
        raise DataError(f"tokenizer vocabulary not found next to checkpoint: {vpath}")
    return vpath.read_text(encoding="utf-8").split("\n")
