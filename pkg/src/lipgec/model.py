"""Decoder-only language model with lip-conditioned per-layer adapters.

The base decoder (embeddings, causal self-attention layers, output
projection) is frozen after pretraining. Conditioning happens per
decoder layer: the projected lip feature map is concatenated with a
learnable visual prompt, passed through a shared bidirectional prompt
encoder, sliced back to the prompt length and added to a second
learnable prompt to form the adaptation prefix. Token positions attend
causally to tokens and fully to the K prefix positions; the prefix's
attention contribution is scaled by a per-layer gate initialized to 0,
so an untrained adapter is exactly inert. Prefix states are recomputed
at every layer and never carried forward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .lipenc import LipEncoderConfig, init_lip_params

EOS_ID = 2  # matches text.Tokenizer specials (PAD, BOS, EOS, UNK)

_MASK_VALUE = -1e30

# Base decoder tensors stay frozen during adapter fine-tuning.
_FROZEN_PREFIXES = ("tok_emb", "pos_emb", "dec.", "final_ln.", "out_proj.")
_TRAINABLE_PREFIXES = ("adapt.", "venc.", "lip_proj.", "lip.")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_mult: int = 4
    max_seq_len: int = 160
    prompt_len: int = 15
    venc_layers: int = 4

    def __post_init__(self):
        if self.dim % self.n_heads != 0:
            raise ValueError("dim must be divisible by n_heads")
        for name in ("vocab_size", "dim", "n_layers", "n_heads", "ffn_mult",
                     "max_seq_len", "prompt_len", "venc_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def _uniform(rng, shape, fan_in):
    s = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-s, s, size=shape)


def _init_block(p, rng, base, dim, ffn_mult):
    p[base + "ln1.g"] = np.ones(dim)
    p[base + "ln1.b"] = np.zeros(dim)
    for name in ("wq", "wk", "wv", "wo"):
        p[base + "attn." + name] = _uniform(rng, (dim, dim), dim)
        p[base + "attn.b" + name[1]] = np.zeros(dim)
    p[base + "ln2.g"] = np.ones(dim)
    p[base + "ln2.b"] = np.zeros(dim)
    p[base + "ffn.w1"] = _uniform(rng, (dim, dim * ffn_mult), dim)
    p[base + "ffn.b1"] = np.zeros(dim * ffn_mult)
    p[base + "ffn.w2"] = _uniform(rng, (dim * ffn_mult, dim), dim * ffn_mult)
    p[base + "ffn.b2"] = np.zeros(dim)


class Model:
    """Parameter container plus the forward/generate operations."""

    def __init__(self, config: ModelConfig, lip_config: LipEncoderConfig, tensors: dict):
        self.config = config
        self.lip_config = lip_config
        self.params: dict[str, Tensor] = {
            name: t if isinstance(t, Tensor) else Tensor(t) for name, t in tensors.items()
        }
        self._validate_shapes()

    @classmethod
    def init(cls, config: ModelConfig, lip_config: LipEncoderConfig, seed: int = 0) -> "Model":
        rng = np.random.default_rng(seed)
        c = config.dim
        p: dict[str, np.ndarray] = {}
        p["tok_emb"] = _uniform(rng, (config.vocab_size, c), c)
        p["pos_emb"] = _uniform(rng, (config.max_seq_len, c), c)
        for layer in range(config.n_layers):
            _init_block(p, rng, f"dec.{layer}.", c, config.ffn_mult)
        p["final_ln.g"] = np.ones(c)
        p["final_ln.b"] = np.zeros(c)
        p["out_proj.w"] = _uniform(rng, (c, config.vocab_size), c)
        p["out_proj.b"] = np.zeros(config.vocab_size)

        p["lip_proj.w"] = _uniform(rng, (lip_config.c_lip, c), lip_config.c_lip)
        p["lip_proj.b"] = np.zeros(c)
        for layer in range(config.n_layers):
            base = f"adapt.{layer}."
            p[base + "p_v"] = _uniform(rng, (config.prompt_len, c), c)
            p[base + "p_a"] = _uniform(rng, (config.prompt_len, c), c)
            # Zero-initialized gate: the adapter starts exactly inert.
            p[base + "gate"] = np.zeros(())
        for layer in range(config.venc_layers):
            _init_block(p, rng, f"venc.{layer}.", c, config.ffn_mult)
        p.update(init_lip_params(lip_config, rng))
        return cls(config, lip_config, p)

    # -- partition -----------------------------------------------------

    def _validate_shapes(self):
        emb = self.params.get("tok_emb")
        if emb is None or emb.shape != (self.config.vocab_size, self.config.dim):
            got = None if emb is None else emb.shape
            raise ValueError(
                f"tok_emb shape {got} does not match config "
                f"({self.config.vocab_size}, {self.config.dim})"
            )

    def frozen_names(self) -> set[str]:
        return {n for n in self.params if n.startswith(_FROZEN_PREFIXES)}

    def trainable_names(self) -> set[str]:
        """The adapter fine-tuning partition."""
        return {n for n in self.params if n.startswith(_TRAINABLE_PREFIXES)}

    def base_names(self) -> set[str]:
        """Tensors updated during base-LM pretraining."""
        return self.frozen_names()

    def set_trainable(self, names) -> None:
        names = set(names)
        unknown = names - set(self.params)
        if unknown:
            raise ValueError(f"unknown tensors in trainable set: {sorted(unknown)}")
        for name, t in self.params.items():
            t.requires_grad = name in names
            t.grad = None

    def clone_data(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    def load_data(self, data: dict) -> None:
        for name, t in self.params.items():
            src = data.get(name)
            if src is None:
                raise ValueError(f"missing tensor {name!r}")
            src = np.asarray(src, dtype=np.float64)
            if src.shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: checkpoint has {src.shape}, "
                    f"model expects {t.data.shape}"
                )
            t.data = src.copy()

    # -- forward -------------------------------------------------------

    def _check_ids(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        if ids.ndim != 2 or ids.shape[1] < 1:
            raise ValueError("token ids must be a non-empty 1-D or 2-D array")
        if ids.min() < 0 or ids.max() >= self.config.vocab_size:
            raise ValueError(
                f"token id out of range [0, {self.config.vocab_size}): "
                f"{int(ids.min())}..{int(ids.max())}"
            )
        if ids.shape[1] > self.config.max_seq_len:
            raise ValueError(
                f"sequence of {ids.shape[1]} tokens exceeds max_seq_len {self.config.max_seq_len}"
            )
        return ids

    def _causal_mask(self, n: int) -> Tensor:
        mask = np.triu(np.full((n, n), _MASK_VALUE), k=1)
        return Tensor(mask.reshape(1, 1, n, n))

    def _heads(self, x: Tensor) -> Tensor:
        b, n, c = x.shape
        h = self.config.n_heads
        return ad.transpose(ad.reshape(x, (b, n, h, c // h)), (0, 2, 1, 3))

    def _merge_heads(self, x: Tensor) -> Tensor:
        b, h, n, dh = x.shape
        return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, n, h * dh))

    def _attention(self, h: Tensor, base: str, mask: Tensor | None,
                   prefix: Tensor | None = None, gate: Tensor | None = None) -> Tensor:
        p = self.params
        scale = 1.0 / np.sqrt(self.config.dim // self.config.n_heads)
        n_tok = ad.layer_norm(h, p[base + "ln1.g"], p[base + "ln1.b"])
        q = self._heads(ad.linear(n_tok, p[base + "attn.wq"], p[base + "attn.bq"]))
        k = self._heads(ad.linear(n_tok, p[base + "attn.wk"], p[base + "attn.bk"]))
        v = self._heads(ad.linear(n_tok, p[base + "attn.wv"], p[base + "attn.bv"]))
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), scale)
        if mask is not None:
            scores = ad.add(scores, mask)
        ctx = ad.matmul(ad.softmax(scores), v)
        if prefix is not None:
            # Prefix keys/values go through the same input norm and
            # projections; token queries attend to them with a separate
            # softmax whose contribution is scaled by the gate, so a
            # zero gate reproduces the base path bit for bit.
            n_pre = ad.layer_norm(prefix, p[base + "ln1.g"], p[base + "ln1.b"])
            k_pre = self._heads(ad.linear(n_pre, p[base + "attn.wk"], p[base + "attn.bk"]))
            v_pre = self._heads(ad.linear(n_pre, p[base + "attn.wv"], p[base + "attn.bv"]))
            s_pre = ad.mul(ad.matmul(q, ad.transpose(k_pre, (0, 1, 3, 2))), scale)
            ctx = ad.add(ctx, ad.mul(gate, ad.matmul(ad.softmax(s_pre), v_pre)))
        out = ad.linear(self._merge_heads(ctx), p[base + "attn.wo"], p[base + "attn.bo"])
        return ad.add(h, out)

    def _ffn(self, h: Tensor, base: str) -> Tensor:
        p = self.params
        n = ad.layer_norm(h, p[base + "ln2.g"], p[base + "ln2.b"])
        y = ad.linear(ad.gelu(ad.linear(n, p[base + "ffn.w1"], p[base + "ffn.b1"])),
                      p[base + "ffn.w2"], p[base + "ffn.b2"])
        return ad.add(h, y)

    def _prompt_encoder(self, x: Tensor) -> Tensor:
        for layer in range(self.config.venc_layers):
            base = f"venc.{layer}."
            x = self._attention(x, base, mask=None)
            x = self._ffn(x, base)
        return x

    def forward_graph(self, ids: np.ndarray, e_feat: Tensor | None = None,
                      trace: list | None = None) -> Tensor:
        """Shared forward; ids (B, I) -> logits Tensor (B, I, vocab)."""
        p = self.params
        cfg = self.config
        b, n = ids.shape
        emb = ad.take_axis(p["tok_emb"], ids, axis=0)
        pos = ad.index(p["pos_emb"], (slice(0, n),))
        h = ad.add(emb, pos)
        mask = self._causal_mask(n)

        proj_e = None
        if e_feat is not None:
            proj_e = ad.linear(e_feat, p["lip_proj.w"], p["lip_proj.b"])  # (B, V, C)

        for layer in range(cfg.n_layers):
            base = f"dec.{layer}."
            prefix = gate = None
            if proj_e is not None:
                abase = f"adapt.{layer}."
                p_v = ad.add(ad.reshape(p[abase + "p_v"], (1, cfg.prompt_len, cfg.dim)),
                             Tensor(np.zeros((b, 1, 1))))
                i_l = ad.concat([proj_e, p_v], axis=1)  # (B, V+K, C)
                g_l = ad.index(self._prompt_encoder(i_l),
                               (slice(None), slice(0, cfg.prompt_len)))
                prefix = ad.add(g_l, p[abase + "p_a"])  # (B, K, C)
                gate = p[abase + "gate"]
                if trace is not None:
                    trace.append({
                        "layer": layer,
                        "i_l": tuple(i_l.shape[1:]),
                        "g_l": tuple(g_l.shape[1:]),
                        "attended": (prefix.shape[1] + n, cfg.dim),
                    })
            h = self._attention(h, base, mask, prefix, gate)
            h = self._ffn(h, base)
        h = ad.layer_norm(h, p["final_ln.g"], p["final_ln.b"])
        return ad.linear(h, p["out_proj.w"], p["out_proj.b"])

    def base_forward(self, token_ids) -> np.ndarray:
        """Causal LM logits without any visual conditioning."""
        ids = self._check_ids(token_ids)
        out = self.forward_graph(ids)
        return out.data[0] if np.asarray(token_ids).ndim == 1 else out.data

    def adapter_forward(self, token_ids, e_feat, trace: list | None = None) -> np.ndarray:
        """Logits conditioned on a (V, C_lip) lip feature map."""
        ids = self._check_ids(token_ids)
        e = self._check_e(e_feat, ids.shape[0])
        out = self.forward_graph(ids, e, trace=trace)
        return out.data[0] if np.asarray(token_ids).ndim == 1 else out.data

    def _check_e(self, e_feat, batch: int) -> Tensor:
        e = e_feat if isinstance(e_feat, Tensor) else Tensor(np.asarray(e_feat, dtype=np.float64))
        expected = (self.lip_config.v_steps, self.lip_config.c_lip)
        if e.ndim == 2:
            if e.shape != expected:
                raise ValueError(f"lip feature shape {e.shape} does not match {expected}")
            e = ad.reshape(e, (1,) + expected)
            if batch > 1:
                e = ad.add(e, Tensor(np.zeros((batch, 1, 1))))
        elif e.ndim == 3:
            if e.shape[0] != batch or e.shape[1:] != expected:
                raise ValueError(
                    f"lip feature batch shape {e.shape} does not match ({batch},) + {expected}"
                )
        else:
            raise ValueError("lip feature must be 2-D or 3-D")
        return e

    # -- loss and generation -------------------------------------------

    def generate(self, prompt_ids, e_feat=None, max_len: int = 16, mode: str = "greedy") -> np.ndarray:
        """Greedy continuation until EOS or max_len new tokens."""
        if mode != "greedy":
            raise ValueError(f"unsupported generation mode {mode!r}")
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        prompt = np.asarray(prompt_ids, dtype=np.int64)
        if prompt.ndim != 1 or prompt.size < 1:
            raise ValueError("prompt must be a non-empty 1-D id array")
        out = self.generate_batch(prompt[None], None if e_feat is None else [e_feat], max_len)
        return out[0]

    def generate_batch(self, prompts: np.ndarray, e_feats, max_len: int) -> list[np.ndarray]:
        """Greedy-decode a batch of equal-length prompts."""
        prompts = np.asarray(prompts, dtype=np.int64)
        b = prompts.shape[0]
        e = None
        if e_feats is not None:
            stackd = np.stack([np.asarray(f, dtype=np.float64) for f in e_feats])
            e = self._check_e(stackd, b)
        ids = prompts.copy()
        done = np.zeros(b, dtype=bool)
        steps = min(max_len, self.config.max_seq_len - prompts.shape[1])
        for _ in range(steps):
            checked = self._check_ids(ids)
            logits = self.forward_graph(checked, e).data[:, -1, :]
            nxt = np.argmax(logits, axis=-1).astype(np.int64)
            nxt[done] = EOS_ID
            done |= nxt == EOS_ID
            ids = np.concatenate([ids, nxt[:, None]], axis=1)
            if done.all():
                break
        outs = []
        for row in ids[:, prompts.shape[1]:]:
            stop = np.where(row == EOS_ID)[0]
            outs.append(row[: stop[0]] if stop.size else row)
        return outs


def ce_loss(logits, target_ids, loss_mask):
    """Mean negative log-likelihood over masked positions.

    Accepts plain arrays (returns float) or a logits Tensor from
    `forward_graph` (returns a scalar Tensor for backprop).
    """
    is_graph = isinstance(logits, Tensor)
    lt = logits if is_graph else Tensor(np.asarray(logits, dtype=np.float64))
    targets = np.asarray(target_ids, dtype=np.int64)
    mask = np.asarray(loss_mask, dtype=bool)
    if targets.shape != mask.shape or targets.shape != lt.shape[:-1]:
        raise ValueError(
            f"shape mismatch: logits {lt.shape}, targets {targets.shape}, mask {mask.shape}"
        )
    n_masked = int(mask.sum())
    if n_masked == 0:
        raise ValueError("loss mask selects no positions")
    vocab = lt.shape[-1]
    flat = ad.reshape(lt, (-1, vocab))
    ls = ad.log_softmax(flat, axis=-1)
    pick = np.arange(targets.size, dtype=np.int64) * vocab + targets.reshape(-1)
    chosen = ad.take_flat(ls, pick)
    weights = mask.reshape(-1).astype(np.float64) / n_masked
    loss = ad.mul(ad.sum_(ad.mul(chosen, weights)), -1.0)
    return loss if is_graph else float(loss.data)
