"""Built-in oracle suites behind the `selftest` subcommand: beam search
vs exhaustive enumeration, WER vs the recursive oracle, SNR accuracy,
and a gradient check of a miniature model.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import oracles
from .audio import AudioClip, mix_at_snr
from .ctc import EmissionLattice, ctc_prefix_beam_nbest, exhaustive_nbest
from .lipenc import LipEncoderConfig
from .model import Model, ModelConfig, ce_loss
from .wer import wer_counts


def random_lattice(rng: np.random.Generator, n_frames: int, vocab_size: int) -> EmissionLattice:
    logits = rng.standard_normal((n_frames, vocab_size + 1)) * 1.5
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    vocab = tuple("abcdefgh"[:vocab_size])
    return EmissionLattice(np.log(probs), vocab)


def check_beam_vs_exhaustive(n_lattices: int = 60, seed: int = 0, tol: float = 1e-9) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    for i in range(n_lattices):
        f = int(rng.integers(1, 5))
        v = int(rng.integers(1, 4))
        lattice = random_lattice(rng, f, v)
        width = (v + 1) ** f
        got = ctc_prefix_beam_nbest(lattice, max(width, 2), 2)
        want = exhaustive_nbest(lattice, 2)
        for g, w in zip(got, want):
            if g.tokens != w.tokens:
                return False, f"lattice {i}: sequences differ ({g.tokens} vs {w.tokens})"
            if oracles.relative_error(g.score, w.score) > tol:
                return False, f"lattice {i}: scores differ ({g.score} vs {w.score})"
    return True, f"{n_lattices} lattices, beam == exhaustive"


def check_wer_oracle(seed: int = 0) -> tuple[bool, str]:
    vocab = ("a", "b", "c", "d")
    n = 0
    for lr in range(1, 4):
        for ref in itertools.product(vocab, repeat=lr):
            for lh in range(0, 4):
                for hyp in itertools.product(vocab, repeat=lh):
                    if wer_counts(ref, hyp) != oracles.wer_oracle(ref, hyp):
                        return False, f"mismatch at {ref} vs {hyp}"
                    n += 1
    rng = np.random.default_rng(seed)
    for _ in range(2000):
        ref = tuple(rng.choice(vocab, size=rng.integers(1, 7)))
        hyp = tuple(rng.choice(vocab, size=rng.integers(0, 7)))
        if wer_counts(ref, hyp) != oracles.wer_oracle(ref, hyp):
            return False, f"mismatch at {ref} vs {hyp}"
        n += 1
    pair = wer_counts("you are very kind".split(), "you a very kind day".split())
    if pair.wer != 0.5:
        return False, f"reference pair WER {pair.wer} != 0.5"
    return True, f"{n} pairs match the recursive oracle"


def check_snr(seed: int = 0, n: int = 40) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        sig = AudioClip(rng.standard_normal(1200) * rng.uniform(0.05, 0.5), 16000)
        noise = AudioClip(rng.standard_normal(900) * rng.uniform(0.05, 0.5), 16000)
        snr = float(rng.uniform(0, 40))
        mixed, scale = mix_at_snr(sig, noise, snr)
        resid = mixed.samples - sig.samples
        measured = 10.0 * np.log10(
            np.mean(sig.samples**2) / np.mean(resid**2)
        )
        worst = max(worst, abs(measured - snr))
    return worst < 0.01, f"worst SNR error {worst:.2e} dB over {n} mixes"


def check_gradients(tol: float = 1e-4, max_per_tensor: int = 6) -> tuple[bool, str]:
    """Spot-check analytic vs finite-difference gradients on a miniature
    model (full coverage lives in the acceptance suite)."""
    lip_cfg = LipEncoderConfig(
        stem_channels=4, stem_kernel=(3, 3, 3), blocks=((8, 2),),
        tcn=((8, 1),), v_steps=6, c_lip=8,
    )
    cfg = ModelConfig(vocab_size=12, dim=16, n_layers=2, n_heads=2,
                      max_seq_len=16, prompt_len=4, venc_layers=1)
    model = Model.init(cfg, lip_cfg, seed=5)
    # open the gates so the prefix-path gradients are live
    for layer in range(cfg.n_layers):
        model.params[f"adapt.{layer}.gate"].data = np.asarray(0.27 + 0.11 * layer)
    rng = np.random.default_rng(6)
    ids = rng.integers(0, 12, size=(1, 7))
    rois = rng.uniform(0, 1, size=(1, 5, 12, 12))
    targets = ids[:, 1:]
    mask = np.ones_like(targets, dtype=bool)

    def loss_value() -> float:
        from .lipenc import encode_batch_graph

        e = encode_batch_graph(model.params, rois, lip_cfg)
        logits = model.forward_graph(ids[:, :-1], e)
        return float(ce_loss(logits, targets, mask).data)

    model.set_trainable(model.trainable_names())
    from .lipenc import encode_batch_graph

    e = encode_batch_graph(model.params, rois, lip_cfg)
    logits = model.forward_graph(ids[:, :-1], e)
    loss = ce_loss(logits, targets, mask)
    loss.backward()

    worst = 0.0
    worst_name = ""
    for name in sorted(model.trainable_names()):
        p = model.params[name]
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        k = min(max_per_tensor, p.data.size)
        picks = np.random.default_rng(hash(name) % 2**32).choice(p.data.size, size=k, replace=False)
        fd = oracles.fd_gradient(lambda _: loss_value(), p.data, eps=1e-5, indices=picks)
        for idx in picks:
            err = abs(fd.reshape(-1)[idx] - grad.reshape(-1)[idx]) / max(
                abs(fd.reshape(-1)[idx]), abs(grad.reshape(-1)[idx]), 1e-6
            )
            if err > worst:
                worst, worst_name = err, name
    return worst < tol, f"worst sampled gradient error {worst:.2e} ({worst_name})"


def run_selftest() -> bool:
    checks = [
        ("beam-vs-exhaustive", check_beam_vs_exhaustive),
        ("wer-oracle", check_wer_oracle),
        ("snr-accuracy", check_snr),
        ("gradient-check", check_gradients),
    ]
    ok = True
    for name, fn in checks:
        passed, detail = fn()
        ok = ok and passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return ok
