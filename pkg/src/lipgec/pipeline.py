"""Stage orchestration: simulate -> decode -> build -> pretrain-lm ->
train -> eval, each reading the previous stage's artifacts by manifest.

Every artifact gets a sidecar meta file carrying the config hash that
produced it; a stage refuses to consume artifacts whose hash does not
match the current config unless forced, and re-running a stage whose
outputs are already up to date is a no-op. Manifest references are
stored relative to the output root so identical runs into different
directories produce bit-identical artifacts.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import audio as au
from . import corpus as cp
from . import ctc
from .config import PipelineConfig
from .errors import DataError
from .evaluate import canonical_systems, evaluate_systems
from .fixtures import toy
from .lipenc import preprocess_rois, read_rois, write_rois_raw
from .model import Model
from .text import Tokenizer
from .train import build_train_sample, train

_SIM_KEYS = ("utt", "words", "key_word", "key_kind", "audio_ref", "roi_ref", "corruption")


def _out(cfg: PipelineConfig) -> Path:
    return Path(cfg.get("pipeline", "out_dir"))


def _meta_path(path: Path) -> Path:
    return Path(str(path) + ".meta.json")


def _write_meta(path: Path, cfg: PipelineConfig, stage: str) -> None:
    meta = {"config_hash": cfg.config_hash(), "stage": stage}
    _meta_path(path).write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")


def _meta_matches(path: Path, cfg: PipelineConfig) -> bool:
    mp = _meta_path(path)
    if not path.exists() or not mp.exists():
        return False
    try:
        meta = json.loads(mp.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return False
    return meta.get("config_hash") == cfg.config_hash()


def _require(path: Path, cfg: PipelineConfig, produced_by: str, force: bool) -> None:
    if not path.exists():
        raise DataError(f"missing artifact {path}; run the '{produced_by}' stage first")
    if not force and not _meta_matches(path, cfg):
        raise DataError(
            f"{path} was produced under a different config hash; "
            f"re-run '{produced_by}' or pass --force"
        )


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    path.write_text(
        "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8"
    )


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed line: {exc}") from exc
    return rows


# ----------------------------------------------------------------------


def _build_pools(cfg: PipelineConfig, rng: np.random.Generator) -> au.NoisePools:
    sr = cfg.get("audio", "sample_rate_hz")
    a = cfg["audio"]
    pools = au.NoisePools()
    rt60s = np.linspace(a["ir_rt60_low_s"], a["ir_rt60_high_s"], max(1, a["n_irs"]))
    for i, rt60 in enumerate(rt60s):
        pools.irs[f"ir{i}"] = au.make_synthetic_ir(
            sr, a["ir_duration_s"], float(rt60), seed=1000 + i
        )
    # Background pool: white noise plus a mains-style hum.
    n = sr * 2
    white = np.random.default_rng(2000).standard_normal(n) * 0.25
    t = np.arange(n) / sr
    hum = 0.3 * np.sin(2 * np.pi * 50.0 * t) + 0.1 * np.sin(2 * np.pi * 150.0 * t)
    pools.noises["white0"] = au.AudioClip(white, sr)
    pools.noises["hum0"] = au.AudioClip(hum, sr)
    # Interferers: extra toy sentences that are not part of the corpus.
    for i in range(4):
        utt = toy.sample_utterance(rng)
        pools.interferers[f"talker{i}"] = toy.clean_audio_for(
            utt["words"], sr, seed=3000 + i
        )
    return pools


def stage_simulate(cfg: PipelineConfig, force: bool = False) -> bool:
    out = _out(cfg)
    sim_dir = out / "sim"
    manifest = sim_dir / "sim_manifest.jsonl"
    if not force and _meta_matches(manifest, cfg):
        print(f"simulate: {manifest} up to date (no-op)")
        return False
    (sim_dir / "audio").mkdir(parents=True, exist_ok=True)
    (sim_dir / "roi").mkdir(parents=True, exist_ok=True)

    seed = cfg.get("pipeline", "seed")
    sr = cfg.get("audio", "sample_rate_hz")
    a, c = cfg["audio"], cfg["corpus"]
    rng = np.random.default_rng(seed)
    pools = _build_pools(cfg, rng)

    rows = []
    for i in range(c["n_utterances"]):
        utt = toy.sample_utterance(rng, c["pair_noun_rate"], c["adverb_rate"])
        utt_seed = int(rng.integers(2**62))
        spec = au.CorruptionSpec(
            snr_db_background=float(rng.uniform(a["snr_low_db"], a["snr_high_db"])),
            snr_db_interferer=float(
                rng.uniform(a["interferer_snr_low_db"], a["interferer_snr_high_db"])
            ),
            ir_id=f"ir{int(rng.integers(len(pools.irs)))}",
            interferer_id=f"talker{int(rng.integers(len(pools.interferers)))}",
            noise_id=("white0", "hum0")[int(rng.integers(2))],
            seed=utt_seed,
        )
        clean = toy.clean_audio_for(utt["words"], sr, seed=utt_seed)
        noisy, prov = au.simulate_noisy(clean, spec, pools)
        name = f"utt{i:04d}"
        audio_ref = f"sim/audio/{name}.wav"
        roi_ref = f"sim/roi/{name}.roi"
        au.write_wav(out / audio_ref, noisy)
        rois = toy.rois_for(
            utt["words"], utt["key_word"], c["roi_frames"], c["roi_size"], seed=utt_seed + 7
        )
        write_rois_raw(out / roi_ref, rois)
        rows.append(
            {
                "utt": name,
                "words": list(utt["words"]),
                "key_word": utt["key_word"],
                "key_kind": utt["key_kind"],
                "audio_ref": audio_ref,
                "roi_ref": roi_ref,
                "corruption": prov,
            }
        )
    _write_jsonl(manifest, rows)
    _write_meta(manifest, cfg, "simulate")
    print(f"simulate: wrote {len(rows)} utterances under {sim_dir}")
    return True


def stage_decode(cfg: PipelineConfig, force: bool = False) -> bool:
    out = _out(cfg)
    sim_manifest = out / "sim" / "sim_manifest.jsonl"
    _require(sim_manifest, cfg, "simulate", force)
    dec_dir = out / "decode"
    manifest = dec_dir / "decode_manifest.jsonl"
    if not force and _meta_matches(manifest, cfg):
        print(f"decode: {manifest} up to date (no-op)")
        return False
    dec_dir.mkdir(parents=True, exist_ok=True)

    d = cfg["decode"]
    lo, hi = d["confusion_low"], d["confusion_high"]
    rows = []
    for rec in _read_jsonl(sim_manifest):
        snr = rec["corruption"]["spec"]["snr_db_background"]
        strength = lo + (hi - lo) * (1.0 - snr / 40.0)
        lattice = ctc.synth_lattice(
            rec["words"],
            toy.TOY_VOCAB,
            confusion_strength=float(np.clip(strength, 0.0, 0.999)),
            frames_per_token=d["frames_per_token"],
            seed=rec["corruption"]["spec"]["seed"] + 1,
            confusion_map=toy.CONFUSION_MAP,
        )
        hyps = ctc.ctc_prefix_beam_nbest(lattice, d["beam_width"], d["nbest"])
        row = dict(rec)
        row["hypotheses"] = hyps.to_dict()
        row["complete"] = hyps.complete
        if d["store_lattices"]:
            row["lattice"] = [list(map(float, r)) for r in lattice.log_probs]
        rows.append(row)
    _write_jsonl(manifest, rows)
    _write_meta(manifest, cfg, "decode")
    print(f"decode: wrote {len(rows)} hypothesis lists to {manifest}")
    return True


def stage_build(cfg: PipelineConfig, force: bool = False) -> bool:
    out = _out(cfg)
    dec_manifest = out / "decode" / "decode_manifest.jsonl"
    _require(dec_manifest, cfg, "decode", force)
    corpus_dir = out / "corpus"
    manifest = corpus_dir / "corpus_manifest.jsonl"
    vocab_path = corpus_dir / "vocab.txt"
    if not force and _meta_matches(manifest, cfg):
        print(f"build: {manifest} up to date (no-op)")
        return False
    corpus_dir.mkdir(parents=True, exist_ok=True)

    nbest = max(2, cfg.get("corpus", "nbest"))
    ratio = cfg.get("corpus", "split_ratio")
    records = []
    skipped = 0
    for row in _read_jsonl(dec_manifest):
        hyps = ctc.HypothesisList.from_dict(row["hypotheses"])
        if len(hyps) < 2:
            skipped += 1
            continue
        kept = ctc.HypothesisList(hyps.hypotheses[:nbest], requested=min(nbest, hyps.requested))
        rid = cp.record_id(row["words"], kept, row["corruption"]["spec"]["seed"])
        record = cp.build_record(
            transcript=row["words"],
            hypotheses=kept,
            audio_ref=row["audio_ref"],
            roi_ref=row["roi_ref"],
            corruption=row["corruption"],
            split=cp.assign_split(rid, ratio),
            base_dir=out,
        )
        records.append(record)
    cp.write_manifest(records, manifest)
    texts = [cp.render_instruction(r).full_text for r in records if r.split == "train"]
    tokenizer = Tokenizer.from_texts(texts)
    tokenizer.save(vocab_path)
    _write_meta(manifest, cfg, "build")
    _write_meta(vocab_path, cfg, "build")
    n_train = sum(1 for r in records if r.split == "train")
    print(
        f"build: {len(records)} records ({n_train} train / {len(records) - n_train} test, "
        f"{skipped} skipped), vocab {len(tokenizer)} words"
    )
    return True


def _load_corpus(cfg: PipelineConfig, force: bool):
    out = _out(cfg)
    manifest = out / "corpus" / "corpus_manifest.jsonl"
    vocab_path = out / "corpus" / "vocab.txt"
    _require(manifest, cfg, "build", force)
    _require(vocab_path, cfg, "build", force)
    return cp.read_manifest(manifest), Tokenizer.load(vocab_path)


def _finetune_samples(records, tokenizer, cfg: PipelineConfig, with_rois: bool):
    out = _out(cfg)
    size = cfg.get("corpus", "roi_size")
    samples = []
    for rec in records:
        inst = cp.render_instruction(rec)
        rois = None
        if with_rois:
            frames = read_rois(out / rec.roi_ref)
            rois = preprocess_rois(frames, (size, size)).frames
        samples.append(
            build_train_sample(inst.prompt, inst.response, tokenizer, rois, rec.id)
        )
    return samples


def stage_pretrain(cfg: PipelineConfig, force: bool = False) -> bool:
    out = _out(cfg)
    ckpt_dir = out / "ckpt"
    base_path = ckpt_dir / "base.lger"
    if not force and _meta_matches(base_path, cfg):
        print(f"pretrain-lm: {base_path} up to date (no-op)")
        return False
    records, tokenizer = _load_corpus(cfg, force)
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    model = Model.init(
        cfg.model_config(len(tokenizer)),
        cfg.lip_encoder_config(),
        seed=cfg.get("pipeline", "seed"),
    )
    train_recs = [r for r in records if r.split == "train"]
    if cfg.get("pretrain", "text_only_records"):
        train_recs = [
            r for r in train_recs
            if toy.text_determined(r.transcript, r.hypotheses.best.tokens)
        ]
    samples = _finetune_samples(train_recs, tokenizer, cfg, with_rois=False)
    log = train(
        samples,
        model,
        cfg.train_config("pretrain"),
        trainable=model.base_names(),
        log_path=ckpt_dir / "pretrain_log.csv",
    )
    from .checkpoint import save_model

    save_model(model, base_path, vocab=tokenizer.vocab, extra_meta={"config_hash": cfg.config_hash()})
    _write_meta(base_path, cfg, "pretrain-lm")
    print(
        f"pretrain-lm: {len(samples)} samples, {len(log.steps)} steps, "
        f"final loss {log.final_loss:.4f} -> {base_path}"
    )
    return True


def stage_train(cfg: PipelineConfig, force: bool = False) -> bool:
    out = _out(cfg)
    ckpt_dir = out / "ckpt"
    base_path = ckpt_dir / "base.lger"
    final_path = ckpt_dir / "final.lger"
    if not force and _meta_matches(final_path, cfg):
        print(f"train: {final_path} up to date (no-op)")
        return False
    records, tokenizer = _load_corpus(cfg, force)
    _require(base_path, cfg, "pretrain-lm", force)

    from .checkpoint import load_model, save_model

    model, _ = load_model(base_path)
    train_recs = [r for r in records if r.split == "train"]
    samples = _finetune_samples(train_recs, tokenizer, cfg, with_rois=True)
    log = train(
        samples,
        model,
        cfg.train_config("train"),
        trainable=model.trainable_names(),
        log_path=ckpt_dir / "train_log.csv",
    )
    save_model(model, final_path, vocab=tokenizer.vocab, extra_meta={"config_hash": cfg.config_hash()})
    _write_meta(final_path, cfg, "train")
    print(
        f"train: {len(samples)} samples, {len(log.steps)} steps, "
        f"final loss {log.final_loss:.4f} -> {final_path}"
    )
    return True


def stage_eval(cfg: PipelineConfig, systems=None, force: bool = False) -> bool:
    out = _out(cfg)
    reports_dir = out / "reports"
    report_json = reports_dir / "eval_report.json"
    names = canonical_systems(
        systems if systems is not None else cfg.get("eval", "systems").split(",")
    )
    if not force and _meta_matches(report_json, cfg):
        print(f"eval: {report_json} up to date (no-op)")
        return False
    records, tokenizer = _load_corpus(cfg, force)
    reports_dir.mkdir(parents=True, exist_ok=True)

    model = None
    if any(s != "onebest" for s in names):
        final_path = out / "ckpt" / "final.lger"
        _require(final_path, cfg, "train", force)
        from .checkpoint import load_model

        model, _ = load_model(final_path)
    size = cfg.get("corpus", "roi_size")
    report = evaluate_systems(
        records,
        names,
        model=model,
        tokenizer=tokenizer,
        roi_target_hw=(size, size),
        max_gen_len=cfg.get("eval", "max_gen_len"),
        config_echo={"config": cfg.to_flat_dict(), "config_hash": cfg.config_hash()},
        ref_base=out,
    )
    report_json.write_text(report.to_json() + "\n", encoding="utf-8")
    (reports_dir / "eval_report.txt").write_text(report.to_text_table() + "\n", encoding="utf-8")
    _write_meta(report_json, cfg, "eval")
    print(report.to_text_table())
    return True


def stage_report(cfg: PipelineConfig) -> str:
    out = _out(cfg)
    report_json = out / "reports" / "eval_report.json"
    if not report_json.exists():
        raise DataError(f"missing {report_json}; run the 'eval' stage first")
    data = json.loads(report_json.read_text(encoding="utf-8"))
    lines = ["system      wer      evaluated  skipped"]
    for name, res in data["systems"].items():
        lines.append(
            f"{name:<10}  {res['wer']:.4f}   {res['n_evaluated']:<9}  {res['n_skipped']}"
        )
    lines.append(f"config hash: {data['config'].get('config_hash', '?')}")
    text = "\n".join(lines)
    print(text)
    return text


def run_full_chain(cfg: PipelineConfig, force: bool = False) -> None:
    stage_simulate(cfg, force)
    stage_decode(cfg, force)
    stage_build(cfg, force)
    stage_pretrain(cfg, force)
    stage_train(cfg, force)
    stage_eval(cfg, force=force)
