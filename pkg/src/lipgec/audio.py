"""Noisy-speech simulation: reverberation, interfering speech, and
background noise at controlled SNR.

All operations are pure functions of their inputs; the only randomness
is the wrap offset used when looping short noise, drawn from the
corruption seed. Output length and sample rate always match the input
clip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile
from scipy.signal import fftconvolve

from .errors import DataError

# Mixtures and convolutions are rescaled to this peak when they would
# otherwise clip 16-bit export.
CLIP_PEAK = 0.999

# Below this kernel length direct convolution is both faster and exact
# for degenerate kernels such as the unit delta.
_DIRECT_CONV_MAX = 64


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("AudioClip needs a non-empty 1-D sample array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True, eq=False)
class ImpulseResponse:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("ImpulseResponse needs a non-empty 1-D sample array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("ImpulseResponse samples must be finite")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))


@dataclass(frozen=True)
class CorruptionSpec:
    """Everything needed to corrupt one utterance, reproducibly."""

    snr_db_background: float
    snr_db_interferer: float = 20.0
    ir_id: str | None = None
    interferer_id: str | None = None
    noise_id: str | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.snr_db_background <= 40.0:
            raise ValueError(
                f"snr_db_background must be in [0, 40], got {self.snr_db_background}"
            )

    def to_dict(self) -> dict:
        return {
            "snr_db_background": self.snr_db_background,
            "snr_db_interferer": self.snr_db_interferer,
            "ir_id": self.ir_id,
            "interferer_id": self.interferer_id,
            "noise_id": self.noise_id,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorruptionSpec":
        return cls(**d)


@dataclass
class NoisePools:
    irs: dict = field(default_factory=dict)
    interferers: dict = field(default_factory=dict)
    noises: dict = field(default_factory=dict)


def measure_power(clip: AudioClip) -> float:
    """Mean-square power of a clip."""
    x = clip.samples
    return float(np.dot(x, x) / x.size)


def _convolve_full(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    if h.size <= _DIRECT_CONV_MAX:
        return np.convolve(x, h)
    return fftconvolve(x, h)


def convolve_ir(clip: AudioClip, ir: ImpulseResponse) -> AudioClip:
    """Convolve a clip with a room impulse response.

    The result is truncated to the input length (anchored at t=0 so the
    audio stays aligned with its video frames) and rescaled to peak
    0.999 only if the convolution would clip.
    """
    out, _ = _convolve_ir_with_factor(clip, ir)
    return out


def _convolve_ir_with_factor(clip: AudioClip, ir: ImpulseResponse):
    if clip.sample_rate_hz != ir.sample_rate_hz:
        raise ValueError(
            "sample-rate mismatch: clip is "
            f"{clip.sample_rate_hz} Hz but impulse response is {ir.sample_rate_hz} Hz"
        )
    y = _convolve_full(clip.samples, ir.samples)[: clip.samples.size]
    factor = 1.0
    peak = float(np.max(np.abs(y)))
    if peak > 1.0:
        factor = CLIP_PEAK / peak
        y = y * factor
    return AudioClip(y, clip.sample_rate_hz), factor


def fit_to_length(x: np.ndarray, n: int, offset: int = 0) -> np.ndarray:
    """Loop or truncate x to exactly n samples, starting at offset."""
    if offset:
        x = np.roll(x, -int(offset) % x.size)
    if x.size >= n:
        return x[:n].copy()
    reps = -(-n // x.size)
    return np.tile(x, reps)[:n]


def mix_at_snr(
    signal: AudioClip,
    noise: AudioClip,
    snr_db: float,
    reference_power: float | None = None,
) -> tuple[AudioClip, float]:
    """Add noise to signal at a target SNR in dB.

    Returns the mixture and the scale applied to the noise:
    scale = sqrt(P_signal / (P_noise * 10^(snr_db/10))). With
    `reference_power` the scale is computed against that power instead
    of the signal's own (used to target SNR against pre-reverb speech).
    Noise shorter than the signal is looped; longer noise is truncated.
    """
    if signal.sample_rate_hz != noise.sample_rate_hz:
        raise ValueError(
            "sample-rate mismatch: signal is "
            f"{signal.sample_rate_hz} Hz but noise is {noise.sample_rate_hz} Hz"
        )
    p_signal = measure_power(signal) if reference_power is None else float(reference_power)
    if p_signal <= 0.0:
        raise ValueError("cannot set an SNR against a silent signal")
    aligned = fit_to_length(noise.samples, signal.samples.size)
    p_noise = float(np.dot(aligned, aligned) / aligned.size)
    if p_noise <= 0.0:
        raise ValueError("cannot mix silent noise (zero power)")
    scale = float(np.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0))))
    mixed = signal.samples + scale * aligned
    return AudioClip(mixed, signal.sample_rate_hz), scale


def simulate_noisy(
    clip: AudioClip, spec: CorruptionSpec, pools: NoisePools
) -> tuple[AudioClip, dict]:
    """Apply reverb, an interfering speaker, and background noise.

    Stages run in that order; both SNRs are computed against the clean
    pre-reverb signal power. Deterministic for a fixed spec: the seed
    drives only the noise wrap offsets.
    """
    rng = np.random.default_rng(spec.seed)
    clean_power = measure_power(clip)
    prov: dict = {"spec": spec.to_dict(), "clean_power": clean_power}

    out = clip
    if spec.ir_id is not None:
        if spec.ir_id not in pools.irs:
            raise DataError(f"impulse response {spec.ir_id!r} not in IR pool")
        out, factor = _convolve_ir_with_factor(out, pools.irs[spec.ir_id])
        prov["ir_rescale"] = factor

    if spec.interferer_id is not None:
        if spec.interferer_id not in pools.interferers:
            raise DataError(f"interferer {spec.interferer_id!r} not in interferer pool")
        interferer = pools.interferers[spec.interferer_id]
        offset = int(rng.integers(interferer.samples.size))
        rolled = AudioClip(
            fit_to_length(interferer.samples, out.samples.size, offset),
            out.sample_rate_hz,
        )
        out, scale = mix_at_snr(
            out, rolled, spec.snr_db_interferer, reference_power=clean_power
        )
        prov["interferer_offset"] = offset
        prov["interferer_scale"] = scale

    if spec.noise_id is not None:
        if spec.noise_id not in pools.noises:
            raise DataError(f"background noise {spec.noise_id!r} not in noise pool")
        noise = pools.noises[spec.noise_id]
        offset = int(rng.integers(noise.samples.size))
        rolled = AudioClip(
            fit_to_length(noise.samples, out.samples.size, offset),
            out.sample_rate_hz,
        )
        out, scale = mix_at_snr(
            out, rolled, spec.snr_db_background, reference_power=clean_power
        )
        prov["noise_offset"] = offset
        prov["noise_scale"] = scale

    peak = float(np.max(np.abs(out.samples)))
    if peak > 1.0:
        # Uniform rescale preserves all power ratios, so the recorded
        # SNRs still hold after the clip guard.
        factor = CLIP_PEAK / peak
        out = AudioClip(out.samples * factor, out.sample_rate_hz)
        prov["clip_rescale"] = factor

    return out, prov


def make_synthetic_ir(
    sample_rate_hz: int = 16000,
    duration_s: float = 0.2,
    rt60_s: float = 0.15,
    seed: int = 0,
) -> ImpulseResponse:
    """Exponentially decaying white noise with the given RT60.

    The amplitude envelope drops 60 dB over rt60_s; the direct-path tap
    is pinned to 1.0 so short IRs stay roughly energy-preserving.
    """
    if duration_s <= 0 or rt60_s <= 0:
        raise ValueError("duration_s and rt60_s must be positive")
    rng = np.random.default_rng(seed)
    n = max(2, int(round(duration_s * sample_rate_hz)))
    t = np.arange(n) / sample_rate_hz
    envelope = 10.0 ** (-3.0 * t / rt60_s)
    tail = rng.standard_normal(n) * envelope * 0.3
    tail[0] = 1.0
    return ImpulseResponse(tail, sample_rate_hz)


def write_wav(path, clip: AudioClip) -> None:
    """Write mono 16-bit PCM."""
    x = np.clip(clip.samples, -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype(np.int16)
    wavfile.write(str(path), clip.sample_rate_hz, pcm)


def read_wav(path, expected_rate_hz: int = 16000, allow_resample: bool = False) -> AudioClip:
    """Read a mono WAV as float64 in [-1, 1].

    Files at other rates are rejected unless `allow_resample` is set, in
    which case they are resampled by nearest neighbor.
    """
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:  # malformed container
        raise DataError(f"cannot read WAV {path}: {exc}") from exc
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio, got shape {data.shape}")
    if np.issubdtype(data.dtype, np.integer):
        samples = data.astype(np.float64) / float(np.iinfo(data.dtype).max + 1)
    else:
        samples = data.astype(np.float64)
    if rate != expected_rate_hz:
        if not allow_resample:
            raise DataError(
                f"{path}: sample rate {rate} Hz, expected {expected_rate_hz} Hz "
                "(enable resampling in the audio config to accept it)"
            )
        idx = np.floor(
            np.arange(int(round(samples.size * expected_rate_hz / rate)))
            * rate
            / expected_rate_hz
        ).astype(np.int64)
        samples = samples[np.clip(idx, 0, samples.size - 1)]
        rate = expected_rate_hz
    return AudioClip(samples, rate)


def load_pools(
    ir_dir=None, interferer_dir=None, noise_dir=None, sample_rate_hz: int = 16000
) -> NoisePools:
    """Build pools from directories of WAV files, keyed by file stem."""
    from pathlib import Path

    pools = NoisePools()
    if ir_dir is not None:
        for p in sorted(Path(ir_dir).glob("*.wav")):
            clip = read_wav(p, sample_rate_hz)
            pools.irs[p.stem] = ImpulseResponse(clip.samples, clip.sample_rate_hz)
    if interferer_dir is not None:
        for p in sorted(Path(interferer_dir).glob("*.wav")):
            pools.interferers[p.stem] = read_wav(p, sample_rate_hz)
    if noise_dir is not None:
        for p in sorted(Path(noise_dir).glob("*.wav")):
            pools.noises[p.stem] = read_wav(p, sample_rate_hz)
    return pools


def provenance_json(prov: dict) -> str:
    return json.dumps(prov, sort_keys=True)
