"""Mouth-ROI sequence encoder.

Pre-cropped grayscale ROI frames go through a 3-D convolution stem, a
small stack of channel-shuffle separable-conv blocks applied per frame,
and a dilated temporal convolutional network; the time axis is then
linearly resampled onto a fixed number of steps so downstream consumers
always see a (V, C_lip) feature map regardless of the clip length.

All activations are smooth (tanh-form GELU) so parameter gradients are
finite-difference checkable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DataError

_NORM_EPS = 1e-8


@dataclass(eq=False)
class RoiSequence:
    """M grayscale frames, all the same H x W.

    Raw sequences hold values in [0, 1]; after `preprocess_rois` the
    frames are mean/std normalized and `normalized` is set.
    """

    frames: np.ndarray
    frame_rate_hz: float = 25.0
    normalized: bool = False

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[0] < 1:
            raise ValueError("RoiSequence needs frames shaped (M, H, W) with M >= 1")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("ROI frames must be finite")
        if self.frame_rate_hz <= 0:
            raise ValueError("frame_rate_hz must be positive")
        if not self.normalized:
            if self.frames.min() < 0.0 or self.frames.max() > 1.0:
                raise ValueError("raw ROI frames must lie in [0, 1]")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class LipEncoderConfig:
    stem_channels: int = 16
    stem_kernel: tuple[int, int, int] = (3, 5, 5)
    # (out_channels, spatial_stride) per channel-shuffle block
    blocks: tuple[tuple[int, int], ...] = ((32, 2), (32, 1))
    # (out_channels, dilation) per TCN residual block
    tcn: tuple[tuple[int, int], ...] = ((64, 1), (64, 2))
    v_steps: int = 16
    c_lip: int = 64

    def __post_init__(self):
        if self.tcn[-1][0] != self.c_lip:
            raise ValueError("last TCN block must output c_lip channels")
        for ch, stride in self.blocks:
            if ch % 2 != 0:
                raise ValueError("block channels must be even (they are split in half)")
            if stride not in (1, 2):
                raise ValueError("block stride must be 1 or 2")
        if self.v_steps < 1 or self.c_lip < 1 or self.stem_channels < 1:
            raise ValueError("encoder dimensions must be positive")


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    s = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-s, s, size=shape)


def init_lip_params(cfg: LipEncoderConfig, rng: np.random.Generator, prefix: str = "lip.") -> dict:
    """Seeded uniform fan-in initialization, in a fixed tensor order."""
    p: dict[str, np.ndarray] = {}
    kt, kh, kw = cfg.stem_kernel
    p[prefix + "stem.w"] = _uniform(rng, (cfg.stem_channels, 1, kt, kh, kw), kt * kh * kw)
    p[prefix + "stem.b"] = np.zeros(cfg.stem_channels)

    c_in = cfg.stem_channels
    for i, (c_out, stride) in enumerate(cfg.blocks):
        base = f"{prefix}block{i}."
        half = c_out // 2
        if stride == 2:
            p[base + "br1.dw"] = _uniform(rng, (c_in, 3, 3), 9)
            p[base + "br1.dwb"] = np.zeros(c_in)
            p[base + "br1.pw"] = _uniform(rng, (half, c_in, 1, 1), c_in)
            p[base + "br1.pwb"] = np.zeros(half)
            p[base + "br2.pw1"] = _uniform(rng, (half, c_in, 1, 1), c_in)
            p[base + "br2.pw1b"] = np.zeros(half)
        else:
            if c_in != c_out:
                raise ValueError("stride-1 blocks keep their channel count")
            p[base + "br2.pw1"] = _uniform(rng, (half, half, 1, 1), half)
            p[base + "br2.pw1b"] = np.zeros(half)
        p[base + "br2.dw"] = _uniform(rng, (half, 3, 3), 9)
        p[base + "br2.dwb"] = np.zeros(half)
        p[base + "br2.pw2"] = _uniform(rng, (half, half, 1, 1), half)
        p[base + "br2.pw2b"] = np.zeros(half)
        c_in = c_out

    for i, (c_out, dilation) in enumerate(cfg.tcn):
        base = f"{prefix}tcn{i}."
        p[base + "w1"] = _uniform(rng, (c_out, c_in, 3), c_in * 3)
        p[base + "b1"] = np.zeros(c_out)
        p[base + "w2"] = _uniform(rng, (c_out, c_out, 3), c_out * 3)
        p[base + "b2"] = np.zeros(c_out)
        if c_in != c_out:
            p[base + "skip"] = _uniform(rng, (c_out, c_in, 1), c_in)
        c_in = c_out
    return p


# ----------------------------------------------------------------------
# Convolution primitives built on flat gathers. Index arrays depend only
# on shapes, so they are cached.
# ----------------------------------------------------------------------

_INDEX_CACHE: dict[tuple, np.ndarray] = {}


def clear_index_cache() -> None:
    _INDEX_CACHE.clear()


def _conv2d_indices(b, c, h, w, kh, kw, stride) -> np.ndarray:
    key = ("c2", b, c, h, w, kh, kw, stride)
    idx = _INDEX_CACHE.get(key)
    if idx is None:
        oh = (h - kh) // stride + 1
        ow = (w - kw) // stride + 1
        oi, oj = np.meshgrid(np.arange(oh) * stride, np.arange(ow) * stride, indexing="ij")
        u, v = np.meshgrid(np.arange(kh), np.arange(kw), indexing="ij")
        spatial = (
            (oi.reshape(-1)[None, :] + u.reshape(-1)[:, None]) * w
            + oj.reshape(-1)[None, :]
            + v.reshape(-1)[:, None]
        )  # (kh*kw, oh*ow)
        chan = (np.arange(c) * h * w)[:, None, None] + spatial[None]
        inner = chan.reshape(c * kh * kw, -1)
        idx = (np.arange(b) * c * h * w)[:, None, None] + inner[None]
        _INDEX_CACHE[key] = idx
    return idx


def _conv2d_out_hw(h, w, kh, kw, stride):
    return (h - kh) // stride + 1, (w - kw) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """x: (B, C, H, W); w: (O, C, kh, kw)."""
    bsz, c, h, ww = x.shape
    o, _, kh, kw = w.shape
    if pad:
        x = ad.pad_const(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        h, ww = h + 2 * pad, ww + 2 * pad
    idx = _conv2d_indices(bsz, c, h, ww, kh, kw, stride)
    cols = ad.take_flat(x, idx)  # (B, C*kh*kw, P)
    wmat = ad.reshape(w, (o, c * kh * kw))
    y = ad.matmul(wmat, cols)  # (B, O, P)
    y = ad.add(y, ad.reshape(b, (1, o, 1)))
    oh, ow = _conv2d_out_hw(h, ww, kh, kw, stride)
    return ad.reshape(y, (bsz, o, oh, ow))


def depthwise2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """x: (B, C, H, W); w: (C, kh, kw); one filter per channel."""
    bsz, c, h, ww = x.shape
    _, kh, kw = w.shape
    if pad:
        x = ad.pad_const(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        h, ww = h + 2 * pad, ww + 2 * pad
    idx = _conv2d_indices(bsz, c, h, ww, kh, kw, stride)
    oh, ow = _conv2d_out_hw(h, ww, kh, kw, stride)
    cols = ad.take_flat(x, idx)  # (B, C*kk, P)
    cols = ad.reshape(cols, (bsz, c, kh * kw, oh * ow))
    y = ad.sum_(ad.mul(cols, ad.reshape(w, (1, c, kh * kw, 1))), axis=2)
    y = ad.add(y, ad.reshape(b, (1, c, 1)))
    return ad.reshape(y, (bsz, c, oh, ow))


def _conv1d_indices(b, c, t, k, dilation) -> np.ndarray:
    key = ("c1", b, c, t, k, dilation)
    idx = _INDEX_CACHE.get(key)
    if idx is None:
        span = dilation * (k - 1)
        ot = t - span
        pos = np.arange(ot)[None, :] + (np.arange(k) * dilation)[:, None]  # (k, ot)
        chan = (np.arange(c) * t)[:, None, None] + pos[None]
        inner = chan.reshape(c * k, -1)
        idx = (np.arange(b) * c * t)[:, None, None] + inner[None]
        _INDEX_CACHE[key] = idx
    return idx


def conv1d(x: Tensor, w: Tensor, b: Tensor | None, dilation: int = 1, pad: int = 0) -> Tensor:
    """x: (B, C, T); w: (O, C, k); symmetric zero padding."""
    bsz, c, t = x.shape
    o, _, k = w.shape
    if pad:
        x = ad.pad_const(x, ((0, 0), (0, 0), (pad, pad)))
        t = t + 2 * pad
    idx = _conv1d_indices(bsz, c, t, k, dilation)
    cols = ad.take_flat(x, idx)  # (B, C*k, OT)
    y = ad.matmul(ad.reshape(w, (o, c * k)), cols)
    if b is not None:
        y = ad.add(y, ad.reshape(b, (1, o, 1)))
    return y  # (B, O, OT)


def _conv3d_indices(b, mt, h, w, kt, kh, kw, stride_hw) -> np.ndarray:
    key = ("c3", b, mt, h, w, kt, kh, kw, stride_hw)
    idx = _INDEX_CACHE.get(key)
    if idx is None:
        om = mt - kt + 1
        oh = (h - kh) // stride_hw + 1
        ow = (w - kw) // stride_hw + 1
        m0, i0, j0 = np.meshgrid(
            np.arange(om), np.arange(oh) * stride_hw, np.arange(ow) * stride_hw, indexing="ij"
        )
        ut, uh, uw = np.meshgrid(np.arange(kt), np.arange(kh), np.arange(kw), indexing="ij")
        out_pos = ((m0 * h + i0) * w + j0).reshape(-1)  # (P,)
        tap = ((ut * h + uh) * w + uw).reshape(-1)  # (K,)
        inner = tap[:, None] + out_pos[None, :]
        idx = (np.arange(b) * mt * h * w)[:, None, None] + inner[None]
        _INDEX_CACHE[key] = idx
    return idx


def conv3d_stem(x: np.ndarray, w: Tensor, b: Tensor, stride_hw: int = 2) -> Tensor:
    """Single-input-channel 3-D convolution over (B, M, H, W) frames.

    Time is edge-replicate padded to keep M steps (this is also what
    makes clips shorter than the temporal kernel legal); space is
    zero-padded and strided.
    """
    o, _, kt, kh, kw = w.shape
    pt, ph, pw_ = kt // 2, kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (pt, pt), (0, 0), (0, 0)), mode="edge")
    xp = np.pad(xp, ((0, 0), (0, 0), (ph, ph), (pw_, pw_)))
    bsz, mt, h, ww = xp.shape
    idx = _conv3d_indices(bsz, mt, h, ww, kt, kh, kw, stride_hw)
    cols = ad.take_flat(Tensor(xp), idx)  # (B, K, P)
    y = ad.matmul(ad.reshape(w, (o, kt * kh * kw)), cols)  # (B, O, P)
    om = mt - kt + 1
    oh = (h - kh) // stride_hw + 1
    ow = (ww - kw) // stride_hw + 1
    y = ad.add(y, ad.reshape(b, (1, o, 1)))
    return ad.reshape(y, (bsz, o, om, oh, ow))


def channel_shuffle(x: Tensor, groups: int = 2) -> Tensor:
    bsz, c, h, w = x.shape
    y = ad.reshape(x, (bsz, groups, c // groups, h, w))
    y = ad.transpose(y, (0, 2, 1, 3, 4))
    return ad.reshape(y, (bsz, c, h, w))


def _shuffle_block(x: Tensor, p: dict, base: str, stride: int) -> Tensor:
    if stride == 2:
        br1 = depthwise2d(x, p[base + "br1.dw"], p[base + "br1.dwb"], stride=2, pad=1)
        br1 = ad.gelu(conv2d(br1, p[base + "br1.pw"], p[base + "br1.pwb"]))
        br2 = ad.gelu(conv2d(x, p[base + "br2.pw1"], p[base + "br2.pw1b"]))
        br2 = depthwise2d(br2, p[base + "br2.dw"], p[base + "br2.dwb"], stride=2, pad=1)
        br2 = ad.gelu(conv2d(br2, p[base + "br2.pw2"], p[base + "br2.pw2b"]))
    else:
        c = x.shape[1]
        half = c // 2
        br1 = ad.index(x, (slice(None), slice(0, half)))
        br2 = ad.index(x, (slice(None), slice(half, c)))
        br2 = ad.gelu(conv2d(br2, p[base + "br2.pw1"], p[base + "br2.pw1b"]))
        br2 = depthwise2d(br2, p[base + "br2.dw"], p[base + "br2.dwb"], stride=1, pad=1)
        br2 = ad.gelu(conv2d(br2, p[base + "br2.pw2"], p[base + "br2.pw2b"]))
    return channel_shuffle(ad.concat([br1, br2], axis=1))


def _tcn_block(x: Tensor, p: dict, base: str, dilation: int) -> Tensor:
    h = ad.gelu(conv1d(x, p[base + "w1"], p[base + "b1"], dilation=dilation, pad=dilation))
    h = conv1d(h, p[base + "w2"], p[base + "b2"], dilation=dilation, pad=dilation)
    if base + "skip" in p:
        skip = conv1d(x, p[base + "skip"], None)
    else:
        skip = x
    return ad.gelu(ad.add(h, skip))


def resample_plan(m: int, v: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Linear-interpolation gather plan from m steps onto v steps."""
    if m < 1 or v < 1:
        raise ValueError("sequence lengths must be >= 1")
    if m == 1:
        return np.zeros(v, np.int64), np.zeros(v, np.int64), np.zeros(v)
    if m == v:  # exact identity, no interpolation error
        idx = np.arange(m, dtype=np.int64)
        return idx, idx, np.zeros(v)
    t = np.linspace(0.0, m - 1.0, v)
    i0 = np.floor(t).astype(np.int64)
    i0 = np.minimum(i0, m - 2)
    w = t - i0
    return i0, i0 + 1, w


def resample_temporal(seq: np.ndarray, v: int) -> np.ndarray:
    """Linear interpolation of (M, D) onto (v, D) equispaced steps.

    Computed as x0 + w*(x1 - x0) so constant sequences are preserved
    exactly (the difference term vanishes bitwise).
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim == 1:
        seq = seq[:, None]
    i0, i1, w = resample_plan(seq.shape[0], v)
    return seq[i0] + w[:, None] * (seq[i1] - seq[i0])


def _resample_graph(x: Tensor, v: int) -> Tensor:
    m = x.shape[1]
    i0, i1, w = resample_plan(m, v)
    g0 = ad.take_axis(x, i0, axis=1)
    g1 = ad.take_axis(x, i1, axis=1)
    wcol = w.reshape(1, v, 1)
    return ad.add(g0, ad.mul(ad.add(g1, ad.mul(g0, -1.0)), wcol))


# ----------------------------------------------------------------------


def bilinear_resize(img: np.ndarray, target_hw: tuple[int, int]) -> np.ndarray:
    h, w = img.shape
    th, tw = target_hw
    if (h, w) == (th, tw):
        return img.astype(np.float64, copy=True)
    yi = (np.arange(th) + 0.5) * h / th - 0.5
    xi = (np.arange(tw) + 0.5) * w / tw - 0.5
    yi = np.clip(yi, 0.0, h - 1.0)
    xi = np.clip(xi, 0.0, w - 1.0)
    y0 = np.minimum(np.floor(yi).astype(np.int64), h - 2) if h > 1 else np.zeros(th, np.int64)
    x0 = np.minimum(np.floor(xi).astype(np.int64), w - 2) if w > 1 else np.zeros(tw, np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (yi - y0)[:, None]
    wx = (xi - x0)[None, :]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def preprocess_rois(frames, target_hw: tuple[int, int] = (88, 88)) -> RoiSequence:
    """Resize pre-cropped frames and apply per-sequence mean/std
    normalization (cropping itself happens upstream)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[0] < 1:
        raise ValueError("expected frames shaped (M, H, W) with M >= 1")
    resized = np.stack([bilinear_resize(f, target_hw) for f in frames])
    mu = resized.mean()
    sd = resized.std()
    return RoiSequence((resized - mu) / (sd + _NORM_EPS), normalized=True)


def encode_batch_graph(params: dict, frames: np.ndarray, cfg: LipEncoderConfig) -> Tensor:
    """Forward the encoder over a batch of equal-length clips.

    frames: (B, M, H, W) preprocessed ROIs -> (B, v_steps, c_lip).
    """
    bsz, m, _, _ = frames.shape
    x = ad.gelu(conv3d_stem(frames, params["lip.stem.w"], params["lip.stem.b"]))
    _, c0, _, h2, w2 = x.shape
    x = ad.transpose(x, (0, 2, 1, 3, 4))  # (B, M, C, H, W)
    x = ad.reshape(x, (bsz * m, c0, h2, w2))
    for i, (c_out, stride) in enumerate(cfg.blocks):
        x = _shuffle_block(x, params, f"lip.block{i}.", stride)
    x = ad.mean(x, axis=(-2, -1))  # (B*M, C)
    x = ad.reshape(x, (bsz, m, x.shape[-1]))
    x = ad.transpose(x, (0, 2, 1))  # (B, C, M)
    for i, (c_out, dilation) in enumerate(cfg.tcn):
        x = _tcn_block(x, params, f"lip.tcn{i}.", dilation)
    x = ad.transpose(x, (0, 2, 1))  # (B, M, c_lip)
    return _resample_graph(x, cfg.v_steps)


def encode(rois: RoiSequence, params: dict, cfg: LipEncoderConfig) -> np.ndarray:
    """Encode one ROI sequence into a (v_steps, c_lip) feature map."""
    tensors = {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in params.items()}
    out = encode_batch_graph(tensors, rois.frames[None], cfg)
    return out.data[0]


# ----------------------------------------------------------------------
# ROI file formats: a raw tensor file (u32 M, H, W header then row-major
# u8 bytes) or a directory of 8-bit grayscale PNG frames.
# ----------------------------------------------------------------------


def write_rois_raw(path, frames: np.ndarray) -> None:
    frames = np.asarray(frames)
    if frames.ndim != 3:
        raise ValueError("expected (M, H, W) frames")
    data = np.clip(np.round(frames * 255.0), 0, 255).astype(np.uint8)
    m, h, w = data.shape
    header = np.array([m, h, w], dtype="<u4").tobytes()
    Path(path).write_bytes(header + data.tobytes())


def read_rois_raw(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise DataError(f"{path}: truncated ROI file")
    m, h, w = np.frombuffer(raw[:12], dtype="<u4")
    expected = 12 + int(m) * int(h) * int(w)
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {m}x{h}x{w}, got {len(raw)}")
    data = np.frombuffer(raw[12:], dtype=np.uint8).reshape(int(m), int(h), int(w))
    return data.astype(np.float64) / 255.0


def write_rois_png(dirpath, frames: np.ndarray) -> None:
    from PIL import Image

    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    data = np.clip(np.round(np.asarray(frames) * 255.0), 0, 255).astype(np.uint8)
    for i, frame in enumerate(data):
        Image.fromarray(frame, mode="L").save(d / f"{i:04d}.png")


def read_rois_png(dirpath) -> np.ndarray:
    from PIL import Image

    paths = sorted(Path(dirpath).glob("*.png"))
    if not paths:
        raise DataError(f"{dirpath}: no PNG frames found")
    frames = [np.asarray(Image.open(p).convert("L"), dtype=np.float64) / 255.0 for p in paths]
    return np.stack(frames)


def read_rois(path) -> np.ndarray:
    """Dispatch on the manifest reference: raw file or PNG directory."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"ROI reference does not resolve: {path}")
    if p.is_dir():
        return read_rois_png(p)
    return read_rois_raw(p)
