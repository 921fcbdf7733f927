"""Stage two: parallel wideband/fullband enhancement.

The wideband branch (bins 0..159, 0-8 kHz) runs a magnitude-gain head in
[0, 1] plus additive complex-residual heads over a shared causal trunk.
The fullband branch predicts per-ERB-band gains in (0, 1) from band
log-energies with a small causal UNet and scales the spectrum. A linear
crossfade merges the branches back into one 481-bin spectrogram.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Tensor
from .dsp import ComplexSpectrogram, StftConfig, stft
from .filterbanks import ErbBank, erb_split
from .losses import (LossWeights, compressed_complex_loss, compressed_mag_loss,
                     enhancement_total_loss)
from .restoration import LEAKY_SLOPE, NumericalError, TcnLayer


@dataclass(frozen=True)
class EnhancementConfig:
    wideband_cutoff_bin: int = 160
    residual_orders: int = 2
    crossfade_bins: int = 8
    base_channels: int = 8
    unet_channels: int = 8
    tcn_layers: int = 2
    tcn_hidden: int = 32

    def __post_init__(self):
        if not 0 < self.wideband_cutoff_bin <= 480:
            raise ValueError("wideband cutoff must lie in (0, 480]")
        if self.residual_orders < 1:
            raise ValueError("need at least one residual order")
        if self.crossfade_bins < 1 or self.crossfade_bins > self.wideband_cutoff_bin:
            raise ValueError("bad crossfade width")


class _Head(nn.Module):
    """Two frequency-doubling transposed convs shared-trunk -> one output."""

    def __init__(self, rng, in_ch, out_ch, dtype=np.float32):
        self.up1 = nn.ConvTranspose2d(rng, in_ch, in_ch, (2, 3), (1, 2), dtype)
        self.up2 = nn.ConvTranspose2d(rng, in_ch, out_ch, (2, 3), (1, 2), dtype)

    def forward(self, x):
        h = ag.leaky_relu(self.up1.forward(x), LEAKY_SLOPE)
        return self.up2.forward(h)


class WidebandNet(nn.Module):
    """Gain head (hard sigmoid, reaches 0 and 1 exactly) + complex residuals."""

    def __init__(self, cfg: EnhancementConfig | None = None, seed: int = 0,
                 dtype=np.float32):
        cfg = cfg or EnhancementConfig()
        if cfg.wideband_cutoff_bin % 4:
            raise ValueError("wideband trunk needs a cutoff divisible by 4")
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        c = cfg.base_channels
        self.enc1 = nn.Conv2d(rng, 2, c, (2, 3), (1, 2), dtype)
        self.enc2 = nn.Conv2d(rng, c, c, (2, 3), (1, 2), dtype)
        tcn_ch = c * (cfg.wideband_cutoff_bin // 4)
        self.tcn = [TcnLayer(rng, tcn_ch, cfg.tcn_hidden, 3, 2 ** l, dtype)
                    for l in range(cfg.tcn_layers)]
        self.gain_head = _Head(rng, c, 1, dtype)
        self.residual_heads = [_Head(rng, c, 2, dtype)
                               for _ in range(cfg.residual_orders)]
        for head in self.residual_heads:
            head.up2.w.data[:] = 0.0  # start as a pure magnitude-gain model
            head.up2.b.data[:] = 0.0

    @property
    def receptive_frames(self) -> int:
        cfg = self.cfg
        tcn = sum(2 * 2 ** l for l in range(cfg.tcn_layers))
        return 2 + tcn + 2 + 1  # encoder convs + TCN + head convs + current

    def forward(self, re: Tensor, im: Tensor):
        """(T, 160) complex pair -> enhanced (T, 160) pair."""
        t, f = re.shape
        x = ag.concat([ag.reshape(re, (1, 1, t, f)), ag.reshape(im, (1, 1, t, f))], axis=1)
        h = ag.leaky_relu(self.enc1.forward(x), LEAKY_SLOPE)
        h = ag.leaky_relu(self.enc2.forward(h), LEAKY_SLOPE)
        n, c, _, fb = h.shape
        z = ag.reshape(ag.transpose(h, (0, 1, 3, 2)), (n, c * fb, t))
        for layer in self.tcn:
            z = layer.forward(z)
        trunk = ag.transpose(ag.reshape(z, (n, c, fb, t)), (0, 1, 3, 2))
        gain = ag.hard_sigmoid(ag.reshape(self.gain_head.forward(trunk), (t, f)))
        out_re = re * gain
        out_im = im * gain
        for head in self.residual_heads:
            res = head.forward(trunk)
            out_re = out_re + ag.reshape(ag.slice_axis(res, 1, 0, 1), (t, f))
            out_im = out_im + ag.reshape(ag.slice_axis(res, 1, 1, 2), (t, f))
        return out_re, out_im


class BandGainNet(nn.Module):
    """Causal UNet over the 32 ERB bands, sigmoid gains in (0, 1)."""

    def __init__(self, cfg: EnhancementConfig | None = None, seed: int = 0,
                 dtype=np.float32, n_bands: int = 32):
        cfg = cfg or EnhancementConfig()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.n_bands = n_bands
        c = cfg.unet_channels
        self.enc1 = nn.Conv2d(rng, 1, c, (2, 3), (1, 2), dtype)
        self.enc2 = nn.Conv2d(rng, c, 2 * c, (2, 3), (1, 2), dtype)
        self.mid = nn.Conv2d(rng, 2 * c, 2 * c, (2, 3), (1, 1), dtype)
        self.dec1 = nn.ConvTranspose2d(rng, 4 * c, c, (2, 3), (1, 2), dtype)
        self.dec2 = nn.ConvTranspose2d(rng, 2 * c, 1, (2, 3), (1, 2), dtype)

    @property
    def receptive_frames(self) -> int:
        return 5 + 1  # five kt=2 convs plus the current frame

    def forward(self, feats: Tensor) -> Tensor:
        """(T, 32) band log-energies -> (T, 32) gains strictly inside (0, 1)."""
        t, nb = feats.shape
        x = ag.reshape(feats, (1, 1, t, nb))
        e1 = ag.leaky_relu(self.enc1.forward(x), LEAKY_SLOPE)
        e2 = ag.leaky_relu(self.enc2.forward(e1), LEAKY_SLOPE)
        m = ag.leaky_relu(self.mid.forward(e2), LEAKY_SLOPE)
        d1 = ag.leaky_relu(self.dec1.forward(ag.concat([m, e2], axis=1)), LEAKY_SLOPE)
        d2 = self.dec2.forward(ag.concat([d1, e1], axis=1))
        return ag.sigmoid(ag.reshape(d2, (t, nb)))


@dataclass
class EnhancementModels:
    wideband: WidebandNet
    band_gain: BandGainNet
    erb: ErbBank
    cfg: EnhancementConfig

    @classmethod
    def build(cls, cfg: EnhancementConfig | None = None, seed: int = 0):
        cfg = cfg or EnhancementConfig()
        return cls(WidebandNet(cfg, seed=seed), BandGainNet(cfg, seed=seed + 1),
                   ErbBank(), cfg)

    def params(self):
        out = {}
        for k, v in self.wideband.params().items():
            out[f"wideband.{k}"] = v
        for k, v in self.band_gain.params().items():
            out[f"band_gain.{k}"] = v
        return out

    def param_count(self):
        return self.wideband.param_count() + self.band_gain.param_count()

    @property
    def receptive_frames(self) -> int:
        return max(self.wideband.receptive_frames, self.band_gain.receptive_frames)


def crossfade_weights(cfg: EnhancementConfig) -> np.ndarray:
    """Wideband weight per crossfade bin: exactly 1 at the region start,
    reaching 0 at the first fullband-only bin."""
    cf = cfg.crossfade_bins
    return 1.0 - np.arange(cf) / cf


def band_merge(wideband: np.ndarray, fullband: np.ndarray,
               cfg: EnhancementConfig | None = None) -> np.ndarray:
    """Merge branch outputs: wideband below the seam, fullband above,
    linear crossfade across cfg.crossfade_bins."""
    cfg = cfg or EnhancementConfig()
    cut, cf = cfg.wideband_cutoff_bin, cfg.crossfade_bins
    wideband = np.asarray(wideband)
    fullband = np.asarray(fullband)
    if wideband.ndim != 2 or wideband.shape[1] != cut:
        raise ValueError(f"wideband branch must be frames x {cut}")
    if fullband.ndim != 2 or fullband.shape[1] != 481 or fullband.shape[0] != wideband.shape[0]:
        raise ValueError("fullband branch must be frames x 481 with matching frames")
    w = crossfade_weights(cfg)
    out = fullband.copy()
    out[:, :cut - cf] = wideband[:, :cut - cf]
    # fb + w*(wb - fb): bit-exact passthrough when the branches agree
    out[:, cut - cf:cut] += w[None, :] * (wideband[:, cut - cf:] - fullband[:, cut - cf:cut])
    return out


def _merge_graph(wb_re, wb_im, fb_re, fb_im, cfg: EnhancementConfig):
    cut, cf = cfg.wideband_cutoff_bin, cfg.crossfade_bins
    w = crossfade_weights(cfg)

    def one(wb, fb):
        wconst = Tensor(w.astype(wb.dtype))
        lo = ag.slice_axis(wb, 1, 0, cut - cf)
        fb_mid = ag.slice_axis(fb, 1, cut - cf, cut)
        mid = fb_mid + (ag.slice_axis(wb, 1, cut - cf, cut) - fb_mid) * wconst
        hi = ag.slice_axis(fb, 1, cut, 481)
        return ag.concat([lo, mid, hi], axis=1)

    return one(wb_re, fb_re), one(wb_im, fb_im)


def enhance_graph(models: EnhancementModels, spec_data: np.ndarray,
                  dtype=np.float32):
    """Differentiable enhancement of a (T, 481) complex spectrogram.

    Returns the merged (real, imag) tensor pair.
    """
    cut = models.cfg.wideband_cutoff_bin
    re = np.ascontiguousarray(spec_data.real, dtype=dtype)
    im = np.ascontiguousarray(spec_data.imag, dtype=dtype)
    wb_re, wb_im = models.wideband.forward(Tensor(re[:, :cut]), Tensor(im[:, :cut]))
    feats = erb_split(spec_data, models.erb).astype(dtype)
    gains = models.band_gain.forward(Tensor(feats))
    per_bin = ag.matmul(gains, Tensor(models.erb.merge_matrix.T.astype(dtype)))
    fb_re = Tensor(re) * per_bin
    fb_im = Tensor(im) * per_bin
    return _merge_graph(wb_re, wb_im, fb_re, fb_im, models.cfg)


def enhance_forward(models: EnhancementModels, spec: ComplexSpectrogram) -> ComplexSpectrogram:
    """Inference-path enhancement (no graph)."""
    with ag.no_grad():
        out_re, out_im = enhance_graph(models, spec.data)
    data = out_re.data.astype(np.float64) + 1j * out_im.data.astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise NumericalError("enhancement produced non-finite values")
    return ComplexSpectrogram(data)


def enhance_train_step(models: EnhancementModels, batch, opt,
                       stft_cfg: StftConfig | None = None,
                       weights: LossWeights | None = None):
    """One AdamW update of both sub-networks on (clean, degraded) pairs.

    'degraded' is expected to be restoration-stage output audio; the loss
    compares the merged enhanced spectrum against the clean spectrum.
    """
    from .dsp import Waveform

    stft_cfg = stft_cfg or StftConfig()
    weights = weights or LossWeights()
    opt.zero_grad()
    total = None
    parts_acc = {}
    for clean, degraded in batch:
        clean = np.asarray(clean, dtype=np.float64)
        degraded = np.asarray(degraded, dtype=np.float64)
        deg_spec = stft(Waveform(degraded), stft_cfg)
        clean_spec = stft(Waveform(clean[:len(degraded)]), stft_cfg)
        frames = min(deg_spec.frames, clean_spec.frames)
        out_re, out_im = enhance_graph(models, deg_spec.data[:frames])
        ref = clean_spec.data[:frames]
        ref_ri = (Tensor(ref.real.astype(out_re.dtype)),
                  Tensor(ref.imag.astype(out_re.dtype)))
        cplx = compressed_complex_loss(ref_ri, (out_re, out_im))
        mag = compressed_mag_loss(ref_ri, (out_re, out_im))
        loss, parts = enhancement_total_loss(cplx, mag, weights)
        total = loss if total is None else total + loss
        for k, v in parts.items():
            parts_acc[k] = parts_acc.get(k, 0.0) + v / len(batch)
    total = total * (1.0 / len(batch))
    val = total.item()
    if not np.isfinite(val):
        raise NumericalError("enhancement loss is non-finite; step aborted")
    total.backward()
    opt.step()
    return val, parts_acc
