"""Stage one: spectrum-mapping GAN restoration.

The generator maps the 3-way-split complex spectrogram through a causal
encoder / dense block / TCN / decoder with skip concatenations. Two
discriminator families score the result: multi-resolution magnitude
spectrograms of the resynthesized waveform, and per-band spectra of the
predicted spectrogram.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Tensor
from .dsp import ComplexSpectrogram, StftConfig, istft, stft
from .filterbanks import SPLIT_BINS, PqmfBank, merge3, split3
from .losses import (LossWeights, MultiResConfig, feature_match_loss,
                     generator_total_loss, lsgan_d_loss, lsgan_g_loss,
                     mrstft_loss, stft_mag, subband_mrstft_loss)


class NumericalError(RuntimeError):
    """Non-finite values where the contract requires finite ones."""


LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class GeneratorConfig:
    base_channels: int = 16
    kernel: tuple = (2, 3)
    n_strided: int = 4          # first conv + 3 more, each halving frequency
    dense_layers: int = 4
    tcn_blocks: int = 2
    tcn_layers: int = 4         # dilations 1, 2, 4, 8
    tcn_hidden: int = 64
    tcn_kernel: int = 3
    in_channels: int = 6
    in_freq: int = SPLIT_BINS   # shrink for tiny test models

    def __post_init__(self):
        if self.in_freq % (2 ** self.n_strided):
            raise ValueError("in_freq must be divisible by the total stride")

    @property
    def bottleneck_freq(self) -> int:
        return self.in_freq // (2 ** self.n_strided)

    @property
    def tcn_channels(self) -> int:
        return self.base_channels * self.bottleneck_freq


@dataclass(frozen=True)
class DiscriminatorConfig:
    channels: tuple = (16, 32, 64, 64, 64, 32, 1)
    strides: tuple = ((1, 1), (2, 2), (2, 2), (2, 2), (2, 2), (1, 1), (1, 1))
    kernel: tuple = (3, 3)

    def __post_init__(self):
        if len(self.channels) != 7 or len(self.strides) != 7:
            raise ValueError("discriminators use exactly 7 conv layers")
        if self.channels[-1] != 1:
            raise ValueError("final layer must emit a single score channel")


class DenseBlock(nn.Module):
    """Stack of convs, each fed the concatenation of all previous outputs."""

    def __init__(self, rng, in_ch, growth, kernel=(2, 3), n_layers=4, dtype=np.float32):
        self.convs = [nn.Conv2d(rng, in_ch + i * growth, growth, kernel, (1, 1), dtype)
                      for i in range(n_layers)]

    def forward(self, x):
        feats = [x]
        out = x
        for conv in self.convs:
            inp = feats[0] if len(feats) == 1 else ag.concat(feats, axis=1)
            out = ag.leaky_relu(conv.forward(inp), LEAKY_SLOPE)
            feats.append(out)
        return out


class TcnLayer(nn.Module):
    def __init__(self, rng, channels, hidden, kernel, dilation, dtype=np.float32):
        self.dilation = dilation
        self.dilated = nn.CausalConv1d(rng, channels, hidden, kernel, dilation, dtype)
        self.pointwise = nn.CausalConv1d(rng, hidden, channels, 1, 1, dtype)

    def forward(self, x):
        h = ag.leaky_relu(self.dilated.forward(x), LEAKY_SLOPE)
        return x + self.pointwise.forward(h)


class Generator(nn.Module):
    """Causal encoder / TCN / decoder over the (6, T, in_freq) band tensor."""

    def __init__(self, cfg: GeneratorConfig | None = None, seed: int = 0,
                 dtype=np.float32):
        cfg = cfg or GeneratorConfig()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        c, k = cfg.base_channels, cfg.kernel
        self.enc = [nn.Conv2d(rng, cfg.in_channels if i == 0 else c, c, k, (1, 2), dtype)
                    for i in range(cfg.n_strided)]
        self.enc_dense = DenseBlock(rng, c, c, k, cfg.dense_layers, dtype)
        self.tcn = [TcnLayer(rng, cfg.tcn_channels, cfg.tcn_hidden, cfg.tcn_kernel,
                             2 ** l, dtype)
                    for _ in range(cfg.tcn_blocks) for l in range(cfg.tcn_layers)]
        self.dec = [nn.ConvTranspose2d(rng, 2 * c, c, k, (1, 2), dtype)
                    for _ in range(cfg.n_strided - 1)]
        self.dec_dense = DenseBlock(rng, 2 * c, c, k, cfg.dense_layers, dtype)
        self.dec_out = nn.ConvTranspose2d(rng, 2 * c, cfg.in_channels, k, (1, 2), dtype)

    @property
    def receptive_frames(self) -> int:
        """Number of past input frames any output frame can depend on."""
        cfg = self.cfg
        conv_taps = (cfg.kernel[0] - 1) * (2 * cfg.n_strided + 2 * cfg.dense_layers)
        tcn_taps = cfg.tcn_blocks * sum((cfg.tcn_kernel - 1) * 2 ** l
                                        for l in range(cfg.tcn_layers))
        return conv_taps + tcn_taps + 1

    def forward(self, x: Tensor) -> Tensor:
        """(1, 6, T, in_freq) -> same shape; final layer is linear."""
        skips = []
        h = x
        for i, conv in enumerate(self.enc):
            h = ag.leaky_relu(conv.forward(h), LEAKY_SLOPE)
            if i == 0:
                skips.append(h)
                h = self.enc_dense.forward(h)
                skips.append(h)
            else:
                skips.append(h)

        n, c, t, f = h.shape
        z = ag.reshape(ag.transpose(h, (0, 1, 3, 2)), (n, c * f, t))
        for layer in self.tcn:
            z = layer.forward(z)
        h = ag.transpose(ag.reshape(z, (n, c, f, t)), (0, 1, 3, 2))

        # skips: [enc0, dense, enc1, enc2, ..., enc_last]
        for i, deconv in enumerate(self.dec):
            skip = skips[-(i + 1)]
            h = ag.leaky_relu(deconv.forward(ag.concat([h, skip], axis=1)), LEAKY_SLOPE)
        h = self.dec_dense.forward(ag.concat([h, skips[1]], axis=1))
        out = self.dec_out.forward(ag.concat([h, skips[0]], axis=1))
        # global residual: the net learns the spectral correction
        return out + x


class SpecDiscriminator(nn.Module):
    """7 conv layers (3x3); weight norm + LeakyReLU on all but the last."""

    def __init__(self, cfg: DiscriminatorConfig | None = None, seed: int = 0,
                 dtype=np.float32):
        cfg = cfg or DiscriminatorConfig()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        in_ch = 2
        self.layers = []
        for i, (out_ch, stride) in enumerate(zip(cfg.channels, cfg.strides)):
            if i < 6:
                self.layers.append(nn.WeightNormConv2d(rng, in_ch, out_ch,
                                                       cfg.kernel, stride, dtype))
            else:
                self.layers.append(nn.Conv2d(rng, in_ch, out_ch, cfg.kernel,
                                             stride, dtype))
            in_ch = out_ch

    def forward(self, x: Tensor):
        """Returns (score map, list of all 7 layer outputs)."""
        feats = []
        h = x
        for i, layer in enumerate(self.layers):
            h = layer.forward(h)
            if i < 6:
                h = ag.leaky_relu(h, LEAKY_SLOPE)
            feats.append(h)
        return h, feats


class DiscriminatorSet(nn.Module):
    """Multi-resolution waveform-spectrum discriminators + per-band ones."""

    def __init__(self, cfg: DiscriminatorConfig | None = None,
                 resolutions=(512, 1024, 2048), n_bands: int = 3, seed: int = 0,
                 dtype=np.float32):
        self.resolutions = tuple(resolutions)
        self.mrf = [SpecDiscriminator(cfg, seed=seed + i, dtype=dtype)
                    for i in range(len(self.resolutions))]
        self.mb = [SpecDiscriminator(cfg, seed=seed + 100 + b, dtype=dtype)
                   for b in range(n_bands)]

    def count(self) -> int:
        return len(self.mrf) + len(self.mb)


MAG_FLOOR = 1e-5


def mrf_input(wave: Tensor, resolution: int) -> Tensor:
    """(1, 2, frames, bins): magnitude and log-magnitude at one resolution."""
    mag = stft_mag(wave, resolution, resolution // 4)
    logmag = ag.log(mag + MAG_FLOOR)
    t, f = mag.shape
    return ag.concat([ag.reshape(mag, (1, 1, t, f)),
                      ag.reshape(logmag, (1, 1, t, f))], axis=1)


def mb_input(spec6: Tensor, band: int) -> Tensor:
    """(1, 2, T, 160): magnitude and log-magnitude of one split band."""
    if not 0 <= band < 3:
        raise ValueError(f"band index {band} out of range")
    re = ag.slice_axis(spec6, 1, 2 * band, 2 * band + 1)
    im = ag.slice_axis(spec6, 1, 2 * band + 1, 2 * band + 2)
    n, _, t, f = re.shape
    mag = ag.complex_abs(ag.reshape(re, (t, f)), ag.reshape(im, (t, f)))
    logmag = ag.log(mag + MAG_FLOOR)
    return ag.concat([ag.reshape(mag, (1, 1, t, f)),
                      ag.reshape(logmag, (1, 1, t, f))], axis=1)


def mrf_discriminator_forward(model: SpecDiscriminator, wave: Tensor, resolution: int):
    return model.forward(mrf_input(wave, resolution))


def mb_discriminator_forward(model: SpecDiscriminator, spec6: Tensor, band: int):
    return model.forward(mb_input(spec6, band))


# -- spectrogram/tensor plumbing -------------------------------------------------


def spec_to_tensor6(spec_data: np.ndarray, dtype=np.float32) -> np.ndarray:
    """(T, 481) complex -> (1, 6, T, 160) float band tensor."""
    t6 = split3(spec_data)
    return np.ascontiguousarray(t6.transpose(2, 0, 1)[None], dtype=dtype)


def tensor6_to_spec(t6: np.ndarray) -> np.ndarray:
    """(1, 6, T, 160) float -> (T, 481) complex with zero Nyquist."""
    return merge3(np.asarray(t6[0], dtype=np.float64).transpose(1, 2, 0))


def istft_graph(spec6: Tensor, cfg: StftConfig, length: int | None = None) -> Tensor:
    """Differentiable inverse STFT of the (1, 6, T, 160) band tensor."""
    n, c, t, f = spec6.shape
    parts_re, parts_im = [], []
    for g in range(3):
        parts_re.append(ag.reshape(ag.slice_axis(spec6, 1, 2 * g, 2 * g + 1), (t, f)))
        parts_im.append(ag.reshape(ag.slice_axis(spec6, 1, 2 * g + 1, 2 * g + 2), (t, f)))
    zero = Tensor(np.zeros((t, 1), dtype=spec6.dtype))
    re = ag.concat(parts_re + [zero], axis=1)
    im = ag.concat(parts_im + [zero], axis=1)
    ri = ag.concat([ag.reshape(re, (t, 1, cfg.bins)),
                    ag.reshape(im, (t, 1, cfg.bins))], axis=1)
    frames = ag.irfft_ri(ri, cfg.fft_size)
    window = Tensor(cfg.window.astype(spec6.dtype))
    total = (t - 1) * cfg.hop + cfg.win_len
    norm = np.zeros(total)
    wsq = cfg.window ** 2
    for i in range(t):
        norm[i * cfg.hop:i * cfg.hop + cfg.win_len] += wsq
    scale = Tensor((1.0 / np.maximum(norm, 1e-12)).astype(spec6.dtype))
    wave = ag.overlap_add(frames * window, cfg.hop, length) * (
        scale if length is None else Tensor(scale.data[:length]))
    return wave


def generator_forward(model: Generator, spec: ComplexSpectrogram) -> ComplexSpectrogram:
    """Restore a spectrogram (inference path, no graph)."""
    x = Tensor(spec_to_tensor6(spec.data))
    with ag.no_grad():
        y = model.forward(x)
    if not np.all(np.isfinite(y.data)):
        bad = int(np.count_nonzero(~np.isfinite(y.data)))
        raise NumericalError(f"generator produced {bad} non-finite values "
                             f"(input frames={spec.frames})")
    return ComplexSpectrogram(tensor6_to_spec(y.data))


def param_count(model: nn.Module) -> int:
    return model.param_count()


# -- training steps ------------------------------------------------------------------


def _batch_tensors(batch, stft_cfg: StftConfig, dtype=np.float32):
    """Per item: (clean wave array, degraded spec6 array, aligned length)."""
    out = []
    for clean, degraded in batch:
        clean = np.asarray(clean, dtype=np.float64)
        degraded = np.asarray(degraded, dtype=np.float64)
        spec = stft(_wavify(degraded), stft_cfg)
        t = spec.frames
        length = min((t - 1) * stft_cfg.hop + stft_cfg.win_len, clean.size)
        out.append((clean, spec_to_tensor6(spec.data, dtype), length))
    return out


def _wavify(x):
    from .dsp import Waveform
    return Waveform(x)


def _score_all(discs: DiscriminatorSet, wave: Tensor, spec6: Tensor):
    scores, feats = [], []
    for d, r in zip(discs.mrf, discs.resolutions):
        s, f = mrf_discriminator_forward(d, wave, r)
        scores.append(s)
        feats.append(f)
    for b, d in enumerate(discs.mb):
        s, f = mb_discriminator_forward(d, spec6, b)
        scores.append(s)
        feats.append(f)
    return scores, feats


def train_step_d(gen: Generator, discs: DiscriminatorSet, batch, opt_d,
                 stft_cfg: StftConfig | None = None) -> float:
    """One discriminator update on a batch of (clean, degraded) pairs.

    The generator is run without gradients; its parameters are untouched.
    """
    stft_cfg = stft_cfg or StftConfig()
    opt_d.zero_grad()
    total = None
    items = _batch_tensors(batch, stft_cfg)
    for clean, deg6, length in items:
        with ag.no_grad():
            fake6 = gen.forward(Tensor(deg6))
        fake_wave = istft(ComplexSpectrogram(tensor6_to_spec(fake6.data)), stft_cfg)
        fake_wave_t = Tensor(fake_wave.samples[:length].astype(deg6.dtype))
        clean_t = Tensor(clean[:length].astype(deg6.dtype))
        clean6 = Tensor(spec_to_tensor6(stft(_wavify(clean[:length]), stft_cfg).data,
                                        deg6.dtype))
        fake6_const = Tensor(fake6.data)
        real_scores, _ = _score_all(discs, clean_t, clean6)
        fake_scores, _ = _score_all(discs, fake_wave_t, fake6_const)
        loss = lsgan_d_loss(real_scores, fake_scores)
        total = loss if total is None else total + loss
    total = total * (1.0 / len(items))
    val = total.item()
    if not np.isfinite(val):
        raise NumericalError("discriminator loss is non-finite; step aborted")
    total.backward()
    opt_d.step()
    return val


def train_step_g(gen: Generator, discs: DiscriminatorSet, batch, opt_g,
                 stft_cfg: StftConfig | None = None,
                 weights: LossWeights | None = None,
                 mr_cfg: MultiResConfig | None = None,
                 pqmf: PqmfBank | None = None):
    """One generator update; returns (total, per-component dict).

    Discriminator parameters receive gradients but are not stepped.
    """
    stft_cfg = stft_cfg or StftConfig()
    weights = weights or LossWeights()
    mr_cfg = mr_cfg or MultiResConfig()
    pqmf = pqmf or PqmfBank(4)
    opt_g.zero_grad()
    discs.set_trainable(False)  # scores still flow gradients to the generator
    items = _batch_tensors(batch, stft_cfg)
    totals = None
    parts_acc = {}
    for clean, deg6, length in items:
        fake6 = gen.forward(Tensor(deg6))
        fake_wave = istft_graph(fake6, stft_cfg, length)
        clean_t = Tensor(clean[:length].astype(deg6.dtype))
        full = mrstft_loss(clean_t, fake_wave, mr_cfg)
        sub = subband_mrstft_loss(clean_t, fake_wave, pqmf, mr_cfg)
        with ag.no_grad():
            clean6 = Tensor(spec_to_tensor6(stft(_wavify(clean[:length]), stft_cfg).data,
                                            deg6.dtype))
            _, real_feats = _score_all(discs, clean_t, clean6)
        fake_scores, fake_feats = _score_all(discs, fake_wave, fake6)
        adv = lsgan_g_loss(fake_scores)
        feat = feature_match_loss(real_feats, fake_feats)
        loss, parts = generator_total_loss(full, sub, adv, feat, weights)
        totals = loss if totals is None else totals + loss
        for k, v in parts.items():
            parts_acc[k] = parts_acc.get(k, 0.0) + v / len(items)
    totals = totals * (1.0 / len(items))
    val = totals.item()
    if not np.isfinite(val):
        discs.set_trainable(True)
        raise NumericalError("generator loss is non-finite; step aborted")
    totals.backward()
    opt_g.step()
    discs.set_trainable(True)
    return val, parts_acc
