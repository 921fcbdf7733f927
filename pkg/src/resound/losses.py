"""Training objectives for both stages.

Restoration: multi-resolution STFT losses (fullband + PQMF subband),
least-squares adversarial terms and feature matching. Enhancement:
power-compressed complex and magnitude spectrum losses. Everything is
differentiable through the autograd engine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .dsp import hann_periodic
from .filterbanks import PqmfBank

LOG_EPS = 1e-5
PHASE_EPS = 1e-10
COMPRESS_POWER = 0.3


@dataclass(frozen=True)
class MultiResConfig:
    """FFT sizes for the multi-resolution losses; hop is size/4, Hann window."""

    resolutions: tuple = (512, 1024, 2048)

    def __post_init__(self):
        for r in self.resolutions:
            if r & (r - 1):
                raise ValueError(f"resolution {r} is not a power of two")

    def hop(self, r: int) -> int:
        return r // 4


@dataclass(frozen=True)
class LossWeights:
    adv: float = 1.0
    feat: float = 20.0
    cplx: float = 0.5
    mag: float = 0.5

    def __post_init__(self):
        if min(self.adv, self.feat, self.cplx, self.mag) < 0:
            raise ValueError("loss weights must be non-negative")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def ri_from_complex(spec: np.ndarray):
    """Complex ndarray -> constant (real, imag) tensor pair."""
    spec = np.asarray(spec)
    return Tensor(spec.real.copy()), Tensor(spec.imag.copy())


def _split_ri(x: Tensor):
    """(..., 2, bins) -> ((..., bins) real, (..., bins) imag)."""
    axis = x.ndim - 2
    shape = x.shape[:-2] + (x.shape[-1],)
    re = ag.reshape(ag.slice_axis(x, axis, 0, 1), shape)
    im = ag.reshape(ag.slice_axis(x, axis, 1, 2), shape)
    return re, im


def stft_mag(wave: Tensor, fft_size: int, hop: int) -> Tensor:
    """Differentiable magnitude spectrogram (frames, fft_size/2+1)."""
    window = Tensor(hann_periodic(fft_size).astype(wave.dtype))
    frames = ag.frame(wave, fft_size, hop) * window
    re, im = _split_ri(ag.rfft_ri(frames))
    return ag.complex_abs(re, im)


def spectral_convergence(ref_mag: Tensor, est_mag: Tensor) -> Tensor:
    """Frobenius-relative error, normalized by the estimate's norm."""
    ref_mag, est_mag = _as_tensor(ref_mag), _as_tensor(est_mag)
    if ref_mag.shape != est_mag.shape:
        raise ValueError("magnitude spectrograms must share a shape")
    denom_sq = ag.sum_(est_mag * est_mag)
    if denom_sq.item() == 0.0:
        raise ValueError("spectral convergence undefined: estimate norm is zero")
    diff = ref_mag - est_mag
    return ag.sqrt(ag.sum_(diff * diff)) / ag.sqrt(denom_sq)


def log_mag_l1(ref_mag: Tensor, est_mag: Tensor) -> Tensor:
    """Mean absolute difference of log magnitudes (floor 1e-5)."""
    ref_mag, est_mag = _as_tensor(ref_mag), _as_tensor(est_mag)
    if ref_mag.shape != est_mag.shape:
        raise ValueError("magnitude spectrograms must share a shape")
    return ag.mean(ag.abs_(ag.log(ref_mag + LOG_EPS) - ag.log(est_mag + LOG_EPS)))


def stft_loss(ref_wave: Tensor, est_wave: Tensor, fft_size: int, hop: int) -> Tensor:
    ref_mag = stft_mag(ref_wave, fft_size, hop)
    est_mag = stft_mag(est_wave, fft_size, hop)
    return log_mag_l1(ref_mag, est_mag) + spectral_convergence(ref_mag, est_mag)


def mrstft_loss(ref_wave: Tensor, est_wave: Tensor, cfg: MultiResConfig | None = None) -> Tensor:
    """Sum of per-resolution (log-magnitude L1 + spectral convergence)."""
    cfg = cfg or MultiResConfig()
    ref_wave, est_wave = _as_tensor(ref_wave), _as_tensor(est_wave)
    if ref_wave.shape != est_wave.shape:
        raise ValueError("waveforms must have equal length")
    total = None
    for r in cfg.resolutions:
        term = stft_loss(ref_wave, est_wave, r, cfg.hop(r))
        total = term if total is None else total + term
    return total


def pqmf_analyze_graph(wave: Tensor, bank: PqmfBank) -> Tensor:
    """Differentiable PQMF analysis: (T,) -> (n_bands, T/n_bands)."""
    L = bank.taps
    w = Tensor(bank.analysis[:, None, :].astype(wave.dtype))
    x = ag.reshape(wave, (1, 1, wave.shape[0]))
    y = ag.conv1d(x, w, stride=bank.n_bands, pad=((L - 1) // 2, L // 2))
    return ag.reshape(y, (bank.n_bands, y.shape[2]))


def subband_mrstft_loss(ref_wave: Tensor, est_wave: Tensor, bank: PqmfBank,
                        cfg: MultiResConfig | None = None) -> Tensor:
    """Fullband loss recipe applied per PQMF band, averaged over bands.

    Resolutions shrink by the decimation factor so each band sees the
    same time extent per analysis frame.
    """
    cfg = cfg or MultiResConfig()
    ref_wave, est_wave = _as_tensor(ref_wave), _as_tensor(est_wave)
    if ref_wave.shape != est_wave.shape:
        raise ValueError("waveforms must have equal length")
    ref_bands = pqmf_analyze_graph(ref_wave, bank)
    est_bands = pqmf_analyze_graph(est_wave, bank)
    n = bank.n_bands
    total = None
    for b in range(n):
        rb = ag.reshape(ag.slice_axis(ref_bands, 0, b, b + 1), (ref_bands.shape[1],))
        eb = ag.reshape(ag.slice_axis(est_bands, 0, b, b + 1), (est_bands.shape[1],))
        for r in cfg.resolutions:
            rr = max(8, r // n)
            term = stft_loss(rb, eb, rr, max(1, rr // 4))
            total = term if total is None else total + term
    return total * (1.0 / n)


# -- adversarial ------------------------------------------------------------


def lsgan_g_loss(scores) -> Tensor:
    """Mean over score maps of (1 - score)^2."""
    scores = list(scores)
    if not scores:
        raise ValueError("need at least one score map")
    total = None
    for s in scores:
        one = Tensor(np.ones(s.shape, dtype=s.dtype))
        term = ag.mean((one - s) * (one - s))
        total = term if total is None else total + term
    return total * (1.0 / len(scores))


def lsgan_d_loss(real_scores, fake_scores) -> Tensor:
    """Mean over discriminators of (real - 1)^2 + fake^2 means."""
    real_scores, fake_scores = list(real_scores), list(fake_scores)
    if len(real_scores) != len(fake_scores) or not real_scores:
        raise ValueError("real/fake score lists must match and be non-empty")
    total = None
    for r, f in zip(real_scores, fake_scores):
        one = Tensor(np.ones(r.shape, dtype=r.dtype))
        term = ag.mean((r - one) * (r - one)) + ag.mean(f * f)
        total = term if total is None else total + term
    return total * (1.0 / len(real_scores))


def feature_match_loss(real_feats, fake_feats) -> Tensor:
    """L1 between discriminator feature maps, averaged over layers then
    over discriminators. real/fake are lists (per discriminator) of lists
    (per layer)."""
    real_feats, fake_feats = list(real_feats), list(fake_feats)
    if len(real_feats) != len(fake_feats) or not real_feats:
        raise ValueError("feature lists must match and be non-empty")
    total = None
    for rf, ff in zip(real_feats, fake_feats):
        if len(rf) != len(ff):
            raise ValueError("per-discriminator layer counts differ")
        inner = None
        for rl, fl in zip(rf, ff):
            term = ag.mean(ag.abs_(rl - fl))
            inner = term if inner is None else inner + term
        inner = inner * (1.0 / len(rf))
        total = inner if total is None else total + inner
    return total * (1.0 / len(real_feats))


# -- compressed spectrum losses ------------------------------------------------


def _compress(re: Tensor, im: Tensor):
    """Power-law compression keeping phase: |Z|^0.3 * Z / (|Z| + eps)."""
    m = ag.complex_abs(re, im)
    factor = (m ** COMPRESS_POWER) / (m + PHASE_EPS)
    return re * factor, im * factor


def compressed_complex_loss(ref_ri, est_ri) -> Tensor:
    """Mean squared distance between compressed complex spectra.

    ref_ri/est_ri are (real, imag) tensor pairs of equal shape.
    """
    rre, rim = ref_ri
    ere, eim = est_ri
    if rre.shape != ere.shape:
        raise ValueError("spectrogram shapes must match")
    cre, cim = _compress(_as_tensor(rre), _as_tensor(rim))
    dre, dim = _compress(_as_tensor(ere), _as_tensor(eim))
    du, dv = cre - dre, cim - dim
    return ag.mean(du * du + dv * dv)


def compressed_mag_loss(ref_ri, est_ri) -> Tensor:
    """Mean squared distance between compressed magnitude spectra."""
    rre, rim = ref_ri
    ere, eim = est_ri
    if rre.shape != ere.shape:
        raise ValueError("spectrogram shapes must match")
    rm = ag.complex_abs(_as_tensor(rre), _as_tensor(rim)) ** COMPRESS_POWER
    em = ag.complex_abs(_as_tensor(ere), _as_tensor(eim)) ** COMPRESS_POWER
    d = rm - em
    return ag.mean(d * d)


# -- stage totals -----------------------------------------------------------------


def generator_total_loss(full: Tensor, sub: Tensor, adv: Tensor, feat: Tensor,
                         weights: LossWeights | None = None):
    """Restoration-stage total; returns (total, per-component floats)."""
    w = weights or LossWeights()
    total = full + sub + adv * w.adv + feat * w.feat
    parts = {"full": full.item(), "sub": sub.item(),
             "adv": adv.item(), "feat": feat.item(), "total": total.item()}
    return total, parts


def enhancement_total_loss(cplx: Tensor, mag: Tensor,
                           weights: LossWeights | None = None):
    """Enhancement-stage total; returns (total, per-component floats)."""
    w = weights or LossWeights()
    total = cplx * w.cplx + mag * w.mag
    parts = {"cplx": cplx.item(), "mag": mag.item(), "total": total.item()}
    return total, parts
