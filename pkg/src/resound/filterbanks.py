"""Filterbanks: PQMF analysis/synthesis, ERB band matrices, 3-way split.

The PQMF bank feeds the subband reconstruction loss; the ERB bank carries
the fullband enhancement path; split3/merge3 shape the spectrum for the
restoration generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve
from scipy.signal.windows import kaiser

from .dsp import Waveform

SPLIT_BINS = 160  # three contiguous groups of 160 cover bins 0..479


# -- PQMF ---------------------------------------------------------------------


def _prototype(taps: int, cutoff_ratio: float, beta: float) -> np.ndarray:
    """Kaiser-windowed lowpass prototype (linear phase, unit DC gain)."""
    n = np.arange(taps)
    center = (taps - 1) / 2.0
    arg = n - center
    with np.errstate(invalid="ignore"):
        h = np.sin(np.pi * cutoff_ratio * arg) / (np.pi * arg)
    if taps % 2 == 1:
        h[taps // 2] = cutoff_ratio
    h *= kaiser(taps, beta)
    return h / h.sum()


def _modulation(proto: np.ndarray, n_bands: int, sign: float) -> np.ndarray:
    taps = proto.size
    n = np.arange(taps)
    center = (taps - 1) / 2.0
    k = np.arange(n_bands)[:, None]
    phase = (2 * k + 1) * (np.pi / (2 * n_bands)) * (n[None, :] - center)
    return 2.0 * proto[None, :] * np.cos(phase + sign * ((-1.0) ** k) * np.pi / 4.0)


def _correlate_same(x, h):
    """'same'-length cross-correlation (matches a framework conv layer)."""
    L = h.size
    xpad = np.pad(x, ((L - 1) // 2, L // 2))
    return fftconvolve(xpad, h[::-1], mode="valid")


def _analyze(x, analysis, n_bands):
    bands = np.stack([_correlate_same(x, analysis[k]) for k in range(n_bands)])
    return bands[:, ::n_bands]


def _synthesize(bands, synthesis, n_bands):
    T = bands.shape[1] * n_bands
    up = np.zeros((n_bands, T))
    up[:, ::n_bands] = bands * n_bands
    out = np.zeros(T)
    for k in range(n_bands):
        out += _correlate_same(up[k], synthesis[k])
    return out


def _cascade_metrics(analysis, synthesis, n_bands, probe):
    """(delay, gain, error_db) of analyze+synthesize over a probe signal."""
    pos = probe.size // 2
    impulse = np.zeros(probe.size)
    impulse[pos] = 1.0
    ir = _synthesize(_analyze(impulse, analysis, n_bands), synthesis, n_bands)
    peak = int(np.argmax(np.abs(ir)))
    delay = peak - pos
    gain = ir[peak]
    rec = _synthesize(_analyze(probe, analysis, n_bands), synthesis, n_bands) / gain
    ref = np.roll(probe, delay)
    lo, hi = n_bands * 64, probe.size - n_bands * 64
    err = rec[lo:hi] - ref[lo:hi]
    err_db = 10.0 * np.log10(np.sum(err ** 2) / np.sum(ref[lo:hi] ** 2) + 1e-300)
    return delay, gain, err_db


@dataclass(frozen=True)
class PqmfBank:
    """Near-perfect-reconstruction cosine-modulated filterbank.

    The prototype cutoff is tuned at construction (golden-section search)
    for the deepest analyze+synthesize reconstruction error; anything
    below -40 dB relative is accepted, typical figures are far lower.
    """

    n_bands: int = 4
    prototype: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    analysis: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    synthesis: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        if self.n_bands < 2:
            raise ValueError("need at least 2 bands")
        taps = 64 * self.n_bands
        beta = 9.0

        probe = np.random.default_rng(607).uniform(-1.0, 1.0, 16 * taps)

        def build(cutoff):
            proto = _prototype(taps, cutoff, beta)
            return proto, _modulation(proto, self.n_bands, +1.0), _modulation(proto, self.n_bands, -1.0)

        def err(cutoff):
            _, ana, syn = build(cutoff)
            return _cascade_metrics(ana, syn, self.n_bands, probe)[2]

        # golden-section search for the cutoff with least reconstruction
        # error; the optimum sits near the half-power crossover 0.5/n_bands
        phi = (np.sqrt(5.0) - 1.0) / 2.0
        a, b = 0.42 / self.n_bands, 0.60 / self.n_bands
        c, d = b - phi * (b - a), a + phi * (b - a)
        fc, fd = err(c), err(d)
        for _ in range(30):
            if fc < fd:
                b, d, fd = d, c, fc
                c = b - phi * (b - a)
                fc = err(c)
            else:
                a, c, fc = c, d, fd
                d = a + phi * (b - a)
                fd = err(d)
        proto, ana, syn = build((a + b) / 2.0)
        delay, gain, _ = _cascade_metrics(ana, syn, self.n_bands, probe)
        syn = syn / gain  # calibrate the cascade to unit passband gain
        lead = max(0, -int(delay))  # keep the reported group delay >= 0
        object.__setattr__(self, "prototype", proto)
        object.__setattr__(self, "analysis", ana)
        object.__setattr__(self, "synthesis", syn)
        object.__setattr__(self, "_lead", lead)
        object.__setattr__(self, "_delay", int(delay) + lead)

    @property
    def taps(self) -> int:
        return 64 * self.n_bands

    @property
    def delay(self) -> int:
        """Group delay of analyze+synthesize, in samples of the original rate."""
        return self._delay

    def dump(self, path) -> None:
        """Write band edges and prototype taps as plain text."""
        with open(path, "w") as f:
            f.write(f"pqmf n_bands={self.n_bands} taps={self.taps} delay={self.delay}\n")
            for k in range(self.n_bands):
                f.write(f"band {k}: {k * 24000 / self.n_bands:.1f} "
                        f"{(k + 1) * 24000 / self.n_bands:.1f} Hz\n")
            for v in self.prototype:
                f.write(f"{v:.12e}\n")


def pqmf_analyze(wave: Waveform, bank: PqmfBank) -> np.ndarray:
    """Split into n_bands critically decimated signals (n_bands, T/n_bands)."""
    if len(wave) < bank.taps:
        raise ValueError("input shorter than the prototype filter")
    return _analyze(wave.samples, bank.analysis, bank.n_bands)


def pqmf_synthesize(bands: np.ndarray, bank: PqmfBank):
    """Rebuild the waveform; returns (Waveform, group delay in samples)."""
    bands = np.asarray(bands, dtype=np.float64)
    if bands.ndim != 2 or bands.shape[0] != bank.n_bands:
        raise ValueError(f"expected {bank.n_bands} bands, got shape {bands.shape}")
    out = _synthesize(bands, bank.synthesis, bank.n_bands)
    if bank._lead:
        out = np.concatenate([np.zeros(bank._lead), out])
    return Waveform(out), bank.delay


# -- ERB bands ------------------------------------------------------------------


def hz_to_erb_rate(f):
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f, dtype=np.float64))


def erb_rate_to_hz(e):
    return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) / 0.00437


@dataclass(frozen=True)
class ErbBank:
    """32 triangular bands on the ERB-rate scale over 0..24 kHz.

    band_matrix (32 x 481) sums each bin's weight to 1 across bands, so
    merge_matrix = band_matrix.T has rows summing to 1 and unit band gains
    reproduce the spectrum exactly.
    """

    n_bands: int = 32
    n_bins: int = 481
    sample_rate: int = 48000
    band_matrix: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    merge_matrix: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        nyquist = self.sample_rate / 2.0
        freqs = np.linspace(0.0, nyquist, self.n_bins)
        centers = erb_rate_to_hz(np.linspace(hz_to_erb_rate(0.0), hz_to_erb_rate(nyquist),
                                             self.n_bands))
        mat = np.zeros((self.n_bands, self.n_bins))
        for b in range(self.n_bands):
            left = centers[b - 1] if b > 0 else 0.0
            right = centers[b + 1] if b < self.n_bands - 1 else nyquist
            center = centers[b]
            rising = (freqs >= left) & (freqs <= center)
            falling = (freqs > center) & (freqs <= right)
            if center > left:
                mat[b, rising] = (freqs[rising] - left) / (center - left)
            else:
                mat[b, rising] = 1.0
            if right > center:
                mat[b, falling] = (right - freqs[falling]) / (right - center)
        mat[0, freqs <= centers[0]] = 1.0
        mat[-1, freqs >= centers[-1]] = 1.0
        col = mat.sum(axis=0)
        mat /= col[None, :]
        object.__setattr__(self, "band_matrix", mat)
        object.__setattr__(self, "merge_matrix", mat.T.copy())
        object.__setattr__(self, "_centers", centers)

    @property
    def centers_hz(self) -> np.ndarray:
        return self._centers

    def dump(self, path) -> None:
        with open(path, "w") as f:
            f.write(f"erb n_bands={self.n_bands} n_bins={self.n_bins}\n")
            for b, c in enumerate(self._centers):
                sup = np.nonzero(self.band_matrix[b])[0]
                f.write(f"band {b}: center {c:.1f} Hz bins {sup[0]}..{sup[-1]}\n")


def erb_split(spec_data: np.ndarray, bank: ErbBank) -> np.ndarray:
    """Per-frame band log10 energies (frames x 32), floored at 1e-10."""
    spec_data = np.asarray(spec_data)
    if spec_data.ndim != 2 or spec_data.shape[1] != bank.n_bins:
        raise ValueError(f"expected frames x {bank.n_bins} spectrogram")
    power = np.abs(spec_data) ** 2
    energy = power @ bank.band_matrix.T
    return np.log10(energy + 1e-10)


def erb_apply_gains(spec_data: np.ndarray, gains: np.ndarray, bank: ErbBank) -> np.ndarray:
    """Scale each bin by its band-interpolated gain; phase untouched."""
    spec_data = np.asarray(spec_data)
    gains = np.asarray(gains, dtype=np.float64)
    if spec_data.ndim != 2 or spec_data.shape[1] != bank.n_bins:
        raise ValueError(f"expected frames x {bank.n_bins} spectrogram")
    if gains.shape != (spec_data.shape[0], bank.n_bands):
        raise ValueError(f"gains must be frames x {bank.n_bands}")
    if np.any(gains < 0.0) or np.any(gains > 1.0):
        raise ValueError("gains must lie in [0, 1]")
    per_bin = gains @ bank.merge_matrix.T
    return spec_data * per_bin


# -- three-way spectral split ----------------------------------------------------


def split3(spec_data: np.ndarray) -> np.ndarray:
    """(frames, 481) complex -> (frames, 160, 6) real.

    Drops the Nyquist bin, partitions bins 0..479 into three groups of 160
    and stacks (real, imag) per group as channels (re0, im0, re1, im1,
    re2, im2).
    """
    spec_data = np.asarray(spec_data)
    if spec_data.ndim != 2 or spec_data.shape[1] != 481:
        raise ValueError("expected frames x 481 spectrogram")
    groups = [spec_data[:, g * SPLIT_BINS:(g + 1) * SPLIT_BINS] for g in range(3)]
    chans = []
    for g in groups:
        chans.append(g.real)
        chans.append(g.imag)
    return np.stack(chans, axis=-1)


def merge3(tensor: np.ndarray) -> np.ndarray:
    """(frames, 160, 6) real -> (frames, 481) complex with zero Nyquist."""
    tensor = np.asarray(tensor)
    if tensor.ndim != 3 or tensor.shape[1:] != (SPLIT_BINS, 6):
        raise ValueError(f"expected frames x {SPLIT_BINS} x 6 tensor, got {tensor.shape}")
    frames = tensor.shape[0]
    out = np.zeros((frames, 481), dtype=np.complex128)
    for g in range(3):
        out[:, g * SPLIT_BINS:(g + 1) * SPLIT_BINS] = (
            tensor[:, :, 2 * g] + 1j * tensor[:, :, 2 * g + 1])
    return out
