"""Audio I/O, framing and STFT plumbing shared by every other module.

Everything internal runs at 48 kHz mono. WAV reading accepts PCM16 and
IEEE float32 at any rate/channel count; writing always produces IEEE
float32 mono 48 kHz.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

SAMPLE_RATE = 48000


class WavFormatError(ValueError):
    """Malformed RIFF/WAVE container."""


class UnsupportedWavError(WavFormatError):
    """Valid container but a codec we do not read."""


@dataclass(frozen=True)
class Waveform:
    """Mono sample sequence in [-1, 1] at 48 kHz."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"waveform must be mono 1-D, got shape {arr.shape}")
        if arr.size == 0:
            raise ValueError("waveform must have positive duration")
        if not np.all(np.isfinite(arr)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def rms_dbfs(self) -> float:
        rms = float(np.sqrt(np.mean(self.samples ** 2)))
        if rms == 0.0:
            return -np.inf
        return 20.0 * np.log10(rms)


def hann_periodic(n: int) -> np.ndarray:
    """Periodic Hann window (exact overlap-add at hop n/2)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass(frozen=True)
class StftConfig:
    """20 ms / 10 ms Hann analysis at 48 kHz by default (960/480/960)."""

    win_len: int = 960
    hop: int = 480
    fft_size: int = 960
    window: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.hop * 2 != self.win_len:
            raise ValueError("hop must be half the window length")
        win = self.window if self.window is not None else hann_periodic(self.win_len)
        win = np.asarray(win, dtype=np.float64)
        if win.shape != (self.win_len,):
            raise ValueError("window length must match win_len")
        # constant-overlap-add at this hop
        cola = win[: self.hop] + win[self.hop:]
        if np.abs(cola - cola[0]).max() > 1e-10:
            raise ValueError("window violates constant-overlap-add at hop win_len/2")
        object.__setattr__(self, "window", win)

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class ComplexSpectrogram:
    """frames x bins complex STFT matrix."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.complex128)
        if arr.ndim != 2:
            raise ValueError(f"spectrogram must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("spectrogram contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def bins(self) -> int:
        return self.data.shape[1]


# -- WAV files --------------------------------------------------------------

_TAG_PCM = 0x0001
_TAG_FLOAT = 0x0003
_TAG_EXTENSIBLE = 0xFFFE


def read_wav(path) -> Waveform:
    """Read a RIFF/WAVE file: PCM16 or float32, any rate/channels.

    Channels are averaged to mono, the result resampled to 48 kHz and
    scaled to [-1, 1].
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4:pos + 8])
        body = raw[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise WavFormatError(f"{path}: missing fmt or data chunk")

    tag, channels, rate, _, _, bits = fmt
    if tag == _TAG_EXTENSIBLE:
        raise UnsupportedWavError(f"{path}: WAVE_FORMAT_EXTENSIBLE not supported")
    if tag == _TAG_PCM and bits == 16:
        x = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif tag == _TAG_FLOAT and bits == 32:
        x = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedWavError(f"{path}: format tag {tag} / {bits}-bit not supported")

    if channels < 1:
        raise WavFormatError(f"{path}: zero channels")
    if channels > 1:
        usable = (x.size // channels) * channels
        x = x[:usable].reshape(-1, channels).mean(axis=1)
    if x.size == 0:
        raise WavFormatError(f"{path}: empty data chunk")
    if rate != SAMPLE_RATE:
        x = resample(x, rate, SAMPLE_RATE)
    return Waveform(np.clip(x, -1.0, 1.0))


def write_wav(path, wave: Waveform) -> None:
    """Write IEEE float32 mono 48 kHz. Round-trips bit-exactly via read_wav."""
    if wave.sample_rate != SAMPLE_RATE:
        raise ValueError("write_wav expects a 48 kHz waveform")
    payload = np.asarray(wave.samples, dtype="<f4").tobytes()
    byte_rate = SAMPLE_RATE * 4
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, _TAG_FLOAT, 1, SAMPLE_RATE, byte_rate, 4, 32)
    header += b"data" + struct.pack("<I", len(payload))
    try:
        with open(path, "wb") as f:
            f.write(header + payload)
    except OSError as e:
        raise OSError(f"failed writing {path}: {e}") from e


def resample(x: np.ndarray, rate_in: int, rate_out: int, taps: int = 64) -> np.ndarray:
    """Windowed-sinc resampler (Hann window, 64 taps around each output)."""
    if rate_in == rate_out:
        return np.asarray(x, dtype=np.float64).copy()
    x = np.asarray(x, dtype=np.float64)
    n_out = int(round(x.size * rate_out / rate_in))
    ratio = rate_in / rate_out
    cutoff = min(1.0, 1.0 / ratio)  # of input Nyquist
    half = taps // 2
    t_center = np.arange(n_out) * ratio          # output positions on the input grid
    base = np.floor(t_center).astype(np.int64)
    out = np.zeros(n_out)
    xp = np.pad(x, (half, half + 1))
    offsets = np.arange(-half + 1, half + 1)
    # chunk to bound memory on long signals
    step = 1 << 16
    for s in range(0, n_out, step):
        e = min(n_out, s + step)
        idx = base[s:e, None] + offsets[None, :]
        frac = t_center[s:e, None] - idx
        kern = cutoff * np.sinc(cutoff * frac)
        kern *= 0.5 + 0.5 * np.cos(np.pi * np.clip(frac / half, -1.0, 1.0))
        out[s:e] = np.sum(xp[idx + half] * kern, axis=1)
    return out


# -- STFT ---------------------------------------------------------------------


def stft(wave: Waveform, cfg: StftConfig | None = None) -> ComplexSpectrogram:
    """Hann-windowed real FFT per frame; frame t covers [t*hop, t*hop+win).

    Inputs shorter than one window are zero-padded on the right. No frame
    uses samples beyond its own window (causal framing).
    """
    cfg = cfg or StftConfig()
    x = wave.samples
    if x.size < cfg.win_len:
        x = np.pad(x, (0, cfg.win_len - x.size))
    n_frames = 1 + (x.size - cfg.win_len) // cfg.hop
    idx = np.arange(cfg.win_len)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    frames = x[idx] * cfg.window[None, :]
    return ComplexSpectrogram(np.fft.rfft(frames, n=cfg.fft_size, axis=1))


def istft(spec: ComplexSpectrogram, cfg: StftConfig | None = None) -> Waveform:
    """Weighted overlap-add inverse with squared-window normalization."""
    cfg = cfg or StftConfig()
    if spec.bins != cfg.bins:
        raise ValueError(f"expected {cfg.bins} bins, got {spec.bins}")
    frames = np.fft.irfft(spec.data, n=cfg.fft_size, axis=1)[:, : cfg.win_len]
    frames = frames * cfg.window[None, :]
    total = (spec.frames - 1) * cfg.hop + cfg.win_len
    out = np.zeros(total)
    norm = np.zeros(total)
    wsq = cfg.window ** 2
    for i in range(spec.frames):
        s = i * cfg.hop
        out[s:s + cfg.win_len] += frames[i]
        norm[s:s + cfg.win_len] += wsq
    out /= np.maximum(norm, 1e-12)
    return Waveform(out)


def frame_count(n_samples: int, cfg: StftConfig) -> int:
    n = max(n_samples, cfg.win_len)
    return 1 + (n - cfg.win_len) // cfg.hop
