"""Training-data degradation pipeline with reproducible recipes.

Chain order: nonlinear distortion -> reverb -> noise mix -> lowpass ->
clipping/half-wave -> (noise-suppressor / bandwidth-extension hook stages,
identity by default) -> codec surrogate -> packet loss. A recipe plus the
source clips fully determines the output pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.signal import fftconvolve, firwin

from .dsp import SAMPLE_RATE, StftConfig, Waveform, istft, stft
from .filterbanks import ErbBank

SPEED_OF_SOUND = 343.0
EARLY_RIR_SECONDS = 0.05
TARGET_PEAK_DBFS = -3.0
FRAME_20MS = 960
RAMP_SAMPLES = 48  # 1 ms

CODEC_STEPS_DB = {"low": 3.0, "med": 1.5, "high": 0.75}
CODEC_CUTOFF_HZ = {"low": 12000.0, "med": 16000.0, "high": 20000.0}


@dataclass(frozen=True)
class RoomSpec:
    """Shoebox room for the image method."""

    dimensions: tuple
    source_pos: tuple
    mic_pos: tuple
    reflection: float | tuple = 0.9
    max_order: int = 20
    fs: int = SAMPLE_RATE
    c: float = SPEED_OF_SOUND

    def __post_init__(self):
        dims = np.asarray(self.dimensions, dtype=np.float64)
        src = np.asarray(self.source_pos, dtype=np.float64)
        mic = np.asarray(self.mic_pos, dtype=np.float64)
        if dims.shape != (3,) or src.shape != (3,) or mic.shape != (3,):
            raise ValueError("dimensions and positions must be 3-vectors")
        if np.any(dims <= 0):
            raise ValueError("room dimensions must be positive")
        for name, p in (("source", src), ("mic", mic)):
            if np.any(p <= 0) or np.any(p >= dims):
                raise ValueError(f"{name} position must be strictly inside the room")
        betas = self.betas()
        if np.any(betas < 0) or np.any(betas >= 1):
            raise ValueError("reflection coefficients must lie in [0, 1)")
        if self.max_order < 0:
            raise ValueError("max_order must be non-negative")

    def betas(self) -> np.ndarray:
        b = np.asarray(self.reflection, dtype=np.float64)
        if b.ndim == 0:
            b = np.full(6, float(b))
        if b.shape != (6,):
            raise ValueError("reflection must be scalar or per-wall 6-vector")
        return b

    def eyring_t60(self) -> float:
        """Reverberation-time prediction from geometry and absorption."""
        L = np.asarray(self.dimensions)
        V = float(np.prod(L))
        areas = np.array([L[1] * L[2], L[1] * L[2], L[0] * L[2],
                          L[0] * L[2], L[0] * L[1], L[0] * L[1]])
        alphas = 1.0 - self.betas() ** 2
        amean = float((areas * alphas).sum() / areas.sum())
        S = float(areas.sum())
        return 24.0 * math.log(10.0) * V / (-self.c * S * math.log(1.0 - amean))


def simulate_rir(room: RoomSpec, length_s: float | None = None) -> Waveform:
    """Image-method impulse response with linear-interpolated delays."""
    dims = np.asarray(room.dimensions)
    src = np.asarray(room.source_pos)
    mic = np.asarray(room.mic_pos)
    betas = room.betas().reshape(3, 2)  # [axis][wall near origin, far wall]
    order = room.max_order

    n_rng = [np.arange(-(order // 2 + 1), order // 2 + 2)] * 3
    grids = np.meshgrid(*n_rng, indexing="ij")
    ns = np.stack([g.ravel() for g in grids], axis=1)  # (K, 3)

    taps = []
    for px in (0, 1):
        for py in (0, 1):
            for pz in (0, 1):
                p = np.array([px, py, pz])
                img = (1 - 2 * p) * src + 2 * ns * dims
                hits_near = np.abs(ns - p)   # wall at coordinate 0
                hits_far = np.abs(ns)        # wall at coordinate L
                total = hits_near.sum(axis=1) + hits_far.sum(axis=1)
                keep = total <= order
                if not np.any(keep):
                    continue
                amp = np.prod(betas[:, 0] ** hits_near[keep] *
                              betas[:, 1] ** hits_far[keep], axis=1)
                dist = np.linalg.norm(img[keep] - mic, axis=1)
                dist = np.maximum(dist, 1e-3)
                taps.append((dist, amp / (4.0 * np.pi * dist)))
    dists = np.concatenate([t[0] for t in taps])
    amps = np.concatenate([t[1] for t in taps])

    delays = dists / room.c * room.fs
    if length_s is None:
        length = int(np.ceil(delays.max())) + 2
    else:
        length = int(round(length_s * room.fs))
    h = np.zeros(length + 1)
    base = np.floor(delays).astype(np.int64)
    frac = delays - base
    inside = base < length
    np.add.at(h, base[inside], amps[inside] * (1.0 - frac[inside]))
    np.add.at(h, base[inside] + 1, amps[inside] * frac[inside])
    return Waveform(h[:length] if np.any(h[:length]) else np.array([1e-12]))


def t60_from_rir(rir: np.ndarray, fs: int = SAMPLE_RATE,
                 fit_db=(-5.0, -15.0)) -> float:
    """Reverberation time from the Schroeder decay (linear fit, x3 to -60)."""
    energy = np.asarray(rir, dtype=np.float64) ** 2
    edc = np.cumsum(energy[::-1])[::-1]
    edc_db = 10.0 * np.log10(edc / edc[0] + 1e-300)
    hi, lo = fit_db
    idx = np.nonzero((edc_db <= hi) & (edc_db >= lo))[0]
    if idx.size < 8:
        raise ValueError("decay range too short for a T60 fit")
    t = idx / fs
    slope, intercept = np.polyfit(t, edc_db[idx], 1)
    if slope >= 0:
        raise ValueError("non-decaying impulse response")
    return -60.0 / slope


def early_rir(rir: Waveform, fs: int = SAMPLE_RATE) -> Waveform:
    """Direct path plus the first 50 ms of reflections."""
    h = rir.samples
    onset = int(np.argmax(np.abs(h) > 1e-8 * np.abs(h).max()))
    end = min(h.size, onset + int(EARLY_RIR_SECONDS * fs))
    return Waveform(h[:end].copy())


def apply_reverb(wave: Waveform, rir: Waveform) -> Waveform:
    """Full linear convolution (length N + M - 1)."""
    return Waveform(fftconvolve(wave.samples, rir.samples, mode="full"))


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """Loop/trim noise to length and scale it for the requested SNR."""
    if math.isinf(snr_db) and snr_db > 0:
        return Waveform(clean.samples.copy())
    x = clean.samples
    n = noise.samples
    if n.size < x.size:
        n = np.tile(n, int(np.ceil(x.size / n.size)))
    n = n[: x.size]
    p_clean = float(np.mean(x ** 2))
    p_noise = float(np.mean(n ** 2))
    if p_clean == 0.0 or p_noise == 0.0:
        raise ValueError("mix_at_snr requires non-silent clean and noise")
    scale = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(x + scale * n)


def lowpass(wave: Waveform, cutoff_hz: float, taps: int = 255) -> Waveform:
    """Linear-phase Kaiser FIR; transition centered so the stopband starts
    near 1.1x the cutoff."""
    if cutoff_hz >= SAMPLE_RATE / 2:
        return Waveform(wave.samples.copy())
    beta = 0.1102 * (60.0 - 8.7)
    edge = min(cutoff_hz * 1.05, SAMPLE_RATE / 2 * 0.999)
    h = firwin(taps, edge, window=("kaiser", beta), fs=SAMPLE_RATE)
    y = fftconvolve(wave.samples, h, mode="full")[taps // 2: taps // 2 + len(wave)]
    return Waveform(y)


def clip(wave: Waveform, level: float) -> Waveform:
    if not 0 < level <= 1.0:
        raise ValueError("clip level must lie in (0, 1]")
    return Waveform(np.clip(wave.samples, -level, level))


def halfwave_rectify(wave: Waveform) -> Waveform:
    return Waveform(np.maximum(wave.samples, 0.0))


def nonlinear_distort(wave: Waveform, drive: float) -> Waveform:
    if drive <= 0:
        raise ValueError("drive must be positive")
    return Waveform(np.tanh(drive * wave.samples) / math.tanh(drive))


def sample_loss_pattern(n_frames: int, rate: float, burst_mean_frames: float,
                        seed: int = 0) -> np.ndarray:
    """Boolean per-frame loss flags from the two-state Markov model."""
    rng = np.random.default_rng(seed)
    if rate >= 1.0:
        return np.ones(n_frames, dtype=bool)
    if rate <= 0.0:
        return np.zeros(n_frames, dtype=bool)
    p_exit = 1.0 / burst_mean_frames
    p_enter = min(rate * p_exit / (1.0 - rate), 1.0)
    draws = rng.random(n_frames + 1)
    lost = np.empty(n_frames, dtype=bool)
    state = draws[0] < rate  # stationary start
    for i in range(n_frames):
        lost[i] = state
        state = (draws[i + 1] >= p_exit) if state else (draws[i + 1] < p_enter)
    return lost


def packet_loss(wave: Waveform, rate: float, burst_mean_frames: float,
                seed: int = 0) -> Waveform:
    """Drop 20 ms frames under a two-state Markov model.

    Stationary loss probability equals `rate`; lost runs have geometric
    mean length `burst_mean_frames`. Dropped frames are zeroed with 1 ms
    raised-cosine ramps on the surviving sides.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    if burst_mean_frames < 1.0:
        raise ValueError("burst mean must be >= 1 frame")
    x = wave.samples
    n_frames = int(np.ceil(x.size / FRAME_20MS))
    if rate == 0.0:
        return Waveform(x.copy())
    lost = sample_loss_pattern(n_frames, rate, burst_mean_frames, seed)
    env = np.repeat((~lost).astype(np.float64), FRAME_20MS)[: x.size]
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(1, RAMP_SAMPLES + 1) / RAMP_SAMPLES)
    edges = np.flatnonzero(np.diff(env))
    for e in edges:
        if env[e] > env[e + 1]:  # kept -> dropped: fade out before the gap
            s = max(0, e - RAMP_SAMPLES + 1)
            env[s:e + 1] *= ramp[::-1][-(e + 1 - s):]
        else:                    # dropped -> kept: fade in after the gap
            s = e + 1
            t = min(x.size, s + RAMP_SAMPLES)
            env[s:t] *= ramp[:t - s]
    return Waveform(x * env)


def codec_surrogate(wave: Waveform, level: str | None,
                    stft_cfg: StftConfig | None = None,
                    erb: ErbBank | None = None) -> Waveform:
    """Lossy-codec stand-in: per-band log-magnitude quantization plus a
    brickwall, run through the analysis/synthesis pair."""
    if level is None or level == "none":
        return Waveform(wave.samples.copy())
    if level not in CODEC_STEPS_DB:
        raise ValueError(f"unknown codec level {level!r}")
    stft_cfg = stft_cfg or StftConfig()
    erb = erb or _default_erb()
    step = CODEC_STEPS_DB[level]
    cutoff_bin = int(CODEC_CUTOFF_HZ[level] / (SAMPLE_RATE / 2) * (stft_cfg.bins - 1))
    # pad one hop per side: quantized spectrograms are no longer perfectly
    # overlap-consistent, and the synthesis edge normalization would blow
    # up tiny window values into broadband clicks
    pad = stft_cfg.hop
    x = np.pad(wave.samples, (pad, pad))
    spec = stft(Waveform(x), stft_cfg).data
    membership = np.argmax(erb.band_matrix, axis=0)  # hard bin -> band map
    power = np.abs(spec) ** 2
    band_energy = np.zeros((spec.shape[0], erb.n_bands))
    np.add.at(band_energy.T, membership, power.T)
    level_db = 10.0 * np.log10(band_energy + 1e-12)
    q_db = np.round(level_db / step) * step
    gain = 10.0 ** ((q_db - level_db) / 20.0)
    out = spec * gain[:, membership]
    out[:, cutoff_bin:] = 0.0
    y = istft(_spec(out), stft_cfg).samples[pad: pad + len(wave)]
    return Waveform(y)


def _spec(data):
    from .dsp import ComplexSpectrogram
    return ComplexSpectrogram(data)


_ERB_CACHE = {}


def _default_erb() -> ErbBank:
    if "bank" not in _ERB_CACHE:
        _ERB_CACHE["bank"] = ErbBank()
    return _ERB_CACHE["bank"]


@dataclass(frozen=True)
class DegradationRecipe:
    """Sampled degradation parameters; with fixed inputs the outputs are
    bit-reproducible."""

    seed: int = 0
    snr_db: float = math.inf
    rir: RoomSpec | None = None
    cutoff_hz: float = 24000.0
    clip_level: float | None = None
    halfwave: bool = False
    drive: float | None = None
    packet_loss_rate: float = 0.0
    burst_mean_frames: float = 3.0
    codec_level: str | None = None

    def __post_init__(self):
        if not (math.isinf(self.snr_db) or -5.0 <= self.snr_db <= 25.0):
            raise ValueError("snr_db must lie in [-5, 25] (or +inf for none)")
        if not 1000.0 <= self.cutoff_hz <= 24000.0:
            raise ValueError("cutoff_hz must lie in [1000, 24000]")
        if self.clip_level is not None and not 0.1 <= self.clip_level <= 1.0:
            raise ValueError("clip_level must lie in [0.1, 1.0]")
        if not 0.0 <= self.packet_loss_rate <= 0.3:
            raise ValueError("packet_loss_rate must lie in [0, 0.3]")
        if self.codec_level not in (None, "none", "low", "med", "high"):
            raise ValueError("codec_level must be none/low/med/high")

    def to_json(self) -> dict:
        d = asdict(self)
        d["snr_db"] = "inf" if math.isinf(self.snr_db) else self.snr_db
        if self.rir is not None:
            d["rir"] = asdict(self.rir)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "DegradationRecipe":
        d = dict(d)
        if d.get("snr_db") == "inf":
            d["snr_db"] = math.inf
        if d.get("rir"):
            d["rir"] = RoomSpec(**{k: tuple(v) if isinstance(v, list) else v
                                   for k, v in d["rir"].items()})
        return cls(**d)


def sample_recipe(rng: np.random.Generator) -> DegradationRecipe:
    """Uniform mixing over impairment classes within the documented ranges."""
    use_rir = rng.random() < 0.5
    rir = None
    if use_rir:
        dims = tuple(rng.uniform((3.0, 3.0, 2.4), (8.0, 7.0, 3.5)))
        src = tuple(rng.uniform(0.5, np.asarray(dims) - 0.5))
        mic = tuple(rng.uniform(0.5, np.asarray(dims) - 0.5))
        rir = RoomSpec(dims, src, mic,
                       reflection=float(rng.uniform(0.5, 0.93)),
                       max_order=16)
    loudness_mode = rng.integers(0, 4)  # none / clip / halfwave / distortion
    return DegradationRecipe(
        seed=int(rng.integers(0, 2 ** 31 - 1)),
        snr_db=float(rng.uniform(-5.0, 25.0)) if rng.random() < 0.8 else math.inf,
        rir=rir,
        cutoff_hz=float(rng.uniform(1000.0, 24000.0)),
        clip_level=float(rng.uniform(0.1, 0.9)) if loudness_mode == 1 else None,
        halfwave=bool(loudness_mode == 2),
        drive=float(rng.uniform(2.0, 8.0)) if loudness_mode == 3 else None,
        packet_loss_rate=float(rng.uniform(0.0, 0.3)) if rng.random() < 0.4 else 0.0,
        burst_mean_frames=float(rng.uniform(1.0, 5.0)),
        codec_level=str(rng.choice(["none", "low", "med", "high"])),
    )


def _peak_normalize(x: np.ndarray, peak_dbfs: float = TARGET_PEAK_DBFS) -> np.ndarray:
    peak = np.abs(x).max()
    if peak == 0:
        return x.copy()
    return x * (10.0 ** (peak_dbfs / 20.0) / peak)


def simulate_pair(clean: Waveform, noise: Waveform, recipe: DegradationRecipe,
                  ns_stage=None, bwe_stage=None):
    """Produce one (degraded, target) pair.

    The target is the peak-normalized clean convolved with the direct +
    50 ms early part of the impulse response (the dry clean when no room
    is configured). ns_stage/bwe_stage are optional Waveform -> Waveform
    hooks (identity when None).
    """
    n = len(clean)
    base = Waveform(_peak_normalize(clean.samples))

    if recipe.rir is not None:
        rir = simulate_rir(recipe.rir)
        target = apply_reverb(base, early_rir(rir))
        target = Waveform(target.samples[:n])
        x = Waveform(apply_reverb(base if recipe.drive is None
                                  else nonlinear_distort(base, recipe.drive),
                                  rir).samples[:n])
    else:
        target = base
        x = base if recipe.drive is None else nonlinear_distort(base, recipe.drive)

    if not math.isinf(recipe.snr_db):
        x = mix_at_snr(x, noise, recipe.snr_db)
    x = lowpass(x, recipe.cutoff_hz)
    if recipe.clip_level is not None:
        x = clip(x, recipe.clip_level)
    if recipe.halfwave:
        x = halfwave_rectify(x)
    if ns_stage is not None:
        x = ns_stage(x)
    if bwe_stage is not None:
        x = bwe_stage(x)
    x = codec_surrogate(x, recipe.codec_level)
    x = packet_loss(x, recipe.packet_loss_rate, recipe.burst_mean_frames,
                    seed=recipe.seed)

    out = x.samples
    peak = np.abs(out).max()
    if peak > 0.999:
        out = out * (0.999 / peak)
    return Waveform(out), Waveform(_peak_normalize(target.samples))
