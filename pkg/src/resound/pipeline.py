"""End-to-end composition: file/stream enhancement, RTF benchmark, dataset
generation, and the flat key=value config format used by the CLI."""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .agc import AgcState, agc_process, agc_process_chunk
from .autograd import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .degrade import DegradationRecipe, sample_recipe, simulate_pair
from .dsp import (SAMPLE_RATE, ComplexSpectrogram, StftConfig, Waveform,
                  istft, read_wav, stft, write_wav)
from .enhancement import (EnhancementConfig, EnhancementModels,
                          enhance_forward)
from .restoration import (Generator, GeneratorConfig, generator_forward,
                          spec_to_tensor6, tensor6_to_spec)

STAGES = ("both", "restore", "enhance")


@dataclass
class PipelineConfig:
    """Checkpoint paths (empty string = fresh seeded weights), stage
    toggles and model-size knobs for fresh initialization."""

    generator_ckpt: str = ""
    wideband_ckpt: str = ""
    fullband_ckpt: str = ""
    agc: bool = True
    stage: str = "both"
    seed: int = 0
    base_channels: int = 16
    tcn_hidden: int = 64
    enh_channels: int = 8
    enh_unet_channels: int = 8

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")


def load_config(path) -> PipelineConfig:
    """Flat key=value text file; '#' starts a comment."""
    values = {}
    bools = {"agc"}
    ints = {"seed", "base_channels", "tcn_hidden", "enh_channels", "enh_unet_channels"}
    with open(path) as f:
        for ln, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key in bools:
                values[key] = val.lower() in ("1", "true", "yes", "on")
            elif key in ints:
                values[key] = int(val)
            else:
                values[key] = val
    unknown = set(values) - set(PipelineConfig.__dataclass_fields__)
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    return PipelineConfig(**values)


@dataclass
class RtfReport:
    audio_seconds: float
    wall_seconds: float
    thread_count: int
    stages: dict = field(default_factory=dict)

    @property
    def rtf(self) -> float:
        return self.wall_seconds / self.audio_seconds

    def __str__(self):
        parts = " ".join(f"{k}={v:.3f}s" for k, v in self.stages.items())
        return (f"rtf={self.rtf:.3f} audio={self.audio_seconds:.2f}s "
                f"wall={self.wall_seconds:.2f}s threads={self.thread_count} [{parts}]")


GEN_META = ("base_channels", "tcn_blocks", "tcn_layers", "tcn_hidden", "tcn_kernel")
ENH_META = ("wideband_cutoff_bin", "residual_orders", "crossfade_bins",
            "base_channels", "unet_channels", "tcn_layers", "tcn_hidden")


def save_generator(path, gen: Generator) -> None:
    arrays = dict(gen.state_arrays())
    for k in GEN_META:
        arrays[f"meta.{k}"] = np.array([getattr(gen.cfg, k)], dtype=np.float32)
    save_checkpoint(path, arrays)


def load_generator(path) -> Generator:
    arrays = load_checkpoint(path)
    kwargs = {k: int(arrays[f"meta.{k}"][0]) for k in GEN_META if f"meta.{k}" in arrays}
    gen = Generator(GeneratorConfig(**kwargs))
    gen.load_state_arrays(arrays)
    return gen


def save_enhancement(wideband_path, fullband_path, models: EnhancementModels) -> None:
    meta = {f"meta.{k}": np.array([getattr(models.cfg, k)], dtype=np.float32)
            for k in ENH_META}
    save_checkpoint(wideband_path, {**models.wideband.state_arrays(), **meta})
    save_checkpoint(fullband_path, {**models.band_gain.state_arrays(), **meta})


def load_enhancement(wideband_path, fullband_path) -> EnhancementModels:
    wb = load_checkpoint(wideband_path)
    fb = load_checkpoint(fullband_path)
    kwargs = {k: int(wb[f"meta.{k}"][0]) for k in ENH_META if f"meta.{k}" in wb}
    cfg = EnhancementConfig(**kwargs)
    models = EnhancementModels.build(cfg)
    models.wideband.load_state_arrays(wb)
    models.band_gain.load_state_arrays(fb)
    return models


class Pipeline:
    """Level adjust -> restoration -> enhancement over 20 ms frames."""

    def __init__(self, cfg: PipelineConfig | None = None):
        cfg = cfg or PipelineConfig()
        self.cfg = cfg
        self.stft_cfg = StftConfig()
        self.generator = None
        self.enh = None
        if cfg.stage in ("both", "restore"):
            if cfg.generator_ckpt:
                self.generator = load_generator(cfg.generator_ckpt)
            else:
                self.generator = Generator(
                    GeneratorConfig(base_channels=cfg.base_channels,
                                    tcn_hidden=cfg.tcn_hidden), seed=cfg.seed)
        if cfg.stage in ("both", "enhance"):
            if cfg.wideband_ckpt or cfg.fullband_ckpt:
                if not (cfg.wideband_ckpt and cfg.fullband_ckpt):
                    raise ValueError("wideband and fullband checkpoints come as a pair")
                self.enh = load_enhancement(cfg.wideband_ckpt, cfg.fullband_ckpt)
            else:
                self.enh = EnhancementModels.build(
                    EnhancementConfig(base_channels=cfg.enh_channels,
                                      unet_channels=cfg.enh_unet_channels),
                    seed=cfg.seed + 1)

    # -- offline -----------------------------------------------------------

    def enhance_waveform(self, wave: Waveform):
        """Full offline pass; returns (Waveform, RtfReport)."""
        stages = {}
        t_all = time.perf_counter()
        if self.cfg.agc:
            t0 = time.perf_counter()
            wave, _ = agc_process(wave, AgcState())
            stages["agc"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        spec = stft(wave, self.stft_cfg)
        stages["stft"] = time.perf_counter() - t0
        if self.generator is not None:
            t0 = time.perf_counter()
            spec = generator_forward(self.generator, spec)
            stages["restore"] = time.perf_counter() - t0
        if self.enh is not None:
            t0 = time.perf_counter()
            spec = enhance_forward(self.enh, spec)
            stages["enhance"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        out = istft(spec, self.stft_cfg)
        stages["istft"] = time.perf_counter() - t0
        out = Waveform(np.clip(out.samples[: len(wave)], -1.0, 1.0))
        wall = time.perf_counter() - t_all
        report = RtfReport(audio_seconds=len(wave) / SAMPLE_RATE,
                           wall_seconds=wall, thread_count=0, stages=stages)
        return out, report

    def stream(self) -> "Stream":
        return Stream(self)


def enhance_file(in_path, out_path, cfg: PipelineConfig | Pipeline) -> RtfReport:
    """read -> AGC -> STFT -> restore -> enhance -> iSTFT -> write."""
    pipe = cfg if isinstance(cfg, Pipeline) else Pipeline(cfg)
    stages = {}
    t_all = time.perf_counter()
    t0 = time.perf_counter()
    wave = read_wav(in_path)
    stages["read"] = time.perf_counter() - t0
    try:
        out, inner = pipe.enhance_waveform(wave)
    except Exception as e:
        raise RuntimeError(f"enhancement failed in stage pipeline: {e}") from e
    stages.update(inner.stages)
    t0 = time.perf_counter()
    write_wav(out_path, out)
    stages["write"] = time.perf_counter() - t0
    wall = time.perf_counter() - t_all
    return RtfReport(audio_seconds=len(wave) / SAMPLE_RATE, wall_seconds=wall,
                     thread_count=0, stages=stages)


class Stream:
    """Frame-by-frame processing with one hop (480 samples) of latency.

    Each stage reruns its causal network over a sliding window as long as
    its receptive field, so outputs match the offline path exactly (up to
    float reduction order) while per-frame cost stays bounded.
    """

    def __init__(self, pipe: Pipeline):
        self.pipe = pipe
        cfg = pipe.stft_cfg
        self.hop = cfg.hop
        self.win = cfg.win_len
        self.agc_state = AgcState() if pipe.cfg.agc else None
        self._prev = np.zeros(self.hop)
        self._frames_in = 0
        self._gen_ring = []
        self._enh_ring = []
        self._gen_window = (pipe.generator.receptive_frames
                            if pipe.generator is not None else 1)
        self._enh_window = (pipe.enh.receptive_frames
                            if pipe.enh is not None else 1)
        self._ola = np.zeros(self.win)
        self._norm = np.zeros(self.win)
        self._wsq = cfg.window ** 2

    @property
    def latency_samples(self) -> int:
        """One hop of algorithmic latency; the filterbanks add none."""
        return self.hop

    def reset(self):
        self.__init__(self.pipe)

    def push(self, chunk: np.ndarray) -> np.ndarray:
        """Feed 480 samples, receive 480 processed samples (delayed by
        exactly latency_samples)."""
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.shape != (self.hop,):
            raise ValueError(f"stream chunks must be {self.hop} samples")
        if self.agc_state is not None:
            chunk, self.agc_state = agc_process_chunk(chunk, self.agc_state)
        frame = np.concatenate([self._prev, chunk])
        self._prev = chunk.copy()
        self._frames_in += 1
        if self._frames_in < 2:
            return np.zeros(self.hop)

        cfg = self.pipe.stft_cfg
        spec_frame = np.fft.rfft(frame * cfg.window, n=cfg.fft_size)

        if self.pipe.generator is not None:
            t6 = spec_to_tensor6(spec_frame[None, :])[0]  # (6, 1, 160)
            self._gen_ring.append(t6)
            if len(self._gen_ring) > self._gen_window:
                self._gen_ring.pop(0)
            x = np.concatenate(self._gen_ring, axis=1)[None]
            with ag.no_grad():
                y = self.pipe.generator.forward(Tensor(x))
            spec_frame = tensor6_to_spec(y.data[:, :, -1:, :])[0]

        if self.pipe.enh is not None:
            self._enh_ring.append(spec_frame)
            if len(self._enh_ring) > self._enh_window:
                self._enh_ring.pop(0)
            window_spec = ComplexSpectrogram(np.stack(self._enh_ring))
            out_spec = enhance_forward(self.pipe.enh, window_spec)
            spec_frame = out_spec.data[-1]

        frame_time = np.fft.irfft(spec_frame, n=cfg.fft_size)[: self.win] * cfg.window
        self._ola += frame_time
        self._norm += self._wsq
        out = self._ola[: self.hop] / np.maximum(self._norm[: self.hop], 1e-12)
        self._ola = np.concatenate([self._ola[self.hop:], np.zeros(self.hop)])
        self._norm = np.concatenate([self._norm[self.hop:], np.zeros(self.hop)])
        return np.clip(out, -1.0, 1.0)


def benchmark_rtf(cfg: PipelineConfig, duration_s: float = 10.0,
                  seed: int = 0) -> RtfReport:
    """Single-thread wall-clock RTF over enhance_waveform on seeded noise."""
    if duration_s < 10.0:
        raise ValueError("benchmark needs at least 10 s of audio")
    pipe = Pipeline(cfg)
    rng = np.random.default_rng(seed)
    wave = Waveform(0.1 * np.clip(rng.standard_normal(int(duration_s * SAMPLE_RATE)),
                                  -5, 5))
    warm = Waveform(wave.samples[:SAMPLE_RATE])
    try:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=1)
    except ImportError:  # fall back to whatever the BLAS defaults are
        limiter = None
        warnings.warn("threadpoolctl unavailable; thread count not pinned")
    try:
        pipe.enhance_waveform(warm)
        _, report = pipe.enhance_waveform(wave)
    finally:
        if limiter is not None:
            limiter.unregister()
    report.thread_count = 1
    return report


# -- dataset generation ---------------------------------------------------------


def make_dataset(manifest_in, out_dir, n_pairs: int, seed: int = 0):
    """Render (degraded, target) WAV pairs plus a resolved manifest.

    Source entries are consumed in order without replacement; running out
    of sources yields a partial corpus with a warning. Each line may carry
    its own recipe, otherwise one is sampled from the master seed.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    with open(manifest_in) as f:
        entries = [json.loads(line) for line in f if line.strip()]
    if n_pairs > len(entries):
        warnings.warn(f"requested {n_pairs} pairs but only {len(entries)} "
                      f"source entries; writing a partial corpus")
    count = min(n_pairs, len(entries))
    resolved = []
    for i in range(count):
        entry = entries[i]
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        if "recipe" in entry and entry["recipe"]:
            recipe = DegradationRecipe.from_json(entry["recipe"])
        else:
            recipe = sample_recipe(rng)
        clean = read_wav(entry["clean_path"])
        noise = read_wav(entry["noise_path"])
        degraded, target = simulate_pair(clean, noise, recipe)
        dpath = os.path.join(out_dir, f"degraded_{i:05d}.wav")
        tpath = os.path.join(out_dir, f"target_{i:05d}.wav")
        write_wav(dpath, degraded)
        write_wav(tpath, target)
        resolved.append({"clean_path": entry["clean_path"],
                         "noise_path": entry["noise_path"],
                         "degraded_path": dpath, "target_path": tpath,
                         "recipe": recipe.to_json()})
    manifest_out = os.path.join(out_dir, "manifest.jsonl")
    with open(manifest_out, "w") as f:
        for row in resolved:
            f.write(json.dumps(row) + "\n")
    return manifest_out, count
