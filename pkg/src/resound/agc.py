"""Causal sound-level adjustment ahead of the two-stage pipeline.

Gains the waveform one half-STFT-frame (480 samples, 10 ms) at a time
toward a target loudness, driven by a level -> gain table and exponential
gain smoothing. Table entries cover -127..0 dBFS at 1 dB spacing.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .dsp import Waveform

CHUNK = 480
TABLE_SIZE = 128
GAIN_LIMIT_DB = 30.0
SILENCE_GATE_DBFS = -70.0
TARGET_DBFS = -26.0


def default_gain_table(target_dbfs: float = TARGET_DBFS) -> np.ndarray:
    """Gain (dB) per input level bin: drive level toward the target."""
    levels = np.arange(TABLE_SIZE) - (TABLE_SIZE - 1)  # -127 .. 0 dBFS
    return np.clip(target_dbfs - levels, -GAIN_LIMIT_DB, GAIN_LIMIT_DB).astype(np.float64)


def load_gain_table(path) -> np.ndarray:
    """Read "level_db gain_db" pairs and interpolate onto the 1 dB grid."""
    levels, gains = [], []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{ln}: expected 'level_db gain_db'")
            levels.append(float(parts[0]))
            gains.append(float(parts[1]))
    if len(levels) < 2:
        raise ValueError(f"{path}: need at least two table points")
    order = np.argsort(levels)
    levels = np.asarray(levels)[order]
    gains = np.asarray(gains)[order]
    grid = np.arange(TABLE_SIZE) - (TABLE_SIZE - 1)
    table = np.interp(grid, levels, gains)
    table = np.clip(table, -GAIN_LIMIT_DB, GAIN_LIMIT_DB)
    if np.any(np.diff(table) > 1e-9):
        raise ValueError(f"{path}: gain table must be non-increasing in input level")
    return table


@dataclass(frozen=True)
class AgcState:
    """Per-stream gain state; one value per stream, threaded functionally."""

    current_gain: float = 1.0
    smoothing_coeff: float = 0.9
    gain_table: np.ndarray = dataclasses.field(default_factory=default_gain_table)

    def __post_init__(self):
        lim = 10.0 ** (GAIN_LIMIT_DB / 20.0)
        if not (1.0 / lim <= self.current_gain <= lim):
            raise ValueError("current_gain outside +/-30 dB bounds")
        table = np.asarray(self.gain_table, dtype=np.float64)
        if table.shape != (TABLE_SIZE,):
            raise ValueError(f"gain table must have {TABLE_SIZE} entries")
        if np.any(np.diff(table) > 1e-9):
            raise ValueError("gain table must be non-increasing in input level")
        object.__setattr__(self, "gain_table", table)


def _table_lookup(table: np.ndarray, level_dbfs: float) -> float:
    idx = int(np.clip(round(level_dbfs) + (TABLE_SIZE - 1), 0, TABLE_SIZE - 1))
    return float(table[idx])


def agc_process_chunk(chunk: np.ndarray, state: AgcState):
    """Gain one 480-sample chunk; returns (gained chunk, updated state).

    Chunk RMS is measured pre-gain; below the silence gate the gain holds.
    Output samples are hard-limited to [-1, 1].
    """
    chunk = np.asarray(chunk, dtype=np.float64)
    if chunk.shape != (CHUNK,):
        raise ValueError(f"chunk must have exactly {CHUNK} samples, got {chunk.shape}")
    rms = float(np.sqrt(np.mean(chunk ** 2)))
    gain = state.current_gain
    if rms > 0.0:
        level = 20.0 * np.log10(rms)
        if level >= SILENCE_GATE_DBFS:
            target = 10.0 ** (_table_lookup(state.gain_table, level) / 20.0)
            a = state.smoothing_coeff
            gain = a * gain + (1.0 - a) * target
            lim = 10.0 ** (GAIN_LIMIT_DB / 20.0)
            gain = float(np.clip(gain, 1.0 / lim, lim))
    out = np.clip(chunk * gain, -1.0, 1.0)
    return out, dataclasses.replace(state, current_gain=gain)


def agc_process(wave: Waveform, state: AgcState | None = None):
    """Run the chunk AGC over a whole waveform.

    A trailing partial chunk is passed through at the last gain. Returns
    (Waveform, final AgcState) so streams can continue across calls.
    """
    state = state or AgcState()
    x = wave.samples
    n_full = x.size // CHUNK
    out = np.empty_like(x)
    for i in range(n_full):
        seg = x[i * CHUNK:(i + 1) * CHUNK]
        out[i * CHUNK:(i + 1) * CHUNK], state = agc_process_chunk(seg, state)
    tail = x[n_full * CHUNK:]
    if tail.size:
        out[n_full * CHUNK:] = np.clip(tail * state.current_gain, -1.0, 1.0)
    return Waveform(out), state
