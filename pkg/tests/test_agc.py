"""Chunked gain control: fixed points, state threading, safety bounds."""

import numpy as np
import pytest

from resound.agc import (CHUNK, AgcState, agc_process, agc_process_chunk,
                         default_gain_table, load_gain_table)
from resound.dsp import Waveform


def sine_chunk(level_dbfs, freq=1000.0, rate=48000):
    amp = 10.0 ** (level_dbfs / 20.0) * np.sqrt(2.0)
    t = np.arange(CHUNK) / rate
    return amp * np.sin(2 * np.pi * freq * t)


def steady_state_gain(level_dbfs):
    """Closed-form fixed point: g* = table(level), smoothing converges to it."""
    table = default_gain_table()
    idx = int(round(level_dbfs)) + 127
    return 10.0 ** (table[idx] / 20.0)


def test_zero_chunk_holds_gain():
    st = AgcState(current_gain=2.0)
    out, st2 = agc_process_chunk(np.zeros(CHUNK), st)
    assert np.all(out == 0.0)
    assert st2.current_gain == 2.0


def test_wrong_chunk_length_rejected():
    with pytest.raises(ValueError):
        agc_process_chunk(np.zeros(100), AgcState())


def test_gain_converges_to_unity_at_target_level():
    st = AgcState()
    chunk = sine_chunk(-26.0)
    for _ in range(200):
        _, st = agc_process_chunk(chunk, st)
    assert abs(st.current_gain - 1.0) <= 0.01


def test_minus46_dbfs_reaches_target_rms():
    # oracle: fixed point of the default table at -46 dBFS is +20 dB, and
    # g_n = g* + (1 - g*) * 0.9^n converges geometrically
    st = AgcState()
    chunk = sine_chunk(-46.0)
    gstar = steady_state_gain(-46.0)
    assert gstar == pytest.approx(10.0)
    out = None
    for _ in range(300):
        out, st = agc_process_chunk(chunk, st)
    rms_db = 20 * np.log10(np.sqrt(np.mean(out ** 2)))
    assert abs(rms_db - (-26.0)) <= 1.0


def test_process_concatenation_equals_whole():
    rng = np.random.default_rng(0)
    x = 0.05 * rng.standard_normal(CHUNK * 20)
    whole, _ = agc_process(Waveform(x))
    half_a, st = agc_process(Waveform(x[: CHUNK * 11]))
    half_b, _ = agc_process(Waveform(x[CHUNK * 11:]), st)
    np.testing.assert_array_equal(np.concatenate([half_a.samples, half_b.samples]),
                                  whole.samples)


def test_process_zero_input():
    out, _ = agc_process(Waveform(np.zeros(CHUNK * 5 + 100)))
    assert np.all(out.samples == 0.0)


def test_minus40_tone_final_second_rms():
    t = np.arange(5 * 48000) / 48000
    x = 10 ** (-40 / 20.0) * np.sqrt(2.0) * np.sin(2 * np.pi * 1000 * t)
    out, _ = agc_process(Waveform(x))
    tail = out.samples[-48000:]
    rms_db = 20 * np.log10(np.sqrt(np.mean(tail ** 2)))
    assert abs(rms_db - (-26.0)) <= 1.0


def test_output_always_limited():
    rng = np.random.default_rng(1)
    x = 0.9 * rng.standard_normal(CHUNK * 30)  # loud input, big gain swings
    x = np.clip(x, -1, 1)
    out, st = agc_process(Waveform(x), AgcState(current_gain=10.0 ** 1.5))
    assert np.all(out.samples <= 1.0) and np.all(out.samples >= -1.0)


def test_gain_stays_within_30db():
    st = AgcState()
    quiet = sine_chunk(-95.0)  # below gate: held; above: clamp applies anyway
    loud = np.clip(sine_chunk(0.0), -1, 1)
    for chunk in [quiet, loud] * 100:
        _, st = agc_process_chunk(chunk, st)
        lim = 10.0 ** 1.5
        assert 1.0 / lim <= st.current_gain <= lim


def test_causality_later_chunks_do_not_matter():
    rng = np.random.default_rng(2)
    x = 0.1 * rng.standard_normal(CHUNK * 10)
    base, _ = agc_process(Waveform(x))
    xp = x.copy()
    xp[CHUNK * 7:] *= 5.0
    pert, _ = agc_process(Waveform(xp))
    np.testing.assert_array_equal(base.samples[: CHUNK * 7], pert.samples[: CHUNK * 7])


def test_determinism_bit_identical():
    rng = np.random.default_rng(3)
    x = 0.2 * rng.standard_normal(CHUNK * 8)
    a, _ = agc_process(Waveform(x))
    b, _ = agc_process(Waveform(x))
    assert np.array_equal(a.samples, b.samples)


def test_silence_gate_holds_gain():
    st = AgcState(current_gain=3.0)
    _, st2 = agc_process_chunk(sine_chunk(-80.0), st)
    assert st2.current_gain == 3.0


def test_load_gain_table(tmp_path):
    p = tmp_path / "table.txt"
    p.write_text("# level gain\n-96 30\n-26 0\n0 -26\n")
    table = load_gain_table(p)
    assert table.shape == (128,)
    assert table[127] == pytest.approx(-26.0)
    assert table[-26 + 127] == pytest.approx(0.0)
    st = AgcState(gain_table=table)  # accepted by the state validator
    assert st.gain_table[0] == pytest.approx(30.0)


def test_load_gain_table_rejects_increasing(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("-96 0\n-26 10\n")
    with pytest.raises(ValueError):
        load_gain_table(p)
