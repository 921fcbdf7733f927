"""Generator/discriminator contracts, training-step hygiene, gradients."""

import numpy as np
import pytest

from resound import autograd as ag
from resound.autograd import AdamW, Tensor
from resound.checkpoint import load_checkpoint, save_checkpoint
from resound.dsp import ComplexSpectrogram, StftConfig, Waveform, stft
from resound.filterbanks import PqmfBank
from resound.losses import MultiResConfig, feature_match_loss, generator_total_loss, \
    lsgan_g_loss, mrstft_loss, subband_mrstft_loss
from resound.restoration import (DiscriminatorConfig, DiscriminatorSet, Generator,
                                 GeneratorConfig, NumericalError, istft_graph,
                                 mb_discriminator_forward, mb_input,
                                 mrf_discriminator_forward, mrf_input, param_count,
                                 spec_to_tensor6, tensor6_to_spec, train_step_d,
                                 train_step_g, generator_forward)

SMALL = GeneratorConfig(base_channels=4, tcn_hidden=8)
TINY = GeneratorConfig(base_channels=2, tcn_blocks=1, tcn_layers=2, tcn_hidden=2,
                       in_freq=16)
DTINY = DiscriminatorConfig(channels=(2, 2, 2, 2, 2, 2, 1),
                            strides=((1, 1), (2, 2), (2, 2), (1, 1), (1, 1), (1, 1), (1, 1)))


def rand_spec(frames, seed=0):
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((frames, 481)) + 1j * rng.standard_normal((frames, 481))
    data[:, 480] = 0.0
    return ComplexSpectrogram(0.1 * data)


# -- generator -----------------------------------------------------------------


def test_generator_shape_contract():
    gen = Generator(SMALL, seed=0)
    out = generator_forward(gen, rand_spec(100))
    assert out.frames == 100 and out.bins == 481


def test_generator_single_frame():
    gen = Generator(SMALL, seed=0)
    out = generator_forward(gen, rand_spec(1))
    assert out.frames == 1


def test_generator_zero_final_layer_zero_output():
    gen = Generator(SMALL, seed=0)
    gen.dec_out.w.data[:] = 0.0
    gen.dec_out.b.data[:] = 0.0
    out = generator_forward(gen, rand_spec(10))
    assert np.all(out.data == 0.0)


def test_generator_causality():
    gen = Generator(SMALL, seed=1)
    spec = rand_spec(24, seed=3)
    base = generator_forward(gen, spec).data
    for hit in [5, 12, 23]:
        pert = spec.data.copy()
        pert[hit] *= 3.0
        got = generator_forward(gen, ComplexSpectrogram(pert)).data
        assert np.array_equal(got[:hit], base[:hit])
        assert not np.array_equal(got[hit:], base[hit:])


def test_generator_nan_detection():
    gen = Generator(SMALL, seed=0)
    gen.dec_out.b.data[0] = np.nan
    with pytest.raises(NumericalError):
        generator_forward(gen, rand_spec(4))


def test_spec_tensor_roundtrip():
    spec = rand_spec(7, seed=5)
    t6 = spec_to_tensor6(spec.data, np.float64)
    back = tensor6_to_spec(t6)
    np.testing.assert_allclose(back, spec.data, atol=1e-12)


def test_istft_graph_matches_numpy_istft():
    from resound.dsp import istft
    cfg = StftConfig()
    spec = rand_spec(12, seed=6)
    t6 = Tensor(spec_to_tensor6(spec.data, np.float64))
    wave_graph = istft_graph(t6, cfg).data
    wave_np = istft(spec, cfg).samples
    np.testing.assert_allclose(wave_graph, wave_np, atol=1e-9)


# -- discriminators ---------------------------------------------------------------


def test_mrf_feature_list_length():
    d = DiscriminatorSet(DTINY, resolutions=(512,), seed=0)
    wave = Tensor(np.random.default_rng(0).standard_normal(4000).astype(np.float32))
    score, feats = mrf_discriminator_forward(d.mrf[0], wave, 512)
    assert len(feats) == 7
    assert feats[-1] is score


def test_mb_feature_list_length_and_band_range():
    d = DiscriminatorSet(DTINY, seed=0)
    spec6 = Tensor(spec_to_tensor6(rand_spec(10).data))
    score, feats = mb_discriminator_forward(d.mb[0], spec6, 0)
    assert len(feats) == 7
    with pytest.raises(ValueError):
        mb_input(spec6, 3)


def test_identical_inputs_zero_feature_match():
    d = DiscriminatorSet(DTINY, resolutions=(512,), seed=0)
    wave = Tensor(np.random.default_rng(1).standard_normal(4000).astype(np.float32))
    _, f1 = mrf_discriminator_forward(d.mrf[0], wave, 512)
    _, f2 = mrf_discriminator_forward(d.mrf[0], wave, 512)
    assert feature_match_loss([f1], [f2]).item() == 0.0


def test_mrf_log_channel_additive():
    rng = np.random.default_rng(2)
    wave = Tensor(rng.standard_normal(4000))
    x1 = mrf_input(wave, 512).data
    x2 = mrf_input(wave * 2.0, 512).data
    np.testing.assert_allclose(x2[0, 0], 2.0 * x1[0, 0], rtol=1e-9)  # magnitude doubles
    mask = x1[0, 0] > 1e-2  # away from the log floor
    np.testing.assert_allclose((x2[0, 1] - x1[0, 1])[mask], np.log(2.0), atol=1e-4)


def test_mb_bands_partition_spectrum():
    spec = np.zeros((4, 481), dtype=complex)
    spec[:, 200] = 1.0 + 1.0j
    spec6 = Tensor(spec_to_tensor6(spec))
    mags = [mb_input(spec6, b).data[0, 0] for b in range(3)]
    assert np.all(mags[0] == 0.0) and np.all(mags[2] == 0.0)
    assert mags[1][0, 200 - 160] > 0


# -- training steps ----------------------------------------------------------------


@pytest.fixture()
def toy_setup():
    gen = Generator(SMALL, seed=7)
    discs = DiscriminatorSet(DTINY, seed=8)
    rng = np.random.default_rng(9)
    n = 4800 * 2
    clean = 0.3 * rng.standard_normal(n)
    degraded = clean + 0.1 * rng.standard_normal(n)
    return gen, discs, [(clean, degraded)]


def test_train_step_d_keeps_generator_frozen(toy_setup):
    gen, discs, batch = toy_setup
    before = {k: p.data.copy() for k, p in gen.params().items()}
    opt = AdamW(discs.params(), lr=1e-3)
    ld = train_step_d(gen, discs, batch, opt)
    assert np.isfinite(ld) and ld > 0
    for k, p in gen.params().items():
        assert np.array_equal(p.data, before[k])


def test_train_step_g_keeps_discriminators_frozen(toy_setup):
    gen, discs, batch = toy_setup
    before = {k: p.data.copy() for k, p in discs.params().items()}
    opt = AdamW(gen.params(), lr=1e-3)
    lg, parts = train_step_g(gen, discs, batch, opt, pqmf=PqmfBank(2))
    assert np.isfinite(lg)
    assert set(parts) == {"full", "sub", "adv", "feat", "total"}
    for k, p in discs.params().items():
        assert np.array_equal(p.data, before[k])
        assert p.requires_grad  # restored after the step


def test_lambda_override_reduces_to_reconstruction(toy_setup):
    from resound.losses import LossWeights
    gen, discs, batch = toy_setup
    opt = AdamW(gen.params(), lr=0.0)
    lg, parts = train_step_g(gen, discs, batch, opt, pqmf=PqmfBank(2),
                             weights=LossWeights(adv=0.0, feat=0.0))
    assert lg == pytest.approx(parts["full"] + parts["sub"], rel=1e-6)


def test_discriminator_loss_decreases_on_fixed_batch(toy_setup):
    gen, discs, batch = toy_setup
    opt = AdamW(discs.params(), lr=2e-3)
    losses = [train_step_d(gen, discs, batch, opt) for _ in range(8)]
    assert losses[-1] < losses[0]


# -- parameter counting ----------------------------------------------------------


def test_param_count_matches_hand_summed_architecture():
    cfg = GeneratorConfig(base_channels=8, tcn_blocks=2, tcn_layers=4,
                          tcn_hidden=16, tcn_kernel=3)
    gen = Generator(cfg, seed=0)
    c = 8
    kt, kf = 2, 3
    conv = lambda ci, co: co * ci * kt * kf + co
    want = conv(6, c)                      # first strided conv
    want += sum(conv(c + i * c, c) for i in range(4))     # encoder dense block
    want += 3 * conv(c, c)                 # remaining strided convs
    tcn_ch = c * (160 // 16)
    per_layer = (16 * tcn_ch * 3 + 16) + (tcn_ch * 16 * 1 + tcn_ch)
    want += 2 * 4 * per_layer              # dilated + pointwise convs
    want += 3 * conv(2 * c, c)             # transposed convs (same arithmetic)
    want += sum(conv(2 * c + i * c, c) for i in range(4))  # decoder dense block
    want += conv(2 * c, 6)                 # output layer
    assert param_count(gen) == want


# -- full-loss gradient check -------------------------------------------------------


def test_full_generator_loss_finite_difference():
    """Every generator parameter gradient vs central differences (64-bit)."""
    gen = Generator(TINY, seed=11, dtype=np.float64)
    discs = DiscriminatorSet(DTINY, resolutions=(16,), seed=12, dtype=np.float64)
    cfg = StftConfig(96, 48, 96)
    bank = PqmfBank(2)
    mr = MultiResConfig(resolutions=(16, 32))
    rng = np.random.default_rng(13)
    frames = 5
    deg6 = rng.standard_normal((1, 6, frames, 16)) * 0.3
    ref6 = rng.standard_normal((1, 6, frames, 16)) * 0.3
    length = (frames - 1) * cfg.hop + cfg.win_len
    clean = Tensor(rng.standard_normal(length) * 0.3)

    # fixed real-side discriminator features, computed once
    with ag.no_grad():
        real_feats = []
        for d, r in zip(discs.mrf, discs.resolutions):
            real_feats.append(mrf_discriminator_forward(d, clean, r)[1])
        for b, d in enumerate(discs.mb):
            real_feats.append(mb_discriminator_forward(d, Tensor(ref6), b)[1])
        real_feats = [[Tensor(x.data) for x in f] for f in real_feats]

    def full_loss():
        fake6 = gen.forward(Tensor(deg6))
        wave = istft_graph(fake6, cfg, length)
        full = mrstft_loss(clean, wave, mr)
        sub = subband_mrstft_loss(clean, wave, bank, mr)
        scores, feats = [], []
        for d, r in zip(discs.mrf, discs.resolutions):
            s, f = mrf_discriminator_forward(d, wave, r)
            scores.append(s)
            feats.append(f)
        for b, d in enumerate(discs.mb):
            s, f = mb_discriminator_forward(d, fake6, b)
            scores.append(s)
            feats.append(f)
        adv = lsgan_g_loss(scores)
        feat = feature_match_loss(real_feats, feats)
        total, _ = generator_total_loss(full, sub, adv, feat)
        return total

    params = list(gen.params().values())
    # h = 1e-6: wider steps straddle activation kinks in this piecewise-
    # linear composition. atol 1e-2 checks entries with gradients below it
    # to 1e-5 absolute; everything larger is held to 1e-3 relative.
    worst = ag.check_gradients(full_loss, params, h=1e-6, rtol=1e-3, atol=1e-2)
    assert worst < 1e-3


# -- checkpoints --------------------------------------------------------------------


def test_model_checkpoint_roundtrip(tmp_path):
    gen = Generator(SMALL, seed=20)
    path = tmp_path / "gen.ckpt"
    save_checkpoint(path, gen.state_arrays())
    gen2 = Generator(SMALL, seed=99)
    gen2.load_state_arrays(load_checkpoint(path))
    for k, p in gen.params().items():
        assert np.array_equal(p.data, gen2.params()[k].data)
