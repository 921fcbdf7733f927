"""Engine tests: op semantics vs naive oracles, finite-difference grads."""

import numpy as np
import pytest

from resound import autograd as ag
from resound import nn


rng = np.random.default_rng(1234)


def t64(arr, grad=True):
    return ag.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


# -- naive oracles ---------------------------------------------------------


def conv2d_loops(x, w, stride):
    """Direct quadruple-loop conv with causal-time / same-freq padding."""
    N, C, T, F = x.shape
    O, _, kt, kf = w.shape
    st, sf = stride
    pfl = (kf - 1) // 2
    To = (T - 1) // st + 1
    Fo = (F - 1) // sf + 1
    out = np.zeros((N, O, To, Fo))
    for n in range(N):
        for o in range(O):
            for t in range(To):
                for f in range(Fo):
                    acc = 0.0
                    for c in range(C):
                        for dt in range(kt):
                            for df in range(kf):
                                ti = t * st + dt - (kt - 1)
                                fi = f * sf + df - pfl
                                if 0 <= ti < T and 0 <= fi < F:
                                    acc += x[n, c, ti, fi] * w[o, c, dt, df]
                    out[n, o, t, f] = acc
    return out


def conv_transpose2d_loops(x, w, sf):
    """Scatter-add oracle: out[co, t, f*sf+df-pfl] += x[ci, t-dt, f]*w[ci,co,dt,df]."""
    N, Ci, T, F = x.shape
    _, Co, kt, kf = w.shape
    pfl = (kf - 1) // 2
    Fo = F * sf
    out = np.zeros((N, Co, T, Fo))
    for n in range(N):
        for ci in range(Ci):
            for t in range(T):
                for f in range(F):
                    for co in range(Co):
                        for dt in range(kt):
                            for df in range(kf):
                                to = t + dt
                                fo = f * sf + df - pfl
                                if to < T and 0 <= fo < Fo:
                                    out[n, co, to, fo] += x[n, ci, t, f] * w[ci, co, dt, df]
    return out


def conv1d_loops(x, w, dilation):
    """Causal dilated conv oracle."""
    N, C, T = x.shape
    O, _, K = w.shape
    out = np.zeros((N, O, T))
    for n in range(N):
        for o in range(O):
            for t in range(T):
                for c in range(C):
                    for j in range(K):
                        ti = t - (K - 1 - j) * dilation
                        if ti >= 0:
                            out[n, o, t] += x[n, c, ti] * w[o, c, j]
    return out


# -- conv semantics --------------------------------------------------------


def test_conv2d_zero_kernel():
    x = t64(rng.standard_normal((1, 1, 4, 6)), grad=False)
    w = t64(np.zeros((1, 1, 2, 3)), grad=False)
    assert np.all(ag.conv2d(x, w).data == 0.0)


def test_conv2d_identity_kernel():
    x = t64(rng.standard_normal((1, 1, 5, 8)), grad=False)
    w = np.zeros((1, 1, 2, 3))
    w[0, 0, 1, 1] = 1.0  # causal-current time tap, center frequency tap
    y = ag.conv2d(x, t64(w, grad=False), (1, 1))
    np.testing.assert_allclose(y.data, x.data, rtol=0, atol=0)


def test_conv2d_matches_loop_oracle():
    x = rng.standard_normal((1, 2, 5, 8))
    w = rng.standard_normal((1, 2, 2, 3))
    for stride in [(1, 1), (1, 2), (2, 2)]:
        got = ag.conv2d(t64(x, grad=False), t64(w, grad=False), stride).data
        want = conv2d_loops(x, w, stride)
        np.testing.assert_allclose(got, want, atol=1e-6)


def test_conv_transpose2d_zero_input():
    x = t64(np.zeros((1, 2, 4, 6)), grad=False)
    w = t64(rng.standard_normal((2, 1, 2, 3)), grad=False)
    assert np.all(ag.conv_transpose2d(x, w).data == 0.0)


def test_conv_transpose2d_matches_scatter_oracle():
    x = rng.standard_normal((1, 2, 5, 4))
    w = rng.standard_normal((2, 3, 2, 3))
    got = ag.conv_transpose2d(t64(x, grad=False), t64(w, grad=False), (1, 2)).data
    want = conv_transpose2d_loops(x, w, 2)
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_conv_transpose2d_is_delayed_conv2d_input_grad():
    # definitional identity: the op equals conv2d's backward-input
    # computation once its (kt-1)-frame causal delay is aligned out
    g = rng.standard_normal((1, 3, 6, 8))
    w = rng.standard_normal((3, 2, 2, 3))
    dummy = t64(rng.standard_normal((1, 2, 6, 16)))
    out = ag.conv2d(dummy, t64(w, grad=False), (1, 2))
    ag.sum_(out * t64(g, grad=False)).backward()
    dx = dummy.grad
    y = ag.conv_transpose2d(t64(g, grad=False), t64(w, grad=False), (1, 2)).data
    kt = 2
    np.testing.assert_allclose(y[:, :, kt - 1:, :], dx[:, :, :-(kt - 1), :], atol=1e-12)


def test_dilated_conv1d_dilation1_is_plain_conv():
    x = rng.standard_normal((1, 2, 7))
    w = rng.standard_normal((2, 2, 3))
    got = ag.dilated_conv1d(t64(x, grad=False), t64(w, grad=False), 1).data
    np.testing.assert_allclose(got, conv1d_loops(x, w, 1), atol=1e-12)


def test_dilated_conv1d_impulse_taps():
    x = np.zeros((1, 1, 8))
    x[0, 0, 2] = 1.0
    w = np.ones((1, 1, 2))
    y = ag.dilated_conv1d(t64(x, grad=False), t64(w, grad=False), 2).data[0, 0]
    # kernel [1, 1] at dilation 2: the impulse lands at t and again at t+2
    assert y[2] == 1.0 and y[4] == 1.0
    assert y.sum() == 2.0


def test_dilated_conv1d_matches_loop_oracle():
    x = rng.standard_normal((2, 3, 9))
    w = rng.standard_normal((4, 3, 3))
    got = ag.dilated_conv1d(t64(x, grad=False), t64(w, grad=False), 3).data
    np.testing.assert_allclose(got, conv1d_loops(x, w, 3), atol=1e-6)


# -- pointwise -------------------------------------------------------------


def test_leaky_relu_values():
    y = ag.leaky_relu(t64([-1.0, 2.0], grad=False), 0.2).data
    assert y[0] == pytest.approx(-0.2) and y[1] == pytest.approx(2.0)


def test_sigmoid_grad_at_zero_is_quarter():
    x = t64([0.0])
    ag.sum_(ag.sigmoid(x)).backward()
    fd = ag.finite_difference_grad(lambda: ag.sum_(ag.sigmoid(x)), x, h=1e-5)
    assert x.grad[0] == pytest.approx(0.25, abs=1e-12)
    assert x.grad[0] == pytest.approx(fd[0], abs=1e-8)


def test_hard_sigmoid_reaches_bounds():
    y = ag.hard_sigmoid(t64([-2.0, 0.0, 2.0], grad=False)).data
    np.testing.assert_allclose(y, [0.0, 0.5, 1.0])


def test_weight_norm_identity_configuration():
    # with g == ||v|| the effective kernel equals v
    layer = nn.WeightNormConv2d(rng, 2, 3, (3, 3), dtype=np.float64)
    np.testing.assert_allclose(layer.weight().data, layer.v.data, rtol=1e-12)


# -- backward fundamentals ---------------------------------------------------


def test_backward_sum_gives_ones():
    x = t64(rng.standard_normal((3, 4)))
    ag.sum_(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_sum_of_squares():
    x = t64(rng.standard_normal(5))
    ag.sum_(x * x).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-12)


def test_backward_accumulates_across_uses():
    x = t64([3.0])
    y = x * 2.0 + x * 5.0
    ag.sum_(y).backward()
    assert x.grad[0] == pytest.approx(7.0)


def test_backward_stale_graph_raises():
    x = t64([1.0, 2.0])
    loss = ag.sum_(x * x)
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_no_grad_blocks_graph():
    x = t64([1.0])
    with ag.no_grad():
        y = x * 2.0
    assert y._ctx is None and not y.requires_grad


# -- finite-difference checks for every op ---------------------------------


C34 = t64(np.random.default_rng(5).standard_normal((3, 4)), grad=False)
C14 = t64(np.random.default_rng(6).standard_normal((1, 4)), grad=False)
D34 = t64(2.0 + np.random.default_rng(8).random((3, 4)), grad=False)


@pytest.mark.parametrize("name,builder", [
    ("add", lambda x: x + C34),
    ("add_broadcast", lambda x: x + C14),
    ("sub", lambda x: C34 - x),
    ("mul", lambda x: x * C34),
    ("div", lambda x: x / D34),
    ("rdiv", lambda x: C34 / (x * x + 1.0)),
    ("neg", lambda x: -x),
    ("pow", lambda x: (x * x + 0.5) ** 0.3),
    ("log", lambda x: ag.log(x * x + 0.5)),
    ("exp", lambda x: ag.exp(x * 0.3)),
    ("sqrt", lambda x: ag.sqrt(x * x + 0.5)),
    ("abs", lambda x: ag.abs_(x + 0.05)),
    ("leaky_relu", lambda x: ag.leaky_relu(x + 0.05, 0.2)),
    ("sigmoid", ag.sigmoid),
    ("tanh", ag.tanh),
    ("mean_axis", lambda x: ag.mean(x, axis=1) ** 2.0),
    ("reshape", lambda x: x.reshape(-1) ** 2.0),
    ("transpose", lambda x: ag.transpose(x, (1, 0)) ** 2.0),
    ("slice", lambda x: ag.slice_axis(x, 1, 1, 3) ** 2.0),
    ("pad", lambda x: ag.pad_axis(x, 0, 2, 1) ** 2.0),
])
def test_elementwise_gradients(name, builder):
    x = t64(rng.standard_normal((3, 4)) * 0.7)
    ag.check_gradients(lambda: ag.sum_(builder(x)), [x], h=1e-4, rtol=1e-5)


def test_concat_gradients():
    a = t64(rng.standard_normal((2, 3)))
    b = t64(rng.standard_normal((2, 5)))
    ag.check_gradients(lambda: ag.sum_(ag.concat([a, b], axis=1) ** 2.0), [a, b], h=1e-4, rtol=1e-5)


def test_matmul_gradients():
    a = t64(rng.standard_normal((3, 4)))
    b = t64(rng.standard_normal((4, 2)))
    ag.check_gradients(lambda: ag.sum_(ag.matmul(a, b) ** 2.0), [a, b], h=1e-4, rtol=1e-5)


def test_complex_abs_gradients_and_zero():
    re = t64(rng.standard_normal(6) + 0.5)
    im = t64(rng.standard_normal(6) + 0.5)
    ag.check_gradients(lambda: ag.sum_(ag.complex_abs(re, im)), [re, im], h=1e-5, rtol=1e-5)
    z = t64([0.0])
    ag.sum_(ag.complex_abs(z, t64([0.0], grad=False))).backward()
    assert z.grad[0] == 0.0  # defined gradient at zero magnitude


def test_conv_gradients():
    x = t64(rng.standard_normal((1, 2, 5, 8)))
    w = t64(rng.standard_normal((3, 2, 2, 3)))
    ag.check_gradients(lambda: ag.sum_(ag.conv2d(x, w, (1, 2)) ** 2.0), [x, w], h=1e-4, rtol=1e-4)
    wt = t64(rng.standard_normal((2, 3, 2, 3)))
    ag.check_gradients(lambda: ag.sum_(ag.conv_transpose2d(x, wt, (1, 2)) ** 2.0), [x, wt], h=1e-4, rtol=1e-4)
    x1 = t64(rng.standard_normal((2, 3, 9)))
    w1 = t64(rng.standard_normal((4, 3, 3)))
    ag.check_gradients(lambda: ag.sum_(ag.dilated_conv1d(x1, w1, 2) ** 2.0), [x1, w1], h=1e-4, rtol=1e-4)


def test_fft_and_framing_gradients():
    x = t64(rng.standard_normal(16))
    c = t64(rng.standard_normal((2, 9)), grad=False)
    ag.check_gradients(lambda: ag.sum_(ag.rfft_ri(x) * c), [x], h=1e-4, rtol=1e-5)
    xc = t64(rng.standard_normal((2, 9)))
    cw = t64(rng.standard_normal(16), grad=False)
    ag.check_gradients(lambda: ag.sum_(ag.irfft_ri(xc, 16) * cw), [xc], h=1e-4, rtol=1e-5)
    s = t64(rng.standard_normal(40))
    ag.check_gradients(lambda: ag.sum_(ag.frame(s, 8, 4) ** 2.0), [s], h=1e-4, rtol=1e-5)
    fr = t64(rng.standard_normal((5, 8)))
    ag.check_gradients(lambda: ag.sum_(ag.overlap_add(fr, 4, 30) ** 2.0), [fr], h=1e-4, rtol=1e-5)


def test_weight_norm_gradients():
    layer = nn.WeightNormConv2d(rng, 2, 2, (2, 3), dtype=np.float64)
    x = t64(rng.standard_normal((1, 2, 4, 6)), grad=False)
    ps = list(layer.params().values())
    ag.check_gradients(lambda: ag.sum_(layer.forward(x) ** 2.0), ps, h=1e-4, rtol=1e-4)


# -- causality and determinism ----------------------------------------------


def test_conv_stack_causality():
    """Perturbing input frame t never changes stack output frames < t."""
    r = np.random.default_rng(7)
    layers = [nn.Conv2d(r, 2, 4, (2, 3), (1, 2), dtype=np.float64),
              nn.Conv2d(r, 4, 4, (2, 3), (1, 1), dtype=np.float64)]
    tcn = nn.CausalConv1d(r, 4 * 4, 4 * 4, 3, dilation=2, dtype=np.float64)

    def run(x):
        h = ag.Tensor(x)
        for l in layers:
            h = ag.leaky_relu(l.forward(h))
        N, C, T, F = h.shape
        h = ag.reshape(ag.transpose(h, (0, 1, 3, 2)), (N, C * F, T))
        h = tcn.forward(h)
        return h.data

    x = r.standard_normal((1, 2, 12, 8))
    base = run(x)
    for t_hit in [3, 7, 11]:
        xp = x.copy()
        xp[:, :, t_hit, :] += 10.0
        pert = run(xp)
        assert np.array_equal(pert[..., :t_hit], base[..., :t_hit])
        assert not np.array_equal(pert[..., t_hit:], base[..., t_hit:])


def test_fixed_seed_bitwise_determinism():
    def build_and_run(seed):
        r = np.random.default_rng(seed)
        layer = nn.Conv2d(r, 2, 3, dtype=np.float32)
        x = ag.Tensor(np.asarray(r.standard_normal((1, 2, 6, 8)), dtype=np.float32),
                      requires_grad=True)
        loss = ag.sum_(layer.forward(x) ** 2.0)
        loss.backward()
        return loss.item(), x.grad.copy(), layer.w.grad.copy()

    l1, gx1, gw1 = build_and_run(42)
    l2, gx2, gw2 = build_and_run(42)
    assert l1 == l2
    assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


# -- AdamW -------------------------------------------------------------------


def test_adamw_zero_grad_zero_decay_no_change():
    p = t64([1.5, -2.0])
    opt = ag.AdamW({"p": p}, lr=1e-2, weight_decay=0.0)
    p.grad = np.zeros_like(p.data)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.5, -2.0])


def test_adamw_single_scalar_hand_computed():
    # one step, g = 1: m-hat = 1, v-hat = 1 -> update = lr / (1 + eps)
    p = t64([0.0])
    lr, eps = 2e-4, 1e-8
    opt = ag.AdamW({"p": p}, lr=lr, betas=(0.9, 0.999), eps=eps, weight_decay=0.0)
    p.grad = np.array([1.0])
    opt.step()
    m_hat = (0.1 * 1.0) / (1 - 0.9)
    v_hat = (0.001 * 1.0) / (1 - 0.999)
    expected = -lr * m_hat / (np.sqrt(v_hat) + eps)
    assert p.data[0] == pytest.approx(expected, rel=1e-12)


def test_adamw_decoupled_decay_shrinks():
    p = t64([4.0])
    opt = ag.AdamW({"p": p}, lr=1e-2, weight_decay=0.1)
    p.grad = np.array([0.0])
    opt.step()
    assert p.data[0] == pytest.approx(4.0 * (1 - 1e-2 * 0.1), rel=1e-12)


def test_adamw_state_roundtrip():
    p = t64(rng.standard_normal(4).astype(np.float32))
    opt = ag.AdamW({"p": p}, lr=1e-3)
    p.grad = np.ones(4, dtype=np.float32)
    opt.step()
    state = {k: v.copy() for k, v in opt.state_arrays().items()}
    opt2 = ag.AdamW({"p": p}, lr=1e-3)
    opt2.load_state_arrays(state)
    assert opt2.step_count == 1
    np.testing.assert_array_equal(opt2.m["p"], opt.m["p"])
    np.testing.assert_array_equal(opt2.v["p"], opt.v["p"])


# -- module parameter plumbing ------------------------------------------------


def test_module_param_count_conv():
    r = np.random.default_rng(0)
    layer = nn.Conv2d(r, 8, 16, (2, 3))
    assert layer.param_count() == 16 * 8 * 2 * 3 + 16


def test_weight_norm_param_count():
    # g adds one scalar per output channel on top of v and the bias
    r = np.random.default_rng(0)
    layer = nn.WeightNormConv2d(r, 8, 16, (3, 3))
    assert layer.param_count() == 16 * 8 * 3 * 3 + 16 + 16
