"""Minimal reverse-mode autodiff over numpy arrays.

Only the operations the restoration/enhancement networks and their losses
need: elementwise math, reductions, shape ops, strided 1-D/2-D convolutions
(causal in time), real FFTs, framing/overlap-add, and the AdamW update.
Graphs are rebuilt on every forward pass (define-by-run); a graph can be
backpropagated exactly once.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

_grad_enabled = True
_check_finite = False


def set_finite_checks(enabled: bool) -> None:
    """Validate every op output for NaN/Inf (slow; meant for debugging)."""
    global _check_finite
    _check_finite = bool(enabled)


@contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-d value with an optional gradient slot and graph linkage."""

    __slots__ = ("data", "requires_grad", "grad", "_ctx", "_stale")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._ctx = None      # (backward_fn, parent tensors) for non-leaves
        self._stale = False

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other, self), self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    # -- backprop ---------------------------------------------------------

    def backward(self):
        """Populate .grad of every requires_grad tensor reachable from here.

        The loss must be scalar. The graph is consumed: a second backward
        through the same nodes raises.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss tensor")
        if self._stale:
            raise RuntimeError("backward on a stale graph (already consumed)")
        if self._ctx is None and not self.requires_grad:
            raise RuntimeError("loss tensor is not connected to any graph")

        # iterative topological order (DFS, post-order)
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for p in node._ctx[1]:
                    if p._ctx is not None or p.requires_grad:
                        stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._ctx is None:
                continue
            backward_fn, parents = node._ctx
            pgrads = backward_fn(g)
            for p, pg in zip(parents, pgrads):
                if pg is None or not (p.requires_grad or p._ctx is not None):
                    continue
                k = id(p)
                grads[k] = pg if k not in grads else grads[k] + pg
            node._ctx = None
            node._stale = True
        self._stale = True


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _make(data: np.ndarray, parents, backward_fn) -> Tensor:
    if _check_finite and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced by an op")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._ctx is not None for p in parents):
        out._ctx = (backward_fn, tuple(parents))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(grad.shape, shape)) if s == 1 and gs != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise ----------------------------------------------------------


def add(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _wrap(b, a)
    data = a.data + b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _wrap(b, a)
    data = a.data - b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _wrap(b, a)
    data = a.data * b.data
    return _make(data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _wrap(b, a)
    data = a.data / b.data
    return _make(data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(x):
    return _make(-x.data, (x,), lambda g: (-g,))


def pow_const(x, p):
    """x**p with a scalar exponent; gradient defined as 0 where x == 0."""
    p = float(p)
    data = np.power(x.data, p)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = p * np.power(x.data, p - 1.0)
        d = np.where(x.data == 0.0, 0.0, d)
        return (g * d,)

    return _make(data, (x,), backward)


def log(x):
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def exp(x):
    data = np.exp(x.data)
    return _make(data, (x,), lambda g: (g * data,))


def sqrt(x):
    data = np.sqrt(x.data)
    return _make(data, (x,), lambda g: (g * 0.5 / data,))


def abs_(x):
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def leaky_relu(x, slope=0.2):
    mult = np.where(x.data > 0, x.dtype.type(1.0), x.dtype.type(slope))
    return _make(x.data * mult, (x,), lambda g: (g * mult,))


def sigmoid(x):
    data = 1.0 / (1.0 + np.exp(-x.data))
    return _make(data, (x,), lambda g: (g * data * (1.0 - data),))


def hard_sigmoid(x):
    """clip(x + 0.5, 0, 1): reaches 0 and 1 exactly, unit slope inside."""
    data = np.clip(x.data + 0.5, 0.0, 1.0)
    mask = ((data > 0.0) & (data < 1.0)).astype(x.data.dtype)
    return _make(data, (x,), lambda g: (g * mask,))


def tanh(x):
    data = np.tanh(x.data)
    return _make(data, (x,), lambda g: (g * (1.0 - data * data),))


def complex_abs(re, im):
    """sqrt(re^2 + im^2) with gradient 0 at exactly zero magnitude."""
    m = np.sqrt(re.data * re.data + im.data * im.data)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            gr = g * re.data / m
            gi = g * im.data / m
        zero = m == 0.0
        return (np.where(zero, 0.0, gr), np.where(zero, 0.0, gi))

    return _make(m, (re, im), backward)


# -- reductions -----------------------------------------------------------


def sum_(x, axis=None, keepdims=False):
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(data, (x,), backward)


def mean(x, axis=None, keepdims=False):
    if axis is None:
        count = x.size
    else:
        ax = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in ax]))
    return sum_(x, axis, keepdims) * (1.0 / count)


# -- shape ops ------------------------------------------------------------


def reshape(x, shape):
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    axes = tuple(axes)
    inv = np.argsort(axes)
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def concat(tensors, axis=0):
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(data, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def slice_axis(x, axis, start, stop):
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def backward(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _make(x.data[idx], (x,), backward)


def pad_axis(x, axis, before, after):
    pads = [(0, 0)] * x.ndim
    pads[axis] = (before, after)
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(before, before + x.shape[axis])
    idx = tuple(idx)
    return _make(np.pad(x.data, pads), (x,), lambda g: (g[idx],))


def matmul(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _wrap(b, a)
    data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _make(data, (a, b), backward)


# -- convolutions ---------------------------------------------------------
#
# conv2d input layout is (N, C, T, F): time is padded causally (kt-1 zeros
# before frame 0, none after), frequency symmetrically for "same" coverage
# before the stride. Kernels are (O, C, kt, kf). The inner loops run over
# the (small) kernel support; each iteration is one BLAS matmul.


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._ctx is not None


def conv2d(x, w, stride=(1, 1)):
    """2-D cross-correlation, causal along time, 'same' along frequency.

    Output frame t depends on input frames <= t only; T' == T for unit
    time stride. Implemented as im2col + one matmul per call.
    """
    N, C, T, F = x.shape
    O, Cw, kt, kf = w.shape
    if Cw != C:
        raise ValueError(f"conv2d channel mismatch: input {C}, kernel {Cw}")
    st, sf = stride
    pfl = (kf - 1) // 2
    pfr = kf - 1 - pfl
    xp = np.pad(x.data, ((0, 0), (0, 0), (kt - 1, 0), (pfl, pfr)))
    xt = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))  # (N, Tp, Fp, C)
    To = (T - 1) // st + 1
    Fo = (F - 1) // sf + 1
    cols = np.empty((N, To, Fo, kt, kf, C), dtype=x.dtype)
    for dt in range(kt):
        for df in range(kf):
            cols[:, :, :, dt, df, :] = \
                xt[:, dt:dt + (To - 1) * st + 1:st, df:df + (Fo - 1) * sf + 1:sf, :]
    cols_flat = cols.reshape(N * To * Fo, kt * kf * C)
    wf = np.ascontiguousarray(w.data.transpose(0, 2, 3, 1)).reshape(O, kt * kf * C)
    data = (cols_flat @ wf.T).reshape(N, To, Fo, O).transpose(0, 3, 1, 2)

    def backward(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, O)
        dw = None
        if _needs_grad(w):
            dwf = gt.T @ cols_flat
            dw = dwf.reshape(O, kt, kf, C).transpose(0, 3, 1, 2).copy()
        dx = None
        if _needs_grad(x):
            dcols = (gt @ wf).reshape(N, To, Fo, kt, kf, C)
            dxt = np.zeros_like(xt)
            for dt in range(kt):
                for df in range(kf):
                    dxt[:, dt:dt + (To - 1) * st + 1:st,
                        df:df + (Fo - 1) * sf + 1:sf, :] += dcols[:, :, :, dt, df, :]
            dx = dxt.transpose(0, 3, 1, 2)[:, :, kt - 1:, pfl:pfl + F]
        return (dx, dw)

    return _make(data, (x, w), backward)


def conv_transpose2d(x, w, stride=(1, 2)):
    """Frequency-upsampling transposed conv; causal along time.

    The frequency axis runs the exact adjoint of conv2d's stride-sf 'same'
    geometry (output width sf*F). Along time the adjoint is evaluated on a
    (kt-1)-frame delayed input so no output frame references the future;
    equivalently out == conv2d-input-gradient delayed by kt-1 frames.
    Kernel layout (C_in, C_out, kt, kf).
    """
    Ci, Co, kt, kf = w.shape
    N, Cx, T, F = x.shape
    if Cx != Ci:
        raise ValueError(f"conv_transpose2d channel mismatch: input {Cx}, kernel {Ci}")
    st, sf = stride
    if st != 1:
        raise ValueError("conv_transpose2d supports unit time stride only")
    pfl = (kf - 1) // 2
    Fo = F * sf

    xtd = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1))  # (N,T,F,Ci)
    x_flat = xtd.reshape(N * T * F, Ci)
    w_all = np.ascontiguousarray(w.data.transpose(0, 2, 3, 1)).reshape(Ci, kt * kf * Co)
    taps = (x_flat @ w_all).reshape(N, T, F, kt, kf, Co)
    out = np.zeros((N, T, Fo, Co), dtype=x.dtype)
    for dt in range(kt):
        for df in range(kf):
            phi0 = df - pfl
            f_lo = -(phi0 // sf) if phi0 < 0 else 0
            f_hi = min(F - 1, (Fo - 1 - phi0) // sf)
            if f_hi < f_lo:
                continue
            out[:, dt:, f_lo * sf + phi0:f_hi * sf + phi0 + 1:sf, :] += \
                taps[:, :T - dt if dt else T, f_lo:f_hi + 1, dt, df, :]
    data = out.transpose(0, 3, 1, 2)

    def backward(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 3, 1))  # (N,T,Fo,Co)
        gcols = np.zeros((N, T, F, kt, kf, Co), dtype=g.dtype)
        for dt in range(kt):
            for df in range(kf):
                phi0 = df - pfl
                f_lo = -(phi0 // sf) if phi0 < 0 else 0
                f_hi = min(F - 1, (Fo - 1 - phi0) // sf)
                if f_hi < f_lo:
                    continue
                gcols[:, :T - dt if dt else T, f_lo:f_hi + 1, dt, df, :] = \
                    gt[:, dt:, f_lo * sf + phi0:f_hi * sf + phi0 + 1:sf, :]
        gcols_flat = gcols.reshape(N * T * F, kt * kf * Co)
        dx = None
        if _needs_grad(x):
            dx = (gcols_flat @ w_all.T).reshape(N, T, F, Ci).transpose(0, 3, 1, 2).copy()
        dw = None
        if _needs_grad(w):
            dw_all = x_flat.T @ gcols_flat
            dw = dw_all.reshape(Ci, kt, kf, Co).transpose(0, 3, 1, 2).copy()
        return (dx, dw)

    return _make(data, (x, w), backward)


def conv1d(x, w, stride=1, dilation=1, pad=(0, 0)):
    """1-D cross-correlation over the last axis of (N, C, T) input."""
    N, C, T = x.shape
    O, Cw, K = w.shape
    if Cw != C:
        raise ValueError(f"conv1d channel mismatch: input {C}, kernel {Cw}")
    pl, pr = pad
    span = (K - 1) * dilation
    To = (T + pl + pr - span - 1) // stride + 1
    if To <= 0:
        raise ValueError("conv1d output would be empty")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pl, pr)))
    xt = np.ascontiguousarray(xp.transpose(0, 2, 1))  # (N, Tp, C)
    cols = np.empty((N, To, K, C), dtype=x.dtype)
    for j in range(K):
        cols[:, :, j, :] = xt[:, j * dilation:j * dilation + (To - 1) * stride + 1:stride, :]
    cols_flat = cols.reshape(N * To, K * C)
    wf = np.ascontiguousarray(w.data.transpose(0, 2, 1)).reshape(O, K * C)
    data = (cols_flat @ wf.T).reshape(N, To, O).transpose(0, 2, 1)

    def backward(g):
        gt = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(-1, O)
        dw = None
        if _needs_grad(w):
            dw = (gt.T @ cols_flat).reshape(O, K, C).transpose(0, 2, 1).copy()
        dx = None
        if _needs_grad(x):
            dcols = (gt @ wf).reshape(N, To, K, C)
            dxt = np.zeros_like(xt)
            for j in range(K):
                dxt[:, j * dilation:j * dilation + (To - 1) * stride + 1:stride, :] += \
                    dcols[:, :, j, :]
            dx = dxt.transpose(0, 2, 1)[:, :, pl:pl + T].copy()
        return (dx, dw)

    return _make(data, (x, w), backward)


def dilated_conv1d(x, w, dilation=1):
    """Causal dilated conv: output t sees inputs {t, t-d, t-2d, ...} only."""
    K = w.shape[2]
    return conv1d(x, w, stride=1, dilation=dilation, pad=((K - 1) * dilation, 0))


# -- FFT / framing --------------------------------------------------------


def rfft_ri(x):
    """Real FFT of the last axis; output stacks (real, imag) on axis -2."""
    n = x.shape[-1]
    X = np.fft.rfft(x.data, axis=-1)
    data = np.stack([X.real, X.imag], axis=-2).astype(x.dtype)

    def backward(g):
        G = g[..., 0, :] + 1j * g[..., 1, :]
        full = np.zeros(g.shape[:-2] + (n,), dtype=complex)
        full[..., :G.shape[-1]] = G
        gx = n * np.fft.ifft(full, axis=-1).real
        return (gx.astype(x.dtype),)

    return _make(data, (x,), backward)


def irfft_ri(x, n):
    """Inverse real FFT; input stacks (real, imag) on axis -2."""
    X = x.data[..., 0, :] + 1j * x.data[..., 1, :]
    data = np.fft.irfft(X, n=n, axis=-1).astype(x.dtype)
    nb = x.shape[-1]

    def backward(g):
        R = np.fft.rfft(g, axis=-1)
        gre = (2.0 / n) * R.real
        gre[..., 0] *= 0.5
        if n % 2 == 0:
            gre[..., -1] *= 0.5
        gim = (2.0 / n) * R.imag
        gim[..., 0] = 0.0
        if n % 2 == 0:
            gim[..., -1] = 0.0
        return (np.stack([gre, gim], axis=-2).astype(x.dtype),)

    return _make(data, (x,), backward)


def frame(x, win_len, hop):
    """Slice a 1-D signal into overlapping frames (n_frames, win_len)."""
    T = x.shape[0]
    if T < win_len:
        raise ValueError("signal shorter than one window")
    n_frames = 1 + (T - win_len) // hop
    idx = np.arange(win_len)[None, :] + hop * np.arange(n_frames)[:, None]
    data = x.data[idx]

    def backward(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, idx, g)
        return (dx,)

    return _make(data, (x,), backward)


def overlap_add(frames, hop, length=None):
    """Sum overlapping frames (n_frames, win_len) back into a signal."""
    n_frames, win_len = frames.shape
    total = (n_frames - 1) * hop + win_len
    if length is None:
        length = total
    out = np.zeros(total, dtype=frames.dtype)
    for i in range(n_frames):
        out[i * hop:i * hop + win_len] += frames.data[i]
    data = out[:length]

    def backward(g):
        gfull = np.zeros(total, dtype=g.dtype)
        gfull[:length] = g
        idx = np.arange(win_len)[None, :] + hop * np.arange(n_frames)[:, None]
        return (gfull[idx],)

    return _make(data, (frames,), backward)


# -- optimizer ------------------------------------------------------------


class AdamW:
    """AdamW with decoupled weight decay and bias correction."""

    def __init__(self, params, lr=2e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        if isinstance(params, dict):
            self.params = dict(params)
        else:
            self.params = {str(i): p for i, p in enumerate(params)}
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / bc1
            vhat = v / bc2
            p.data -= (self.lr * (mhat / (np.sqrt(vhat) + self.eps))
                       + self.lr * self.weight_decay * p.data).astype(p.data.dtype)

    def state_arrays(self):
        """Optimizer state as flat named arrays, for checkpointing."""
        out = {"opt.step": np.array([float(self.step_count)], dtype=np.float32)}
        for k in self.params:
            out[f"opt.m.{k}"] = self.m[k]
            out[f"opt.v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays):
        self.step_count = int(round(float(arrays["opt.step"][0])))
        for k, p in self.params.items():
            self.m[k] = np.asarray(arrays[f"opt.m.{k}"], dtype=p.data.dtype).reshape(p.data.shape).copy()
            self.v[k] = np.asarray(arrays[f"opt.v.{k}"], dtype=p.data.dtype).reshape(p.data.shape).copy()


# -- gradient checking ----------------------------------------------------


def finite_difference_grad(fn, tensor, h=1e-3):
    """Central-difference gradient of scalar fn() wrt every tensor entry."""
    base = tensor.data
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        with no_grad():
            fp = fn().item()
        flat[i] = orig - h
        with no_grad():
            fm = fn().item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def check_gradients(fn, tensors, h=1e-3, rtol=1e-3, atol=1e-6):
    """Compare autograd against finite-difference gradients.

    Returns the worst relative error across all entries of all tensors.
    """
    for t in tensors:
        t.grad = None
    loss = fn()
    loss.backward()
    worst = 0.0
    for t in tensors:
        num = finite_difference_grad(fn, t, h)
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        denom = np.maximum(np.maximum(np.abs(num), np.abs(ana)), atol)
        rel = np.abs(ana - num) / denom
        worst = max(worst, float(rel.max()))
    if worst > rtol:
        raise AssertionError(f"gradient check failed: worst relative error {worst:.3e} > {rtol}")
    return worst
