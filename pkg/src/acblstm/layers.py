"""Layer primitives: asymmetric convolution stages, batch norm, dropout,
dense, LSTM/BLSTM and transposed convolution.

Parameter containers are small dataclasses of :class:`Tensor` fields. Layers
that are awkward to express through the generic ops (depthwise window
convolution, batch norm, transposed convolution) are implemented as fused
primitives with hand-written backward rules; each one is covered by a
finite-difference test.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor

INIT_SCALE = 0.08
FORGET_BIAS = 1.0


def _param(rng, *shape, scale=INIT_SCALE) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def _zeros_param(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class ParamsMixin:
    """Name/tensor enumeration over the dataclass's Tensor fields."""

    def named_parameters(self, prefix="") -> Iterator[tuple[str, Tensor]]:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Tensor):
                yield prefix + f.name, value

    def num_parameters(self) -> int:
        return sum(t.size for _, t in self.named_parameters())


@dataclass
class Conv1xdParams(ParamsMixin):
    weight: Tensor  # n x d
    bias: Tensor  # n

    @classmethod
    def init(cls, d, n, rng):
        if n < 1 or d < 1:
            raise ConfigError("conv_1xd needs n >= 1 and d >= 1")
        return cls(_param(rng, n, d), _zeros_param(n))

    @property
    def n(self):
        return self.weight.shape[0]


@dataclass
class ConvKx1Params(ParamsMixin):
    weight: Tensor  # n x k, row i is the window filter for channel i
    bias: Tensor  # n

    @classmethod
    def init(cls, n, k, rng):
        if k < 1:
            raise ConfigError("window length k must be >= 1")
        return cls(_param(rng, n, k), _zeros_param(n))

    @property
    def k(self):
        return self.weight.shape[1]


@dataclass
class DenseParams(ParamsMixin):
    weight: Tensor  # out x in
    bias: Tensor

    @classmethod
    def init(cls, n_in, n_out, rng):
        return cls(_param(rng, n_out, n_in), _zeros_param(n_out))


@dataclass
class LstmParams(ParamsMixin):
    """Gate weights stacked in the order input, forget, output, candidate."""

    w_in: Tensor  # 4h x in
    w_rec: Tensor  # 4h x h
    bias: Tensor  # 4h

    @classmethod
    def init(cls, n_in, hdim, rng):
        bias = np.zeros(4 * hdim)
        bias[hdim:2 * hdim] = FORGET_BIAS
        return cls(_param(rng, 4 * hdim, n_in), _param(rng, 4 * hdim, hdim),
                   Tensor(bias, requires_grad=True))

    @property
    def hdim(self):
        return self.w_rec.shape[1]

    def gate(self, name):
        """(input weights, recurrent weights, bias) rows for one gate."""
        h = self.hdim
        j = "ifog".index(name)
        rows = slice(j * h, (j + 1) * h)
        return self.w_in.data[rows], self.w_rec.data[rows], self.bias.data[rows]


@dataclass
class BatchNormParams(ParamsMixin):
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def init(cls, channels, momentum=0.9, eps=1e-5):
        if eps <= 0:
            raise ConfigError("batchnorm epsilon must be positive")
        return cls(Tensor(np.ones(channels), requires_grad=True), _zeros_param(channels),
                   np.zeros(channels), np.ones(channels), momentum, eps)

    def named_buffers(self, prefix=""):
        yield prefix + "running_mean", self.running_mean
        yield prefix + "running_var", self.running_var


@dataclass
class DeconvParams(ParamsMixin):
    weight: Tensor  # c_in x c_out x K x K
    bias: Tensor
    stride: int = field(default=2)

    @classmethod
    def init(cls, c_in, c_out, rng, stride=2, kernel=4):
        if c_in < 1 or c_out < 1:
            raise ShapeError("deconv channel counts must be >= 1")
        return cls(_param(rng, c_in, c_out, kernel, kernel), _zeros_param(c_out), stride)


# ----------------------------------------------------------------------------
# normalisation and regularisation


def batchnorm(x: Tensor, params: BatchNormParams, mode="train") -> Tensor:
    """Per-channel normalisation over every axis but the last."""
    c = x.shape[-1]
    if params.gamma.shape != (c,):
        raise ShapeError(f"batchnorm for {params.gamma.shape[0]} channels got {c}")
    axes = tuple(range(x.ndim - 1))
    gamma, beta = params.gamma, params.beta
    if mode == "train":
        if x.shape[0] < 2:
            raise ContractError("batchnorm in train mode needs a batch of at least 2")
        count = x.size // c
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + params.eps)
        xhat = (x.data - mu) * inv_std
        m = params.momentum
        params.running_mean = m * params.running_mean + (1 - m) * mu
        params.running_var = m * params.running_var + (1 - m) * var * count / max(count - 1, 1)

        def bw(g):
            dxhat = g * gamma.data
            dx = inv_std / count * (count * dxhat - dxhat.sum(axis=axes)
                                    - xhat * (dxhat * xhat).sum(axis=axes))
            return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    elif mode == "eval":
        inv_std = 1.0 / np.sqrt(params.running_var + params.eps)
        xhat = (x.data - params.running_mean) * inv_std

        def bw(g):
            return g * gamma.data * inv_std, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        raise ContractError(f"unknown mode {mode!r}")
    return T._result(gamma.data * xhat + beta.data, (x, gamma, beta), bw, "batchnorm")


def dropout(x: Tensor, rate: float, mode="train", rng=None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode != "train" or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("train-mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return T.mul(x, Tensor(keep))


# ----------------------------------------------------------------------------
# asymmetric convolution


def _bn_relu(pre, bn, mode):
    if bn is not None:
        pre = batchnorm(pre, bn, mode)
    return T.relu(pre)


def conv_1xd(x: Tensor, params: Conv1xdParams, bn: BatchNormParams | None = None,
             mode="eval") -> Tensor:
    """Per-word projection ``relu(w_i . x_j + b_i)``: (..., L, d) -> (..., L, n)."""
    if x.shape[-1] != params.weight.shape[1]:
        raise ShapeError(f"conv_1xd expects width {params.weight.shape[1]}, got {x.shape[-1]}")
    return _bn_relu(T.linear(x, params.weight, params.bias), bn, mode)


def window_conv(m: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Depthwise sliding window along axis 1 of a (B, L, n) map, no activation."""
    b, length, n = m.shape
    k = weight.shape[1]
    if weight.shape[0] != n:
        raise ShapeError(f"window filters cover {weight.shape[0]} channels, map has {n}")
    if length < k:
        raise ContractError(f"sequence of length {length} is shorter than window {k}")
    steps = length - k + 1
    windows = sliding_window_view(m.data, k, axis=1)  # B x steps x n x k
    out = np.einsum("btik,ik->bti", windows, weight.data) + bias.data

    def bw(g):
        gm = np.zeros(m.shape)
        for j in range(k):
            gm[:, j:j + steps, :] += g * weight.data[:, j]
        gw = np.einsum("bti,btik->ik", g, windows)
        return gm, gw, g.sum(axis=(0, 1))

    return T._result(out, (m, weight, bias), bw, "window_conv")


def conv_kx1(m: Tensor, params: ConvKx1Params, bn: BatchNormParams | None = None,
             mode="eval") -> Tensor:
    """Window of ``k`` features per channel: (B, L, n) -> (B, L - k + 1, n).

    A 2-D (L, n) map is treated as a batch of one.
    """
    squeeze = m.ndim == 2
    if squeeze:
        m = T.reshape(m, (1,) + m.shape)
    out = _bn_relu(window_conv(m, params.weight, params.bias), bn, mode)
    return T.reshape(out, out.shape[1:]) if squeeze else out


def dense(x: Tensor, params: DenseParams, activation="none") -> Tensor:
    out = T.linear(x, params.weight, params.bias)
    if activation == "relu":
        return T.relu(out)
    if activation != "none":
        raise ContractError(f"unknown activation {activation!r}")
    return out


# ----------------------------------------------------------------------------
# recurrent


def _cell(gates: Tensor, c: Tensor, hdim: int):
    i = T.sigmoid(T.slice_(gates, -1, 0, hdim))
    f = T.sigmoid(T.slice_(gates, -1, hdim, 2 * hdim))
    o = T.sigmoid(T.slice_(gates, -1, 2 * hdim, 3 * hdim))
    g = T.tanh(T.slice_(gates, -1, 3 * hdim, 4 * hdim))
    c_new = T.add(T.mul(f, c), T.mul(i, g))
    return T.mul(o, T.tanh(c_new)), c_new


def lstm_step(x_t: Tensor, state, params: LstmParams):
    """One LSTM step; ``state`` is ``(h, c)``. Returns ``(h', c')``."""
    h, c = state
    if x_t.shape[-1] != params.w_in.shape[1]:
        raise ShapeError(f"lstm input width {x_t.shape[-1]} != {params.w_in.shape[1]}")
    if h.shape[-1] != params.hdim or c.shape != h.shape:
        raise ShapeError("lstm state does not match hidden size")
    gates = T.add(T.linear(x_t, params.w_in, params.bias), T.linear(h, params.w_rec))
    return _cell(gates, c, params.hdim)


def lstm_sequence(seq: Tensor, params: LstmParams, reverse=False) -> Tensor:
    """Run over (B, T, in) and return per-step hidden states (B, T, h).

    ``reverse`` consumes the steps last-to-first but keeps outputs aligned
    with their input positions.
    """
    b, steps, _ = seq.shape
    hdim = params.hdim
    xproj = T.linear(seq, params.w_in, params.bias)
    h = Tensor(np.zeros((b, hdim)))
    c = Tensor(np.zeros((b, hdim)))
    outs = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        gates = T.add(T.select(xproj, 1, t), T.linear(h, params.w_rec))
        h, c = _cell(gates, c, hdim)
        outs[t] = h
    return T.stack(outs, axis=1)


def blstm_forward(seq: Tensor, layers, dropout_rate=0.0, mode="eval", rng=None) -> Tensor:
    """Stacked bidirectional LSTM over (B, T, in) or (T, in).

    ``layers`` is a sequence of ``(forward_params, backward_params)``.
    Dropout, when active, is applied to the input sequence only. Returns the
    last layer's per-step ``[forward; backward]`` states, width ``2 * h``.
    """
    if not layers:
        raise ContractError("blstm needs at least one layer")
    squeeze = seq.ndim == 2
    if squeeze:
        seq = T.reshape(seq, (1,) + seq.shape)
    if seq.shape[1] < 1:
        raise ContractError("empty sequence")
    x = dropout(seq, dropout_rate, mode, rng)
    for fwd, bwd in layers:
        x = T.concat([lstm_sequence(x, fwd), lstm_sequence(x, bwd, reverse=True)], axis=-1)
    return T.reshape(x, x.shape[1:]) if squeeze else x


# ----------------------------------------------------------------------------
# transposed convolution


def _crop(kernel, stride):
    total = kernel - stride
    lo = total // 2
    return lo, total - lo


def deconv2d(x: Tensor, params: DeconvParams) -> Tensor:
    """Transposed convolution on channels-last maps (B, H, W, C_in).

    Stride 2 crops one row/column per side so spatial size doubles; stride 1
    crops ``(1, 2)`` so it is preserved.
    """
    if x.ndim != 4:
        raise ShapeError(f"deconv2d expects (B, H, W, C), got {x.shape}")
    c_in, c_out, kh, kw = params.weight.shape
    if x.shape[-1] != c_in:
        raise ShapeError(f"deconv2d expects {c_in} input channels, got {x.shape[-1]}")
    s = params.stride
    if s not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {s}")
    b, h, w, _ = x.shape
    full_h, full_w = (h - 1) * s + kh, (w - 1) * s + kw
    (top, bottom), (left, right) = _crop(kh, s), _crop(kw, s)
    out_h, out_w = full_h - top - bottom, full_w - left - right
    wd = params.weight.data

    contrib = np.tensordot(x.data, wd, axes=([3], [0]))  # B H W Cout kh kw
    full_out = np.zeros((b, full_h, full_w, c_out))
    for i in range(kh):
        for j in range(kw):
            full_out[:, i:i + (h - 1) * s + 1:s, j:j + (w - 1) * s + 1:s, :] += contrib[..., i, j]
    out = full_out[:, top:top + out_h, left:left + out_w, :] + params.bias.data

    def bw(g):
        g_full = np.zeros((b, full_h, full_w, c_out))
        g_full[:, top:top + out_h, left:left + out_w, :] = g
        patches = np.empty((b, h, w, c_out, kh, kw))
        for i in range(kh):
            for j in range(kw):
                patches[..., i, j] = g_full[:, i:i + (h - 1) * s + 1:s, j:j + (w - 1) * s + 1:s, :]
        gx = np.tensordot(patches, wd, axes=([3, 4, 5], [1, 2, 3]))
        gw = np.tensordot(x.data, patches, axes=([0, 1, 2], [0, 1, 2]))
        return gx, gw, g.sum(axis=(0, 1, 2))

    return T._result(out, (x, params.weight, params.bias), bw, "deconv2d")
