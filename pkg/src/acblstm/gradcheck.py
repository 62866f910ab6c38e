"""Finite-difference checks over every differentiable op, layer and model.

Each check returns the max relative error from
:func:`acblstm.tensor.finite_diff_check`. ``run_gradcheck`` runs them all on
small random problems and returns ``{name: error}``.
"""
from __future__ import annotations

import numpy as np

from . import layers as Lyr
from . import tensor as T
from .config import GanConfig, ModelConfig
from .gan import Generator, generator_loss
from .model import AcBlstmModel
from .tensor import Tensor, finite_diff_check


def _away_from_zero(rng, shape, margin=1e-3):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * (margin + np.abs(x)), x)


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    # a generic scalar readout so every output coordinate carries gradient
    return T.sum_(T.mul(out, Tensor(weights)))


def _readout(rng, shape):
    return rng.normal(size=shape)


def _check_all(named, f, eps=1e-5):
    return max(finite_diff_check(lambda _x: f(), t, eps) for _, t in named)


def op_checks(rng) -> dict:
    errs = {}
    a = Tensor(rng.normal(size=(3, 4)))
    b = Tensor(rng.normal(size=(4, 2)))
    w = _readout(rng, (3, 2))
    f = lambda: _weighted_sum(T.matmul(a, b), w)
    errs["matmul"] = max(finite_diff_check(lambda _: f(), a), finite_diff_check(lambda _: f(), b))

    x = Tensor(rng.normal(size=(2, 5)))
    y = Tensor(rng.normal(size=(2, 5)))
    w = _readout(rng, (2, 5))
    for name, fn in [("add", lambda: T.add(x, y)), ("mul", lambda: T.mul(x, y)),
                     ("sigmoid", lambda: T.sigmoid(x)), ("tanh", lambda: T.tanh(x))]:
        errs[name] = finite_diff_check(lambda _: _weighted_sum(fn(), w), x)
    xr = Tensor(_away_from_zero(rng, (2, 5)))
    errs["relu"] = finite_diff_check(lambda t: _weighted_sum(T.relu(t), w), xr)

    c1, c2 = Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(2, 2)))
    wc = _readout(rng, (2, 4))
    g = lambda: _weighted_sum(T.slice_(T.concat([c1, c2], axis=1), 1, 1, 5), wc)
    errs["concat+slice"] = max(finite_diff_check(lambda _: g(), c1),
                               finite_diff_check(lambda _: g(), c2))
    s = Tensor(rng.normal(size=(3, 4)))
    wr, wm = _readout(rng, (4, 3)), _readout(rng, (4,))
    errs["sum/mean/reshape/transpose"] = finite_diff_check(
        lambda t: T.add(_weighted_sum(T.mean(T.transpose2d(t), axis=1), wm),
                        _weighted_sum(T.reshape(t, (4, 3)), wr)),
        s)
    logits = Tensor(rng.normal(size=(5, 3)))
    labels = rng.integers(0, 3, size=5)
    errs["softmax_cross_entropy"] = finite_diff_check(
        lambda t: T.softmax_cross_entropy(t, labels), logits)
    return errs


def layer_checks(rng) -> dict:
    errs = {}
    d, n, k, length, batch = 5, 3, 3, 7, 2
    x = Tensor(rng.normal(size=(batch, length, d)))
    conv1 = Lyr.Conv1xdParams.init(d, n, np.random.default_rng(1))
    conv1.weight.data = rng.normal(size=conv1.weight.shape)
    w = _readout(rng, (batch, length, n))
    f = lambda: _weighted_sum(Lyr.conv_1xd(x, conv1), w)
    errs["conv_1xd"] = _check_all([("x", x)] + list(conv1.named_parameters()), f)

    m = Tensor(rng.normal(size=(batch, length, n)))
    conv2 = Lyr.ConvKx1Params.init(n, k, np.random.default_rng(2))
    conv2.weight.data = rng.normal(size=conv2.weight.shape)
    w = _readout(rng, (batch, length - k + 1, n))
    f = lambda: _weighted_sum(Lyr.conv_kx1(m, conv2), w)
    errs["conv_kx1"] = _check_all([("m", m)] + list(conv2.named_parameters()), f)

    bn = Lyr.BatchNormParams.init(n)
    bn.gamma.data = rng.uniform(0.5, 1.5, size=n)
    bn.beta.data = rng.normal(size=n)
    w = _readout(rng, m.shape)
    for mode in ("train", "eval"):
        if mode == "eval":
            bn.running_mean = rng.normal(size=n)
            bn.running_var = rng.uniform(0.5, 2.0, size=n)
        f = lambda: _weighted_sum(Lyr.batchnorm(m, bn, mode), w)
        errs[f"batchnorm[{mode}]"] = _check_all([("m", m)] + list(bn.named_parameters()), f)

    dn = Lyr.DenseParams.init(4, 3, np.random.default_rng(3))
    xin = Tensor(rng.normal(size=(2, 4)))
    w = _readout(rng, (2, 3))
    f = lambda: _weighted_sum(Lyr.dense(xin, dn), w)
    errs["dense"] = _check_all([("x", xin)] + list(dn.named_parameters()), f)

    lp = Lyr.LstmParams.init(4, 3, np.random.default_rng(4))
    for t in lp.named_parameters():
        t[1].data = rng.normal(scale=0.5, size=t[1].shape)
    xt = Tensor(rng.normal(size=(2, 4)))
    h0, c0 = Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(2, 3)))
    w1, w2 = _readout(rng, (2, 3)), _readout(rng, (2, 3))

    def step():
        h, c = Lyr.lstm_step(xt, (h0, c0), lp)
        return T.add(_weighted_sum(h, w1), _weighted_sum(c, w2))

    errs["lstm_step"] = _check_all([("x", xt), ("h", h0), ("c", c0)]
                                   + list(lp.named_parameters()), step)

    layers = [(Lyr.LstmParams.init(4, 3, np.random.default_rng(5)),
               Lyr.LstmParams.init(4, 3, np.random.default_rng(6))),
              (Lyr.LstmParams.init(6, 3, np.random.default_rng(7)),
               Lyr.LstmParams.init(6, 3, np.random.default_rng(8)))]
    seq = Tensor(rng.normal(size=(2, 4, 4)))
    w = _readout(rng, (2, 4, 6))
    f = lambda: _weighted_sum(Lyr.blstm_forward(seq, layers), w)
    named = [("seq", seq)] + [p for f_, b_ in layers for p in
                              list(f_.named_parameters()) + list(b_.named_parameters())]
    errs["blstm"] = _check_all(named, f)

    for stride, name in ((2, "deconv2d[stride2]"), (1, "deconv2d[stride1]")):
        dp = Lyr.DeconvParams.init(2, 3, np.random.default_rng(9), stride=stride)
        dp.weight.data = rng.normal(size=dp.weight.shape)
        xin = Tensor(rng.normal(size=(1, 4, 4, 2)))
        out_hw = 4 * stride
        w = _readout(rng, (1, out_hw, out_hw, 3))
        f = lambda: _weighted_sum(Lyr.deconv2d(xin, dp), w)
        errs[name] = _check_all([("x", xin)] + list(dp.named_parameters()), f)
    return errs


def tiny_model(seed=0, extra_fake_class=False) -> AcBlstmModel:
    cfg = ModelConfig(max_len=6, embed_dim=3, num_classes=3, filters=2, lstm_dim=2,
                      lstm_layers=2, dropout_blstm_input=0.0, dropout_before_softmax=0.0,
                      extra_fake_class=extra_fake_class)
    model = AcBlstmModel(cfg, seed=seed)
    rng = np.random.default_rng(seed + 100)
    # spread the weights out so the check exercises non-trivial curvature
    for _, p in model.named_parameters():
        p.data = p.data * 6.0
    for br in model.branches:
        for bn in (br.bn1, br.bn2):
            bn.running_mean = rng.normal(scale=0.1, size=bn.running_mean.shape)
            bn.running_var = rng.uniform(0.5, 1.5, size=bn.running_var.shape)
    return model


def model_checks(rng) -> dict:
    model = tiny_model()
    x = Tensor(rng.normal(size=(2, 6, 3)))
    labels = np.array([0, 2])
    f = lambda: T.softmax_cross_entropy(model.forward(x, mode="eval"), labels)
    errs = {"model[input]": finite_diff_check(lambda _: f(), x)}
    errs["model[parameters]"] = _check_all(list(model.named_parameters()), f)

    gcfg = GanConfig(max_len=8, embed_dim=8, c_g=4, latent_dim=5, seed=3)
    disc = AcBlstmModel(ModelConfig(max_len=8, embed_dim=8, num_classes=2, filters=2,
                                    lstm_dim=2, dropout_blstm_input=0.0,
                                    dropout_before_softmax=0.0, extra_fake_class=True), seed=4)
    gen = Generator(gcfg)
    for bn in (gen.bn0, gen.bn1, gen.bn2):
        bn.running_mean = rng.normal(scale=0.1, size=bn.running_mean.shape)
        bn.running_var = rng.uniform(0.5, 1.5, size=bn.running_var.shape)
    z = rng.normal(size=(2, 5))

    def g_loss():
        fake = gen.forward(z, mode="eval")
        return generator_loss(disc, T.reshape(fake, (2, 8, 8)))

    errs["generator_loss"] = _check_all(list(gen.named_parameters()), g_loss)
    return errs


def run_gradcheck(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    errs = {}
    errs.update(op_checks(rng))
    errs.update(layer_checks(rng))
    errs.update(model_checks(rng))
    return errs
