"""Deconvolutional generator and the semi-supervised (K + 1 class) step.

Generated L x d matrices are fed straight to the classifier as synthetic
sentence matrices and labelled with the extra class index ``K``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import GanConfig, TrainConfig
from .errors import ConfigError, ContractError, NumericError
from .layers import BatchNormParams, DeconvParams, DenseParams, batchnorm, deconv2d, dense
from .model import AcBlstmModel
from .optim import RMSprop, clip_global, collect_grads
from .tensor import Tensor


class Generator:
    def __init__(self, config: GanConfig, seed: int | None = None):
        self.config = config
        rng = np.random.default_rng([config.seed if seed is None else seed, 2])
        c = config.c_g
        self.fc = DenseParams.init(config.latent_dim, config.h * config.w * c, rng)
        self.bn0 = BatchNormParams.init(c)
        self.deconv1 = DeconvParams.init(c, c // 2, rng, stride=2)
        self.bn1 = BatchNormParams.init(c // 2)
        self.deconv2 = DeconvParams.init(c // 2, c // 4, rng, stride=2)
        self.bn2 = BatchNormParams.init(c // 4)
        self.deconv3 = DeconvParams.init(c // 4, 1, rng, stride=1)

    def named_parameters(self):
        for name in ("fc", "bn0", "deconv1", "bn1", "deconv2", "bn2", "deconv3"):
            yield from getattr(self, name).named_parameters(f"gen.{name}.")

    def parameters(self) -> dict:
        return dict(self.named_parameters())

    def state_dict(self) -> dict:
        state = {name: t.data.copy() for name, t in self.named_parameters()}
        for name in ("bn0", "bn1", "bn2"):
            for key, arr in getattr(self, name).named_buffers(f"gen.{name}."):
                state[key] = arr.copy()
        return state

    def load_state_dict(self, state: dict):
        for name, t in self.named_parameters():
            t.data = np.array(state[name], dtype=np.float64)
        for name in ("bn0", "bn1", "bn2"):
            bn = getattr(self, name)
            bn.running_mean = np.array(state[f"gen.{name}.running_mean"], dtype=np.float64)
            bn.running_var = np.array(state[f"gen.{name}.running_var"], dtype=np.float64)

    def zero_grads(self):
        T.zero_grads(self.parameters().values())

    def forward(self, z, mode="train", trace: list | None = None) -> Tensor:
        """Noise (B, latent) -> (B, L, d, 1) with values in (-1, 1).

        ``trace`` collects the (H, W, C) shape after each stage.
        """
        cfg = self.config
        z = T.as_tensor(z)
        if z.ndim != 2 or z.shape[1] != cfg.latent_dim:
            raise ContractError(f"noise must be (B, {cfg.latent_dim}), got {z.shape}")
        b = z.shape[0]
        x = T.reshape(dense(z, self.fc), (b, cfg.h, cfg.w, cfg.c_g))
        x = T.relu(batchnorm(x, self.bn0, mode))
        stages = [(self.deconv1, self.bn1), (self.deconv2, self.bn2), (self.deconv3, None)]
        if trace is not None:
            trace.append(x.shape[1:])
        for deconv, bn in stages:
            x = deconv2d(x, deconv)
            if trace is not None:
                trace.append(x.shape[1:])
            if bn is not None:
                x = T.relu(batchnorm(x, bn, mode))
        x = _pad_to(x, cfg.max_len, cfg.embed_dim)
        if trace is not None and trace[-1] != x.shape[1:]:
            trace.append(x.shape[1:])
        return T.tanh(x)

    __call__ = forward

    def sample(self, count: int, rng, mode="train") -> np.ndarray:
        """``count`` synthetic sentence matrices (count, L, d), no gradient.

        Batch norm in train mode needs two samples, so at least two are drawn.
        """
        z = sample_noise(max(count, 2), self.config.latent_dim, rng)
        out = self.forward(z, mode).data[:count]
        return out.reshape(count, self.config.max_len, self.config.embed_dim)


def _pad_to(x: Tensor, rows: int, cols: int) -> Tensor:
    b, h, w, c = x.shape
    if w < cols:
        x = T.concat([x, Tensor(np.zeros((b, h, cols - w, c)))], axis=2)
    elif w > cols:
        x = T.slice_(x, 2, 0, cols)
    if h < rows:
        x = T.concat([x, Tensor(np.zeros((b, rows - h, cols, c)))], axis=1)
    elif h > rows:
        x = T.slice_(x, 1, 0, rows)
    return x


def sample_noise(count: int, latent_dim: int, rng) -> np.ndarray:
    return rng.standard_normal((count, latent_dim))


def generator_forward(z, generator: Generator, mode="train") -> Tensor:
    return generator.forward(z, mode)


def mix_batch(x_real: np.ndarray, y_real: np.ndarray, gen_count: int,
              generator: Generator, num_classes: int, rng):
    """Append ``gen_count`` generated matrices labelled ``num_classes`` and
    shuffle. Returns ``(x, y, is_fake)``.

    With ``gen_count == 0`` the real batch comes back unchanged and ``rng``
    is not consumed.
    """
    if len(x_real) < 1:
        raise ConfigError("no real examples left in the batch; p_g is too large", key="p_g")
    if gen_count < 0:
        raise ConfigError("negative fake count", key="p_g")
    if gen_count == 0:
        return x_real, np.asarray(y_real), np.zeros(len(x_real), dtype=bool)
    fakes = generator.sample(gen_count, rng)
    x = np.concatenate([x_real, fakes], axis=0)
    y = np.concatenate([np.asarray(y_real), np.full(gen_count, num_classes)])
    is_fake = np.concatenate([np.zeros(len(x_real), bool), np.ones(gen_count, bool)])
    order = rng.permutation(len(x))
    return x[order], y[order], is_fake[order]


def generator_loss(model: AcBlstmModel, fake: Tensor) -> Tensor:
    """Mean of ``-log(1 - p_fake)`` over a batch of generated matrices."""
    k = model.config.num_classes
    logits = model.forward(fake, mode="eval")
    real_part = T.slice_(logits, 1, 0, k)
    return T.mean(T.sub(T.logsumexp(logits, axis=1), T.logsumexp(real_part, axis=1)))


@dataclass
class SemiSupervised:
    """Everything the semi-supervised path owns besides the classifier."""

    generator: Generator
    optimizer: RMSprop
    config: GanConfig
    rng: np.random.Generator

    @classmethod
    def create(cls, config: GanConfig, train: TrainConfig):
        return cls(Generator(config), RMSprop(train.learning_rate, train.rho, train.rms_eps),
                   config, np.random.default_rng([config.seed, 3]))


@dataclass
class SemiSupStep:
    loss_d: float
    loss_g: float
    sum_norm: float
    correct: int
    real_count: int


def semisup_train_step(model: AcBlstmModel, gan: SemiSupervised, x_real, y_real,
                       optimizer: RMSprop, train: TrainConfig, gen_count: int) -> SemiSupStep:
    """One classifier update on a mixed batch followed by one generator update."""
    if not model.config.extra_fake_class and gen_count > 0:
        raise ContractError("generated samples need a model with the extra fake class")
    k = model.config.num_classes
    x, y, is_fake = mix_batch(x_real, y_real, gen_count, gan.generator, k, gan.rng)

    params = model.parameters()
    T.zero_grads(params.values())
    logits = model.forward(x, mode="train")
    loss_d = T.softmax_cross_entropy(logits, y)
    if not np.isfinite(loss_d.data):
        raise NumericError("classifier loss is not finite")
    T.backward(loss_d)
    grads, norm = clip_global(collect_grads(params), train.clip_threshold, train.clip_mode)
    optimizer.step(params, grads)
    real = ~is_fake
    correct = int((logits.data[real, :k].argmax(axis=1) == y[real]).sum())

    loss_g = float("nan")
    if gen_count > 0:
        g_params = gan.generator.parameters()
        T.zero_grads(g_params.values())
        z = sample_noise(max(gen_count, 2), gan.config.latent_dim, gan.rng)
        fake = gan.generator.forward(z, mode="train")
        fake = T.reshape(fake, (fake.shape[0], gan.config.max_len, gan.config.embed_dim))
        lg = generator_loss(model, fake)
        if not np.isfinite(lg.data):
            T.zero_grads(params.values())
            raise NumericError("generator loss is not finite")
        T.backward(lg)
        g_grads, _ = clip_global(collect_grads(g_params), train.clip_threshold, train.clip_mode)
        gan.optimizer.step(g_params, g_grads)
        T.zero_grads(params.values())
        loss_g = float(lg.data)
    return SemiSupStep(float(loss_d.data), loss_g, norm, correct, int(real.sum()))
