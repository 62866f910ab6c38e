import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acblstm import tensor as T
from acblstm.config import GanConfig, ModelConfig, TrainConfig
from acblstm.errors import ConfigError, ContractError
from acblstm.gan import (Generator, SemiSupervised, generator_loss, mix_batch,
                         sample_noise, semisup_train_step)
from acblstm.model import AcBlstmModel
from acblstm.optim import RMSprop, clip_global, collect_grads
from acblstm.tensor import Tensor, finite_diff_check


def small_gan(L=12, d=8, c_g=8, p_g=0.25, seed=0):
    return GanConfig(max_len=L, embed_dim=d, c_g=c_g, p_g=p_g, latent_dim=6, seed=seed)


def classifier(L=12, d=8, K=2, n=3, dropout=0.0, seed=0):
    return AcBlstmModel(ModelConfig(max_len=L, embed_dim=d, num_classes=K, filters=n, lstm_dim=n,
                                    dropout_blstm_input=dropout, dropout_before_softmax=dropout,
                                    extra_fake_class=True), seed=seed)


class TestGenerator:
    def test_stage_chain_40x300(self):
        g = Generator(GanConfig(max_len=40, embed_dim=300, c_g=100), seed=0)
        trace = []
        out = g.forward(sample_noise(2, 100, np.random.default_rng(0)), "train", trace)
        assert trace == [(10, 75, 100), (20, 150, 50), (40, 300, 25), (40, 300, 1)]
        assert out.shape == (2, 40, 300, 1)

    def test_output_in_open_interval(self):
        g = Generator(small_gan())
        out = g.forward(sample_noise(4, 6, np.random.default_rng(1)), "train").data
        assert np.all(np.abs(out) < 1)

    def test_seeded(self):
        z = sample_noise(3, 6, np.random.default_rng(2))
        a = Generator(small_gan(), seed=4).forward(z).data
        b = Generator(small_gan(), seed=4).forward(z).data
        assert a.tobytes() == b.tobytes()

    def test_noise_width_checked(self):
        with pytest.raises(ContractError):
            Generator(small_gan()).forward(np.zeros((2, 5)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 16), st.integers(2, 16))
    def test_shape_sweep(self, a, b):
        L, d = 4 * a, 4 * b
        g = Generator(GanConfig(max_len=L, embed_dim=d, c_g=4, latent_dim=3), seed=0)
        out = g.forward(sample_noise(2, 3, np.random.default_rng(0)))
        assert out.shape == (2, L, d, 1)

    @pytest.mark.parametrize("L,d", [(13, 9), (42, 302), (9, 15)])
    def test_indivisible_sizes_fit_exactly(self, L, d):
        g = Generator(GanConfig(max_len=L, embed_dim=d, c_g=4, latent_dim=3), seed=0)
        assert g.sample(2, np.random.default_rng(0)).shape == (2, L, d)

    def test_c_g_multiple_of_four(self):
        with pytest.raises(ConfigError):
            GanConfig(max_len=8, embed_dim=8, c_g=6)

    def test_state_round_trip(self):
        a, b = Generator(small_gan(), seed=1), Generator(small_gan(), seed=2)
        z = sample_noise(3, 6, np.random.default_rng(0))
        a.forward(z, "train")
        b.load_state_dict(a.state_dict())
        assert a.forward(z, "eval").data.tobytes() == b.forward(z, "eval").data.tobytes()


class TestMixBatch:
    def test_mr_row(self):
        cfg = small_gan(p_g=0.2)
        m = 50
        k = cfg.fake_count(m)
        assert k == 10
        rng = np.random.default_rng(0)
        x_real = rng.normal(size=(m - k, 12, 8))
        y_real = rng.integers(0, 2, size=m - k)
        x, y, fake = mix_batch(x_real, y_real, k, Generator(cfg), 2, np.random.default_rng(1))
        assert len(x) == m and fake.sum() == 10
        assert np.all(y[fake] == 2) and np.all(y[~fake] < 2)

    def test_fakes_come_from_generator(self):
        cfg = small_gan()
        g = Generator(cfg, seed=3)
        x_real = np.full((4, 12, 8), 5.0)
        x, _, fake = mix_batch(x_real, np.zeros(4, int), 3, g, 2, np.random.default_rng(7))
        expected = Generator(cfg, seed=3).sample(3, np.random.default_rng(7))
        got = x[fake]
        # shuffling permutes fakes among themselves; compare as sets of rows
        key = lambda a: sorted(r.tobytes() for r in a)
        assert key(got) == key(expected)
        assert np.all(x[~fake] == 5.0)

    def test_zero_fakes_is_identity(self):
        rng = np.random.default_rng(5)
        before = rng.bit_generator.state
        x_real = np.arange(24.0).reshape(3, 2, 4)
        x, y, fake = mix_batch(x_real, [0, 1, 0], 0, None, 2, rng)
        assert x is x_real and y.tolist() == [0, 1, 0] and not fake.any()
        assert rng.bit_generator.state == before

    def test_no_real_examples_left(self):
        with pytest.raises(ConfigError):
            mix_batch(np.zeros((0, 12, 8)), [], 5, Generator(small_gan()), 2,
                      np.random.default_rng(0))


class TestSemiSupervisedStep:
    def setup_step(self, dropout=0.0, seed=0):
        model = classifier(dropout=dropout, seed=seed)
        train = TrainConfig(batch_size=8)
        gan = SemiSupervised.create(small_gan(seed=seed), train)
        rng = np.random.default_rng(seed + 10)
        x = rng.normal(scale=0.2, size=(6, 12, 8))
        y = np.array([0, 1, 0, 1, 0, 1])
        return model, gan, train, x, y

    def test_untrained_loss_near_ln3(self):
        model, gan, train, x, y = self.setup_step()
        step = semisup_train_step(model, gan, x, y, RMSprop(), train, gen_count=3)
        assert abs(step.loss_d - math.log(3)) < 0.02
        assert math.isfinite(step.loss_g) and step.real_count == 6

    def test_needs_extra_class(self):
        model = AcBlstmModel(ModelConfig(max_len=12, embed_dim=8, num_classes=2, filters=3,
                                         lstm_dim=3), seed=0)
        _, gan, train, x, y = self.setup_step()
        with pytest.raises(ContractError):
            semisup_train_step(model, gan, x, y, RMSprop(), train, gen_count=2)

    def test_discriminator_learns_with_frozen_generator(self):
        model, gan, train, x, y = self.setup_step()
        xm, ym, _ = mix_batch(x, y, 3, gan.generator, 2, gan.rng)
        opt = RMSprop(learning_rate=1e-3)
        params = model.parameters()
        losses = []
        for _ in range(50):
            T.zero_grads(params.values())
            loss = T.softmax_cross_entropy(model.forward(xm, "train"), ym)
            T.backward(loss)
            grads, _ = clip_global(collect_grads(params), train.clip_threshold)
            opt.step(params, grads)
            losses.append(float(loss.data))
        slope = np.polyfit(np.arange(50), losses, 1)[0]
        assert slope < 0
        assert np.mean(losses[-10:]) < np.mean(losses[:10])

    def test_generator_loss_gradient(self):
        model = classifier(seed=1)
        gen = Generator(small_gan(), seed=1)
        for bn in (gen.bn0, gen.bn1, gen.bn2):
            bn.running_var = np.linspace(0.5, 1.5, bn.running_var.size)
        z = Tensor(sample_noise(2, 6, np.random.default_rng(3)))

        def f(_):
            fake = gen.forward(z, "eval")
            return generator_loss(model, T.reshape(fake, (2, 12, 8)))

        for name, p in gen.named_parameters():
            assert finite_diff_check(f, p) < 1e-4, name

    def test_updates_are_isolated(self):
        # copy B replays only the classifier half of the step
        a_model, a_gan, train, x, y = self.setup_step()
        b_model, b_gan, _, _, _ = self.setup_step()
        g_before = {k: v.copy() for k, v in a_gan.generator.state_dict().items()
                    if "running" not in k}

        semisup_train_step(a_model, a_gan, x, y, RMSprop(), train, gen_count=3)

        xm, ym, _ = mix_batch(x, y, 3, b_gan.generator, 2, b_gan.rng)
        params = b_model.parameters()
        loss = T.softmax_cross_entropy(b_model.forward(xm, "train"), ym)
        T.backward(loss)
        grads, _ = clip_global(collect_grads(params), train.clip_threshold, train.clip_mode)
        RMSprop().step(params, grads)
        # G's update left D alone
        for name, p in a_model.named_parameters():
            assert p.data.tobytes() == params[name].data.tobytes(), name
            assert p.grad is None
        # D's update left G alone: B's generator has not been stepped
        for name, p in b_gan.generator.named_parameters():
            assert p.data.tobytes() == g_before[name].tobytes(), name
        # and the G step did move G
        moved = [name for name, p in a_gan.generator.named_parameters()
                 if p.data.tobytes() != g_before[name].tobytes()]
        assert moved
