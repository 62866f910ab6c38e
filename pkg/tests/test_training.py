import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acblstm import tensor as T
from acblstm.config import GanConfig
from acblstm.data import EmbeddingTable, EncodedDataset
from acblstm.errors import ContractError, NumericError
from acblstm.gan import SemiSupervised
from acblstm.model import AcBlstmModel
from acblstm.optim import RMSprop, clip_global, grad_norm, rmsprop_step
from acblstm.synthetic import keyword_task
from acblstm.tensor import Tensor
from acblstm.training import evaluate, fit, make_optimizer, train_epoch


class TestClip:
    def test_sum_rule_example(self):
        a = np.array([0.6, 0.0])
        b = np.array([0.0, 0.0, 0.4])
        out, pre = clip_global({"a": a, "b": b}, 0.5)
        assert pre == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_allclose(out["a"], a * 0.5, atol=1e-16)
        np.testing.assert_allclose(out["b"], b * 0.5, atol=1e-16)

    def test_below_threshold_untouched(self):
        grads = {"a": np.array([0.1, -0.2]), "b": np.array([[0.05]])}
        out, pre = clip_global(grads, 0.5)
        assert pre <= 0.5
        for k in grads:
            assert out[k].tobytes() == grads[k].tobytes()

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_shared_scale_and_cap(self, seed):
        rng = np.random.default_rng(seed)
        grads = {f"p{i}": rng.normal(scale=rng.uniform(0.01, 2), size=rng.integers(1, 6, 2))
                 for i in range(int(rng.integers(1, 5)))}
        out, pre = clip_global(grads, 0.5)
        assert abs(grad_norm(out) - min(pre, 0.5)) < 1e-12
        ratios = np.concatenate([(out[k] / grads[k]).ravel() for k in grads])
        assert np.ptp(ratios) < 1e-15

    def test_global_mode(self):
        out, pre = clip_global({"a": np.array([3.0]), "b": np.array([4.0])}, 1.0, "global")
        assert pre == 5.0
        np.testing.assert_allclose([out["a"][0], out["b"][0]], [0.6, 0.8])

    def test_non_finite(self):
        with pytest.raises(NumericError, match="b"):
            clip_global({"a": np.ones(2), "b": np.array([np.nan])})


class TestRmsprop:
    def test_zero_gradient(self):
        p = {"w": Tensor(np.array([1.0, -2.0]))}
        opt = RMSprop()
        opt.acc["w"] = np.array([4.0, 1.0])
        rmsprop_step(p, {"w": np.zeros(2)}, opt)
        assert p["w"].data.tolist() == [1.0, -2.0]
        np.testing.assert_allclose(opt.acc["w"], [3.6, 0.9])

    def test_constant_gradient_closed_form(self):
        g, lr, rho, eps = 0.3, 1e-4, 0.9, 1e-8
        p = {"w": Tensor(np.array([0.0]))}
        opt = RMSprop(lr, rho, eps)
        prev = 0.0
        for t in range(1, 1001):
            opt.step(p, {"w": np.array([g])})
            acc = g * g * (1 - rho ** t)
            step = prev - p["w"].data[0]
            assert step == pytest.approx(lr * g / np.sqrt(acc + eps), rel=1e-9)
            prev = p["w"].data[0]
        assert step == pytest.approx(lr, rel=1e-6)

    def test_equal_gradients_equal_updates(self):
        p = {"a": Tensor(np.zeros(3)), "b": Tensor(np.zeros(3))}
        g = np.array([0.1, -0.5, 2.0])
        opt = RMSprop()
        for _ in range(5):
            opt.step(p, {"a": g, "b": g.copy()})
        assert p["a"].data.tobytes() == p["b"].data.tobytes()

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            RMSprop().step({"w": Tensor(np.zeros(3))}, {"w": np.zeros(2)})


@pytest.fixture(scope="module")
def short_run():
    def run(seed=0, epochs=3):
        model, data, cfg = keyword_task(seed=seed, epochs=epochs)
        checksum = data.table.checksum()
        fit(model, data, cfg)
        return model, data, checksum

    return run


class TestTraining:
    def test_same_seed_bit_identical(self, short_run):
        a, _, _ = short_run()
        b, _, _ = short_run()
        for (name, x), (_, y) in zip(a.state_dict().items(), b.state_dict().items()):
            assert x.tobytes() == y.tobytes(), name

    def test_embeddings_frozen(self, short_run):
        _, data, before = short_run()
        assert data.table.checksum() == before
        assert not data.table.matrix.flags.writeable

    def test_loss_curve_settles(self):
        # default optimiser settings; loss of the whole corpus in eval mode
        model, data, cfg = keyword_task(learning_rate=1e-4, epochs=200)
        rng = np.random.default_rng(cfg.seed)
        opt = make_optimizer(cfg)
        x = data.matrices(np.arange(len(data)))
        losses = []
        for epoch in range(1, cfg.epochs + 1):
            train_epoch(model, data, cfg, opt, rng, epoch=epoch)
            logits = model.forward(x, "eval")
            losses.append(float(T.softmax_cross_entropy(logits, data.labels).data))
        rises = [e + 1 for e in range(5, len(losses)) if losses[e] > 1.05 * losses[e - 1]]
        assert rises == []
        assert losses[-1] < losses[0]

    def test_incomplete_batch_dropped(self):
        model, data, cfg = keyword_task(size=40)
        cfg = dataclasses.replace(cfg, batch_size=16)
        metrics = train_epoch(model, data, cfg, make_optimizer(cfg), np.random.default_rng(0))
        assert 0 <= metrics.train_acc <= 1 and np.isfinite(metrics.loss)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_error_located(self):
        model, data, cfg = keyword_task()
        model.classifier.weight.data[:] = np.inf
        with pytest.raises(NumericError, match="epoch 3, batch 0"):
            train_epoch(model, data, cfg, make_optimizer(cfg), np.random.default_rng(0), epoch=3)

    def test_plain_and_zero_fraction_gan_match(self):
        a, data, cfg = keyword_task(epochs=2)
        b, _, _ = keyword_task(epochs=2)
        gan = SemiSupervised.create(GanConfig(max_len=data.max_len, embed_dim=16, c_g=4,
                                              p_g=0.0), cfg)
        ha = fit(a, data, cfg).history
        hb = fit(b, data, cfg, gan=gan).history
        assert [h.loss for h in ha] == [h.loss for h in hb]
        for (name, x), (_, y) in zip(a.state_dict().items(), b.state_dict().items()):
            assert x.tobytes() == y.tobytes(), name

    def test_validation_keeps_best(self):
        model, data, cfg = keyword_task(epochs=4)
        seen = []
        result = fit(model, data, cfg, val=data, on_epoch=seen.append)
        assert len(seen) == 4
        assert result.best_val == max(m.val_acc for m in seen)
        assert evaluate(model, data).accuracy == result.best_val


class TestEvaluate:
    def balanced(self, seed=0):
        vocab = {"<pad>": 0, "<unk>": 1}
        table = EmbeddingTable(vocab, np.zeros((2, 4)))
        ids = np.ones((40, 5), dtype=np.int64)
        labels = np.repeat(np.arange(4), 10)
        order = np.random.default_rng(seed).permutation(40)
        return EncodedDataset(ids[order], labels[order], table)

    def constant_model(self):
        model, _, _ = keyword_task()
        cfg = dataclasses.replace(model.config, max_len=5, embed_dim=4, num_classes=4)
        model = AcBlstmModel(cfg, seed=0)
        model.classifier.weight.data[:] = 0
        model.classifier.bias.data[:] = [0.0, 0.0, 5.0, 0.0]
        return model

    def test_constant_class(self):
        result = evaluate(self.constant_model(), self.balanced())
        assert result.accuracy == 0.25
        assert result.confusion[:, 2].tolist() == [10, 10, 10, 10]

    def test_confusion_rows_are_supports(self):
        result = evaluate(self.constant_model(), self.balanced(), batch_size=7)
        assert result.total == 40
        assert result.confusion.sum(axis=1).tolist() == [10] * 4

    def test_permutation_invariant(self):
        model, data, cfg = keyword_task(epochs=2)
        fit(model, data, cfg)
        perm = np.random.default_rng(3).permutation(len(data))
        assert evaluate(model, data).accuracy == evaluate(model, data.subset(perm)).accuracy

    def test_empty(self):
        table = EmbeddingTable({"<pad>": 0, "<unk>": 1}, np.zeros((2, 4)))
        with pytest.raises(ContractError):
            evaluate(self.constant_model(), EncodedDataset(np.zeros((0, 5), int),
                                                           np.zeros(0, int), table))
