"""AC-BLSTM classifier: three asymmetric convolution branches, tail
compression to a common length, per-step fusion, stacked BLSTM and a
softmax head over the flattened hidden states."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import ContractError, ShapeError
from .layers import (BatchNormParams, Conv1xdParams, ConvKx1Params, DenseParams,
                     LstmParams, blstm_forward, conv_1xd, conv_kx1, dense, dropout)
from .tensor import Tensor


@dataclass
class Branch:
    conv1: Conv1xdParams
    conv2: ConvKx1Params
    bn1: BatchNormParams | None
    bn2: BatchNormParams | None


class AcBlstmModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        init_rng = np.random.default_rng([seed, 0])
        # dropout masks draw from their own stream so init never shifts them
        self.rng = np.random.default_rng([seed, 1])
        n, d = config.filters, config.embed_dim
        self.branches = []
        for k in config.k_set:
            bn = config.use_batchnorm
            self.branches.append(Branch(
                Conv1xdParams.init(d, n, init_rng), ConvKx1Params.init(n, k, init_rng),
                BatchNormParams.init(n) if bn else None, BatchNormParams.init(n) if bn else None))
        self.heads = {}
        for i, k in enumerate(config.k_set):
            if k < config.k_max:
                self.heads[i] = DenseParams.init((config.k_max - k + 1) * n, n, init_rng)
        self.lstm = []
        width = 3 * n
        for _ in range(config.lstm_layers):
            self.lstm.append((LstmParams.init(width, config.lstm_dim, init_rng),
                              LstmParams.init(width, config.lstm_dim, init_rng)))
            width = 2 * config.lstm_dim
        self.classifier = DenseParams.init(config.seq_len * 2 * config.lstm_dim,
                                           config.num_outputs, init_rng)

    # ------------------------------------------------------------------
    # parameters

    def named_parameters(self):
        for i, br in enumerate(self.branches):
            yield from br.conv1.named_parameters(f"branch{i}.conv1.")
            yield from br.conv2.named_parameters(f"branch{i}.conv2.")
            if br.bn1 is not None:
                yield from br.bn1.named_parameters(f"branch{i}.bn1.")
                yield from br.bn2.named_parameters(f"branch{i}.bn2.")
        for i, head in sorted(self.heads.items()):
            yield from head.named_parameters(f"compress{i}.")
        for layer, (fwd, bwd) in enumerate(self.lstm):
            yield from fwd.named_parameters(f"lstm{layer}.fwd.")
            yield from bwd.named_parameters(f"lstm{layer}.bwd.")
        yield from self.classifier.named_parameters("classifier.")

    def parameters(self) -> dict:
        return dict(self.named_parameters())

    def _batchnorms(self):
        for i, br in enumerate(self.branches):
            if br.bn1 is not None:
                yield f"branch{i}.bn1.", br.bn1
                yield f"branch{i}.bn2.", br.bn2

    def state_dict(self) -> dict:
        state = {name: t.data.copy() for name, t in self.named_parameters()}
        for prefix, bn in self._batchnorms():
            for name, arr in bn.named_buffers(prefix):
                state[name] = arr.copy()
        return state

    def load_state_dict(self, state: dict):
        params = self.parameters()
        expected = set(params)
        for prefix, bn in self._batchnorms():
            expected.update(name for name, _ in bn.named_buffers(prefix))
        missing = expected - set(state)
        if missing:
            raise ContractError(f"state is missing {sorted(missing)[:5]}")
        for name, t in params.items():
            if state[name].shape != t.shape:
                raise ShapeError(f"{name}: saved {state[name].shape}, model {t.shape}")
            t.data = np.array(state[name], dtype=np.float64)
        for prefix, bn in self._batchnorms():
            bn.running_mean = np.array(state[prefix + "running_mean"], dtype=np.float64)
            bn.running_var = np.array(state[prefix + "running_var"], dtype=np.float64)

    def zero_grads(self):
        T.zero_grads(self.parameters().values())

    # ------------------------------------------------------------------
    # forward pieces

    def asymmetric_branch(self, x: Tensor, i: int, mode="eval") -> Tensor:
        """(B, L, d) -> (B, L - k_i + 1, n): per-word projection, then window."""
        br = self.branches[i]
        if x.shape[-2] < br.conv2.k:
            raise ContractError(f"sentence length {x.shape[-2]} is shorter than window "
                                f"{br.conv2.k}")
        m = conv_1xd(x, br.conv1, br.bn1, mode)
        return conv_kx1(m, br.conv2, br.bn2, mode)

    def fuse_branches(self, outputs) -> Tensor:
        """Align the branch maps to length ``L - k_max + 1`` and concatenate
        them per step.

        For a branch with a shorter window, its features from position
        ``L - k_max`` (0-based) onward are flattened and passed through that
        branch's compression layer; the single result replaces them.
        """
        cfg = self.config
        n = cfg.filters
        keep = cfg.seq_len - 1
        aligned = []
        for i, c in enumerate(outputs):
            k = cfg.k_set[i]
            if c.shape[-1] != n:
                raise ShapeError(f"branch {i} width {c.shape[-1]} != {n}")
            if c.shape[1] != cfg.max_len - k + 1:
                raise ShapeError(f"branch {i} length {c.shape[1]} != L - k + 1")
            if k == cfg.k_max:
                aligned.append(c)
                continue
            tail = T.slice_(c, 1, keep, c.shape[1])
            flat = T.reshape(tail, (c.shape[0], (cfg.k_max - k + 1) * n))
            squeezed = T.reshape(dense(flat, self.heads[i]), (c.shape[0], 1, n))
            if keep == 0:
                aligned.append(squeezed)
            else:
                aligned.append(T.concat([T.slice_(c, 1, 0, keep), squeezed], axis=1))
        return T.concat(aligned, axis=-1)

    def encode(self, x, mode="eval") -> Tensor:
        """Fused sequence through the BLSTM stack: (B, T, 2 * lstm_dim)."""
        x = T.as_tensor(x)
        if x.ndim != 3 or x.shape[1:] != (self.config.max_len, self.config.embed_dim):
            raise ShapeError(f"expected (B, {self.config.max_len}, {self.config.embed_dim}) "
                             f"input, got {x.shape}")
        if mode == "train" and self.config.use_batchnorm and x.shape[0] < 2:
            raise ContractError("train mode with batch norm needs at least two examples")
        fused = self.fuse_branches([self.asymmetric_branch(x, i, mode)
                                    for i in range(len(self.branches))])
        return blstm_forward(fused, self.lstm, self.config.dropout_blstm_input, mode, self.rng)

    def forward(self, x, mode="eval") -> Tensor:
        hidden = self.encode(x, mode)
        b = hidden.shape[0]
        flat = T.reshape(hidden, (b, hidden.shape[1] * hidden.shape[2]))
        flat = dropout(flat, self.config.dropout_before_softmax, mode, self.rng)
        return dense(flat, self.classifier)

    __call__ = forward


def predict(model: AcBlstmModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Class indices and full probability vectors for a batch.

    The fake class, when the model has one, never wins the argmax.
    """
    probs = T.softmax(model.forward(x, mode="eval").data, axis=1)
    k = model.config.num_classes
    return probs[:, :k].argmax(axis=1), probs


def param_count(model: AcBlstmModel) -> dict:
    """Parameter counts per component plus ``total``."""
    table = {}
    for i, br in enumerate(model.branches):
        table[f"branch{i}.conv_1xd"] = br.conv1.num_parameters()
        table[f"branch{i}.conv_kx1"] = br.conv2.num_parameters()
        if br.bn1 is not None:
            table[f"branch{i}.batchnorm"] = br.bn1.num_parameters() + br.bn2.num_parameters()
    for i, head in sorted(model.heads.items()):
        table[f"compress{i}"] = head.num_parameters()
    table["blstm"] = sum(f.num_parameters() + b.num_parameters() for f, b in model.lstm)
    table["classifier"] = model.classifier.num_parameters()
    table["total"] = sum(table.values())
    return table


def unfactorized_conv_count(d: int, k: int, n: int = 1) -> int:
    """Parameters of ``n`` plain k x d filters with one bias each."""
    return n * (k * d + 1)
