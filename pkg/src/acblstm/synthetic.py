"""Tiny synthetic corpora for sanity runs."""
from __future__ import annotations

import numpy as np

from .data import Example

FILLER = ("the a film story plot actor scene was is it this that and of to in with "
          "very quite rather movie script music ending some").split()


def keyword_corpus(size=64, num_classes=2, min_len=5, max_len=10, seed=0):
    """Filler sentences, each carrying one class keyword at a random position.

    Class ``c`` always contains the token ``key{c}`` and no other keyword, so
    the classes are separable by a single feature.
    """
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(size):
        label = i % num_classes
        length = int(rng.integers(min_len, max_len + 1))
        tokens = [FILLER[j] for j in rng.integers(0, len(FILLER), size=length - 1)]
        tokens.insert(int(rng.integers(0, length)), f"key{label}")
        examples.append(Example(tokens, label, " ".join(tokens)))
    order = rng.permutation(size)
    return [examples[i] for i in order]


def write_tsv(examples, path, label_names=None):
    with open(path, "w", encoding="utf-8") as fh:
        for e in examples:
            name = label_names[e.label] if label_names else f"c{e.label}"
            fh.write(f"{name}\t{e.original_text}\n")


def keyword_task(size=64, dim=16, filters=16, seed=0, dropout=0.5, learning_rate=1e-3,
                 batch_size=16, epochs=200):
    """Model, encoded data and train config for the keyword overfit run."""
    from .config import ModelConfig, TrainConfig
    from .data import build_embeddings, corpus_tokens, encode_examples
    from .model import AcBlstmModel

    examples = keyword_corpus(size=size, seed=seed)
    max_len = max(len(e.tokens) for e in examples)
    table = build_embeddings(corpus_tokens(examples), dim, seed)
    data = encode_examples(examples, table, max_len)
    model = AcBlstmModel(ModelConfig(max_len=max_len, embed_dim=dim, num_classes=2,
                                     filters=filters, lstm_dim=filters, lstm_layers=1,
                                     dropout_blstm_input=dropout,
                                     dropout_before_softmax=dropout), seed=seed)
    train = TrainConfig(batch_size=batch_size, epochs=epochs, learning_rate=learning_rate,
                        seed=seed)
    return model, data, train
