"""Desk-scale TREC run: random 50-d vectors, n = lstm_dim = 50, one BLSTM layer.

Reports per-epoch test accuracy against the majority-class baseline.
"""
import argparse
from pathlib import Path

import numpy as np

from acblstm.config import ModelConfig, TrainConfig
from acblstm.data import (build_embeddings, corpus_tokens, encode_examples, length_cap,
                          load_dataset, load_trec)
from acblstm.model import AcBlstmModel
from acblstm.training import evaluate, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("data_dir", help="holds train_5500.label/TREC_10.label or train/test.tsv")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--dim", type=int, default=50)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    root = Path(args.data_dir)
    if (root / "train_5500.label").is_file():
        train_ex, labels = load_trec(root / "train_5500.label")
        test_ex, _ = load_trec(root / "TREC_10.label", labels)
    else:
        train_ex, labels = load_dataset(root / "train.tsv")
        test_ex, _ = load_dataset(root / "test.tsv", labels)

    table = build_embeddings(corpus_tokens(train_ex), args.dim, args.seed)
    max_len = max(length_cap(train_ex, 95), 4)
    train = encode_examples(train_ex, table, max_len)
    test = encode_examples(test_ex, table, max_len)
    majority = np.bincount(test.labels).max() / len(test)
    print(f"{len(train)} train / {len(test)} test, L={max_len}, majority {majority:.3f}")

    model = AcBlstmModel(ModelConfig(max_len=max_len, embed_dim=args.dim,
                                     num_classes=len(labels), filters=args.dim,
                                     lstm_dim=args.dim), seed=args.seed)
    cfg = TrainConfig(batch_size=50, epochs=args.epochs, learning_rate=args.lr, seed=args.seed)

    def report(m):
        acc = evaluate(model, test).accuracy
        print(f"epoch {m.epoch:2d}  loss {m.loss:.4f}  train_acc {m.train_acc:.3f}  "
              f"test_acc {acc:.3f}  {m.seconds:.1f}s", flush=True)

    fit(model, train, cfg, on_epoch=report)


if __name__ == "__main__":
    main()
