"""Train on the 64-sentence keyword corpus until it is memorised.

Prints one line per epoch and the first epoch at which train accuracy
(eval mode) reaches 100%.
"""
import argparse

from acblstm.synthetic import keyword_task
from acblstm.training import evaluate, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--filters", type=int, default=16)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--dropout", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    model, data, cfg = keyword_task(size=args.size, filters=args.filters, seed=args.seed,
                                    dropout=args.dropout, learning_rate=args.lr,
                                    epochs=args.epochs)
    first = None

    def report(m):
        nonlocal first
        acc = evaluate(model, data).accuracy
        if first is None and acc == 1.0:
            first = m.epoch
        print(f"epoch {m.epoch:3d}  loss {m.loss:.4f}  train_acc {acc:.3f}  "
              f"sum_norm {m.sum_norm_mean:.3f}")

    fit(model, data, cfg, on_epoch=report)
    print(f"100% train accuracy first reached at epoch {first}" if first
          else "never reached 100% train accuracy")


if __name__ == "__main__":
    main()
