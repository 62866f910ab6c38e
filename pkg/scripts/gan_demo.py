"""Semi-supervised run on the keyword corpus with a fraction of generated rows.

Shows classifier loss, generator loss and real-class accuracy per epoch.
"""
import argparse
import dataclasses

from acblstm.config import GanConfig
from acblstm.gan import SemiSupervised
from acblstm.model import AcBlstmModel
from acblstm.synthetic import keyword_task
from acblstm.training import evaluate, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p-g", type=float, default=0.2)
    ap.add_argument("--c-g", type=int, default=16)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    base, data, cfg = keyword_task(size=200, seed=args.seed, epochs=args.epochs)
    cfg = dataclasses.replace(cfg, batch_size=50)
    model = AcBlstmModel(dataclasses.replace(base.config, extra_fake_class=True),
                         seed=args.seed)
    gan = SemiSupervised.create(GanConfig(max_len=data.max_len, embed_dim=data.table.dim,
                                          c_g=args.c_g, p_g=args.p_g, seed=args.seed), cfg)

    def report(m):
        acc = evaluate(model, data).accuracy
        print(f"epoch {m.epoch:3d}  loss_D {m.loss:.4f}  loss_G {m.loss_g:.4f}  acc {acc:.3f}")

    fit(model, data, cfg, gan=gan, on_epoch=report)


if __name__ == "__main__":
    main()
