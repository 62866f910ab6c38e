"""Convert raw question-type files (``COARSE:fine text``) to ``label<TAB>text``."""
import argparse

from acblstm.data import load_trec
from acblstm.synthetic import write_tsv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("train")
    ap.add_argument("test")
    ap.add_argument("--out-dir", default=".")
    args = ap.parse_args()

    train, labels = load_trec(args.train)
    test, _ = load_trec(args.test, labels)
    names = sorted(labels, key=labels.get)
    write_tsv(train, f"{args.out_dir}/train.tsv", names)
    write_tsv(test, f"{args.out_dir}/test.tsv", names)
    print(f"{len(train)} train / {len(test)} test examples, labels {names}")


if __name__ == "__main__":
    main()
