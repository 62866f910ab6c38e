"""Command-line entry point.

Exit codes: 0 success, 1 configuration or input error, 2 usage error,
3 numeric failure during a run, 4 a gradient check over tolerance.
"""
from __future__ import annotations

import argparse
import json
import shlex
import sys
import threading
import time
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import GanConfig, ModelConfig, RunConfig, parse_config
from .data import (EmbeddingTable, build_embeddings, corpus_tokens, encode_examples,
                   kfold_split, length_cap, load_dataset, load_vocab, save_vocab)
from .errors import AcBlstmError, ConfigError, NumericError
from .gan import Generator, SemiSupervised
from .model import AcBlstmModel, predict
from .training import evaluate, fit

COMMANDS = ("train", "eval", "predict", "gradcheck", "gen-sample", "folds")
GRADCHECK_TOL = 1e-4


class MetricsSink:
    """Append-only ``key=value`` records, one per line, serialised by a lock."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def write(self, record_type: str, **fields):
        parts = [f"type={record_type}"]
        for key, value in fields.items():
            if isinstance(value, float):
                value = repr(value)
            text = str(value)
            parts.append(f"{key}={shlex.quote(text) if (' ' in text or not text) else text}")
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(" ".join(parts) + "\n")


def read_metrics(path) -> list:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        records.append(dict(tok.split("=", 1) for tok in shlex.split(line)))
    return records


# ----------------------------------------------------------------------------
# model persistence


def model_config_fields(cfg: ModelConfig) -> dict:
    return {f"model.{k}": (",".join(map(str, v)) if isinstance(v, tuple) else v)
            for k, v in cfg.__dict__.items()}


def save_model(path, model: AcBlstmModel, table: EmbeddingTable, run: RunConfig | None = None,
               generator: Generator | None = None):
    tensors = dict(model.state_dict())
    tensors["embedding"] = np.asarray(table.matrix)
    config = model_config_fields(model.config)
    if generator is not None:
        tensors.update(generator.state_dict())
        config.update({f"gan.{k}": v for k, v in generator.config.__dict__.items()})
    if run is not None:
        config.update({f"run.{k}": v for k, v in run.items()})
    save_checkpoint(path, tensors, config, model.rng.bit_generator.state)


def _model_config_from(ckpt_config: dict) -> ModelConfig:
    raw = {k[len("model."):]: v for k, v in ckpt_config.items() if k.startswith("model.")}
    kinds = {f: type(v) for f, v in ModelConfig(6, 2, 2).__dict__.items()}
    values = {}
    for key, text in raw.items():
        kind = kinds[key]
        if kind is bool:
            values[key] = text == "True"
        elif kind is tuple:
            values[key] = tuple(int(v) for v in text.split(","))
        else:
            values[key] = kind(text)
    return ModelConfig(**values)


def load_model(path):
    """Rebuild (model, embedding table, generator or None) from a checkpoint.

    The vocabulary is read from ``vocab.txt`` beside the checkpoint.
    """
    ckpt = load_checkpoint(path)
    model = AcBlstmModel(_model_config_from(ckpt.config))
    model.load_state_dict(ckpt.tensors)
    if ckpt.rng_state is not None:
        model.rng.bit_generator.state = ckpt.rng_state
    vocab_path = Path(path).parent / "vocab.txt"
    vocab = load_vocab(vocab_path) if vocab_path.is_file() else {}
    matrix = ckpt.tensors["embedding"]
    matrix.setflags(write=False)
    generator = None
    gan_raw = {k[4:]: v for k, v in ckpt.config.items() if k.startswith("gan.")}
    if gan_raw:
        gcfg = GanConfig(**{k: (float(v) if k == "p_g" else int(v)) for k, v in gan_raw.items()})
        generator = Generator(gcfg)
        generator.load_state_dict(ckpt.tensors)
    return model, EmbeddingTable(vocab, matrix), generator, ckpt


# ----------------------------------------------------------------------------
# commands


def _train_once(run: RunConfig, train_ex, test_ex, val_ex, max_len, num_classes, seed,
                sink, tags):
    table = build_embeddings(corpus_tokens(train_ex), run.embed_dim, seed,
                             run.embeddings or None)
    train = encode_examples(train_ex, table, max_len)
    test = encode_examples(test_ex, table, max_len)
    val = encode_examples(val_ex, table, max_len) if val_ex else None
    model = AcBlstmModel(run.model_config(num_classes, max_len), seed=seed)
    tcfg = run.train_config(seed)
    gan = SemiSupervised.create(run.gan_config(max_len, seed), tcfg) if run.gan else None
    wall = time.perf_counter()

    def on_epoch(m):
        sink.write("epoch", **tags, epoch=m.epoch, loss=m.loss, train_acc=m.train_acc,
                   val_acc="" if m.val_acc is None else m.val_acc,
                   sum_norm_mean=m.sum_norm_mean, sum_norm_max=m.sum_norm_max,
                   loss_g=m.loss_g, wall=round(time.perf_counter() - wall, 3))

    fit(model, train, tcfg, val, gan, on_epoch)
    result = evaluate(model, test)
    return model, table, gan, result


def cmd_train(run: RunConfig, args) -> int:
    if not run.dataset:
        raise ConfigError("a training dataset is required", key="dataset")
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    sink = MetricsSink(run.metrics_file or out / "metrics.txt")
    sink.write("config", **dict(run.items()))

    examples, labels = load_dataset(run.dataset)
    test_ex = load_dataset(run.test_dataset, labels)[0] if run.test_dataset else None
    val_ex = load_dataset(run.val_dataset, labels)[0] if run.val_dataset else None
    k_max = max(run.k_set)
    max_len = run.max_len or max(length_cap(examples, run.len_percentile), k_max)
    (out / "labels.txt").write_text("".join(f"{lab}\n" for lab in labels), encoding="utf-8")

    accuracies = []
    for r in range(run.repeats):
        seed = run.seed + r
        if test_ex is not None:
            splits = [(examples, test_ex, {"repeat": r})]
        else:
            plan = kfold_split(len(examples), run.folds, seed)
            splits = [([examples[i] for i in tr], [examples[i] for i in te],
                       {"repeat": r, "fold": f})
                      for f, (tr, te) in enumerate(plan.views())]
        fold_acc = []
        for train_ex, eval_ex, tags in splits:
            model, table, gan, result = _train_once(run, train_ex, eval_ex, val_ex, max_len,
                                                    len(labels), seed, sink, tags)
            fold_acc.append(result.accuracy)
            sink.write("test", **tags, accuracy=result.accuracy)
        acc = float(np.mean(fold_acc))
        accuracies.append(acc)
        save_vocab(table, out / "vocab.txt")
        save_model(out / f"model_r{r}.ckpt", model, table, run,
                   gan.generator if gan is not None else None)
        print(f"repeat {r}: accuracy {acc:.4f}")
    mean, std = float(np.mean(accuracies)), float(np.std(accuracies))
    sink.write("summary", repeats=run.repeats, mean_accuracy=mean, std_accuracy=std)
    print(f"accuracy over {run.repeats} repeat(s): {mean:.4f} +/- {std:.4f}")
    return 0


def _checkpoint_arg(args):
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required", key="checkpoint")
    return args.checkpoint


def cmd_eval(run: RunConfig, args) -> int:
    model, table, _, _ = load_model(_checkpoint_arg(args))
    labels_path = Path(args.checkpoint).parent / "labels.txt"
    label_map = {lab: i for i, lab in enumerate(labels_path.read_text().splitlines())}
    if not run.dataset:
        raise ConfigError("an evaluation dataset is required", key="dataset")
    examples, _ = load_dataset(run.dataset, label_map)
    result = evaluate(model, encode_examples(examples, table, model.config.max_len))
    print(f"accuracy {result.accuracy:.4f} on {result.total} examples")
    for row in result.confusion:
        print(" ".join(str(v) for v in row))
    return 0


def cmd_predict(run: RunConfig, args) -> int:
    model, table, _, _ = load_model(_checkpoint_arg(args))
    labels_path = Path(args.checkpoint).parent / "labels.txt"
    names = labels_path.read_text().splitlines() if labels_path.is_file() else None
    lines = [line for line in sys.stdin.read().splitlines() if line.split()]
    if not lines:
        return 0
    x = np.stack([table.sentence_matrix(line, model.config.max_len) for line in lines])
    classes, probs = predict(model, x)
    for cls, p in zip(classes, probs):
        label = names[cls] if names else str(cls)
        print(f"{label}\t{p[cls]:.6f}")
    return 0


def cmd_gradcheck(run: RunConfig, args) -> int:
    from .gradcheck import run_gradcheck

    errors = run_gradcheck(run.seed)
    worst = 0.0
    for name, err in errors.items():
        print(f"{name:32s} {err:.3e}")
        worst = max(worst, err)
    print(f"max relative error {worst:.3e} (tolerance {GRADCHECK_TOL:.0e})")
    return 0 if worst < GRADCHECK_TOL else 4


def cmd_gen_sample(run: RunConfig, args) -> int:
    if args.checkpoint:
        _, _, generator, _ = load_model(args.checkpoint)
        if generator is None:
            raise ConfigError("checkpoint holds no generator", key="checkpoint")
    else:
        if not run.max_len:
            raise ConfigError("max_len is required without a checkpoint", key="max_len")
        generator = Generator(run.gan_config(run.max_len))
    rng = np.random.default_rng(run.seed)
    samples = generator.sample(args.count, rng, mode="eval" if args.checkpoint else "train")
    target = Path(args.output) if args.output else Path(run.out) / "generated.npy"
    target.parent.mkdir(parents=True, exist_ok=True)
    np.save(target, samples)
    print(f"wrote {samples.shape[0]} matrices of shape {samples.shape[1:]} to {target}")
    return 0


def cmd_folds(run: RunConfig, args) -> int:
    if not run.dataset:
        raise ConfigError("a dataset is required", key="dataset")
    examples, _ = load_dataset(run.dataset)
    plan = kfold_split(len(examples), run.folds, run.seed)
    if args.output:
        plan.write_csv(args.output)
    else:
        plan.write_csv(sys.stdout)
    return 0


HANDLERS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "gradcheck": cmd_gradcheck, "gen-sample": cmd_gen_sample, "folds": cmd_folds}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acblstm", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config")
    parser.add_argument("--dataset")
    parser.add_argument("--embeddings")
    parser.add_argument("--gan", action="store_true", default=None)
    parser.add_argument("--repeats", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out")
    parser.add_argument("--checkpoint")
    parser.add_argument("--count", type=int, default=4)
    parser.add_argument("--output")
    return parser


def _overrides(args, extra) -> dict:
    values = {k: getattr(args, k) for k in
              ("dataset", "embeddings", "gan", "repeats", "seed", "out")
              if getattr(args, k) is not None}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        elif i + 1 < len(extra):
            value = extra[i + 1]
            i += 2
        else:
            raise ConfigError("missing value", key=key)
        values[key.replace("-", "_")] = value
    return values


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        run = parse_config(args.config, _overrides(args, extra), check_paths=True)
        return HANDLERS[args.command](run, args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (AcBlstmError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_command())
