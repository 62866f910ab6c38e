"""Corpus loading, tokenisation, embedding tables and k-fold plans."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ContractError, DatasetError, FormatError, LabelError, ShapeError

PAD = "<pad>"
UNK = "<unk>"
UNKNOWN_RANGE = 0.25


@dataclass
class Example:
    tokens: list
    label: int
    original_text: str = ""


def tokenize(text: str) -> list:
    return text.lower().split()


def tokenize_and_pad(text: str, max_len: int) -> list:
    """Lowercase, whitespace-split, then truncate or right-pad to ``max_len``."""
    if max_len < 1:
        raise ContractError("max_len must be >= 1")
    tokens = tokenize(text)
    if not tokens:
        raise DatasetError(f"no tokens in {text!r}")
    return pad_tokens(tokens, max_len)


def pad_tokens(tokens: list, max_len: int) -> list:
    tokens = list(tokens[:max_len])
    return tokens + [PAD] * (max_len - len(tokens))


def load_dataset(path, label_map: dict | None = None):
    """Read ``label<TAB>text`` lines.

    Labels get contiguous ids in first-seen order. Passing ``label_map``
    freezes it: a label outside the map is an error.
    """
    frozen = label_map is not None
    label_map = dict(label_map or {})
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if "\t" not in line:
                raise FormatError("expected 'label<TAB>text'", line=lineno)
            label, text = line.split("\t", 1)
            label = label.strip()
            if label not in label_map:
                if frozen:
                    raise LabelError(f"line {lineno}: unknown label {label!r}")
                label_map[label] = len(label_map)
            tokens = tokenize(text)
            if not tokens:
                raise DatasetError(f"line {lineno}: empty text")
            examples.append(Example(tokens, label_map[label], text))
    if not examples:
        raise DatasetError(f"{path} contains no examples")
    return examples, label_map


def load_trec(path, label_map: dict | None = None):
    """Read the raw question-type files (``COARSE:fine question ...``).

    Only the coarse label is kept. The files are latin-1 encoded.
    """
    frozen = label_map is not None
    label_map = dict(label_map or {})
    examples = []
    with open(path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            head, _, text = line.strip().partition(" ")
            coarse = head.split(":", 1)[0]
            if ":" not in head or not text:
                raise FormatError("expected 'COARSE:fine text'", line=lineno)
            if coarse not in label_map:
                if frozen:
                    raise LabelError(f"line {lineno}: unknown label {coarse!r}")
                label_map[coarse] = len(label_map)
            examples.append(Example(tokenize(text), label_map[coarse], text))
    if not examples:
        raise DatasetError(f"{path} contains no examples")
    return examples, label_map


def length_cap(examples: Iterable[Example], percentile: float = 95.0, minimum: int = 1) -> int:
    lengths = np.array([len(e.tokens) for e in examples])
    return max(int(math.ceil(np.percentile(lengths, percentile))), minimum)


# ----------------------------------------------------------------------------
# embeddings


@dataclass
class EmbeddingTable:
    vocab: dict
    matrix: np.ndarray  # V x d, read-only

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def index(self, token: str) -> int:
        return self.vocab.get(token, self.vocab[UNK])

    def encode(self, tokens: list) -> np.ndarray:
        return np.array([self.index(t) for t in tokens], dtype=np.int64)

    def lookup(self, ids: np.ndarray) -> np.ndarray:
        return self.matrix[ids]

    def sentence_matrix(self, text: str, max_len: int) -> np.ndarray:
        return self.lookup(self.encode(tokenize_and_pad(text, max_len)))

    def checksum(self) -> str:
        return hashlib.sha256(self.matrix.tobytes()).hexdigest()


def read_word2vec_text(path, wanted: set | None = None, dim: int | None = None) -> dict:
    """Vectors from a word2vec text file: header ``V d``, then ``token v1 .. vd``.

    Only tokens in ``wanted`` are kept when it is given.
    """
    vectors = {}
    with open(path, encoding="utf-8", errors="strict") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError("header must be 'vocab_size dim'", line=1)
        try:
            _, file_dim = int(header[0]), int(header[1])
        except ValueError:
            raise FormatError("header must hold two integers", line=1) from None
        if dim is not None and file_dim != dim:
            raise FormatError(f"file has dimension {file_dim}, expected {dim}", line=1)
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip().split(" ")
            if len(parts) == 1 and not parts[0]:
                continue
            if len(parts) != file_dim + 1:
                raise FormatError(f"expected {file_dim} values, got {len(parts) - 1}",
                                  line=lineno)
            token = parts[0]
            if wanted is not None and token not in wanted:
                continue
            try:
                vectors[token] = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise FormatError("non-numeric vector entry", line=lineno) from None
    return vectors


def build_embeddings(tokens: Iterable[str], dim: int, seed: int, pretrained=None) -> EmbeddingTable:
    """Frozen lookup table over ``tokens`` (first-seen order).

    Row 0 is the zero pad vector, row 1 the shared unknown-token vector.
    Tokens found in the ``pretrained`` word2vec file copy its vectors;
    the rest are drawn uniformly from [-0.25, 0.25].
    """
    vocab = {PAD: 0, UNK: 1}
    for tok in tokens:
        if tok not in vocab:
            vocab[tok] = len(vocab)
    known = read_word2vec_text(pretrained, set(vocab), dim) if pretrained else {}
    rng = np.random.default_rng(seed)
    matrix = np.zeros((len(vocab), dim))
    for tok, row in vocab.items():
        if tok == PAD:
            continue
        if tok in known:
            matrix[row] = known[tok]
        else:
            matrix[row] = rng.uniform(-UNKNOWN_RANGE, UNKNOWN_RANGE, size=dim)
    matrix.setflags(write=False)
    return EmbeddingTable(vocab, matrix)


def corpus_tokens(examples: Iterable[Example]):
    for e in examples:
        yield from e.tokens


def save_vocab(table: EmbeddingTable, path):
    ordered = sorted(table.vocab.items(), key=lambda kv: kv[1])
    Path(path).write_text("".join(f"{tok}\n" for tok, _ in ordered), encoding="utf-8")


def load_vocab(path) -> dict:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return {tok: i for i, tok in enumerate(lines)}


# ----------------------------------------------------------------------------
# encoded datasets


@dataclass
class EncodedDataset:
    """Token ids (N x L) and labels, resolved through a frozen table."""

    ids: np.ndarray
    labels: np.ndarray
    table: EmbeddingTable = field(repr=False)

    def __len__(self):
        return len(self.labels)

    @property
    def max_len(self):
        return self.ids.shape[1]

    def matrices(self, idx) -> np.ndarray:
        return self.table.lookup(self.ids[idx])

    def subset(self, idx) -> "EncodedDataset":
        return EncodedDataset(self.ids[idx], self.labels[idx], self.table)


def encode_examples(examples: list, table: EmbeddingTable, max_len: int) -> EncodedDataset:
    if not examples:
        raise DatasetError("nothing to encode")
    ids = np.stack([table.encode(pad_tokens(e.tokens, max_len)) for e in examples])
    labels = np.array([e.label for e in examples], dtype=np.int64)
    return EncodedDataset(ids, labels, table)


# ----------------------------------------------------------------------------
# cross-validation


@dataclass
class FoldPlan:
    assignment: np.ndarray  # example index -> fold id
    folds: int
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def views(self):
        for f in range(self.folds):
            yield self.train_indices(f), self.test_indices(f)

    def sizes(self) -> list:
        return np.bincount(self.assignment, minlength=self.folds).tolist()

    def write_csv(self, path_or_file):
        close = False
        fh = path_or_file
        if isinstance(path_or_file, (str, Path)):
            fh = open(path_or_file, "w", newline="", encoding="utf-8")
            close = True
        try:
            writer = csv.writer(fh)
            writer.writerow(["example_index", "fold_id"])
            writer.writerows(enumerate(self.assignment.tolist()))
        finally:
            if close:
                fh.close()


def kfold_split(size: int, folds: int = 10, seed: int = 0) -> FoldPlan:
    """Seeded shuffle, then deal indices round-robin into ``folds`` folds."""
    if hasattr(size, "__len__"):
        size = len(size)
    if folds < 2:
        raise ShapeError("need at least two folds")
    if size < folds:
        raise ContractError(f"{size} examples cannot fill {folds} folds")
    order = np.random.default_rng(seed).permutation(size)
    assignment = np.empty(size, dtype=np.int64)
    assignment[order] = np.arange(size) % folds
    return FoldPlan(assignment, folds, seed)
