"""Named-tensor checkpoint files.

Layout: a UTF-8 header of ``key = value`` lines and ``tensor <name> <shape>``
lines closed by ``end_header``, followed by the raw little-endian float64
payloads in header order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = "ACBLSTM-CHECKPOINT"
VERSION = 1
_END = "end_header"


@dataclass
class Checkpoint:
    tensors: dict
    config: dict = field(default_factory=dict)
    rng_state: dict | None = None
    version: int = VERSION


def _shape_str(shape):
    return "x".join(str(s) for s in shape) if shape else "-"


def _parse_shape(s):
    return () if s == "-" else tuple(int(v) for v in s.split("x"))


def save_checkpoint(path, tensors: dict, config: dict | None = None, rng_state=None):
    lines = [MAGIC, f"version = {VERSION}"]
    for key, value in (config or {}).items():
        text = str(value)
        if "\n" in text:
            raise FormatError(f"config value for {key} spans lines")
        lines.append(f"config.{key} = {text}")
    if rng_state is not None:
        lines.append(f"rng = {json.dumps(rng_state, sort_keys=True)}")
    arrays = []
    for name, arr in tensors.items():
        if any(c.isspace() for c in name):
            raise FormatError(f"tensor name {name!r} contains whitespace")
        arr = np.asarray(arr, dtype="<f8")
        lines.append(f"tensor {name} {_shape_str(arr.shape)}")
        arrays.append(arr)
    lines.append(_END)
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for arr in arrays:
            fh.write(arr.tobytes())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    marker = ("\n" + _END + "\n").encode("utf-8")
    cut = raw.find(marker)
    if cut < 0:
        raise FormatError(f"{path}: header terminator missing")
    header = raw[:cut].decode("utf-8").split("\n")
    payload = memoryview(raw)[cut + len(marker):]
    if not header or header[0] != MAGIC:
        raise FormatError("not a checkpoint file", line=1)
    ckpt = Checkpoint(tensors={})
    specs = []
    for lineno, line in enumerate(header[1:], 2):
        if line.startswith("tensor "):
            parts = line.split(" ")
            if len(parts) != 3:
                raise FormatError("bad tensor entry", line=lineno)
            specs.append((parts[1], _parse_shape(parts[2])))
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise FormatError(f"bad header line {line!r}", line=lineno)
        if key == "version":
            ckpt.version = int(value)
            if ckpt.version != VERSION:
                raise FormatError(f"unsupported version {value}", line=lineno)
        elif key == "rng":
            ckpt.rng_state = json.loads(value)
        elif key.startswith("config."):
            ckpt.config[key[len("config."):]] = value
        else:
            raise FormatError(f"unknown header key {key!r}", line=lineno)
    offset = 0
    for name, shape in specs:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(payload):
            raise FormatError(f"payload truncated at tensor {name}")
        arr = np.frombuffer(payload[offset:offset + nbytes], dtype="<f8").reshape(shape)
        ckpt.tensors[name] = arr.astype(np.float64)
        offset += nbytes
    if offset != len(payload):
        raise FormatError("trailing bytes after the last tensor")
    return ckpt
