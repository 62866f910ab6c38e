"""RMSprop and the summed-norm gradient clipping rule."""
from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericError


def collect_grads(params: dict) -> dict:
    """Gradient arrays keyed like ``params``; untouched parameters get zeros."""
    return {name: (np.zeros(t.shape) if t.grad is None else t.grad)
            for name, t in params.items()}


def grad_norm(grads: dict, mode="sum") -> float:
    if mode == "sum":
        return float(sum(np.sqrt(np.sum(g * g)) for g in grads.values()))
    if mode == "global":
        return float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
    raise ContractError(f"unknown norm mode {mode!r}")


def clip_global(grads: dict, threshold: float = 0.5, mode="sum"):
    """Scale every gradient by ``threshold / norm`` when ``norm > threshold``.

    ``norm`` is the sum of the per-parameter L2 norms (``mode="sum"``) or the
    L2 norm of all gradients taken together (``mode="global"``). Returns the
    possibly-scaled gradients and the pre-clip norm; below the threshold the
    input arrays are returned untouched.
    """
    if threshold <= 0:
        raise ContractError("clip threshold must be positive")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    norm = grad_norm(grads, mode)
    if norm > threshold:
        scale = threshold / norm
        return {name: g * scale for name, g in grads.items()}, norm
    return dict(grads), norm


class RMSprop:
    """``acc <- rho * acc + (1 - rho) * g^2``; ``p <- p - lr * g / sqrt(acc + eps)``."""

    def __init__(self, learning_rate=1e-4, rho=0.9, eps=1e-8):
        self.learning_rate = learning_rate
        self.rho = rho
        self.eps = eps
        self.acc = {}

    def step(self, params: dict, grads: dict):
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != p.shape:
                raise ContractError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
            acc = self.acc.get(name)
            if acc is None:
                acc = np.zeros(p.shape)
            acc = self.rho * acc + (1.0 - self.rho) * g * g
            self.acc[name] = acc
            p.data = p.data - self.learning_rate * g / np.sqrt(acc + self.eps)

    def state_dict(self) -> dict:
        return {f"rmsprop.{k}": v.copy() for k, v in self.acc.items()}


def rmsprop_step(params: dict, grads: dict, state: RMSprop):
    state.step(params, grads)
    return params, state
