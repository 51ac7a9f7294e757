"""SGD and layerwise-adaptive (LARS) optimizers with momentum.

Parameter updates happen between tape builds: each step consumes the current
immutable parameter tensors and returns fresh ones, with momentum buffers
keyed by parameter name. LARS scales each tensor's step by the trust ratio
trust_coefficient * ||w|| / (||g|| + weight_decay * ||w||) when both norms
are positive (1 otherwise); one-dimensional tensors such as biases are
excluded and always use ratio 1.
"""

from __future__ import annotations

import math
from typing import Dict

import numpy as np

from .autodiff import GradSet, Tensor, tensor
from .errors import ConfigError, RunFailure, ShapeError


def collect_grads(params: Dict[str, Tensor], gradset: GradSet) -> Dict[str, np.ndarray]:
    """Gradient array per parameter name; absent leaves come back zero."""
    return {name: gradset.wrt(t) for name, t in params.items()}


def _check_grad(name: str, w: Tensor, g: np.ndarray) -> None:
    if g.shape != w.data.shape:
        raise ShapeError(
            f"gradient shape {list(g.shape)} does not match parameter "
            f"'{name}' shape {list(w.data.shape)}"
        )
    if not np.all(np.isfinite(g)):
        raise RunFailure(f"non-finite gradient for parameter '{name}'")


def sgd_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray],
             state: Dict[str, np.ndarray], lr: float,
             momentum: float = 0.9) -> Dict[str, Tensor]:
    """v <- momentum * v + g; w <- w - lr * v."""
    out = {}
    for name, w in params.items():
        g = grads[name]
        _check_grad(name, w, g)
        v = state.get(name)
        v = g.copy() if v is None else momentum * v + g
        state[name] = v
        out[name] = tensor(w.data - lr * v)
    return out


def lars_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray],
              state: Dict[str, np.ndarray], base_lr: float,
              momentum: float = 0.9, weight_decay: float = 1e-6,
              trust_coefficient: float = 1e-3) -> Dict[str, Tensor]:
    """v <- momentum * v + local_lr * base_lr * (g + wd * w); w <- w - v."""
    out = {}
    for name, w in params.items():
        g = grads[name]
        _check_grad(name, w, g)
        if w.data.ndim <= 1:
            local_lr = 1.0
        else:
            w_norm = float(np.linalg.norm(w.data))
            g_norm = float(np.linalg.norm(g))
            if w_norm > 0.0 and g_norm > 0.0:
                local_lr = trust_coefficient * w_norm / (
                    g_norm + weight_decay * w_norm)
            else:
                local_lr = 1.0
        step = local_lr * base_lr * (g + weight_decay * w.data)
        v = state.get(name)
        v = step if v is None else momentum * v + step
        state[name] = v
        out[name] = tensor(w.data - v)
    return out


def lr_schedule(base_lr: float, epoch: int, total_epochs: int,
                warmup_epochs: int = 10) -> float:
    """Linear warmup over the first warmup_epochs, then cosine decay."""
    if total_epochs < 1:
        raise ConfigError(f"total_epochs must be >= 1, got {total_epochs}")
    if not (0 <= epoch < total_epochs):
        raise ConfigError(
            f"epoch {epoch} outside [0, {total_epochs})"
        )
    if warmup_epochs > 0 and epoch < warmup_epochs:
        return base_lr * (epoch + 1) / warmup_epochs
    span = max(total_epochs - warmup_epochs, 1)
    t = (epoch - warmup_epochs) / span
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t))
