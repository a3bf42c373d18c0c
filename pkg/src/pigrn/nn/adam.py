"""Adam optimizer over the network's named parameter tensors."""

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .gru import iter_params


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1):
            raise ValueError("invalid Adam hyperparameters")
        if self.eps <= 0:
            raise ValueError("eps must be strictly positive")
        if self.step_count < 0:
            raise ValueError("step_count must be >= 0")


def adam_step(params, grads, state: AdamState):
    """One in-place Adam update with bias correction.

    params and grads are parameter containers traversed by iter_params;
    their names and shapes must line up. Returns (params, state).
    """
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    scale = state.lr * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    pairs = list(iter_params(params))
    gpairs = list(iter_params(grads))
    if len(pairs) != len(gpairs):
        raise ValueError("parameter/gradient containers differ in size")
    for (name, p), (gname, g) in zip(pairs, gpairs):
        if name != gname or p.shape != g.shape:
            raise ValueError("parameter/gradient mismatch at %s vs %s" % (name, gname))
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        # matches the hand-evaluated single-step update:
        # theta -= lr * m_hat / (sqrt(v_hat) + eps)
        p -= scale * m / (np.sqrt(v) + state.eps * np.sqrt(1.0 - b2 ** t))
    return params, state


def global_grad_norm(grads) -> float:
    total = 0.0
    for _, g in iter_params(grads):
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def clip_grad_norm(grads, max_norm: float) -> float:
    """Scale all gradients in place so the global norm is at most max_norm.

    Returns the pre-clip global norm.
    """
    norm = global_grad_norm(grads)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for _, g in iter_params(grads):
            g *= factor
    return norm
